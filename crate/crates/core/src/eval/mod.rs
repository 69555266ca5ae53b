//! Evaluation: per-head mask and box AP, pixel motion IoU, speed and size.

mod ap;
mod pixel;

pub use ap::{
    coco_thresholds, compute_ap, greedy_match, interpolated_ap, iou, recall_points, ApSummary, GtInstance, Instance,
    IouKind, ScoredInstance,
};
pub use pixel::{motion_pixel_metrics, MotionMetrics, PixelConfusion};

use std::fmt::Write as _;
use std::time::Instant;

use crate::assembly::{motion_mask, postprocess, Detection};
use crate::config::EvalConfig;
use crate::datasets::FrameSample;
use crate::error::{Error, Result};
use crate::features::{prepare_input, ModelInput};
use crate::geometry::BitMask;
use crate::model::HeadKind;
use crate::{Model, Scalar};

/// Mask and box AP of one head; `None` when the data has no ground truth
/// for it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadReport {
    pub mask: Option<ApSummary>,
    pub bbox: Option<ApSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub semantic: HeadReport,
    pub motion: HeadReport,
    pub pixel: MotionMetrics,
    /// Images per second, when benchmarked.
    pub fps: Option<f64>,
    pub params_millions: f64,
    pub fingerprint: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

impl EvalReport {
    fn values(&self) -> Vec<(String, Option<f64>)> {
        let mut out = Vec::new();
        for (name, head) in [("semantic", &self.semantic), ("motion", &self.motion)] {
            for (kind, s) in [("mask", head.mask), ("box", head.bbox)] {
                out.push((format!("{name}.{kind}.ap"), s.map(|s| s.ap)));
                out.push((format!("{name}.{kind}.ap50"), s.map(|s| s.ap50)));
                out.push((format!("{name}.{kind}.ap75"), s.map(|s| s.ap75)));
            }
        }
        out.push(("pixel.moving_iou".into(), Some(self.pixel.moving_iou)));
        out.push(("pixel.background_iou".into(), Some(self.pixel.background_iou)));
        out.push(("pixel.miou".into(), Some(self.pixel.miou)));
        out.push(("fps".into(), self.fps));
        out.push(("time_ms".into(), self.fps.map(|f| 1000.0 / f)));
        out.push(("params_m".into(), Some(self.params_millions)));
        out
    }

    /// True when any computed metric is NaN.
    pub fn has_nan(&self) -> bool {
        self.values().iter().any(|(_, v)| v.is_some_and(f64::is_nan))
    }

    /// One `key value` line per metric.
    pub fn to_records(&self) -> String {
        let mut s = format!("frames {}\nfingerprint {}\n", self.frames, self.fingerprint);
        for (k, v) in self.values() {
            match v {
                Some(v) => writeln!(s, "{k} {v:.6}").unwrap(),
                None => writeln!(s, "{k} n/a").unwrap(),
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "frames: {}   config: {}", self.frames, self.fingerprint).unwrap();
        writeln!(
            s,
            "{:<10}{:>8}{:>8}{:>8}   {:>8}{:>8}{:>8}",
            "head", "mask AP", "AP50", "AP75", "box AP", "AP50", "AP75"
        )
        .unwrap();
        for (name, h) in [("semantic", &self.semantic), ("motion", &self.motion)] {
            let cols = |x: Option<ApSummary>| {
                [x.map(|x| x.ap), x.map(|x| x.ap50), x.map(|x| x.ap75)].map(|v| format!("{:>8}", fmt_opt(v)))
            };
            let [a, b, c] = cols(h.mask);
            let [d, e, f] = cols(h.bbox);
            writeln!(s, "{name:<10}{a}{b}{c}   {d}{e}{f}").unwrap();
        }
        writeln!(
            s,
            "moving IoU {:.2}   background IoU {:.2}   mIoU {:.2}",
            self.pixel.moving_iou, self.pixel.background_iou, self.pixel.miou
        )
        .unwrap();
        writeln!(
            s,
            "fps {}   time {} ms   params {:.4} M",
            fmt_opt(self.fps),
            fmt_opt(self.fps.map(|f| 1000.0 / f)),
            self.params_millions
        )
        .unwrap();
        s
    }
}

/// Ground-truth instances of `kind` at source resolution.
pub fn head_ground_truth(sample: &FrameSample, image: usize, kind: HeadKind) -> Vec<GtInstance> {
    sample
        .annotations
        .iter()
        .filter_map(|a| {
            let category = match kind {
                HeadKind::Semantic => a.category.semantic_label()?,
                HeadKind::Motion => a.moving.then_some(1)?,
            };
            Some(GtInstance {
                image,
                category,
                region: Instance {
                    bbox: a.bbox,
                    mask: a.mask.clone(),
                },
            })
        })
        .collect()
}

/// Union of the moving instances' masks.
pub fn moving_ground_truth(sample: &FrameSample) -> BitMask {
    let mut m = BitMask::new(sample.width(), sample.height());
    for a in sample.annotations.iter().filter(|a| a.moving) {
        m.union_with(&a.mask);
    }
    m
}

/// Both heads' post-processed detections at source resolution.
pub fn detect<T: Scalar>(
    model: &Model<T>,
    input: &ModelInput<T>,
    cfg: &EvalConfig,
) -> Result<(Vec<Detection>, Vec<Detection>)> {
    let pred = model.predict(input)?;
    let size = model.config.input_size;
    let run = |out| postprocess(out, &model.anchors, size, input.source_size, cfg);
    let sem = run(&pred.semantic);
    let mot = run(&pred.motion);
    let dropped = sem.dropped_non_finite + mot.dropped_non_finite;
    if dropped > 0 {
        log::warn!("dropped {dropped} non-finite box predictions");
    }
    Ok((sem.detections, mot.detections))
}

fn scored(dets: &[Detection], image: usize) -> impl Iterator<Item = ScoredInstance> + '_ {
    dets.iter().map(move |d| ScoredInstance {
        image,
        category: d.class,
        score: d.score,
        region: Instance {
            bbox: d.bbox,
            mask: d.mask.clone().expect("post-processed detections carry masks"),
        },
    })
}

fn head_report(dets: &[ScoredInstance], gts: &[GtInstance]) -> HeadReport {
    HeadReport {
        mask: ApSummary::compute(dets, gts, IouKind::Mask),
        bbox: ApSummary::compute(dets, gts, IouKind::Box),
    }
}

/// Evaluates both heads on `samples`. Speed is left unset; see [`benchmark`].
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    samples: &[FrameSample],
    cfg: &EvalConfig,
    fingerprint: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Input("no frames to evaluate".into()));
    }
    let mut dets = [Vec::new(), Vec::new()];
    let mut gts = [Vec::new(), Vec::new()];
    let mut confusion = PixelConfusion::default();
    for (i, sample) in samples.iter().enumerate() {
        let input = prepare_input(sample, &model.config)?;
        let (sem, mot) = detect(model, &input, cfg)?;
        confusion.add(
            &motion_mask(&mot, cfg.conf_thresh, sample.width(), sample.height()),
            &moving_ground_truth(sample),
        )?;
        dets[0].extend(scored(&sem, i));
        dets[1].extend(scored(&mot, i));
        gts[0].extend(head_ground_truth(sample, i, HeadKind::Semantic));
        gts[1].extend(head_ground_truth(sample, i, HeadKind::Motion));
    }
    Ok(EvalReport {
        frames: samples.len(),
        semantic: head_report(&dets[0], &gts[0]),
        motion: head_report(&dets[1], &gts[1]),
        pixel: confusion.metrics(),
        fps: None,
        params_millions: count_params(model),
        fingerprint: fingerprint.to_string(),
    })
}

/// Parameter count in millions.
pub fn count_params<T: Scalar>(model: &Model<T>) -> f64 {
    model.param_count() as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    pub fps: f64,
    pub median_ms: f64,
    pub runs: usize,
}

/// Median per-image latency of inference plus post-processing, one image per
/// step, cycling through `inputs`. Input preparation and flow are excluded.
pub fn benchmark<T: Scalar>(model: &Model<T>, inputs: &[ModelInput<T>], cfg: &EvalConfig) -> Result<BenchResult> {
    if inputs.is_empty() {
        return Err(Error::Input("no images to benchmark".into()));
    }
    let runs = cfg.bench_runs.max(1);
    let step = |input: &ModelInput<T>| -> Result<()> {
        let (_, mot) = detect(model, input, cfg)?;
        let (h, w) = input.source_size;
        std::hint::black_box(motion_mask(&mot, cfg.conf_thresh, w, h));
        Ok(())
    };
    for i in 0..cfg.bench_warmup {
        step(&inputs[i % inputs.len()])?;
    }
    let mut times = Vec::with_capacity(runs);
    for i in 0..runs {
        let t0 = Instant::now();
        step(&inputs[i % inputs.len()])?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = if runs % 2 == 1 {
        times[runs / 2]
    } else {
        (times[runs / 2 - 1] + times[runs / 2]) / 2.0
    };
    Ok(BenchResult {
        fps: 1.0 / median,
        median_ms: 1000.0 * median,
        runs,
    })
}
