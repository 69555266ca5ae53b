//! Alternating two-head training.
//!
//! Steps alternate between the semantic and motion heads in runs of
//! `alternation_k`. Each step draws a batch from that head's data source,
//! runs the shared trunk and only the active head, and updates the trunk
//! and that head. The inactive head's parameters and momentum are untouched.

mod augment;
pub mod checkpoint;
mod losses;
mod optim;
mod targets;

pub use augment::Augment;
pub use checkpoint::{load_checkpoint, load_pretrained, read_checkpoint, save_checkpoint, CheckpointMeta};
pub use losses::{
    bce_with_logits, box_loss, classification_loss, cross_entropy, mask_loss, smooth_l1, BoxImage, ClsImage,
    MaskGrads, MaskImage, Mining,
};
pub use optim::Sgd;
pub use targets::{downsample_mask, head_instances, mask_target, match_anchors, Assignment, FrameTargets, GtInstance, MaskTarget};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::{encode_box, BOX_VARIANCES};
use crate::config::TrainConfig;
use crate::datasets::FrameSample;
use crate::error::{Error, Result};
use crate::features::{prepare_input, ModelInput};
use crate::heads::{HeadGrads, HeadOutput};
use crate::model::{HeadKind, TRUNK};
use crate::tape::Tape;
use crate::{Gradients, Model, Scalar, Tensor};

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub cls: f64,
    pub bbox: f64,
    pub mask: f64,
}

impl LossParts {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        cfg.w_cls * self.cls + cfg.w_box * self.bbox + cfg.w_mask * self.mask
    }
}

/// Targets for `sample` under `kind`, in the model's input geometry.
pub fn frame_targets<T: Scalar>(model: &Model<T>, sample: &FrameSample, kind: HeadKind, cfg: &TrainConfig) -> FrameTargets {
    let size = model.config.input_size;
    let instances = head_instances(sample, kind, size);
    FrameTargets::build(instances, &model.anchors.boxes, size, model.proto_size(), cfg.pos_iou, cfg.neg_iou)
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn to_tensor<T: Scalar>(shape: &[usize], v: &[f64], w: f64) -> Tensor<T> {
    Tensor::from_vec(shape, v.iter().map(|&x| T::lit(x * w)).collect())
}

/// Loss terms of one head over a batch, with weighted gradients with respect
/// to each image's head outputs and prototypes.
pub fn batch_loss<T: Scalar>(
    outputs: &[HeadOutput<T>],
    targets: &[FrameTargets],
    model: &Model<T>,
    kind: HeadKind,
    cfg: &TrainConfig,
) -> (LossParts, Vec<(HeadGrads<T>, Tensor<T>)>) {
    let head = model.head(kind);
    let anchors = &model.anchors.boxes;
    let logits: Vec<Vec<f64>> = outputs.iter().map(|o| to_f64(&o.logits)).collect();
    let boxes: Vec<Vec<f64>> = outputs.iter().map(|o| to_f64(&o.boxes)).collect();
    let coefs: Vec<Vec<f64>> = outputs.iter().map(|o| to_f64(&o.coefs)).collect();
    let protos: Vec<Vec<f64>> = outputs.iter().map(|o| to_f64(&o.prototypes)).collect();
    let labels: Vec<Vec<usize>> = targets.iter().map(|t| t.instances.iter().map(|g| g.label).collect()).collect();
    let positives: Vec<Vec<(usize, usize)>> = targets.iter().map(FrameTargets::positives).collect();
    let encoded: Vec<Vec<(usize, [f64; 4])>> = positives
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            p.iter()
                .map(|&(a, g)| (a, encode_box(&t.instances[g].bbox, &anchors[a], BOX_VARIANCES)))
                .collect()
        })
        .collect();

    let mining = Mining {
        negative_ratio: cfg.negative_ratio,
        min_negatives: cfg.min_negative_anchors,
    };
    let cls_in: Vec<ClsImage> = (0..outputs.len())
        .map(|i| ClsImage {
            logits: &logits[i],
            num_classes: head.num_classes,
            matches: &targets[i].matches,
            labels: &labels[i],
            negative_frame: targets[i].negative_frame,
        })
        .collect();
    let (l_cls, g_cls) = classification_loss(&cls_in, mining);
    let box_in: Vec<BoxImage> = (0..outputs.len())
        .map(|i| BoxImage {
            preds: &boxes[i],
            targets: &encoded[i],
        })
        .collect();
    let (l_box, g_box) = box_loss(&box_in);
    let mask_in: Vec<MaskImage> = (0..outputs.len())
        .map(|i| MaskImage {
            prototypes: &protos[i],
            k: head.k,
            coefs: &coefs[i],
            positives: &positives[i],
            targets: &targets[i].masks,
        })
        .collect();
    let (l_mask, g_mask) = mask_loss(&mask_in);

    let grads = outputs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            (
                HeadGrads {
                    boxes: to_tensor(o.boxes.shape(), &g_box[i], cfg.w_box),
                    logits: to_tensor(o.logits.shape(), &g_cls[i], cfg.w_cls),
                    coefs: to_tensor(o.coefs.shape(), &g_mask[i].coefs, cfg.w_mask),
                },
                to_tensor(o.prototypes.shape(), &g_mask[i].prototypes, cfg.w_mask),
            )
        })
        .collect();
    (
        LossParts {
            cls: l_cls,
            bbox: l_box,
            mask: l_mask,
        },
        grads,
    )
}

/// Forward, loss and backward for one head on a batch. Only trunk and
/// `kind` parameters receive gradients.
pub fn loss_and_grads<T: Scalar>(
    model: &Model<T>,
    inputs: &[ModelInput<T>],
    targets: &[FrameTargets],
    kind: HeadKind,
    cfg: &TrainConfig,
) -> (LossParts, Gradients<T>) {
    let mut tapes = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in inputs {
        let mut tape = Tape::new(&model.params);
        let fwd = model.forward(&mut tape, input, &[kind]);
        outputs.push(model.head_output(&tape, &fwd, kind).expect("active head was run"));
        tapes.push((tape, fwd));
    }
    let (parts, out_grads) = batch_loss(&outputs, targets, model, kind, cfg);
    let mut grads = Gradients::new(&model.params);
    let head = model.head(kind);
    for ((tape, fwd), (hg, pg)) in tapes.iter().zip(out_grads) {
        let vars = fwd.head(kind).expect("active head was run");
        let mut seeds = head.seeds(tape, vars, &hg);
        seeds.push((fwd.prototypes, pg));
        tape.backward(seeds, &mut grads);
    }
    (parts, grads)
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub phase: HeadKind,
    pub lr: f64,
    pub loss: LossParts,
    pub total: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} phase={} lr={:e} cls={:.6} box={:.6} mask={:.6} total={:.6}",
            self.iteration,
            self.phase.letter(),
            self.lr,
            self.loss.cls,
            self.loss.bbox,
            self.loss.mask,
            self.total
        )
    }
}

/// Head trained at 0-based step `iteration` with alternation period `k`.
pub fn phase_at(iteration: usize, k: usize) -> HeadKind {
    if (iteration / k.max(1)) % 2 == 0 {
        HeadKind::Semantic
    } else {
        HeadKind::Motion
    }
}

/// Endless shuffled walk over a dataset, reshuffled every epoch.
#[derive(Debug, Clone)]
struct Stream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

type Prepared<T> = (ModelInput<T>, FrameTargets);

/// Stateful alternating trainer over two data sources.
pub struct Trainer<'d, T: Scalar> {
    pub cfg: TrainConfig,
    data: [&'d [FrameSample]; 2],
    streams: [Stream; 2],
    aug_rng: ChaCha8Rng,
    /// Un-augmented inputs and targets, filled lazily when augmentation is off.
    cache: [Vec<Option<Prepared<T>>>; 2],
    sgd: Sgd<T>,
    pub iteration: usize,
    pub total_iterations: usize,
    pub milestones: Vec<usize>,
}

fn slot(kind: HeadKind) -> usize {
    match kind {
        HeadKind::Semantic => 0,
        HeadKind::Motion => 1,
    }
}

impl<'d, T: Scalar> Trainer<'d, T> {
    /// `semantic` feeds the semantic phases and `motion` the motion phases;
    /// both may be the same slice.
    pub fn new(
        model: &Model<T>,
        semantic: &'d [FrameSample],
        motion: &'d [FrameSample],
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if semantic.is_empty() || motion.is_empty() {
            return Err(Error::Input("both training sources must be non-empty".into()));
        }
        let total = cfg.total_iterations(semantic.len().max(motion.len()));
        let milestones = cfg.milestones(total);
        Ok(Self {
            cfg: cfg.clone(),
            data: [semantic, motion],
            streams: [
                Stream::new(semantic.len(), seed ^ 0x5e3a_0001),
                Stream::new(motion.len(), seed ^ 0x5e3a_0002),
            ],
            aug_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5e3a_0003),
            cache: [vec![None; semantic.len()], vec![None; motion.len()]],
            sgd: Sgd::new(&model.params, cfg.momentum, cfg.weight_decay),
            iteration: 0,
            total_iterations: total,
            milestones,
        })
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.total_iterations
    }

    fn prepare(&mut self, model: &Model<T>, kind: HeadKind, idx: usize) -> Result<Prepared<T>> {
        let s = slot(kind);
        let sample = &self.data[s][idx];
        if !self.cfg.augment {
            if let Some(p) = &self.cache[s][idx] {
                return Ok(p.clone());
            }
            let p = (prepare_input(sample, &model.config)?, frame_targets(model, sample, kind, &self.cfg));
            self.cache[s][idx] = Some(p.clone());
            return Ok(p);
        }
        let aug = Augment::sample(&mut self.aug_rng, self.cfg.crop_shift).apply(sample);
        Ok((prepare_input(&aug, &model.config)?, frame_targets(model, &aug, kind, &self.cfg)))
    }

    /// Runs one optimizer step.
    pub fn step(&mut self, model: &mut Model<T>) -> Result<StepRecord> {
        let it = self.iteration;
        let kind = phase_at(it, self.cfg.alternation_k);
        let lr = self.cfg.lr_at(it, &self.milestones);
        let batch = self.streams[slot(kind)].next_batch(self.cfg.batch_size);
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for idx in batch {
            let (i, t) = self.prepare(model, kind, idx)?;
            inputs.push(i);
            targets.push(t);
        }
        let (parts, mut grads) = loss_and_grads(model, &inputs, &targets, kind, &self.cfg);
        let total = parts.total(&self.cfg);
        let gnorm = grads.norm().as_f64();
        if !total.is_finite() || !gnorm.is_finite() {
            return Err(Error::Diverged {
                phase: kind.group().to_string(),
                iteration: it,
                msg: format!("loss {total}, gradient norm {gnorm}"),
            });
        }
        if let Some(max) = self.cfg.max_grad_norm {
            if gnorm > max {
                grads.scale(T::lit(max / gnorm));
            }
        }
        let mut active = model.params.group(TRUNK);
        active.extend(model.params.group(kind.group()));
        self.sgd.step(&mut model.params, &grads, &active, lr);
        self.iteration += 1;
        Ok(StepRecord {
            iteration: it,
            phase: kind,
            lr,
            loss: parts,
            total,
        })
    }
}

/// Trains for the configured number of steps. `on_step` sees every record
/// and the updated model; returning `true` stops early.
pub fn alternate_train<T: Scalar>(
    model: &mut Model<T>,
    semantic: &[FrameSample],
    motion: &[FrameSample],
    cfg: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepRecord, &Model<T>) -> Result<bool>,
) -> Result<Vec<StepRecord>> {
    let mut trainer = Trainer::new(model, semantic, motion, cfg, seed)?;
    let mut log = Vec::new();
    while !trainer.finished() {
        let rec = trainer.step(model)?;
        log.push(rec);
        if on_step(&rec, model)? {
            break;
        }
    }
    Ok(log)
}
