//! Input preparation, two-stream feature extraction and fusion.
//!
//! The appearance stream sees `image_t`. The motion stream sees either
//! `image_t1` or a rasterised flow field. Each stream runs its own backbone
//! unless weights are shared; the taps are fused level by level and fed to
//! a single feature pyramid.

mod backbone;
mod fpn;

pub use backbone::{Backbone, BackboneSpec, TAP_STRIDES};
pub use fpn::{Fpn, LEVEL_STRIDES, NUM_LEVELS};

use image::RgbImage;
use rand_chacha::ChaCha8Rng;

use crate::config::{FusionMode, InputMode, ModelConfig};
use crate::datasets::{FlowField, FrameSample};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::ops::resize_plane_bilinear;
use crate::tape::{Tape, Var};
use crate::{ParamStore, Scalar, Tensor};

/// Network-ready input tensors for one frame.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    pub appearance: Tensor<T>,
    pub motion: Option<Tensor<T>>,
    /// `(height, width)` of the source frame.
    pub source_size: (usize, usize),
}

fn resize_plane(src: Vec<f64>, sh: usize, sw: usize, h: usize, w: usize) -> Vec<f64> {
    if (sh, sw) == (h, w) {
        src
    } else {
        resize_plane_bilinear(&src, sh, sw, h, w)
    }
}

/// RGB image as `[3, h, w]` with values `x/255 - 0.5`.
pub fn rgb_tensor<T: Scalar>(img: &RgbImage, h: usize, w: usize) -> Tensor<T> {
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        let plane: Vec<f64> = img.pixels().map(|p| p[c] as f64 / 255.0 - 0.5).collect();
        data.extend(resize_plane(plane, sh, sw, h, w).into_iter().map(T::lit));
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Flow as `[3, h, w]`: scaled `u`, `v` and magnitude, each in `[-0.5, 0.5]`.
/// Vectors are rescaled with the raster so they stay in target pixels.
pub fn flow_tensor<T: Scalar>(flow: &FlowField, h: usize, w: usize, flow_scale: f64) -> Tensor<T> {
    let (sw, sh) = (flow.width(), flow.height());
    let u: Vec<f64> = flow.u().iter().map(|&v| v as f64 * w as f64 / sw as f64).collect();
    let v: Vec<f64> = flow.v().iter().map(|&v| v as f64 * h as f64 / sh as f64).collect();
    let u = resize_plane(u, sh, sw, h, w);
    let v = resize_plane(v, sh, sw, h, w);
    let half = |x: f64| (x / (2.0 * flow_scale)).clamp(-0.5, 0.5);
    let mut data = Vec::with_capacity(3 * h * w);
    data.extend(u.iter().map(|&x| T::lit(half(x))));
    data.extend(v.iter().map(|&x| T::lit(half(x))));
    data.extend(
        u.iter()
            .zip(&v)
            .map(|(&a, &b)| T::lit(((a * a + b * b).sqrt() / flow_scale).clamp(0.0, 1.0) - 0.5)),
    );
    Tensor::from_vec(&[3, h, w], data)
}

/// Converts a sample into network inputs for the configured input mode.
pub fn prepare_input<T: Scalar>(sample: &FrameSample, cfg: &ModelConfig) -> Result<ModelInput<T>> {
    let [h, w] = cfg.input_size;
    let appearance = rgb_tensor(&sample.image_t, h, w);
    let missing = |what: &str| {
        Error::Input(format!(
            "{}/{}: input mode {:?} needs {what}, which the sample lacks",
            sample.sequence_id, sample.frame_id, cfg.input_mode
        ))
    };
    let motion = match cfg.input_mode {
        InputMode::Rgb => None,
        InputMode::RgbRgb => {
            let img = sample.image_t1.as_ref().ok_or_else(|| missing("image_t1"))?;
            Some(rgb_tensor(img, h, w))
        }
        InputMode::RgbFlow => {
            let flow = sample.flow.as_ref().ok_or_else(|| missing("flow"))?;
            Some(flow_tensor(flow, h, w, cfg.flow_scale))
        }
    };
    Ok(ModelInput {
        appearance,
        motion,
        source_size: (sample.height(), sample.width()),
    })
}

/// Backbone streams, per-tap fusion and the feature pyramid.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    mode: InputMode,
    fusion: FusionMode,
    appearance: Backbone,
    /// `None` for single-stream input or shared weights.
    motion: Option<Backbone>,
    project: Option<[Conv; 3]>,
    pub fpn: Fpn,
}

impl FeatureExtractor {
    pub fn build<T: Scalar>(cfg: &ModelConfig, params: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        let spec = BackboneSpec {
            name: cfg.backbone,
            width: cfg.width,
        };
        let two = cfg.input_mode.two_stream();
        let appearance = Backbone::build(spec, "trunk.appearance", params, rng);
        let motion = (two && !cfg.share_stream_weights).then(|| Backbone::build(spec, "trunk.motion", params, rng));
        let ch = spec.tap_channels();
        let project = (two && cfg.fusion == FusionMode::ConcatProject).then(|| {
            std::array::from_fn(|i| Conv::new(params, &format!("trunk.fusion{i}"), 2 * ch[i], ch[i], 1, 1, 1, rng))
        });
        let fpn = Fpn::build(ch, cfg.fpn_channels, "trunk.fpn", params, rng);
        Self {
            mode: cfg.input_mode,
            fusion: cfg.fusion,
            appearance,
            motion,
            project,
            fpn,
        }
    }

    /// Fused taps, before the pyramid.
    pub fn fused_taps<T: Scalar>(&self, tape: &mut Tape<'_, T>, input: &ModelInput<T>) -> [Var; 3] {
        let a = tape.leaf(input.appearance.clone(), false);
        let ta = self.appearance.forward(tape, a);
        if !self.mode.two_stream() {
            return ta;
        }
        let m = input
            .motion
            .clone()
            .expect("two-stream input mode requires a motion tensor");
        let m = tape.leaf(m, false);
        let tm = self.motion.as_ref().unwrap_or(&self.appearance).forward(tape, m);
        std::array::from_fn(|i| match (&self.project, self.fusion) {
            (Some(p), FusionMode::ConcatProject) => {
                let cat = tape.concat(&[ta[i], tm[i]]);
                p[i].forward(tape, cat)
            }
            _ => tape.add(ta[i], tm[i]),
        })
    }

    /// P3..P7 pyramid levels.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, input: &ModelInput<T>) -> [Var; NUM_LEVELS] {
        let taps = self.fused_taps(tape, input);
        self.fpn.forward(tape, taps)
    }
}
