//! Run configuration: dataset, model, training and evaluation sections.
//!
//! All sections reject unknown keys. Missing keys fall back to defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{Split, SyntheticSceneConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    TinyConv,
    MobilenetV2Style,
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny_conv" => Ok(BackboneName::TinyConv),
            "mobilenet_v2_style" => Ok(BackboneName::MobilenetV2Style),
            other => Err(Error::Config(format!(
                "model.backbone: unknown backbone {other:?}; accepted values: tiny_conv, mobilenet_v2_style"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Channel concatenation followed by a 1×1 projection back to tap width.
    ConcatProject,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Rgb,
    RgbRgb,
    RgbFlow,
}

impl InputMode {
    pub fn two_stream(self) -> bool {
        self != InputMode::Rgb
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneName,
    /// Channel multiplier applied to the backbone's stage widths.
    pub width: f64,
    pub fusion: FusionMode,
    pub input_mode: InputMode,
    pub share_stream_weights: bool,
    pub fpn_channels: usize,
    pub num_prototypes: usize,
    pub num_semantic_classes: usize,
    /// Anchor side length as a multiple of the pyramid level stride.
    pub anchor_scale: f64,
    pub aspect_ratios: Vec<f64>,
    /// `(height, width)` of the network input.
    pub input_size: [usize; 2],
    /// Flow magnitude (pixels) that maps to the edge of the input range.
    pub flow_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneName::TinyConv,
            width: 1.0,
            fusion: FusionMode::ConcatProject,
            input_mode: InputMode::RgbFlow,
            share_stream_weights: false,
            fpn_channels: 64,
            num_prototypes: 32,
            num_semantic_classes: 5,
            anchor_scale: 3.0,
            aspect_ratios: vec![1.0, 0.5, 2.0],
            input_size: [128, 128],
            flow_scale: 8.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [h, w] = self.input_size;
        if h < 32 || w < 32 {
            return bad(format!("model.input_size must be at least 32x32, got {h}x{w}"));
        }
        if self.width <= 0.0 || !self.width.is_finite() {
            return bad(format!("model.width must be positive, got {}", self.width));
        }
        if self.fpn_channels == 0 || self.num_prototypes == 0 || self.num_semantic_classes == 0 {
            return bad("model.fpn_channels, num_prototypes and num_semantic_classes must be positive".into());
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|r| *r <= 0.0) {
            return bad("model.aspect_ratios must be a non-empty list of positive ratios".into());
        }
        if self.anchor_scale <= 0.0 || self.flow_scale <= 0.0 {
            return bad("model.anchor_scale and model.flow_scale must be positive".into());
        }
        Ok(())
    }
}

/// SGD schedule and loss settings for alternating two-head training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Total optimizer steps; derived from `epochs` when absent.
    pub iterations: Option<usize>,
    /// Steps at which the learning rate is divided by 10; derived from the
    /// total step count when absent.
    pub lr_milestones: Option<Vec<usize>>,
    /// Consecutive steps per head before switching.
    pub alternation_k: usize,
    pub w_cls: f64,
    pub w_box: f64,
    pub w_mask: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub negative_ratio: usize,
    pub min_negative_anchors: usize,
    pub augment: bool,
    /// Maximum horizontal/vertical shift of the random crop, in pixels.
    pub crop_shift: usize,
    /// Optional global gradient-norm clip.
    pub max_grad_norm: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 4,
            epochs: 150,
            iterations: None,
            lr_milestones: None,
            alternation_k: 1,
            w_cls: 1.0,
            w_box: 1.5,
            w_mask: 6.125,
            pos_iou: 0.5,
            neg_iou: 0.4,
            negative_ratio: 3,
            min_negative_anchors: 16,
            augment: true,
            crop_shift: 8,
            max_grad_norm: None,
            log_every: 10,
        }
    }
}

/// Reference schedule: lr drops at 280k and 600k of 800k steps.
const MILESTONE_FRACTIONS: [f64; 2] = [280.0 / 800.0, 600.0 / 800.0];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alternation_k == 0 {
            return bad("train.alternation_k must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(self.lr0 > 0.0) {
            return bad(format!("train.lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("train.momentum must lie in [0,1), got {}", self.momentum));
        }
        if let Some(m) = &self.lr_milestones {
            if m.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("train.lr_milestones must be strictly increasing, got {m:?}"));
            }
        }
        if !(self.neg_iou <= self.pos_iou) {
            return bad("train.neg_iou must not exceed train.pos_iou".into());
        }
        Ok(())
    }

    /// Total optimizer steps for a training set of `train_len` frames.
    pub fn total_iterations(&self, train_len: usize) -> usize {
        self.iterations
            .unwrap_or_else(|| self.epochs * train_len.div_ceil(self.batch_size.max(1)))
    }

    pub fn milestones(&self, total: usize) -> Vec<usize> {
        match &self.lr_milestones {
            Some(m) => m.clone(),
            None => MILESTONE_FRACTIONS
                .iter()
                .map(|f| ((total as f64) * f).round() as usize)
                .collect(),
        }
    }

    /// Learning rate in effect at 0-based step `iteration`.
    pub fn lr_at(&self, iteration: usize, milestones: &[usize]) -> f64 {
        let drops = milestones.iter().filter(|&&m| iteration >= m).count();
        self.lr0 / 10f64.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub top_k: usize,
    /// Minimum score for a motion instance to enter the pixel mask.
    pub conf_thresh: f64,
    pub mask_thresh: f64,
    pub crop_padding: f64,
    pub bench_warmup: usize,
    pub bench_runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            nms_iou: 0.5,
            top_k: 200,
            conf_thresh: 0.3,
            mask_thresh: 0.5,
            crop_padding: 1.0,
            bench_warmup: 10,
            bench_runs: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Instance motion segmentation layout with semantic and motion labels.
    Instancemotseg,
    /// Class-agnostic layout; used only by the motion head.
    ClassAgnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub train_split: Split,
    pub eval_split: Split,
    /// Optional class-agnostic dataset feeding the motion phases.
    pub motion_root: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Instancemotseg,
            root: PathBuf::from("data"),
            train_split: Split::Train,
            eval_split: Split::Test,
            motion_root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synthetic: SyntheticSceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synthetic: SyntheticSceneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synthetic.validate()
    }

    /// FNV-1a hash of the serialized config, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        fingerprint(self.to_toml().as_bytes())
    }

    /// Seed for one consumer of randomness, derived from the root seed.
    pub fn seed_for(&self, stream: &str) -> u64 {
        derive_seed(self.seed, stream)
    }
}

/// Mixes `root` with a stream name so every module gets its own seed.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut z = root ^ u64::from_str_radix(&fingerprint(stream.as_bytes()), 16).expect("hex digest");
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.seed_for("model"), cfg.seed_for("train"));
        assert_eq!(cfg.seed_for("model"), derive_seed(0, "model"));
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[model]\nbackbon = \"tiny_conv\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("backbon"), "{msg}");
        assert!(msg.contains("backbone"), "{msg}");
    }

    #[test]
    fn unknown_backbone_lists_accepted_values() {
        let err = RunConfig::from_toml("[model]\nbackbone = \"resnet101\"\n").unwrap_err();
        assert!(err.to_string().contains("tiny_conv"), "{err}");
        let err = "resnet101".parse::<BackboneName>().unwrap_err();
        assert!(err.to_string().contains("mobilenet_v2_style"));
    }

    #[test]
    fn paper_optimizer_defaults() {
        let t = TrainConfig::default();
        assert_eq!((t.lr0, t.momentum, t.weight_decay, t.batch_size, t.epochs), (1e-4, 0.9, 5e-4, 4, 150));
        assert_eq!((t.w_cls, t.w_box, t.w_mask), (1.0, 1.5, 6.125));
    }

    #[test]
    fn lr_drops_tenfold_at_milestones() {
        let t = TrainConfig {
            lr_milestones: Some(vec![280_000, 600_000]),
            ..Default::default()
        };
        let m = t.milestones(800_000);
        assert_eq!(t.lr_at(279_999, &m), 1e-4);
        assert!((t.lr_at(280_000, &m) - 1e-5).abs() < 1e-20);
        assert!((t.lr_at(600_000, &m) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn derived_milestones_scale_with_run_length() {
        let t = TrainConfig::default();
        assert_eq!(t.milestones(800_000), vec![280_000, 600_000]);
        assert_eq!(t.milestones(2000), vec![700, 1500]);
    }

    #[test]
    fn rejects_bad_train_values() {
        let mut t = TrainConfig::default();
        t.alternation_k = 0;
        assert!(t.validate().is_err());
        let t = TrainConfig {
            lr_milestones: Some(vec![10, 5]),
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }
}
