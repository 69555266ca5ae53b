//! The joint network: shared trunk and prototypes, semantic and motion heads.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, ModelInput};
use crate::heads::{AnchorGrid, Head, HeadOutput, HeadVars, Prediction, Protonet};
use crate::tape::{Tape, Var};
use crate::{ParamStore, Scalar};

/// Prefix of parameters shared by both heads.
pub const TRUNK: &str = "trunk";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Semantic,
    Motion,
}

impl HeadKind {
    /// Parameter group owned by this head.
    pub fn group(self) -> &'static str {
        match self {
            HeadKind::Semantic => "semantic",
            HeadKind::Motion => "motion",
        }
    }

    pub fn other(self) -> HeadKind {
        match self {
            HeadKind::Semantic => HeadKind::Motion,
            HeadKind::Motion => HeadKind::Semantic,
        }
    }

    /// Phase letter used in logs.
    pub fn letter(self) -> char {
        match self {
            HeadKind::Semantic => 'S',
            HeadKind::Motion => 'M',
        }
    }
}

/// Tape nodes produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub prototypes: Var,
    pub semantic: Option<HeadVars>,
    pub motion: Option<HeadVars>,
}

impl Forward {
    pub fn head(&self, kind: HeadKind) -> Option<&HeadVars> {
        match kind {
            HeadKind::Semantic => self.semantic.as_ref(),
            HeadKind::Motion => self.motion.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub features: FeatureExtractor,
    pub protonet: Protonet,
    pub semantic: Head,
    pub motion: Head,
    pub anchors: AnchorGrid,
}

impl<T: Scalar> Model<T> {
    /// Builds a randomly initialised model; the same seed gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let features = FeatureExtractor::build(&config, &mut params, &mut rng);
        let c = config.fpn_channels;
        let k = config.num_prototypes;
        let a = config.aspect_ratios.len();
        let protonet = Protonet::build(c, k, "trunk.protonet", &mut params, &mut rng);
        let semantic = Head::build("semantic", c, config.num_semantic_classes + 1, a, k, &mut params, &mut rng);
        let motion = Head::build("motion", c, 2, a, k, &mut params, &mut rng);
        let anchors = AnchorGrid::new(config.input_size, config.anchor_scale, &config.aspect_ratios);
        Ok(Self {
            config,
            params,
            features,
            protonet,
            semantic,
            motion,
            anchors,
        })
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        match kind {
            HeadKind::Semantic => &self.semantic,
            HeadKind::Motion => &self.motion,
        }
    }

    /// `(height, width)` of the prototype maps: twice the P3 resolution.
    pub fn proto_size(&self) -> (usize, usize) {
        let (h, w) = self.anchors.level_sizes[0];
        (2 * h, 2 * w)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn check_input(&self, input: &ModelInput<T>) -> Result<()> {
        let [h, w] = self.config.input_size;
        let want = [3, h, w];
        if input.appearance.shape() != want {
            return Err(Error::Shape(format!(
                "appearance input {:?}, expected {want:?}",
                input.appearance.shape()
            )));
        }
        match (&input.motion, self.config.input_mode.two_stream()) {
            (Some(m), true) if m.shape() == want => Ok(()),
            (Some(m), true) => Err(Error::Shape(format!("motion input {:?}, expected {want:?}", m.shape()))),
            (None, true) => Err(Error::Input(format!(
                "input mode {:?} needs a motion input",
                self.config.input_mode
            ))),
            (_, false) => Ok(()),
        }
    }

    /// Records the trunk, prototypes and the requested heads on `tape`.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, T>, input: &ModelInput<T>, heads: &[HeadKind]) -> Forward {
        let levels = self.features.forward(tape, input);
        let prototypes = self.protonet.forward(tape, levels[0]);
        let run = |kind: HeadKind, tape: &mut Tape<'p, T>| {
            heads.contains(&kind).then(|| self.head(kind).forward(tape, &levels))
        };
        let semantic = run(HeadKind::Semantic, tape);
        let motion = run(HeadKind::Motion, tape);
        Forward {
            prototypes,
            semantic,
            motion,
        }
    }

    /// Reads one head's outputs from a recorded forward pass.
    pub fn head_output(&self, tape: &Tape<'_, T>, fwd: &Forward, kind: HeadKind) -> Option<HeadOutput<T>> {
        let protos = Arc::new(tape.value(fwd.prototypes).clone());
        fwd.head(kind).map(|v| self.head(kind).collect(tape, v, protos))
    }

    /// Inference: both heads over one shared prototype tensor.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<Prediction<T>> {
        self.check_input(input)?;
        let mut tape = Tape::new(&self.params);
        let fwd = self.forward(&mut tape, input, &[HeadKind::Semantic, HeadKind::Motion]);
        let prototypes = Arc::new(tape.value(fwd.prototypes).clone());
        let semantic = self
            .semantic
            .collect(&tape, fwd.semantic.as_ref().expect("semantic head"), prototypes.clone());
        let motion = self
            .motion
            .collect(&tape, fwd.motion.as_ref().expect("motion head"), prototypes.clone());
        Ok(Prediction {
            prototypes,
            semantic,
            motion,
        })
    }
}
