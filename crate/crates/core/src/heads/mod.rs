//! Prototype network, per-task prediction heads and their flattened outputs.

mod anchors;

pub use anchors::{level_sizes, AnchorGrid};

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::features::NUM_LEVELS;
use crate::layers::Conv;
use crate::tape::{Tape, Var};
use crate::{ParamStore, Scalar, Tensor};

/// Produces `k` non-negative prototype masks at twice the P3 resolution.
#[derive(Debug, Clone)]
pub struct Protonet {
    convs: [Conv; 3],
    post: Conv,
    out: Conv,
    pub k: usize,
}

impl Protonet {
    pub fn build<T: Scalar>(
        channels: usize,
        k: usize,
        prefix: &str,
        params: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let convs = std::array::from_fn(|i| {
            Conv::new(params, &format!("{prefix}.conv{i}"), channels, channels, 3, 1, 1, rng)
        });
        let post = Conv::new(params, &format!("{prefix}.post"), channels, channels, 3, 1, 1, rng);
        let out = Conv::new(params, &format!("{prefix}.out"), channels, k, 1, 1, 1, rng);
        Self { convs, post, out, k }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p3: Var) -> Var {
        let mut h = p3;
        for c in &self.convs {
            h = c.forward(tape, h);
            h = tape.relu(h);
        }
        let (_, ph, pw) = tape.value(h).chw();
        h = tape.resize_bilinear(h, 2 * ph, 2 * pw);
        h = self.post.forward(tape, h);
        h = tape.relu(h);
        h = self.out.forward(tape, h);
        tape.relu(h)
    }
}

/// Predictors start near zero so initial boxes sit on their anchors and
/// class scores are close to uniform.
const PREDICTOR_GAIN: f64 = 0.1;

/// Tape nodes of one head, one entry per pyramid level.
#[derive(Debug, Clone)]
pub struct HeadVars {
    pub boxes: Vec<Var>,
    pub logits: Vec<Var>,
    pub coefs: Vec<Var>,
}

/// Box, class and coefficient predictors shared across pyramid levels.
#[derive(Debug, Clone)]
pub struct Head {
    pub name: String,
    tower: Conv,
    boxes: Conv,
    logits: Conv,
    coefs: Conv,
    /// Classes including background at index 0.
    pub num_classes: usize,
    pub num_ratios: usize,
    pub k: usize,
}

impl Head {
    pub fn build<T: Scalar>(
        name: &str,
        channels: usize,
        num_classes: usize,
        num_ratios: usize,
        k: usize,
        params: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let a = num_ratios;
        Self {
            name: name.to_string(),
            tower: Conv::new(params, &format!("{name}.tower"), channels, channels, 3, 1, 1, rng),
            boxes: Conv::with_gain(params, &format!("{name}.box"), channels, a * 4, 3, 1, 1, PREDICTOR_GAIN, rng),
            logits: Conv::with_gain(params, &format!("{name}.cls"), channels, a * num_classes, 3, 1, 1, PREDICTOR_GAIN, rng),
            coefs: Conv::with_gain(params, &format!("{name}.coef"), channels, a * k, 3, 1, 1, PREDICTOR_GAIN, rng),
            num_classes,
            num_ratios,
            k,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, levels: &[Var; NUM_LEVELS]) -> HeadVars {
        let mut out = HeadVars {
            boxes: Vec::new(),
            logits: Vec::new(),
            coefs: Vec::new(),
        };
        for &p in levels {
            let t = self.tower.forward(tape, p);
            let t = tape.relu(t);
            out.boxes.push(self.boxes.forward(tape, t));
            out.logits.push(self.logits.forward(tape, t));
            let c = self.coefs.forward(tape, t);
            out.coefs.push(tape.tanh(c));
        }
        out
    }

    /// Reads the head's outputs off the tape as per-anchor rows.
    pub fn collect<T: Scalar>(&self, tape: &Tape<'_, T>, vars: &HeadVars, prototypes: Arc<Tensor<T>>) -> HeadOutput<T> {
        let a = self.num_ratios;
        let gather = |vs: &[Var], per| {
            let ts: Vec<&Tensor<T>> = vs.iter().map(|&v| tape.value(v)).collect();
            flatten_levels(&ts, a, per)
        };
        HeadOutput {
            boxes: gather(&vars.boxes, 4),
            logits: gather(&vars.logits, self.num_classes),
            coefs: gather(&vars.coefs, self.k),
            prototypes,
        }
    }

    /// Routes per-anchor gradients back to the head's level outputs.
    pub fn seeds<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        vars: &HeadVars,
        grads: &HeadGrads<T>,
    ) -> Vec<(Var, Tensor<T>)> {
        let a = self.num_ratios;
        let mut out = Vec::new();
        let mut route = |vs: &[Var], flat: &Tensor<T>, per: usize| {
            let shapes: Vec<(usize, usize)> = vs
                .iter()
                .map(|&v| {
                    let (_, h, w) = tape.value(v).chw();
                    (h, w)
                })
                .collect();
            for (v, t) in vs.iter().zip(unflatten_levels(flat, &shapes, a, per)) {
                out.push((*v, t));
            }
        };
        route(&vars.boxes, &grads.boxes, 4);
        route(&vars.logits, &grads.logits, self.num_classes);
        route(&vars.coefs, &grads.coefs, self.k);
        out
    }
}

/// Per-anchor outputs of one head. Rows follow the anchor order.
#[derive(Debug, Clone)]
pub struct HeadOutput<T> {
    /// `[N, 4]` box offsets `(dx, dy, dw, dh)`.
    pub boxes: Tensor<T>,
    /// `[N, C]` class logits, background first.
    pub logits: Tensor<T>,
    /// `[N, k]` mask coefficients in `(-1, 1)`.
    pub coefs: Tensor<T>,
    /// `[k, Hp, Wp]` prototypes, shared between heads.
    pub prototypes: Arc<Tensor<T>>,
}

impl<T: Scalar> HeadOutput<T> {
    pub fn num_anchors(&self) -> usize {
        self.boxes.shape()[0]
    }

    pub fn row<'a>(t: &'a Tensor<T>, i: usize) -> &'a [T] {
        let per = t.shape()[1];
        &t.data()[i * per..(i + 1) * per]
    }
}

/// Loss gradients with respect to a [`HeadOutput`]'s per-anchor rows.
#[derive(Debug, Clone)]
pub struct HeadGrads<T> {
    pub boxes: Tensor<T>,
    pub logits: Tensor<T>,
    pub coefs: Tensor<T>,
}

impl<T: Scalar> HeadGrads<T> {
    pub fn zeros_like(out: &HeadOutput<T>) -> Self {
        Self {
            boxes: Tensor::zeros(out.boxes.shape()),
            logits: Tensor::zeros(out.logits.shape()),
            coefs: Tensor::zeros(out.coefs.shape()),
        }
    }
}

/// Full network output: one prototype set shared by both heads.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub prototypes: Arc<Tensor<T>>,
    pub semantic: HeadOutput<T>,
    pub motion: HeadOutput<T>,
}

/// Stacks `[a*per, H, W]` level maps into `[N, per]` rows ordered by
/// level, row, column and anchor.
pub fn flatten_levels<T: Scalar>(levels: &[&Tensor<T>], a: usize, per: usize) -> Tensor<T> {
    let n: usize = levels.iter().map(|t| t.len() / per).sum();
    let mut data = Vec::with_capacity(n * per);
    for t in levels {
        let (c, h, w) = t.chw();
        assert_eq!(c, a * per, "level has {c} channels, expected {}", a * per);
        let d = t.data();
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    data.push(d[(k * h + i) * w + j]);
                }
            }
        }
    }
    Tensor::from_vec(&[n, per], data)
}

/// Inverse of [`flatten_levels`].
pub fn unflatten_levels<T: Scalar>(flat: &Tensor<T>, shapes: &[(usize, usize)], a: usize, per: usize) -> Vec<Tensor<T>> {
    let c = a * per;
    let src = flat.data();
    let mut off = 0;
    shapes
        .iter()
        .map(|&(h, w)| {
            let mut t = Tensor::zeros(&[c, h, w]);
            let d = t.data_mut();
            for i in 0..h {
                for j in 0..w {
                    for k in 0..c {
                        d[(k * h + i) * w + j] = src[off];
                        off += 1;
                    }
                }
            }
            t
        })
        .collect()
}
