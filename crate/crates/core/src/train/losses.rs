//! Classification, box and mask losses with analytic gradients.
//!
//! Every loss works on a batch of images and returns the scalar loss plus
//! its gradient with respect to each image's raw head outputs.

use super::targets::{Assignment, MaskTarget};
use crate::scalar::sigmoid;

/// Hard negative mining settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mining {
    /// Negatives kept per positive.
    pub negative_ratio: usize,
    /// Lower bound on the background anchors trained on a negative frame.
    pub min_negatives: usize,
}

impl Default for Mining {
    fn default() -> Self {
        Self {
            negative_ratio: 3,
            min_negatives: 16,
        }
    }
}

/// Softmax cross-entropy of one row and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let loss = s.ln() + m - logits[target];
    let mut g: Vec<f64> = e.iter().map(|v| v / s).collect();
    g[target] -= 1.0;
    (loss, g)
}

pub struct ClsImage<'a> {
    /// `[N, C]` logits, row-major.
    pub logits: &'a [f64],
    pub num_classes: usize,
    pub matches: &'a [Assignment],
    /// Class index of every ground truth.
    pub labels: &'a [usize],
    pub negative_frame: bool,
}

/// Anchors selected for the classification loss in one image, with their
/// target class.
fn select_anchors(img: &ClsImage, mining: Mining, negative_quota: usize) -> Vec<(usize, usize)> {
    let c = img.num_classes;
    let row = |i: usize| &img.logits[i * c..(i + 1) * c];
    let mut chosen = Vec::new();
    let mut negatives = Vec::new();
    for (i, m) in img.matches.iter().enumerate() {
        match m {
            Assignment::Positive(g) if !img.negative_frame => chosen.push((i, img.labels[*g])),
            Assignment::Ignore if !img.negative_frame => {}
            _ => negatives.push((cross_entropy(row(i), 0).0, i)),
        }
    }
    let quota = if img.negative_frame {
        negative_quota
    } else {
        mining.negative_ratio * chosen.len()
    };
    negatives.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    chosen.extend(negatives.into_iter().take(quota).map(|(_, i)| (i, 0)));
    chosen
}

/// Softmax cross-entropy over positives and mined negatives, averaged over
/// every selected anchor in the batch.
///
/// Images with ground truth keep `negative_ratio` hardest negatives per
/// positive. Negative frames train the hardest `max(min_negatives,
/// ceil(negative_ratio × mean positives per image))` anchors toward
/// background, which pushes down confident false positives.
pub fn classification_loss(images: &[ClsImage], mining: Mining) -> (f64, Vec<Vec<f64>>) {
    let positives: usize = images
        .iter()
        .filter(|i| !i.negative_frame)
        .map(|i| i.matches.iter().filter(|m| matches!(m, Assignment::Positive(_))).count())
        .sum();
    let mean_pos = positives as f64 / images.len().max(1) as f64;
    let quota = ((mining.negative_ratio as f64 * mean_pos).ceil() as usize).max(mining.min_negatives);
    let selected: Vec<Vec<(usize, usize)>> = images.iter().map(|img| select_anchors(img, mining, quota)).collect();
    let total: usize = selected.iter().map(Vec::len).sum();
    let mut grads: Vec<Vec<f64>> = images.iter().map(|i| vec![0.0; i.logits.len()]).collect();
    if total == 0 {
        return (0.0, grads);
    }
    let norm = 1.0 / total as f64;
    let mut loss = 0.0;
    for ((img, sel), grad) in images.iter().zip(&selected).zip(&mut grads) {
        let c = img.num_classes;
        for &(i, target) in sel {
            let (l, g) = cross_entropy(&img.logits[i * c..(i + 1) * c], target);
            loss += l * norm;
            for (dst, v) in grad[i * c..(i + 1) * c].iter_mut().zip(g) {
                *dst += v * norm;
            }
        }
    }
    (loss, grads)
}

/// `0.5 x²` for `|x| < 1`, `|x| - 0.5` otherwise; returns value and slope.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

pub struct BoxImage<'a> {
    /// `[N, 4]` regressions, row-major.
    pub preds: &'a [f64],
    /// `(anchor, encoded target)` for every positive anchor.
    pub targets: &'a [(usize, [f64; 4])],
}

/// Smooth-L1 summed over the four coordinates of every positive, divided by
/// the number of positives in the batch.
pub fn box_loss(images: &[BoxImage]) -> (f64, Vec<Vec<f64>>) {
    let n: usize = images.iter().map(|i| i.targets.len()).sum();
    let mut grads: Vec<Vec<f64>> = images.iter().map(|i| vec![0.0; i.preds.len()]).collect();
    if n == 0 {
        return (0.0, grads);
    }
    let norm = 1.0 / n as f64;
    let mut loss = 0.0;
    for (img, grad) in images.iter().zip(&mut grads) {
        for &(a, t) in img.targets {
            for k in 0..4 {
                let (l, d) = smooth_l1(img.preds[a * 4 + k] - t[k]);
                loss += l * norm;
                grad[a * 4 + k] += d * norm;
            }
        }
    }
    (loss, grads)
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_with_logits(x: f64, target: f64) -> f64 {
    x.max(0.0) - x * target + (-x.abs()).exp().ln_1p()
}

pub struct MaskImage<'a> {
    /// `[k, hp*wp]` prototypes.
    pub prototypes: &'a [f64],
    pub k: usize,
    /// `[N, k]` coefficients.
    pub coefs: &'a [f64],
    /// `(anchor, gt)` for every positive anchor.
    pub positives: &'a [(usize, usize)],
    pub targets: &'a [MaskTarget],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrads {
    pub coefs: Vec<f64>,
    pub prototypes: Vec<f64>,
}

/// Per positive: BCE between the assembled mask logits and the ground-truth
/// mask, over prototype pixels inside the ground-truth box, divided by the
/// box area in pixels. Averaged over the positives of the batch.
pub fn mask_loss(images: &[MaskImage]) -> (f64, Vec<MaskGrads>) {
    let n: usize = images.iter().map(|i| i.positives.len()).sum();
    let mut grads: Vec<MaskGrads> = images
        .iter()
        .map(|i| MaskGrads {
            coefs: vec![0.0; i.coefs.len()],
            prototypes: vec![0.0; i.prototypes.len()],
        })
        .collect();
    if n == 0 {
        return (0.0, grads);
    }
    let mut loss = 0.0;
    for (img, grad) in images.iter().zip(&mut grads) {
        let k = img.k;
        let hw = img.prototypes.len() / k.max(1);
        for &(a, g) in img.positives {
            let t = &img.targets[g];
            let coefs = &img.coefs[a * k..(a + 1) * k];
            let scale = 1.0 / (t.pixels.len() as f64 * n as f64);
            for (&p, &y) in t.pixels.iter().zip(&t.target) {
                let logit: f64 = (0..k).map(|c| coefs[c] * img.prototypes[c * hw + p]).sum();
                loss += bce_with_logits(logit, y) * scale;
                let d = (sigmoid(logit) - y) * scale;
                for c in 0..k {
                    grad.coefs[a * k + c] += d * img.prototypes[c * hw + p];
                    grad.prototypes[c * hw + p] += d * coefs[c];
                }
            }
        }
    }
    (loss, grads)
}
