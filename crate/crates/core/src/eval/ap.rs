//! COCO-style average precision with greedy score-ordered matching.

use std::collections::BTreeSet;

use crate::geometry::{BBox, BitMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouKind {
    Box,
    Mask,
}

/// Region of one instance, as a box and a full-frame mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub bbox: BBox,
    pub mask: BitMask,
}

/// Box or mask IoU; 0 when both regions are empty.
pub fn iou(a: &Instance, b: &Instance, kind: IouKind) -> f64 {
    match kind {
        IouKind::Box => a.bbox.iou(&b.bbox),
        IouKind::Mask => a.mask.iou(&b.mask),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    pub image: usize,
    pub category: usize,
    pub score: f64,
    pub region: Instance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub image: usize,
    pub category: usize,
    pub region: Instance,
}

/// IoU thresholds 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Recall sample points 0:0.01:1.
pub fn recall_points() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// True-positive flags of `dets` (already in rank order) against `gts` at
/// `thresh`. Each detection takes the unmatched same-image GT of highest
/// IoU, if that IoU reaches the threshold.
pub fn greedy_match(dets: &[&ScoredInstance], gts: &[&GtInstance], kind: IouKind, thresh: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.image != d.image {
                    continue;
                }
                let v = iou(&d.region, &gt.region, kind);
                if v >= thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// 101-point interpolated AP in [0,1] from rank-ordered TP flags.
pub fn interpolated_ap(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return f64::NAN;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let pts = recall_points();
    let sum: f64 = pts
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    sum / pts.len() as f64
}

/// Category-averaged AP in [0,1] for each threshold. Categories without
/// ground truth are skipped; `None` when every category is skipped.
pub fn compute_ap(
    dets: &[ScoredInstance],
    gts: &[GtInstance],
    kind: IouKind,
    thresholds: &[f64],
) -> Option<Vec<f64>> {
    let categories: BTreeSet<usize> = gts.iter().map(|g| g.category).collect();
    if categories.is_empty() {
        return None;
    }
    let mut sums = vec![0.0; thresholds.len()];
    for &c in &categories {
        let mut cd: Vec<&ScoredInstance> = dets.iter().filter(|d| d.category == c).collect();
        // stable: equal scores keep input order
        cd.sort_by(|a, b| b.score.total_cmp(&a.score));
        let cg: Vec<&GtInstance> = gts.iter().filter(|g| g.category == c).collect();
        for (s, &t) in sums.iter_mut().zip(thresholds) {
            *s += interpolated_ap(&greedy_match(&cd, &cg, kind, t), cg.len());
        }
    }
    Some(sums.into_iter().map(|s| s / categories.len() as f64).collect())
}

/// AP averaged over 0.50:0.95 plus AP50 and AP75, in percent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ApSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

impl ApSummary {
    pub fn compute(dets: &[ScoredInstance], gts: &[GtInstance], kind: IouKind) -> Option<Self> {
        let per = compute_ap(dets, gts, kind, &coco_thresholds())?;
        Some(Self {
            ap: 100.0 * per.iter().sum::<f64>() / per.len() as f64,
            ap50: 100.0 * per[0],
            ap75: 100.0 * per[5],
        })
    }
}
