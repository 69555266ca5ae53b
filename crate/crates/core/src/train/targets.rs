//! Ground truth for one head on one frame: instances, anchor assignments
//! and prototype-resolution mask targets.

use crate::datasets::FrameSample;
use crate::geometry::{BBox, BitMask};
use crate::model::HeadKind;

/// One ground-truth instance in network-input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub bbox: BBox,
    /// Head class index, 1-based.
    pub label: usize,
    pub mask: BitMask,
}

/// Instances a head is trained on: semantic categories for the semantic
/// head, moving objects (any category) for the motion head. Boxes and masks
/// are rescaled to the `(h, w)` input size.
pub fn head_instances(sample: &FrameSample, kind: HeadKind, input_size: [usize; 2]) -> Vec<GtInstance> {
    let [h, w] = input_size;
    let (sw, sh) = (sample.width(), sample.height());
    let resize = (sw, sh) != (w, h);
    sample
        .annotations
        .iter()
        .filter_map(|a| {
            let label = match kind {
                HeadKind::Semantic => a.category.semantic_label()?,
                HeadKind::Motion => {
                    if !a.moving {
                        return None;
                    }
                    1
                }
            };
            let (bbox, mask) = if resize {
                (a.bbox.scale(w as f64 / sw as f64, h as f64 / sh as f64), a.mask.resize(w, h))
            } else {
                (a.bbox, a.mask.clone())
            };
            bbox.is_valid().then_some(GtInstance { bbox, label, mask })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignore,
}

/// Anchor assignment: positive when the best IoU reaches `pos_iou` or the
/// anchor is some ground truth's best anchor (with IoU above 0), negative
/// below `neg_iou`, ignored otherwise.
pub fn match_anchors(anchors: &[BBox], gts: &[BBox], pos_iou: f64, neg_iou: f64) -> Vec<Assignment> {
    if gts.is_empty() {
        return vec![Assignment::Negative; anchors.len()];
    }
    let mut best_gt_iou = vec![(0.0f64, usize::MAX); gts.len()];
    let mut out: Vec<Assignment> = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best = (-1.0, 0);
            for (g, b) in gts.iter().enumerate() {
                let v = a.iou(b);
                if v > best.0 {
                    best = (v, g);
                }
                if v > best_gt_iou[g].0 {
                    best_gt_iou[g] = (v, i);
                }
            }
            if best.0 >= pos_iou {
                Assignment::Positive(best.1)
            } else if best.0 < neg_iou {
                Assignment::Negative
            } else {
                Assignment::Ignore
            }
        })
        .collect();
    for (g, &(v, i)) in best_gt_iou.iter().enumerate() {
        if v > 0.0 {
            out[i] = Assignment::Positive(g);
        }
    }
    out
}

/// Mask target of one instance at prototype resolution, restricted to the
/// prototype pixels whose centres lie in the instance box.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTarget {
    /// Row-major prototype pixel indices inside the box.
    pub pixels: Vec<usize>,
    /// Binary target per pixel in `pixels`.
    pub target: Vec<f64>,
}

/// Box-filter coverage of `mask` on an `hp × wp` grid, binarised at 0.5.
pub fn downsample_mask(mask: &BitMask, hp: usize, wp: usize) -> Vec<f64> {
    let (w, h) = mask.dims();
    let sx = w as f64 / wp as f64;
    let sy = h as f64 / hp as f64;
    let mut out = vec![0.0; hp * wp];
    for py in 0..hp {
        let (y0, y1) = (py as f64 * sy, (py + 1) as f64 * sy);
        for px in 0..wp {
            let (x0, x1) = (px as f64 * sx, (px + 1) as f64 * sx);
            let mut covered = 0.0;
            for y in (y0.floor() as usize)..(y1.ceil() as usize).min(h) {
                let oy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                for x in (x0.floor() as usize)..(x1.ceil() as usize).min(w) {
                    if mask.get(x, y) {
                        covered += oy * (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                    }
                }
            }
            if covered >= 0.5 * sx * sy {
                out[py * wp + px] = 1.0;
            }
        }
    }
    out
}

pub fn mask_target(gt: &GtInstance, input_size: [usize; 2], hp: usize, wp: usize) -> MaskTarget {
    let [h, w] = input_size;
    let b = gt.bbox.scale(wp as f64 / w as f64, hp as f64 / h as f64);
    let down = downsample_mask(&gt.mask, hp, wp);
    let mut pixels = Vec::new();
    for y in 0..hp {
        for x in 0..wp {
            if b.contains_pixel(x, y) {
                pixels.push(y * wp + x);
            }
        }
    }
    if pixels.is_empty() {
        let (cx, cy) = b.center();
        let x = (cx.max(0.0) as usize).min(wp - 1);
        let y = (cy.max(0.0) as usize).min(hp - 1);
        pixels.push(y * wp + x);
    }
    let target = pixels.iter().map(|&i| down[i]).collect();
    MaskTarget { pixels, target }
}

/// Everything the losses need for one frame and head.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub instances: Vec<GtInstance>,
    pub matches: Vec<Assignment>,
    pub masks: Vec<MaskTarget>,
    /// No ground truth for this head: every anchor is a background candidate.
    pub negative_frame: bool,
}

impl FrameTargets {
    pub fn build(
        instances: Vec<GtInstance>,
        anchors: &[BBox],
        input_size: [usize; 2],
        proto_size: (usize, usize),
        pos_iou: f64,
        neg_iou: f64,
    ) -> Self {
        let boxes: Vec<BBox> = instances.iter().map(|g| g.bbox).collect();
        let matches = match_anchors(anchors, &boxes, pos_iou, neg_iou);
        let masks = instances
            .iter()
            .map(|g| mask_target(g, input_size, proto_size.0, proto_size.1))
            .collect();
        Self {
            negative_frame: instances.is_empty(),
            instances,
            matches,
            masks,
        }
    }

    /// `(anchor, gt)` pairs of positive anchors, by anchor index.
    pub fn positives(&self) -> Vec<(usize, usize)> {
        self.matches
            .iter()
            .enumerate()
            .filter_map(|(i, m)| match m {
                Assignment::Positive(g) => Some((i, *g)),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_examples() {
        let anchors = [
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(50.0, 50.0, 60.0, 60.0),
            BBox::new(20.0, 20.0, 40.0, 40.0),
        ];
        let gts = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(22.0, 22.0, 30.0, 30.0)];
        let m = match_anchors(&anchors, &gts, 0.5, 0.4);
        assert_eq!(m[0], Assignment::Positive(0));
        assert_eq!(m[1], Assignment::Negative);
        // IoU 64/400 = 0.16, but it is the second GT's best anchor
        assert_eq!(m[2], Assignment::Positive(1));
    }

    #[test]
    fn ignore_band() {
        let anchors = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(0.0, 0.0, 10.0, 9.0)];
        // IoU 100/200 = 0.5 with the first anchor, 90/200 = 0.45 with the second
        let m = match_anchors(&anchors, &[BBox::new(0.0, 0.0, 10.0, 20.0)], 0.5, 0.4);
        assert_eq!(m, vec![Assignment::Positive(0), Assignment::Ignore]);
    }

    #[test]
    fn no_gt_means_all_negative() {
        let anchors = [BBox::new(0.0, 0.0, 1.0, 1.0); 4];
        assert!(match_anchors(&anchors, &[], 0.5, 0.4).iter().all(|m| *m == Assignment::Negative));
    }

    #[test]
    fn downsample_uses_coverage() {
        // 4x4 mask, left 2 columns set, plus one pixel in the top-right block
        let m = BitMask::from_fn(4, 4, |x, y| x < 2 || (x == 2 && y == 0));
        assert_eq!(downsample_mask(&m, 2, 2), vec![1.0, 0.0, 1.0, 0.0]);
        let m = BitMask::from_fn(4, 4, |x, y| x < 2 || (x >= 2 && y == 0));
        assert_eq!(downsample_mask(&m, 2, 2), vec![1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn mask_target_crops_to_box() {
        let gt = GtInstance {
            bbox: BBox::new(4.0, 4.0, 12.0, 8.0),
            label: 1,
            mask: BitMask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (4..8).contains(&y)),
        };
        let t = mask_target(&gt, [16, 16], 4, 4);
        // proto box (1,1)-(3,2): pixel centres (1.5,1.5) and (2.5,1.5)
        assert_eq!(t.pixels, vec![5, 6]);
        assert_eq!(t.target, vec![1.0, 1.0]);
    }
}
