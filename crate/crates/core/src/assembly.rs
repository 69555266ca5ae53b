//! Turning head outputs into instances: box decoding, per-class NMS and
//! prototype mask assembly.

use crate::config::EvalConfig;
use crate::geometry::{BBox, BitMask};
use crate::heads::{AnchorGrid, HeadOutput};
use crate::ops::bilinear_taps;
use crate::scalar::sigmoid;
use crate::{Scalar, Tensor};

/// Scale factors applied to centre and size offsets.
pub const BOX_VARIANCES: [f64; 2] = [0.1, 0.2];

/// Offsets of `gt` relative to `anchor`: centre shift over anchor size and
/// log size ratio, each divided by its variance.
pub fn encode_box(gt: &BBox, anchor: &BBox, variances: [f64; 2]) -> [f64; 4] {
    let (gx, gy) = gt.center();
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    [
        (gx - ax) / (variances[0] * aw),
        (gy - ay) / (variances[0] * ah),
        (gt.width() / aw).ln() / variances[1],
        (gt.height() / ah).ln() / variances[1],
    ]
}

pub fn decode_box(d: [f64; 4], anchor: &BBox, variances: [f64; 2]) -> BBox {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + d[0] * variances[0] * aw;
    let cy = ay + d[1] * variances[0] * ah;
    let w = aw * (d[2] * variances[1]).exp();
    let h = ah * (d[3] * variances[1]).exp();
    BBox::from_center(cx, cy, w, h)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// One predicted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub anchor: usize,
    /// Head class index; 0 is background and never emitted.
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
    pub coefs: Vec<f64>,
    pub mask: Option<BitMask>,
}

/// Per-anchor best foreground class above `score_thresh`, boxes decoded and
/// clipped to the `(h, w)` input. Returns the candidates and the number of
/// anchors dropped for non-finite boxes.
pub fn candidates<T: Scalar>(
    out: &HeadOutput<T>,
    anchors: &AnchorGrid,
    input_size: [usize; 2],
    cfg: &EvalConfig,
) -> (Vec<Detection>, usize) {
    let [h, w] = input_size;
    let mut dets = Vec::new();
    let mut dropped = 0;
    for (i, anchor) in anchors.boxes.iter().enumerate() {
        let logits: Vec<f64> = HeadOutput::row(&out.logits, i).iter().map(|v| v.as_f64()).collect();
        let p = softmax(&logits);
        let Some((class, &score)) = p
            .iter()
            .enumerate()
            .skip(1)
            .fold(None, |best: Option<(usize, &f64)>, (c, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((c, s)),
            })
        else {
            continue;
        };
        if !(score >= cfg.score_thresh) {
            continue;
        }
        let d = HeadOutput::row(&out.boxes, i);
        let raw = decode_box([d[0].as_f64(), d[1].as_f64(), d[2].as_f64(), d[3].as_f64()], anchor, BOX_VARIANCES);
        if ![raw.x1, raw.y1, raw.x2, raw.y2].iter().all(|v| v.is_finite()) {
            dropped += 1;
            continue;
        }
        dets.push(Detection {
            anchor: i,
            class,
            score,
            bbox: raw.clip(w as f64, h as f64),
            coefs: HeadOutput::row(&out.coefs, i).iter().map(|v| v.as_f64()).collect(),
            mask: None,
        });
    }
    (dets, dropped)
}

/// Sorts by descending score, ties broken by lower anchor index.
pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.anchor.cmp(&b.anchor)));
}

/// Greedy per-class suppression: a box is dropped when its IoU with a
/// kept, higher-ranked box of the same class exceeds `iou_thresh`.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64, top_k: usize) -> Vec<Detection> {
    sort_by_score(&mut dets);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.len() == top_k {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.class == d.class && k.bbox.iou(&d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Linear combination of prototypes `[k, Hp, Wp]` with `coefs`, as logits.
pub fn mask_logits<T: Scalar>(prototypes: &Tensor<T>, coefs: &[f64]) -> Vec<f64> {
    let (k, hp, wp) = prototypes.chw();
    assert_eq!(k, coefs.len(), "coefficient count must match prototypes");
    let mut out = vec![0.0; hp * wp];
    for (c, &a) in coefs.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(prototypes.channel(c)) {
            *o += a * v.as_f64();
        }
    }
    out
}

/// Pixel range `[x0, x1) × [y0, y1)` covering `crop` inside a `w × h` raster.
fn crop_range(crop: &BBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let x0 = (crop.x1.max(0.0).floor() as usize).min(w);
    let y0 = (crop.y1.max(0.0).floor() as usize).min(h);
    let x1 = (crop.x2.max(0.0).ceil() as usize).min(w);
    let y1 = (crop.y2.max(0.0).ceil() as usize).min(h);
    (x0, y0, x1, y1)
}

/// Visits every pixel of the `(h, w)` raster whose centre lies in `crop`
/// with the bilinearly upsampled logit at that pixel.
fn for_each_cropped_logit(
    logits: &[f64],
    hp: usize,
    wp: usize,
    h: usize,
    w: usize,
    crop: &BBox,
    mut f: impl FnMut(usize, usize, f64),
) {
    let (x0, y0, x1, y1) = crop_range(crop, w, h);
    let xt: Vec<_> = (x0..x1).map(|x| bilinear_taps(x, wp, w)).collect();
    for y in y0..y1 {
        let (r0, r1, fy) = bilinear_taps(y, hp, h);
        for (x, &(c0, c1, fx)) in (x0..x1).zip(&xt) {
            if !crop.contains_pixel(x, y) {
                continue;
            }
            let top = logits[r0 * wp + c0] * (1.0 - fx) + logits[r0 * wp + c1] * fx;
            let bot = logits[r1 * wp + c0] * (1.0 - fx) + logits[r1 * wp + c1] * fx;
            f(x, y, top * (1.0 - fy) + bot * fy);
        }
    }
}

/// Pre-binarization mask: logits upsampled bilinearly to `(h, w)`, sigmoid,
/// zero outside `crop`. Row-major `h * w`.
pub fn assemble_mask_probs(logits: &[f64], hp: usize, wp: usize, h: usize, w: usize, crop: &BBox) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for_each_cropped_logit(logits, hp, wp, h, w, crop, |x, y, v| out[y * w + x] = sigmoid(v));
    out
}

/// Binary mask: pixels inside `crop` whose assembled probability exceeds
/// `thresh`. Compares logits directly, which is equivalent.
pub fn assemble_mask(logits: &[f64], hp: usize, wp: usize, h: usize, w: usize, crop: &BBox, thresh: f64) -> BitMask {
    let logit_thresh = (thresh / (1.0 - thresh)).ln();
    let mut mask = BitMask::new(w, h);
    for_each_cropped_logit(logits, hp, wp, h, w, crop, |x, y, v| {
        if v > logit_thresh {
            mask.set(x, y, true);
        }
    });
    mask
}

/// Instances of one head at source resolution.
#[derive(Debug, Clone, Default)]
pub struct HeadDetections {
    pub detections: Vec<Detection>,
    pub dropped_non_finite: usize,
}

/// Decoding, NMS and mask assembly for one head. Boxes and masks are mapped
/// from the network input size to the `(h, w)` source frame.
pub fn postprocess<T: Scalar>(
    out: &HeadOutput<T>,
    anchors: &AnchorGrid,
    input_size: [usize; 2],
    source_size: (usize, usize),
    cfg: &EvalConfig,
) -> HeadDetections {
    let (cands, dropped) = candidates(out, anchors, input_size, cfg);
    let mut dets = nms(cands, cfg.nms_iou, cfg.top_k);
    let (h, w) = source_size;
    let (sx, sy) = (w as f64 / input_size[1] as f64, h as f64 / input_size[0] as f64);
    let (_, hp, wp) = out.prototypes.chw();
    for d in &mut dets {
        d.bbox = d.bbox.scale(sx, sy);
        let logits = mask_logits(&out.prototypes, &d.coefs);
        d.mask = Some(assemble_mask(&logits, hp, wp, h, w, &d.bbox.pad(cfg.crop_padding), cfg.mask_thresh));
    }
    HeadDetections {
        detections: dets,
        dropped_non_finite: dropped,
    }
}

/// Union of the masks of moving instances scoring at least `conf_thresh`.
pub fn motion_mask(dets: &[Detection], conf_thresh: f64, width: usize, height: usize) -> BitMask {
    let mut out = BitMask::new(width, height);
    for d in dets.iter().filter(|d| d.score >= conf_thresh) {
        if let Some(m) = &d.mask {
            out.union_with(m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::resize_plane_bilinear;
    use proptest::prelude::*;
    use std::sync::Arc;

    const VAR: [f64; 2] = BOX_VARIANCES;

    fn det(anchor: usize, class: usize, score: f64, b: [f64; 4]) -> Detection {
        Detection {
            anchor,
            class,
            score,
            bbox: b.into(),
            coefs: vec![],
            mask: None,
        }
    }

    /// Oracle: full IoU matrix, then walk the ranked list.
    fn nms_oracle(mut dets: Vec<Detection>, thr: f64, top_k: usize) -> Vec<usize> {
        sort_by_score(&mut dets);
        let n = dets.len();
        let iou: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| dets[i].bbox.iou(&dets[j].bbox)).collect())
            .collect();
        let mut alive = vec![true; n];
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if dets[i].class == dets[j].class && iou[i][j] > thr {
                    alive[j] = false;
                }
            }
        }
        (0..n).filter(|&i| alive[i]).take(top_k).map(|i| dets[i].anchor).collect()
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            ax in 0.0f64..100.0, ay in 0.0f64..100.0, aw in 4.0f64..80.0, ah in 4.0f64..80.0,
            gx in 0.0f64..100.0, gy in 0.0f64..100.0, gw in 1.0f64..120.0, gh in 1.0f64..120.0,
        ) {
            let a = BBox::from_center(ax, ay, aw, ah);
            let g = BBox::from_center(gx, gy, gw, gh);
            let back = decode_box(encode_box(&g, &a, VAR), &a, VAR);
            for (p, q) in [back.x1, back.y1, back.x2, back.y2].iter().zip([g.x1, g.y1, g.x2, g.y2]) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn nms_matches_oracle(
            raw in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0, 2.0f64..30.0, 2.0f64..30.0, 1usize..3, 0u8..20), 0..40),
            top_k in 1usize..50,
        ) {
            let dets: Vec<Detection> = raw
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w, h, c, s))| det(i, c, s as f64 / 20.0, [x, y, x + w, y + h]))
                .collect();
            let got: Vec<usize> = nms(dets.clone(), 0.5, top_k).iter().map(|d| d.anchor).collect();
            prop_assert_eq!(got, nms_oracle(dets, 0.5, top_k));
        }

        #[test]
        fn assembled_mask_matches_pixel_oracle(
            protos in prop::collection::vec(0.0f64..2.0, 3 * 6 * 5),
            coefs in prop::collection::vec(-1.0f64..1.0, 3),
            b in (0.0f64..20.0, 0.0f64..20.0, 1.0f64..24.0, 1.0f64..24.0),
        ) {
            let p = Tensor::from_vec(&[3, 6, 5], protos);
            let (h, w) = (24, 20);
            let crop = BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
            let got = assemble_mask(&mask_logits(&p, &coefs), 6, 5, h, w, &crop, 0.5);
            // oracle: upsample the whole logit map, sigmoid, crop, threshold
            let mut lin = vec![0.0; 30];
            for c in 0..3 {
                for i in 0..30 {
                    lin[i] += coefs[c] * p.channel(c)[i];
                }
            }
            let up = resize_plane_bilinear(&lin, 6, 5, h, w);
            for y in 0..h {
                for x in 0..w {
                    let v = sigmoid(up[y * w + x]);
                    let want = crop.contains_pixel(x, y) && v > 0.5;
                    prop_assert_eq!(got.get(x, y), want, "pixel ({}, {})", x, y);
                }
            }
        }
    }

    #[test]
    fn tie_breaks_on_anchor_index() {
        let a = det(7, 1, 0.9, [0.0, 0.0, 10.0, 10.0]);
        let b = det(3, 1, 0.9, [1.0, 0.0, 11.0, 10.0]);
        let kept = nms(vec![a, b], 0.5, 10);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].anchor, 3);
    }

    #[test]
    fn different_classes_do_not_suppress() {
        let a = det(0, 1, 0.9, [0.0, 0.0, 10.0, 10.0]);
        let b = det(1, 2, 0.8, [0.0, 0.0, 10.0, 10.0]);
        assert_eq!(nms(vec![a, b], 0.5, 10).len(), 2);
    }

    fn head_output(logits: Vec<f32>, boxes: Vec<f32>, n: usize) -> HeadOutput<f32> {
        HeadOutput {
            boxes: Tensor::from_vec(&[n, 4], boxes),
            logits: Tensor::from_vec(&[n, 2], logits),
            coefs: Tensor::full(&[n, 1], 1.0),
            prototypes: Arc::new(Tensor::full(&[1, 4, 4], 1.0)),
        }
    }

    #[test]
    fn non_finite_boxes_are_dropped_and_counted() {
        let grid = AnchorGrid::new([32, 32], 3.0, &[1.0]);
        let n = grid.len();
        let mut logits = vec![0.0f32; 2 * n];
        logits[1] = 5.0;
        logits[3] = 5.0;
        let mut boxes = vec![0.0f32; 4 * n];
        boxes[4 + 2] = f32::INFINITY;
        let out = head_output(logits, boxes, n);
        let (c, dropped) = candidates(&out, &grid, [32, 32], &EvalConfig::default());
        // every anchor scores 0.5 for the foreground class; anchor 1 is dropped
        assert_eq!(dropped, 1);
        assert_eq!(c.len(), n - 1);
        assert!(c.iter().all(|d| d.bbox.x1 >= 0.0 && d.bbox.x2 <= 32.0));
    }

    #[test]
    fn low_scores_are_filtered() {
        let grid = AnchorGrid::new([32, 32], 3.0, &[1.0]);
        let n = grid.len();
        let out = head_output(vec![10.0, 0.0].repeat(n), vec![0.0; 4 * n], n);
        let (c, _) = candidates(&out, &grid, [32, 32], &EvalConfig::default());
        assert!(c.is_empty());
    }

    #[test]
    fn postprocess_rescales_to_source() {
        let grid = AnchorGrid::new([32, 32], 3.0, &[1.0]);
        let n = grid.len();
        let mut logits = vec![3.0f32, 0.0].repeat(n);
        logits[1] = 6.0;
        let out = head_output(logits, vec![0.0; 4 * n], n);
        let r = postprocess(&out, &grid, [32, 32], (64, 96), &EvalConfig::default());
        assert_eq!(r.detections.len(), 1);
        let d = &r.detections[0];
        // anchor 0: 24x24 around (4,4), clipped to [0,16]^2, then scaled by (3, 2)
        assert_eq!(d.bbox, BBox::new(0.0, 0.0, 48.0, 32.0));
        let m = d.mask.as_ref().unwrap();
        assert_eq!(m.dims(), (96, 64));
        assert_eq!(m.count(), 49 * 33);
    }

    #[test]
    fn motion_mask_respects_confidence() {
        let mut a = det(0, 1, 0.8, [0.0, 0.0, 2.0, 2.0]);
        a.mask = Some(BitMask::from_fn(4, 4, |x, _| x == 0));
        let mut b = det(1, 1, 0.2, [0.0, 0.0, 2.0, 2.0]);
        b.mask = Some(BitMask::from_fn(4, 4, |x, _| x == 3));
        let m = motion_mask(&[a, b], 0.3, 4, 4);
        assert_eq!(m.count(), 4);
        assert!(m.get(0, 2) && !m.get(3, 2));
    }
}
