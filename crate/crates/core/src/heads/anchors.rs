//! Anchor grid over the five pyramid levels.
//!
//! Anchors are ordered by level, then row, then column, then aspect ratio.
//! That order matches the flattening of head outputs.

use crate::features::{LEVEL_STRIDES, NUM_LEVELS};
use crate::geometry::BBox;

/// Spatial size of every pyramid level for an `(h, w)` input. Each level
/// halves the previous one, rounding up, starting from five halvings
/// below stride 8.
pub fn level_sizes(h: usize, w: usize) -> [(usize, usize); NUM_LEVELS] {
    let mut size = (h, w);
    for _ in 0..3 {
        size = (size.0.div_ceil(2), size.1.div_ceil(2));
    }
    let mut out = [size; NUM_LEVELS];
    for l in 0..NUM_LEVELS {
        out[l] = size;
        size = (size.0.div_ceil(2), size.1.div_ceil(2));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub boxes: Vec<BBox>,
    pub level_sizes: [(usize, usize); NUM_LEVELS],
    pub num_ratios: usize,
}

impl AnchorGrid {
    /// `scale` is the anchor side as a multiple of the level stride; each
    /// ratio `r = w/h` keeps the area of a `side × side` square.
    pub fn new(input_size: [usize; 2], scale: f64, ratios: &[f64]) -> Self {
        let [h, w] = input_size;
        let sizes = level_sizes(h, w);
        let mut boxes = Vec::new();
        for (l, &(lh, lw)) in sizes.iter().enumerate() {
            let side = scale * LEVEL_STRIDES[l] as f64;
            for i in 0..lh {
                for j in 0..lw {
                    let cx = (j as f64 + 0.5) / lw as f64 * w as f64;
                    let cy = (i as f64 + 0.5) / lh as f64 * h as f64;
                    for &r in ratios {
                        boxes.push(BBox::from_center(cx, cy, side * r.sqrt(), side / r.sqrt()));
                    }
                }
            }
        }
        Self {
            boxes,
            level_sizes: sizes,
            num_ratios: ratios.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// First anchor index of every level.
    pub fn level_offsets(&self) -> [usize; NUM_LEVELS] {
        let mut off = [0; NUM_LEVELS];
        let mut acc = 0;
        for (l, &(h, w)) in self.level_sizes.iter().enumerate() {
            off[l] = acc;
            acc += h * w * self.num_ratios;
        }
        off
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_round_up() {
        assert_eq!(level_sizes(128, 128), [(16, 16), (8, 8), (4, 4), (2, 2), (1, 1)]);
        assert_eq!(level_sizes(550, 550)[0], (69, 69));
        assert_eq!(level_sizes(100, 60), [(13, 8), (7, 4), (4, 2), (2, 1), (1, 1)]);
    }

    #[test]
    fn count_and_order() {
        let g = AnchorGrid::new([64, 64], 3.0, &[1.0, 0.5, 2.0]);
        assert_eq!(g.len(), 3 * (64 + 16 + 4 + 1 + 1));
        assert_eq!(g.level_offsets(), [0, 192, 240, 252, 255]);
        // first anchor: level 0, cell (0,0), ratio 1, side 24 around (4,4)
        assert_eq!(g.boxes[0], BBox::new(-8.0, -8.0, 16.0, 16.0));
        // ratio 0.5 keeps the area
        let b = g.boxes[1];
        assert!((b.area() - 576.0).abs() < 1e-9);
        assert!((b.width() / b.height() - 0.5).abs() < 1e-12);
        // cell (0,1) follows the three ratios of cell (0,0)
        assert_eq!(g.boxes[3].center(), (12.0, 4.0));
        assert_eq!(g.boxes[192].center(), (8.0, 8.0));
    }
}
