//! Boxes and binary masks in pixel coordinates.

use serde::{Deserialize, Serialize};

/// Axis-aligned box `(x1, y1, x2, y2)` in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(b: [f64; 4]) -> Self {
        BBox::new(b[0], b[1], b[2], b[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    pub fn intersection(&self, o: &BBox) -> f64 {
        let w = (self.x2.min(o.x2) - self.x1.max(o.x1)).max(0.0);
        let h = (self.y2.min(o.y2) - self.y1.max(o.y1)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when both boxes are empty.
    pub fn iou(&self, o: &BBox) -> f64 {
        let inter = self.intersection(o);
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn pad(&self, p: f64) -> BBox {
        BBox::new(self.x1 - p, self.y1 - p, self.x2 + p, self.y2 + p)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox::new(width - self.x2, self.y1, width - self.x1, self.y2)
    }

    /// Whether the centre of pixel `(x, y)` lies inside the box.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        px >= self.x1 && px < self.x2 && py >= self.y1 && py < self.y2
    }
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Tight box around the set pixels (pixel edges), `None` if empty.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        (x1 != usize::MAX).then(|| BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
    }

    pub fn intersection_count(&self, o: &BitMask) -> usize {
        assert_eq!(self.dims(), o.dims(), "mask shape mismatch");
        self.data.iter().zip(&o.data).filter(|(a, b)| **a && **b).count()
    }

    /// Mask IoU; 0 when both are empty.
    pub fn iou(&self, o: &BitMask) -> f64 {
        let inter = self.intersection_count(o);
        let union = self.count() + o.count() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn union_with(&mut self, o: &BitMask) {
        assert_eq!(self.dims(), o.dims(), "mask shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a |= *b;
        }
    }

    pub fn flip_horizontal(&self) -> BitMask {
        BitMask::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Nearest-neighbour resize.
    pub fn resize(&self, width: usize, height: usize) -> BitMask {
        BitMask::from_fn(width, height, |x, y| {
            let sx = (x * self.width / width).min(self.width - 1);
            let sy = (y * self.height / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_iou_cases() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(2.0, 2.0, 3.0, 3.0)), 0.0);
        let half = BBox::new(0.5, 0.0, 1.5, 1.0);
        assert!((a.iou(&half) - 1.0 / 3.0).abs() < 1e-15);
        let empty = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(empty.iou(&empty), 0.0);
    }

    #[test]
    fn mask_bbox_is_tight() {
        let m = BitMask::from_fn(10, 8, |x, y| (3..6).contains(&x) && (2..4).contains(&y));
        assert_eq!(m.bbox(), Some(BBox::new(3.0, 2.0, 6.0, 4.0)));
        assert_eq!(BitMask::new(4, 4).bbox(), None);
    }

    #[test]
    fn mask_iou_empty_is_zero() {
        let e = BitMask::new(3, 3);
        assert_eq!(e.iou(&e), 0.0);
        let f = BitMask::from_fn(3, 3, |_, _| true);
        assert_eq!(f.iou(&f), 1.0);
    }
}
