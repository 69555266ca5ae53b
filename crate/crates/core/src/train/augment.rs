//! Horizontal flip and random translation applied consistently to images,
//! flow and instance annotations.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{FlowField, FrameSample, InstanceAnnotation};
use crate::geometry::BitMask;

/// Fill colour for pixels shifted in from outside the frame.
const FILL: Rgb<u8> = Rgb([128, 128, 128]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub flip: bool,
    /// Content moves by `(dx, dy)` pixels; the frame size stays the same.
    pub shift: (i64, i64),
}

impl Augment {
    pub fn sample(rng: &mut ChaCha8Rng, max_shift: usize) -> Self {
        let m = max_shift as i64;
        Self {
            flip: rng.gen_bool(0.5),
            shift: (rng.gen_range(-m..=m), rng.gen_range(-m..=m)),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Augment::default()
    }

    /// Source pixel for output pixel `(x, y)`, if inside the frame.
    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> Option<(usize, usize)> {
        let sx = x as i64 - self.shift.0;
        let sy = y as i64 - self.shift.1;
        if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
            return None;
        }
        let sx = if self.flip { w - 1 - sx as usize } else { sx as usize };
        Some((sx, sy as usize))
    }

    fn image(&self, img: &RgbImage) -> RgbImage {
        let (w, h) = (img.width() as usize, img.height() as usize);
        RgbImage::from_fn(w as u32, h as u32, |x, y| match self.source(x as usize, y as usize, w, h) {
            Some((sx, sy)) => *img.get_pixel(sx as u32, sy as u32),
            None => FILL,
        })
    }

    fn flow(&self, f: &FlowField) -> FlowField {
        let (w, h) = (f.width(), f.height());
        let mut out = FlowField::constant(w, h, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if let Some((sx, sy)) = self.source(x, y, w, h) {
                    let (u, v) = f.at(sx, sy);
                    out.set(x, y, if self.flip { -u } else { u }, v);
                }
            }
        }
        out
    }

    fn mask(&self, m: &BitMask) -> BitMask {
        let (w, h) = m.dims();
        BitMask::from_fn(w, h, |x, y| self.source(x, y, w, h).is_some_and(|(sx, sy)| m.get(sx, sy)))
    }

    /// Transformed copy of `sample`. Instances pushed fully out of frame are
    /// dropped and the negative-frame flag is recomputed.
    pub fn apply(&self, sample: &FrameSample) -> FrameSample {
        if self.is_identity() {
            return sample.clone();
        }
        let (w, h) = (sample.width() as f64, sample.height() as f64);
        let annotations = sample
            .annotations
            .iter()
            .filter_map(|a| {
                let mut b = a.bbox;
                if self.flip {
                    b = b.flip_horizontal(w);
                }
                let (dx, dy) = (self.shift.0 as f64, self.shift.1 as f64);
                let b = crate::geometry::BBox::new(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy).clip(w, h);
                let mask = self.mask(&a.mask);
                (b.is_valid() && !mask.is_empty()).then(|| InstanceAnnotation {
                    bbox: b,
                    mask,
                    ..a.clone()
                })
            })
            .collect();
        FrameSample::new(
            sample.sequence_id.clone(),
            sample.frame_id.clone(),
            self.image(&sample.image_t),
            sample.image_t1.as_ref().map(|i| self.image(i)),
            sample.flow.as_ref().map(|f| self.flow(f)),
            annotations,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Category;
    use crate::geometry::BBox;

    fn sample() -> FrameSample {
        let mut img = RgbImage::new(8, 4);
        img.put_pixel(1, 1, Rgb([255, 0, 0]));
        let mut flow = FlowField::constant(8, 4, 0.0, 0.0);
        flow.set(1, 1, 2.0, 1.0);
        let ann = InstanceAnnotation {
            instance_id: 1,
            category: Category::Car,
            moving: true,
            bbox: BBox::new(1.0, 1.0, 2.0, 2.0),
            mask: BitMask::from_fn(8, 4, |x, y| x == 1 && y == 1),
        };
        FrameSample::new("s", "f", img.clone(), Some(img), Some(flow), vec![ann])
    }

    #[test]
    fn flip_mirrors_everything_and_negates_u() {
        let s = Augment {
            flip: true,
            shift: (0, 0),
        }
        .apply(&sample());
        assert_eq!(s.image_t.get_pixel(6, 1), &Rgb([255, 0, 0]));
        assert_eq!(s.flow.as_ref().unwrap().at(6, 1), (-2.0, 1.0));
        let a = &s.annotations[0];
        assert_eq!(a.bbox, BBox::new(6.0, 1.0, 7.0, 2.0));
        assert!(a.mask.get(6, 1));
        assert_eq!(a.mask.bbox(), Some(a.bbox));
    }

    #[test]
    fn shift_moves_content_and_fills() {
        let s = Augment {
            flip: false,
            shift: (2, 1),
        }
        .apply(&sample());
        assert_eq!(s.image_t.get_pixel(3, 2), &Rgb([255, 0, 0]));
        assert_eq!(s.image_t.get_pixel(0, 0), &FILL);
        assert_eq!(s.flow.as_ref().unwrap().at(3, 2), (2.0, 1.0));
        assert_eq!(s.annotations[0].bbox, BBox::new(3.0, 2.0, 4.0, 3.0));
    }

    #[test]
    fn shifted_out_instances_are_dropped() {
        let s = Augment {
            flip: false,
            shift: (-3, 0),
        }
        .apply(&sample());
        assert!(s.annotations.is_empty());
        assert!(s.negative_frame);
        s.validate().unwrap();
    }
}
