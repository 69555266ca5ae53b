//! Prototype, coefficient and overlay images.

use image::{Rgb, RgbImage};

use crate::assembly::{motion_mask, Detection};
use crate::config::EvalConfig;
use crate::error::Result;
use crate::eval::detect;
use crate::features::ModelInput;
use crate::{Model, Scalar, Tensor};

/// Cells per grid row.
pub const GRID_COLUMNS: usize = 6;
const GAP: u32 = 1;

fn grid_dims(n: usize, cell_w: usize, cell_h: usize) -> (u32, u32, usize) {
    let rows = n.div_ceil(GRID_COLUMNS).max(1);
    let w = GRID_COLUMNS as u32 * (cell_w as u32 + GAP) + GAP;
    let h = rows as u32 * (cell_h as u32 + GAP) + GAP;
    (w, h, rows)
}

fn cell_origin(i: usize, cell_w: usize, cell_h: usize) -> (u32, u32) {
    let (r, c) = (i / GRID_COLUMNS, i % GRID_COLUMNS);
    (GAP + c as u32 * (cell_w as u32 + GAP), GAP + r as u32 * (cell_h as u32 + GAP))
}

/// Prototypes laid out six per row, each min-max normalised to [0,255].
/// Unused cells stay black.
pub fn prototype_grid<T: Scalar>(protos: &Tensor<T>) -> RgbImage {
    let (k, h, w) = protos.chw();
    let (gw, gh, _) = grid_dims(k, w, h);
    let mut img = RgbImage::new(gw, gh);
    let data = protos.data();
    for i in 0..k {
        let p = &data[i * h * w..(i + 1) * h * w];
        let (lo, hi) = p
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
        let span = hi - lo;
        let (ox, oy) = cell_origin(i, w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if span > 0.0 {
                    ((p[y * w + x].as_f64() - lo) / span * 255.0).round() as u8
                } else {
                    0
                };
                img.put_pixel(ox + x as u32, oy + y as u32, Rgb([v, v, v]));
            }
        }
    }
    img
}

/// Diverging colour for a coefficient in [-1,1]: gray at 0, red for
/// positive, blue for negative.
pub fn coefficient_color(c: f64) -> Rgb<u8> {
    let t = c.clamp(-1.0, 1.0);
    let mix = |from: f64, to: f64| (from + (to - from) * t.abs()).round() as u8;
    if t >= 0.0 {
        Rgb([mix(128.0, 255.0), mix(128.0, 0.0), mix(128.0, 0.0)])
    } else {
        Rgb([mix(128.0, 0.0), mix(128.0, 0.0), mix(128.0, 255.0)])
    }
}

/// One filled `cell`-sized square per coefficient, in prototype order.
pub fn coefficient_grid(coefs: &[f64], cell: usize) -> RgbImage {
    let (gw, gh, _) = grid_dims(coefs.len(), cell, cell);
    let mut img = RgbImage::new(gw, gh);
    for (i, &c) in coefs.iter().enumerate() {
        let (ox, oy) = cell_origin(i, cell, cell);
        let color = coefficient_color(c);
        for y in 0..cell as u32 {
            for x in 0..cell as u32 {
                img.put_pixel(ox + x, oy + y, color);
            }
        }
    }
    img
}

/// Palette for semantic labels 1..; index 0 is unused.
pub const CLASS_COLORS: [[u8; 3]; 6] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
];

fn blend(img: &mut RgbImage, x: u32, y: u32, color: [u8; 3], alpha: f64) {
    let p = img.get_pixel_mut(x, y);
    for c in 0..3 {
        p.0[c] = (p.0[c] as f64 * (1.0 - alpha) + color[c] as f64 * alpha).round() as u8;
    }
}

fn draw_box(img: &mut RgbImage, d: &Detection, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let b = d.bbox.clip(w as f64, h as f64);
    if !b.is_valid() {
        return;
    }
    let (x1, y1) = (b.x1.floor() as u32, b.y1.floor() as u32);
    let (x2, y2) = ((b.x2.ceil() as u32).min(w) - 1, (b.y2.ceil() as u32).min(h) - 1);
    for x in x1..=x2 {
        img.put_pixel(x, y1, Rgb(color));
        img.put_pixel(x, y2, Rgb(color));
    }
    for y in y1..=y2 {
        img.put_pixel(x1, y, Rgb(color));
        img.put_pixel(x2, y, Rgb(color));
    }
}

/// Tints each detection's mask with its class colour and outlines its box.
pub fn instance_overlay(image: &RgbImage, dets: &[Detection], conf_thresh: f64) -> RgbImage {
    let mut img = image.clone();
    for d in dets.iter().filter(|d| d.score >= conf_thresh) {
        let color = CLASS_COLORS[1 + (d.class - 1) % (CLASS_COLORS.len() - 1)];
        if let Some(m) = &d.mask {
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(x, y) {
                        blend(&mut img, x as u32, y as u32, color, 0.5);
                    }
                }
            }
        }
        draw_box(&mut img, d, color);
    }
    img
}

/// Moving pixels tinted red.
pub fn motion_overlay(image: &RgbImage, dets: &[Detection], conf_thresh: f64) -> RgbImage {
    let mut img = image.clone();
    let m = motion_mask(dets, conf_thresh, img.width() as usize, img.height() as usize);
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                blend(&mut img, x as u32, y as u32, [255, 0, 0], 0.6);
            }
        }
    }
    img
}

/// Rendered figures for one frame. Coefficient grids are `None` when the
/// head produced no detection.
#[derive(Debug, Clone)]
pub struct Figures {
    pub prototypes: RgbImage,
    pub semantic_coefficients: Option<RgbImage>,
    pub motion_coefficients: Option<RgbImage>,
    pub semantic_overlay: RgbImage,
    pub motion_overlay: RgbImage,
}

/// Renders all figures for `image`, whose input tensors are `input`.
pub fn render<T: Scalar>(model: &Model<T>, input: &ModelInput<T>, image: &RgbImage, cfg: &EvalConfig) -> Result<Figures> {
    let pred = model.predict(input)?;
    let (sem, mot) = detect(model, input, cfg)?;
    // detections are sorted by score, so the first is the top one
    let coef = |d: &[Detection]| d.first().map(|d| coefficient_grid(&d.coefs, 16));
    Ok(Figures {
        prototypes: prototype_grid(&pred.prototypes),
        semantic_coefficients: coef(&sem),
        motion_coefficients: coef(&mot),
        semantic_overlay: instance_overlay(image, &sem, cfg.conf_thresh),
        motion_overlay: motion_overlay(image, &mot, cfg.conf_thresh),
    })
}
