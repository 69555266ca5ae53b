//! Synthetic moving-shapes sequences with exact flow and motion labels.
//!
//! Shapes live in a 2-D world and move with integer velocities; the camera
//! translates by `ego_translation` pixels per frame. A shape is moving iff
//! its world velocity is non-zero, so static shapes drift across the image
//! exactly like the background does. Flow is the analytic displacement
//! used to render frame t+1: `velocity - ego` on shapes, `-ego` elsewhere.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instancemotseg::{frame_paths, sequence_dir, IndexRecord, InstanceRecord, INDEX_FILE};
use super::raster::{write_indexed, write_rgb, IndexedMask};
use super::{write_flow, Category, FlowField, FrameSample, InstanceAnnotation};
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 100;
const PLACEMENT_MARGIN: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeKind {
    /// Semantic category a shape kind stands in for.
    pub fn category(self) -> Category {
        match self {
            ShapeKind::Rectangle => Category::Car,
            ShapeKind::Ellipse => Category::Pedestrian,
            ShapeKind::Triangle => Category::Cyclist,
        }
    }

    /// Whether the centre of a pixel at offset `(dx, dy)` from the shape
    /// centre is covered, for half extents `(hw, hh)`.
    fn covers(self, dx: f64, dy: f64, hw: f64, hh: f64) -> bool {
        match self {
            ShapeKind::Rectangle => dx.abs() <= hw && dy.abs() <= hh,
            ShapeKind::Ellipse => (dx / hw).powi(2) + (dy / hh).powi(2) <= 1.0,
            ShapeKind::Triangle => dy <= hh && dy >= -hh && dx.abs() <= hw * (dy + hh) / (2.0 * hh),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneConfig {
    /// `(height, width)` in pixels.
    pub image_size: [usize; 2],
    pub num_shapes: usize,
    pub shape_kinds: Vec<ShapeKind>,
    /// Inclusive range of shape width/height in pixels.
    pub shape_size: [u32; 2],
    /// Camera translation `(dx, dy)` in pixels per frame.
    pub ego_translation: [i32; 2],
    /// Inclusive range for the largest absolute velocity component of a
    /// moving shape, in pixels per frame.
    pub velocity_range: [i32; 2],
    pub moving_fraction: f64,
    pub frames_per_sequence: usize,
    pub num_sequences: usize,
    pub seed: u64,
    /// World scale used for the emitted pose and tracklet records.
    pub meters_per_pixel: f64,
    pub frame_interval: f64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            image_size: [128, 128],
            num_shapes: 3,
            shape_kinds: vec![ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Triangle],
            shape_size: [16, 32],
            ego_translation: [2, 0],
            velocity_range: [2, 4],
            moving_fraction: 0.5,
            frames_per_sequence: 8,
            num_sequences: 1,
            seed: 0,
            meters_per_pixel: 0.2,
            frame_interval: 0.1,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        let bad = |msg: String| Err(Error::Config(msg));
        if h < 64 || w < 64 {
            return bad(format!("synthetic.image_size must be at least 64x64, got {h}x{w}"));
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) {
            return bad(format!("synthetic.moving_fraction must lie in [0,1], got {}", self.moving_fraction));
        }
        if self.num_shapes > 255 {
            return bad("synthetic.num_shapes must be at most 255".into());
        }
        if self.shape_kinds.is_empty() {
            return bad("synthetic.shape_kinds must not be empty".into());
        }
        if self.shape_size[0] < 2 || self.shape_size[0] > self.shape_size[1] {
            return bad(format!("synthetic.shape_size must be an increasing range >= 2, got {:?}", self.shape_size));
        }
        if self.velocity_range[0] < 1 || self.velocity_range[0] > self.velocity_range[1] {
            return bad(format!("synthetic.velocity_range must be an increasing range >= 1, got {:?}", self.velocity_range));
        }
        if self.frames_per_sequence == 0 || self.num_sequences == 0 {
            return bad("synthetic.frames_per_sequence and num_sequences must be positive".into());
        }
        if self.meters_per_pixel <= 0.0 || self.frame_interval <= 0.0 {
            return bad("synthetic.meters_per_pixel and frame_interval must be positive".into());
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.frames_per_sequence * self.num_sequences
    }
}

/// One placed shape. Positions are integer pixel-edge coordinates of the
/// shape centre in world space at frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrack {
    pub instance_id: u32,
    pub kind: ShapeKind,
    pub half: (f64, f64),
    pub color: [u8; 3],
    pub origin: (i64, i64),
    pub velocity: (i64, i64),
}

impl ShapeTrack {
    pub fn moving(&self) -> bool {
        self.velocity != (0, 0)
    }

    /// Shape centre in image coordinates at frame `t`.
    pub fn image_center(&self, t: i64, ego: (i64, i64)) -> (i64, i64) {
        (
            self.origin.0 + (self.velocity.0 - ego.0) * t,
            self.origin.1 + (self.velocity.1 - ego.1) * t,
        )
    }

    fn footprint(&self, t: i64, ego: (i64, i64)) -> (i64, i64, i64, i64) {
        let (cx, cy) = self.image_center(t, ego);
        let (hw, hh) = (self.half.0.ceil() as i64, self.half.1.ceil() as i64);
        (cx - hw, cy - hh, cx + hw, cy + hh)
    }

    fn covers(&self, x: usize, y: usize, t: i64, ego: (i64, i64)) -> bool {
        let (cx, cy) = self.image_center(t, ego);
        let dx = x as f64 + 0.5 - cx as f64;
        let dy = y as f64 + 0.5 - cy as f64;
        self.kind.covers(dx, dy, self.half.0, self.half.1)
    }
}

/// A generated sequence: shape tracks plus rendered frames.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub sequence_id: String,
    pub ego: (i64, i64),
    pub shapes: Vec<ShapeTrack>,
    pub frames: Vec<FrameSample>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Low-contrast blocky texture, a pure function of world coordinates.
fn background(tex_seed: u64, xw: i64, yw: i64) -> [u8; 3] {
    let cell = mix(tex_seed ^ mix((xw.div_euclid(4) as u64) ^ mix(yw.div_euclid(4) as u64 ^ 0x5555)));
    let fine = mix(tex_seed ^ mix(xw as u64) ^ mix(!(yw as u64)));
    let base = 96 + (cell % 24) as i32 + (fine % 7) as i32;
    [
        base as u8,
        (base + 4 - ((cell >> 8) % 6) as i32) as u8,
        (base - 6 + ((cell >> 16) % 5) as i32) as u8,
    ]
}

struct Renderer<'a> {
    w: usize,
    h: usize,
    ego: (i64, i64),
    tex_seed: u64,
    shapes: &'a [ShapeTrack],
}

impl Renderer<'_> {
    /// Index of the topmost shape covering the pixel at frame `t`.
    fn owner(&self, x: usize, y: usize, t: i64) -> Option<usize> {
        self.shapes.iter().rposition(|s| s.covers(x, y, t, self.ego))
    }

    fn image(&self, t: i64) -> RgbImage {
        let mut img = RgbImage::new(self.w as u32, self.h as u32);
        for y in 0..self.h {
            for x in 0..self.w {
                let px = match self.owner(x, y, t) {
                    Some(i) => self.shapes[i].color,
                    None => background(self.tex_seed, x as i64 + self.ego.0 * t, y as i64 + self.ego.1 * t),
                };
                img.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        img
    }

    fn frame(&self, seq: &str, t: i64) -> (FrameSample, IndexedMask) {
        let mut flow = FlowField::constant(self.w, self.h, -self.ego.0 as f32, -self.ego.1 as f32);
        let mut index = IndexedMask::new(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                if let Some(i) = self.owner(x, y, t) {
                    let s = &self.shapes[i];
                    flow.set(x, y, (s.velocity.0 - self.ego.0) as f32, (s.velocity.1 - self.ego.1) as f32);
                    index.set(x, y, s.instance_id as u8);
                }
            }
        }
        let annotations = self
            .shapes
            .iter()
            .filter_map(|s| {
                let mask = index.instance(s.instance_id as u8);
                mask.bbox().map(|bbox| InstanceAnnotation {
                    instance_id: s.instance_id,
                    category: s.kind.category(),
                    moving: s.moving(),
                    bbox,
                    mask,
                })
            })
            .collect();
        let sample = FrameSample::new(
            seq,
            format!("{t:06}"),
            self.image(t),
            Some(self.image(t + 1)),
            Some(flow),
            annotations,
        );
        (sample, index)
    }
}

fn overlaps(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> bool {
    let m = PLACEMENT_MARGIN;
    a.0 < b.2 + m && b.0 < a.2 + m && a.1 < b.3 + m && b.1 < a.3 + m
}

fn place_shapes(cfg: &SyntheticSceneConfig, ego: (i64, i64), rng: &mut ChaCha8Rng) -> Result<Vec<ShapeTrack>> {
    let [h, w] = cfg.image_size;
    let frames = cfg.frames_per_sequence as i64;
    let mut shapes: Vec<ShapeTrack> = Vec::with_capacity(cfg.num_shapes);
    for i in 0..cfg.num_shapes {
        let kind = cfg.shape_kinds[rng.gen_range(0..cfg.shape_kinds.len())];
        let moving = rng.gen_bool(cfg.moving_fraction);
        let color = loop {
            let c: [u8; 3] = [rng.gen_range(30..=255), rng.gen_range(30..=255), rng.gen_range(30..=255)];
            if c.iter().any(|&v| v >= 170) || c.iter().all(|&v| v <= 60) {
                break c;
            }
        };
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let sw = rng.gen_range(cfg.shape_size[0]..=cfg.shape_size[1]) as f64;
            let sh = rng.gen_range(cfg.shape_size[0]..=cfg.shape_size[1]) as f64;
            let velocity = if moving {
                let [lo, hi] = cfg.velocity_range;
                loop {
                    let v = (rng.gen_range(-hi..=hi) as i64, rng.gen_range(-hi..=hi) as i64);
                    if v.0.abs().max(v.1.abs()) >= lo as i64 {
                        break v;
                    }
                }
            } else {
                (0, 0)
            };
            let origin = (rng.gen_range(0..w as i64), rng.gen_range(0..h as i64));
            let cand = ShapeTrack {
                instance_id: i as u32 + 1,
                kind,
                half: (sw / 2.0, sh / 2.0),
                color,
                origin,
                velocity,
            };
            // frames 0..=F so that image_t1 of the last frame is covered too
            let ok = (0..=frames).all(|t| {
                let fp = cand.footprint(t, ego);
                fp.0 >= 1
                    && fp.1 >= 1
                    && fp.2 <= w as i64 - 1
                    && fp.3 <= h as i64 - 1
                    && shapes.iter().all(|s| !overlaps(fp, s.footprint(t, ego)))
            });
            if ok {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(s) => shapes.push(s),
            None => {
                return Err(Error::Generation(format!(
                    "could not place shape {} after {MAX_ATTEMPTS} attempts; reduce num_shapes, shape_size or velocities",
                    i + 1
                )))
            }
        }
    }
    Ok(shapes)
}

/// Generates all sequences in memory.
pub fn generate_sequences(cfg: &SyntheticSceneConfig) -> Result<Vec<SyntheticSequence>> {
    Ok(generate_with_masks(cfg)?.into_iter().map(|(s, _)| s).collect())
}

fn generate_with_masks(cfg: &SyntheticSceneConfig) -> Result<Vec<(SyntheticSequence, Vec<IndexedMask>)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ego = (cfg.ego_translation[0] as i64, cfg.ego_translation[1] as i64);
    let [h, w] = cfg.image_size;
    let mut out = Vec::with_capacity(cfg.num_sequences);
    for s in 0..cfg.num_sequences {
        let sequence_id = format!("seq{s:03}");
        let tex_seed: u64 = rng.gen();
        let shapes = place_shapes(cfg, ego, &mut rng)?;
        let renderer = Renderer {
            w,
            h,
            ego,
            tex_seed,
            shapes: &shapes,
        };
        let (frames, masks) = (0..cfg.frames_per_sequence as i64)
            .map(|t| renderer.frame(&sequence_id, t))
            .unzip();
        out.push((
            SyntheticSequence {
                sequence_id,
                ego,
                shapes,
                frames,
            },
            masks,
        ));
    }
    Ok(out)
}

/// Ego poses as `timestamp` followed by a row-major 3×4 `[R|t]`.
pub fn pose_records(cfg: &SyntheticSceneConfig, seq: &SyntheticSequence) -> String {
    let mut out = String::new();
    for t in 0..cfg.frames_per_sequence as i64 {
        let ts = t as f64 * cfg.frame_interval;
        let px = (seq.ego.0 * t) as f64 * cfg.meters_per_pixel;
        let py = (seq.ego.1 * t) as f64 * cfg.meters_per_pixel;
        writeln!(out, "{ts} 1 0 0 {px} 0 1 0 {py} 0 0 1 0").expect("string write");
    }
    out
}

/// Object centroids in the sensor frame: `object_id category timestamp x y z yaw`.
pub fn tracklet_records(cfg: &SyntheticSceneConfig, seq: &SyntheticSequence) -> String {
    let mut out = String::new();
    for s in &seq.shapes {
        for t in 0..cfg.frames_per_sequence as i64 {
            let ts = t as f64 * cfg.frame_interval;
            let (cx, cy) = s.image_center(t, seq.ego);
            let x = cx as f64 * cfg.meters_per_pixel;
            let y = cy as f64 * cfg.meters_per_pixel;
            writeln!(out, "{} {} {ts} {x} {y} 0 0", s.instance_id, s.kind.category().name()).expect("string write");
        }
    }
    out
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// Writes the dataset layout under `out`. Identical configs produce
/// byte-identical directories.
pub fn generate_synthetic(cfg: &SyntheticSceneConfig, out: impl AsRef<Path>) -> Result<Vec<SyntheticSequence>> {
    let out = out.as_ref();
    let generated = generate_with_masks(cfg)?;
    let mut index = String::new();
    for (seq, masks) in &generated {
        let dir = sequence_dir(out, &seq.sequence_id);
        for sub in ["image_t", "image_t1", "flow", "masks"] {
            mkdir(&dir.join(sub))?;
        }
        for (frame, mask) in seq.frames.iter().zip(masks) {
            let [p_t, p_t1, p_flow, p_mask] = frame_paths(out, &seq.sequence_id, &frame.frame_id);
            write_rgb(&frame.image_t, &p_t)?;
            write_rgb(frame.image_t1.as_ref().expect("synthetic frames carry t+1"), &p_t1)?;
            write_flow(frame.flow.as_ref().expect("synthetic frames carry flow"), &p_flow)?;
            write_indexed(mask, &p_mask)?;
            let rec = IndexRecord {
                sequence_id: seq.sequence_id.clone(),
                frame_id: frame.frame_id.clone(),
                has_image_t1: true,
                has_flow: true,
                instances: frame
                    .annotations
                    .iter()
                    .map(|a| InstanceRecord {
                        instance_id: a.instance_id,
                        category: a.category,
                        moving: a.moving,
                        bbox: a.bbox,
                    })
                    .collect(),
            };
            index.push_str(&serde_json::to_string(&rec).expect("index record serializes"));
            index.push('\n');
        }
        write_text(&dir.join("poses.txt"), &pose_records(cfg, seq))?;
        write_text(&dir.join("tracklets.txt"), &tracklet_records(cfg, seq))?;
    }
    write_text(&out.join(INDEX_FILE), &index)?;
    let resolved = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join("synthetic.toml"), &resolved)?;
    Ok(generated.into_iter().map(|(s, _)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_shape(kind: ShapeKind, velocity: (i64, i64), ego: (i64, i64)) -> (Vec<ShapeTrack>, Renderer<'static>) {
        let shapes = vec![ShapeTrack {
            instance_id: 1,
            kind,
            half: (8.0, 6.0),
            color: [250, 10, 10],
            origin: (40, 40),
            velocity,
        }];
        let leaked: &'static [ShapeTrack] = Box::leak(shapes.clone().into_boxed_slice());
        (
            shapes,
            Renderer {
                w: 64,
                h: 64,
                ego,
                tex_seed: 1,
                shapes: leaked,
            },
        )
    }

    #[test]
    fn static_shape_under_ego_motion() {
        let (_, r) = one_shape(ShapeKind::Rectangle, (0, 0), (2, 0));
        let (f, _) = r.frame("s", 0);
        let a = &f.annotations[0];
        assert!(!a.moving);
        assert!(f.negative_frame);
        let flow = f.flow.unwrap();
        let (x, y) = (40, 40);
        assert!(a.mask.get(x, y));
        assert_eq!(flow.at(x, y), (-2.0, 0.0));
        assert_eq!(flow.at(0, 0), (-2.0, 0.0));
    }

    #[test]
    fn moving_shape_without_ego_motion() {
        let (_, r) = one_shape(ShapeKind::Ellipse, (3, 0), (0, 0));
        let (f, _) = r.frame("s", 0);
        assert!(f.annotations[0].moving);
        let flow = f.flow.unwrap();
        assert_eq!(flow.at(40, 40), (3.0, 0.0));
        assert_eq!(flow.at(0, 0), (0.0, 0.0));
    }

    #[test]
    fn flow_warps_frame_t_onto_t1() {
        let cfg = SyntheticSceneConfig {
            num_sequences: 2,
            frames_per_sequence: 3,
            seed: 11,
            ..Default::default()
        };
        for seq in generate_sequences(&cfg).unwrap() {
            let r = Renderer {
                w: 128,
                h: 128,
                ego: seq.ego,
                tex_seed: 0,
                shapes: &seq.shapes,
            };
            for (t, f) in seq.frames.iter().enumerate() {
                let t = t as i64;
                let flow = f.flow.as_ref().unwrap();
                let t1 = f.image_t1.as_ref().unwrap();
                let mut checked = 0;
                for y in 0..f.height() {
                    for x in 0..f.width() {
                        let (u, v) = flow.at(x, y);
                        let (tx, ty) = (x as f32 + u, y as f32 + v);
                        if tx < 0.0 || ty < 0.0 || tx >= f.width() as f32 || ty >= f.height() as f32 {
                            continue;
                        }
                        assert_eq!(u.fract(), 0.0);
                        // disocclusions: destination owned by something else at t+1
                        if r.owner(x, y, t) != r.owner(tx as usize, ty as usize, t + 1) {
                            continue;
                        }
                        assert_eq!(
                            f.image_t.get_pixel(x as u32, y as u32),
                            t1.get_pixel(tx as u32, ty as u32),
                            "pixel ({x},{y}) in {}/{}",
                            seq.sequence_id,
                            f.frame_id
                        );
                        checked += 1;
                    }
                }
                assert!(checked > f.width() * f.height() / 2);
            }
        }
    }

    #[test]
    fn annotations_are_consistent() {
        let cfg = SyntheticSceneConfig {
            num_sequences: 3,
            seed: 5,
            ..Default::default()
        };
        for seq in generate_sequences(&cfg).unwrap() {
            for f in &seq.frames {
                f.validate().unwrap();
                assert_eq!(f.annotations.len(), cfg.num_shapes);
                for a in &f.annotations {
                    assert!(a.bbox.is_valid());
                    assert_eq!(a.mask.bbox(), Some(a.bbox));
                    let shape = &seq.shapes[a.instance_id as usize - 1];
                    assert_eq!(a.moving, shape.moving());
                }
            }
        }
    }

    #[test]
    fn impossible_placement_errors() {
        let cfg = SyntheticSceneConfig {
            image_size: [64, 64],
            num_shapes: 40,
            shape_size: [30, 32],
            ..Default::default()
        };
        assert!(matches!(generate_sequences(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let small = SyntheticSceneConfig {
            image_size: [32, 128],
            ..Default::default()
        };
        assert!(small.validate().is_err());
        let frac = SyntheticSceneConfig {
            moving_fraction: 1.5,
            ..Default::default()
        };
        assert!(frac.validate().is_err());
    }

    #[test]
    fn same_seed_is_byte_identical_on_disk() {
        let cfg = SyntheticSceneConfig {
            frames_per_sequence: 2,
            num_sequences: 2,
            seed: 9,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&cfg, a.path()).unwrap();
        generate_synthetic(&cfg, b.path()).unwrap();
        let list = |root: &Path| {
            let mut files = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(d) = stack.pop() {
                for e in fs::read_dir(&d).unwrap() {
                    let p = e.unwrap().path();
                    if p.is_dir() {
                        stack.push(p);
                    } else {
                        files.push(p.strip_prefix(root).unwrap().to_path_buf());
                    }
                }
            }
            files.sort();
            files
        };
        let fa = list(a.path());
        assert_eq!(fa, list(b.path()));
        assert!(fa.len() > 8);
        for f in fa {
            assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{}", f.display());
        }
    }
}
