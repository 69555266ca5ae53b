//! Motion labels from ego poses and object tracklets.
//!
//! Object centroids are moved from the sensor frame into a fixed world
//! frame before differencing, so ego translation and rotation cancel out and
//! only the object's own motion contributes to its speed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::datasets::{Category, InstanceAnnotation};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

const ORTHO_TOL: f64 = 1e-6;
/// Timestamps closer than this are treated as equal.
const TIME_TOL: f64 = 1e-9;

/// Sensor-to-world transform at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub timestamp: f64,
    pub rotation: Mat3,
    pub position: Vec3,
}

fn mat_vec(r: &Mat3, p: Vec3) -> Vec3 {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl EgoPose {
    pub fn new(timestamp: f64, rotation: Mat3, position: Vec3) -> Self {
        Self {
            timestamp,
            rotation,
            position,
        }
    }

    pub fn identity(timestamp: f64) -> Self {
        Self::new(timestamp, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    /// Checks `R Rᵀ = I` within 1e-6 and a positive determinant.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !((dot - want).abs() <= ORTHO_TOL) {
                    return Err(Error::Annotation(format!(
                        "pose at t={}: rotation is not orthonormal (row {i}·row {j} = {dot})",
                        self.timestamp
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if det <= 0.0 {
            return Err(Error::Annotation(format!(
                "pose at t={}: rotation has determinant {det}",
                self.timestamp
            )));
        }
        Ok(())
    }

    /// `self` preceded by the rigid transform `(rotation, translation)` of
    /// the world frame.
    pub fn transformed(&self, rotation: &Mat3, translation: Vec3) -> EgoPose {
        let p = mat_vec(rotation, self.position);
        EgoPose::new(
            self.timestamp,
            mat_mul(rotation, &self.rotation),
            [p[0] + translation[0], p[1] + translation[1], p[2] + translation[2]],
        )
    }
}

pub fn to_world(point: Vec3, pose: &EgoPose) -> Result<Vec3> {
    pose.validate()?;
    let p = mat_vec(&pose.rotation, point);
    Ok([p[0] + pose.position[0], p[1] + pose.position[1], p[2] + pose.position[2]])
}

/// Per-frame speed from a world-frame track.
///
/// Each frame uses the displacement across a window of `window` records
/// (`window - 1` intervals) centred on it; windows that would leave the
/// track are shifted inwards, which makes the first and last estimates
/// one-sided. Tracks shorter than the window use the whole track; a single
/// record has speed 0.
pub fn estimate_speed(track: &[(f64, Vec3)], window: usize) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(Error::Annotation(format!("speed window must be at least 2, got {window}")));
    }
    for w in track.windows(2) {
        if (w[1].0 - w[0].0).abs() <= TIME_TOL {
            return Err(Error::Annotation(format!("duplicate timestamp {} in track", w[0].0)));
        }
        if w[1].0 < w[0].0 {
            return Err(Error::Annotation(format!("timestamps decrease at {}", w[1].0)));
        }
    }
    let n = track.len();
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let span = window.min(n) - 1;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(span / 2).min(n - 1 - span);
            let hi = lo + span;
            let (t0, p0) = track[lo];
            let (t1, p1) = track[hi];
            norm([p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]]) / (t1 - t0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackletRecord {
    pub timestamp: f64,
    /// Centroid in the sensor frame, meters.
    pub centroid: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub object_id: u32,
    pub category: Category,
    pub records: Vec<TrackletRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionLabel {
    pub object_id: u32,
    pub timestamp: f64,
    pub speed: f64,
    pub moving: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelParams {
    /// Speeds strictly above this (m/s) are moving.
    pub threshold: f64,
    pub window: usize,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            window: 5,
        }
    }
}

fn pose_at<'a>(poses: &'a [EgoPose], t: f64) -> Option<&'a EgoPose> {
    let i = poses.partition_point(|p| p.timestamp < t - TIME_TOL);
    poses.get(i).filter(|p| (p.timestamp - t).abs() <= TIME_TOL)
}

/// Labels every tracklet record as moving or static by world-frame speed.
pub fn label_motion(tracklets: &[Tracklet], poses: &[EgoPose], params: LabelParams) -> Result<Vec<MotionLabel>> {
    for w in poses.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::Annotation(format!(
                "pose timestamps must increase strictly ({} then {})",
                w[0].timestamp, w[1].timestamp
            )));
        }
    }
    for p in poses {
        p.validate()?;
    }
    let mut out = Vec::new();
    for tr in tracklets {
        let mut recs: Vec<&TrackletRecord> = tr.records.iter().collect();
        recs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut world = Vec::with_capacity(recs.len());
        for r in &recs {
            let pose = pose_at(poses, r.timestamp).ok_or_else(|| {
                Error::Annotation(format!("object {}: no ego pose for timestamp {}", tr.object_id, r.timestamp))
            })?;
            world.push((r.timestamp, to_world(r.centroid, pose)?));
        }
        let speeds = estimate_speed(&world, params.window)
            .map_err(|e| Error::Annotation(format!("object {}: {e}", tr.object_id)))?;
        for (r, s) in recs.iter().zip(speeds) {
            out.push(MotionLabel {
                object_id: tr.object_id,
                timestamp: r.timestamp,
                speed: s,
                moving: s > params.threshold,
            });
        }
    }
    Ok(out)
}

/// Outcome of merging labels into a frame's annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RasterizeReport {
    pub labeled: usize,
    /// Instance ids that had no label and were set static.
    pub unlabeled: Vec<u32>,
}

/// Sets `moving` on every annotation of the frame at `timestamp` from the
/// label of its object. `object_of` maps an instance id to an object id.
pub fn rasterize_labels(
    labels: &[MotionLabel],
    timestamp: f64,
    annotations: &mut [InstanceAnnotation],
    object_of: impl Fn(u32) -> u32,
) -> Result<RasterizeReport> {
    let mut by_object: BTreeMap<u32, bool> = BTreeMap::new();
    for l in labels.iter().filter(|l| (l.timestamp - timestamp).abs() <= TIME_TOL) {
        if let Some(&prev) = by_object.get(&l.object_id) {
            if prev != l.moving {
                return Err(Error::Annotation(format!(
                    "conflicting labels for object {} at timestamp {timestamp}",
                    l.object_id
                )));
            }
        }
        by_object.insert(l.object_id, l.moving);
    }
    let mut report = RasterizeReport::default();
    for a in annotations.iter_mut() {
        match by_object.get(&object_of(a.instance_id)) {
            Some(&m) => {
                a.moving = m;
                report.labeled += 1;
            }
            None => {
                a.moving = false;
                report.unlabeled.push(a.instance_id);
            }
        }
    }
    Ok(report)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn numbers(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| parse_err(path, line, format!("not a number: {f:?}"))))
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Pose lines: `timestamp r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz`.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<EgoPose>> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 13 {
            return Err(parse_err(path, ln, format!("expected 13 fields, found {}", f.len())));
        }
        let v = numbers(path, ln, &f)?;
        let rotation = std::array::from_fn(|i| std::array::from_fn(|j| v[1 + 4 * i + j]));
        let position = [v[4], v[8], v[12]];
        out.push(EgoPose::new(v[0], rotation, position));
    }
    Ok(out)
}

pub fn format_poses(poses: &[EgoPose]) -> String {
    let mut s = String::new();
    for p in poses {
        let r = &p.rotation;
        let t = &p.position;
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {} {}",
            p.timestamp, r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]
        )
        .expect("string write");
    }
    s
}

fn category_from_name(name: &str) -> Option<Category> {
    Category::SEMANTIC
        .iter()
        .chain(std::iter::once(&Category::Generic))
        .copied()
        .find(|c| c.name() == name)
}

/// Tracklet lines: `object_id category timestamp x y z yaw`, grouped by object.
pub fn parse_tracklets(text: &str, path: &Path) -> Result<Vec<Tracklet>> {
    let mut by_id: BTreeMap<u32, Tracklet> = BTreeMap::new();
    for (ln, line) in content_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(parse_err(path, ln, format!("expected 7 fields, found {}", f.len())));
        }
        let id: u32 = f[0]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad object id {:?}", f[0])))?;
        let category = category_from_name(f[1]).ok_or_else(|| parse_err(path, ln, format!("unknown category {:?}", f[1])))?;
        let v = numbers(path, ln, &f[2..])?;
        let tr = by_id.entry(id).or_insert_with(|| Tracklet {
            object_id: id,
            category,
            records: Vec::new(),
        });
        if tr.category != category {
            return Err(parse_err(path, ln, format!("object {id} changes category")));
        }
        tr.records.push(TrackletRecord {
            timestamp: v[0],
            centroid: [v[1], v[2], v[3]],
            yaw: v[4],
        });
    }
    Ok(by_id.into_values().collect())
}

/// Label file: a `# threshold=… window=…` header, then
/// `object_id timestamp speed moving` lines.
pub fn format_labels(labels: &[MotionLabel], params: LabelParams) -> String {
    let mut s = format!("# threshold={} window={}\n", params.threshold, params.window);
    for l in labels {
        writeln!(s, "{} {} {} {}", l.object_id, l.timestamp, l.speed, u8::from(l.moving)).expect("string write");
    }
    s
}

pub fn parse_labels(text: &str, path: &Path) -> Result<(LabelParams, Vec<MotionLabel>)> {
    let mut params = None;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if let Some(h) = line.strip_prefix('#') {
            let mut p = LabelParams::default();
            for kv in h.split_whitespace() {
                match kv.split_once('=') {
                    Some(("threshold", v)) => p.threshold = numbers(path, ln, &[v])?[0],
                    Some(("window", v)) => {
                        p.window = v.parse().map_err(|_| parse_err(path, ln, format!("bad window {v:?}")))?
                    }
                    _ => {}
                }
            }
            params = Some(p);
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(path, ln, format!("expected 4 fields, found {}", f.len())));
        }
        let object_id = f[0]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad object id {:?}", f[0])))?;
        let v = numbers(path, ln, &f[1..3])?;
        let moving = match f[3] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(parse_err(path, ln, format!("bad moving flag {other:?}"))),
        };
        labels.push(MotionLabel {
            object_id,
            timestamp: v[0],
            speed: v[1],
            moving,
        });
    }
    let params = params.ok_or_else(|| parse_err(path, 1, "missing `# threshold=… window=…` header"))?;
    Ok((params, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic::{generate_sequences, pose_records, tracklet_records};
    use crate::datasets::SyntheticSceneConfig;
    use crate::geometry::{BBox, BitMask};
    use proptest::prelude::*;

    fn yaw(theta: f64) -> Mat3 {
        let (s, c) = theta.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    /// Rotation from axis-angle, by Rodrigues' formula.
    fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
        let n = norm(axis);
        let [x, y, z] = axis.map(|a| a / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        [
            [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
            [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
            [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
        ]
    }

    fn transpose(r: &Mat3) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]))
    }

    /// Sensor-frame observation of a world point.
    fn observe(world: Vec3, pose: &EgoPose) -> Vec3 {
        let d = [world[0] - pose.position[0], world[1] - pose.position[1], world[2] - pose.position[2]];
        mat_vec(&transpose(&pose.rotation), d)
    }

    #[test]
    fn to_world_examples() {
        let id = EgoPose::identity(0.0);
        assert_eq!(to_world([1.0, 2.0, 3.0], &id).unwrap(), [1.0, 2.0, 3.0]);
        let p = EgoPose::new(0.0, yaw(std::f64::consts::FRAC_PI_2), [10.0, 0.0, 0.0]);
        let w = to_world([1.0, 0.0, 0.0], &p).unwrap();
        // hand multiply: R·(1,0,0) is the first column (cos, sin, 0) = (0, 1, 0)
        assert!((w[0] - 10.0).abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12 && w[2] == 0.0);
        let q = EgoPose::new(0.0, yaw(0.3), [4.0, -2.0, 1.5]);
        assert_eq!(to_world([0.0; 3], &q).unwrap(), [4.0, -2.0, 1.5]);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut p = EgoPose::identity(0.0);
        p.rotation[0][0] = 1.01;
        assert!(matches!(to_world([0.0; 3], &p), Err(Error::Annotation(_))));
        p.rotation[0][0] = 1.0 + 2e-7;
        assert!(to_world([0.0; 3], &p).is_ok());
    }

    #[test]
    fn speed_examples() {
        let still: Vec<(f64, Vec3)> = (0..6).map(|i| (i as f64 * 0.1, [3.0, 4.0, 5.0])).collect();
        assert!(estimate_speed(&still, 5).unwrap().iter().all(|&s| s == 0.0));
        let moving: Vec<(f64, Vec3)> = (0..8).map(|i| (i as f64 * 0.1, [i as f64, 0.0, 0.0])).collect();
        // 1 m per 0.1 s
        for s in estimate_speed(&moving, 5).unwrap() {
            assert!((s - 10.0).abs() < 1e-9, "{s}");
        }
        let two = [(0.0, [0.0; 3]), (0.5, [1.0, 0.0, 0.0])];
        assert_eq!(estimate_speed(&two, 2).unwrap(), vec![2.0, 2.0]);
        let dup = [(0.0, [0.0; 3]), (0.0, [1.0, 0.0, 0.0])];
        assert!(estimate_speed(&dup, 2).is_err());
        assert!(estimate_speed(&two, 1).is_err());
        assert_eq!(estimate_speed(&two[..1], 5).unwrap(), vec![0.0]);
    }

    #[test]
    fn centred_window_uses_neighbours() {
        // accelerating track: x = t^2 sampled at t = 0..4 (s)
        let track: Vec<(f64, Vec3)> = (0..5).map(|i| (i as f64, [(i * i) as f64, 0.0, 0.0])).collect();
        let s = estimate_speed(&track, 3).unwrap();
        // interior i uses (i-1, i+1): ((i+1)^2 - (i-1)^2) / 2 = 2i;
        // the ends reuse the nearest full window, (0, 2) and (2, 4)
        assert_eq!(s, vec![2.0, 2.0, 4.0, 6.0, 6.0]);
    }

    fn tracklet(id: u32, recs: Vec<(f64, Vec3)>) -> Tracklet {
        Tracklet {
            object_id: id,
            category: Category::Car,
            records: recs
                .into_iter()
                .map(|(t, c)| TrackletRecord {
                    timestamp: t,
                    centroid: c,
                    yaw: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn rotating_ego_does_not_move_static_object() {
        // ego turns 90 degrees over 5 frames while the object stays put
        let poses: Vec<EgoPose> = (0..5)
            .map(|i| EgoPose::new(i as f64 * 0.1, yaw(i as f64 * std::f64::consts::FRAC_PI_8), [0.0; 3]))
            .collect();
        let world = [8.0, 3.0, 0.0];
        let tr = tracklet(1, poses.iter().map(|p| (p.timestamp, observe(world, p))).collect());
        // in the sensor frame the object sweeps through a wide arc
        let first = tr.records[0].centroid;
        let last = tr.records[4].centroid;
        assert!(norm([last[0] - first[0], last[1] - first[1], 0.0]) > 5.0);
        let labels = label_motion(&[tr], &poses, LabelParams::default()).unwrap();
        assert!(labels.iter().all(|l| !l.moving && l.speed < 1e-9));
    }

    #[test]
    fn fast_object_is_moving_and_threshold_is_strict() {
        let poses: Vec<EgoPose> = (0..5).map(|i| EgoPose::identity(i as f64 * 0.1)).collect();
        let fast = tracklet(1, (0..5).map(|i| (i as f64 * 0.1, [i as f64, 0.0, 0.0])).collect());
        // 0.1 m per 0.1 s: exactly the 1 m/s threshold
        let edge = tracklet(2, (0..5).map(|i| (i as f64 * 0.1, [0.0, i as f64 * 0.1, 0.0])).collect());
        let fast_speeds: Vec<(f64, Vec3)> = fast.records.iter().map(|r| (r.timestamp, r.centroid)).collect();
        let oracle = estimate_speed(&fast_speeds, 5).unwrap();
        let labels = label_motion(&[fast, edge], &poses, LabelParams::default()).unwrap();
        for (l, s) in labels[..5].iter().zip(oracle) {
            assert!(l.moving);
            assert_eq!(l.speed, s);
        }
        let edge_params = LabelParams {
            threshold: labels[5].speed,
            window: 5,
        };
        assert!((edge_params.threshold - 1.0).abs() < 1e-9);
        let edge = tracklet(2, (0..5).map(|i| (i as f64 * 0.1, [0.0, i as f64 * 0.1, 0.0])).collect());
        let again = label_motion(&[edge], &poses, edge_params).unwrap();
        assert!(!again[2].moving);
    }

    #[test]
    fn missing_pose_names_object_and_time() {
        let poses = vec![EgoPose::identity(0.0)];
        let tr = tracklet(42, vec![(0.0, [0.0; 3]), (0.7, [0.0; 3])]);
        let err = label_motion(&[tr], &poses, LabelParams::default()).unwrap_err().to_string();
        assert!(err.contains("42") && err.contains("0.7"), "{err}");
    }

    fn ann(id: u32) -> InstanceAnnotation {
        InstanceAnnotation {
            instance_id: id,
            category: Category::Car,
            moving: true,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            mask: BitMask::new(2, 2),
        }
    }

    fn label(id: u32, moving: bool) -> MotionLabel {
        MotionLabel {
            object_id: id,
            timestamp: 0.5,
            speed: if moving { 3.0 } else { 0.0 },
            moving,
        }
    }

    #[test]
    fn rasterize_examples() {
        let mut anns = vec![ann(1), ann(2), ann(3)];
        let labels = [label(1, true), label(2, false), label(3, true)];
        let r = rasterize_labels(&labels, 0.5, &mut anns, |i| i).unwrap();
        assert_eq!(r.labeled, 3);
        assert!(r.unlabeled.is_empty());
        assert_eq!(anns.iter().map(|a| a.moving).collect::<Vec<_>>(), vec![true, false, true]);

        let mut anns = vec![ann(1), ann(9)];
        let r = rasterize_labels(&labels, 0.5, &mut anns, |i| i).unwrap();
        assert_eq!(r.unlabeled, vec![9]);
        assert!(!anns[1].moving);

        let mut anns = vec![ann(1), ann(2)];
        let r = rasterize_labels(&[], 0.5, &mut anns, |i| i).unwrap();
        assert_eq!(r.unlabeled, vec![1, 2]);
        assert!(anns.iter().all(|a| !a.moving));

        let conflict = [label(1, true), label(1, false)];
        assert!(rasterize_labels(&conflict, 0.5, &mut [ann(1)], |i| i).is_err());
    }

    #[test]
    fn text_formats_round_trip() {
        let p = Path::new("x.txt");
        let poses = vec![
            EgoPose::identity(0.0),
            EgoPose::new(0.1, yaw(0.25), [1.5, -2.0, 0.25]),
        ];
        assert_eq!(parse_poses(&format_poses(&poses), p).unwrap(), poses);
        let labels = vec![label(3, true), label(4, false)];
        let params = LabelParams {
            threshold: 1.5,
            window: 3,
        };
        let (pp, ll) = parse_labels(&format_labels(&labels, params), p).unwrap();
        assert_eq!((pp, ll), (params, labels));
        let err = parse_poses("0 1 0 0\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let tr = parse_tracklets("1 car 0 1 2 3 0\n1 car 0.1 1 2 3 0\n2 cyclist 0 0 0 0 0\n", p).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[0].records.len(), 2);
        assert!(parse_tracklets("1 bus 0 1 2 3 0\n", p).is_err());
    }

    #[test]
    fn synthetic_labels_match_generator() {
        let cfg = SyntheticSceneConfig {
            num_sequences: 3,
            num_shapes: 4,
            moving_fraction: 0.5,
            seed: 11,
            ..Default::default()
        };
        let p = Path::new("synthetic");
        let mut checked = 0;
        for seq in generate_sequences(&cfg).unwrap() {
            let poses = parse_poses(&pose_records(&cfg, &seq), p).unwrap();
            let tracks = parse_tracklets(&tracklet_records(&cfg, &seq), p).unwrap();
            let labels = label_motion(&tracks, &poses, LabelParams::default()).unwrap();
            for l in labels {
                let shape = seq.shapes.iter().find(|s| s.instance_id == l.object_id).unwrap();
                assert_eq!(l.moving, shape.moving(), "object {} at {}", l.object_id, l.timestamp);
                checked += 1;
            }
        }
        assert_eq!(checked, 3 * 4 * cfg.frames_per_sequence);
    }

    proptest! {
        #[test]
        fn world_frame_invariance(
            yaws in prop::collection::vec(-3.0f64..3.0, 6),
            ego in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 6),
            start in (-30.0f64..30.0, -30.0f64..30.0),
            vel in prop::sample::select(vec![(0.0, 0.0), (3.0, 0.0), (-2.0, 4.0), (0.0, -6.0)]),
            axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
            angle in -3.0f64..3.0,
            shift in (-100.0f64..100.0, -100.0f64..100.0, -5.0f64..5.0),
        ) {
            let poses: Vec<EgoPose> = (0..6)
                .map(|i| EgoPose::new(i as f64 * 0.1, yaw(yaws[i]), [ego[i].0, ego[i].1, 0.0]))
                .collect();
            let tr = tracklet(
                7,
                poses
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let t = i as f64 * 0.1;
                        (p.timestamp, observe([start.0 + vel.0 * t, start.1 + vel.1 * t, 1.0], p))
                    })
                    .collect(),
            );
            let base = label_motion(&[tr.clone()], &poses, LabelParams::default()).unwrap();
            let g = axis_angle([axis.0, axis.1, axis.2], angle);
            let moved: Vec<EgoPose> = poses.iter().map(|p| p.transformed(&g, [shift.0, shift.1, shift.2])).collect();
            let other = label_motion(&[tr], &moved, LabelParams::default()).unwrap();
            let flags: Vec<bool> = base.iter().map(|l| l.moving).collect();
            let flags2: Vec<bool> = other.iter().map(|l| l.moving).collect();
            prop_assert_eq!(&flags, &flags2);
            prop_assert_eq!(flags.iter().all(|&m| m), vel != (0.0, 0.0));
            for l in &base {
                prop_assert!(l.speed >= 0.0);
            }
        }
    }
}
