//! Loader for the instance motion segmentation layout.
//!
//! ```text
//! root/index.jsonl                       one JSON record per frame
//! root/sequences/<seq>/image_t/<frame>.png
//! root/sequences/<seq>/image_t1/<frame>.png
//! root/sequences/<seq>/flow/<frame>.flo
//! root/sequences/<seq>/masks/<frame>.png  indexed, pixel = instance id
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster::{read_indexed, read_rgb};
use super::{read_flow, Category, FrameSample, InstanceAnnotation};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    /// Every frame, ignoring the split.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub instance_id: u32,
    pub category: Category,
    pub moving: bool,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub sequence_id: String,
    pub frame_id: String,
    #[serde(default = "yes")]
    pub has_image_t1: bool,
    #[serde(default = "yes")]
    pub has_flow: bool,
    pub instances: Vec<InstanceRecord>,
}

fn yes() -> bool {
    true
}

pub fn sequence_dir(root: &Path, seq: &str) -> PathBuf {
    root.join("sequences").join(seq)
}

pub fn frame_paths(root: &Path, seq: &str, frame: &str) -> [PathBuf; 4] {
    let d = sequence_dir(root, seq);
    [
        d.join("image_t").join(format!("{frame}.png")),
        d.join("image_t1").join(format!("{frame}.png")),
        d.join("flow").join(format!("{frame}.flo")),
        d.join("masks").join(format!("{frame}.png")),
    ]
}

pub fn read_index(root: &Path) -> Result<Vec<IndexRecord>> {
    let path = root.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: IndexRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Number of test frames for a sequence of `n` frames (20%, rounded half up).
pub fn test_count(n: usize) -> usize {
    (n * 20 + 50) / 100
}

/// Groups `(sequence, frame)` keys and applies the per-sequence tail split.
/// Keys come back sorted by `(sequence_id, frame_id)`.
pub fn split_sequences<K: Clone>(
    items: impl IntoIterator<Item = (String, String, K)>,
    split: Split,
) -> Vec<K> {
    let mut by_seq: BTreeMap<String, BTreeMap<String, K>> = BTreeMap::new();
    for (seq, frame, k) in items {
        by_seq.entry(seq).or_default().insert(frame, k);
    }
    let mut out = Vec::new();
    for frames in by_seq.into_values() {
        let n = frames.len();
        let first_test = n - test_count(n);
        for (i, k) in frames.into_values().enumerate() {
            let keep = match split {
                Split::Train => i < first_test,
                Split::Test => i >= first_test,
                Split::All => true,
            };
            if keep {
                out.push(k);
            }
        }
    }
    out
}

fn load_record(root: &Path, rec: &IndexRecord) -> Result<FrameSample> {
    let [img_t, img_t1, flow, masks] = frame_paths(root, &rec.sequence_id, &rec.frame_id);
    let image_t = read_rgb(&img_t)?;
    let image_t1 = if rec.has_image_t1 {
        Some(read_rgb(&img_t1)?)
    } else {
        None
    };
    let flow = if rec.has_flow {
        Some(read_flow(&flow)?)
    } else {
        None
    };
    let mask = read_indexed(&masks)?;
    if (mask.width as u32, mask.height as u32) != image_t.dimensions() {
        return Err(Error::Shape(format!(
            "{}: mask {}x{} vs image {}x{}",
            masks.display(),
            mask.width,
            mask.height,
            image_t.width(),
            image_t.height()
        )));
    }
    let mut annotations = Vec::with_capacity(rec.instances.len());
    for inst in &rec.instances {
        let id = u8::try_from(inst.instance_id)
            .ok()
            .filter(|&id| id > 0)
            .ok_or_else(|| Error::format(&masks, format!("instance id {} out of range", inst.instance_id)))?;
        if !inst.bbox.is_valid() {
            return Err(Error::format(
                root.join(INDEX_FILE),
                format!("{}/{}: degenerate box for instance {}", rec.sequence_id, rec.frame_id, id),
            ));
        }
        annotations.push(InstanceAnnotation {
            instance_id: inst.instance_id,
            category: inst.category,
            moving: inst.moving,
            bbox: inst.bbox,
            mask: mask.instance(id),
        });
    }
    let sample = FrameSample::new(
        rec.sequence_id.clone(),
        rec.frame_id.clone(),
        image_t,
        image_t1,
        flow,
        annotations,
    );
    sample.validate().map_err(Error::Input)?;
    Ok(sample)
}

/// Loads a split, sorted by `(sequence_id, frame_id)`. The last 20% of every
/// sequence's frames form the test split.
pub fn load_instancemotseg(root: impl AsRef<Path>, split: Split) -> Result<Vec<FrameSample>> {
    let root = root.as_ref();
    let records = read_index(root)?;
    let chosen = split_sequences(
        records
            .iter()
            .map(|r| (r.sequence_id.clone(), r.frame_id.clone(), r)),
        split,
    );
    chosen.into_iter().map(|r| load_record(root, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(seq: &str, n: usize) -> Vec<(String, String, String)> {
        (1..=n)
            .map(|i| (seq.to_string(), format!("{i:06}"), format!("{seq}/{i}")))
            .collect()
    }

    #[test]
    fn ten_frames_give_two_test_frames() {
        let test = split_sequences(keys("s", 10), Split::Test);
        assert_eq!(test, vec!["s/9".to_string(), "s/10".to_string()]);
        assert_eq!(split_sequences(keys("s", 10), Split::Train).len(), 8);
    }

    #[test]
    fn split_sizes_partition_the_dataset() {
        // 38 sequences with uneven lengths summing to 12919 frames
        let mut all = Vec::new();
        let mut total = 0;
        for s in 0..38 {
            let n = if s < 37 { 340 } else { 12919 - 340 * 37 };
            total += n;
            all.extend(keys(&format!("seq{s:02}"), n));
        }
        assert_eq!(total, 12919);
        let train = split_sequences(all.clone(), Split::Train).len();
        let test = split_sequences(all, Split::Test).len();
        assert_eq!(train + test, 12919);
        assert!((test as f64 / 12919.0 - 0.2).abs() < 0.01);
    }

    #[test]
    fn split_is_sorted_and_deterministic() {
        let mut items = keys("b", 5);
        items.extend(keys("a", 5));
        items.reverse();
        let once = split_sequences(items.clone(), Split::All);
        assert_eq!(once, split_sequences(items, Split::All));
        assert_eq!(once[0], "a/1");
        assert_eq!(once[5], "b/1");
    }

    #[test]
    fn malformed_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"sequence_id":"s","frame_id":"000000","instances":[]}"#;
        fs::write(dir.path().join(INDEX_FILE), format!("{good}\n{{not json\n")).unwrap();
        let err = read_index(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
