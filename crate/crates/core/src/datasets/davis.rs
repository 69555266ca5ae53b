//! Class-agnostic video segmentation layout (DAVIS style).
//!
//! ```text
//! root/JPEGImages/<seq>/<frame>.{jpg,png}
//! root/Annotations/<seq>/<frame>.png   indexed, pixel = object id
//! root/Flow/<seq>/<frame>.flo          optional
//! ```
//! Every annotated object is treated as a moving, generic instance. The
//! next frame of the sequence, when present, becomes `image_t1`.

use std::fs;
use std::path::{Path, PathBuf};

use super::raster::{read_indexed, read_rgb};
use super::{read_flow, Category, FrameSample, InstanceAnnotation};
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn find_image(dir: &Path, frame: &str) -> Option<PathBuf> {
    ["jpg", "jpeg", "png"]
        .iter()
        .map(|ext| dir.join(format!("{frame}.{ext}")))
        .find(|p| p.exists())
}

pub fn load_class_agnostic(root: impl AsRef<Path>) -> Result<Vec<FrameSample>> {
    let root = root.as_ref();
    let ann_root = root.join("Annotations");
    let mut samples = Vec::new();
    for seq_dir in sorted_entries(&ann_root)?.into_iter().filter(|p| p.is_dir()) {
        let seq = seq_dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let img_dir = root.join("JPEGImages").join(&seq);
        let frames: Vec<String> = sorted_entries(&seq_dir)?
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(String::from))
            .collect();
        for (i, frame) in frames.iter().enumerate() {
            let img_path = find_image(&img_dir, frame)
                .ok_or_else(|| Error::MissingFile(img_dir.join(format!("{frame}.jpg"))))?;
            let image_t = read_rgb(&img_path)?;
            let mask_path = seq_dir.join(format!("{frame}.png"));
            let mask = read_indexed(&mask_path)?;
            if (mask.width as u32, mask.height as u32) != image_t.dimensions() {
                return Err(Error::Shape(format!(
                    "{}: mask {}x{} does not match image {}x{}",
                    mask_path.display(),
                    mask.width,
                    mask.height,
                    image_t.width(),
                    image_t.height()
                )));
            }
            let image_t1 = match frames.get(i + 1).and_then(|f| find_image(&img_dir, f)) {
                Some(p) => Some(read_rgb(&p)?),
                None => None,
            };
            let flow_path = root.join("Flow").join(&seq).join(format!("{frame}.flo"));
            let flow = if flow_path.exists() {
                Some(read_flow(&flow_path)?)
            } else {
                None
            };
            let annotations = mask
                .ids()
                .into_iter()
                .filter_map(|id| {
                    let m = mask.instance(id);
                    m.bbox().map(|bbox| InstanceAnnotation {
                        instance_id: id as u32,
                        category: Category::Generic,
                        moving: true,
                        bbox,
                        mask: m,
                    })
                })
                .collect();
            let sample = FrameSample::new(seq.clone(), frame.clone(), image_t, image_t1, flow, annotations);
            sample.validate().map_err(Error::Input)?;
            samples.push(sample);
        }
    }
    Ok(samples)
}
