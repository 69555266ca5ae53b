//! Frame samples, dataset loaders and the synthetic moving-shapes generator.

mod davis;
pub mod flow;
mod instancemotseg;
pub mod raster;
pub mod synthetic;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use davis::load_class_agnostic;
pub use flow::{read_flow, write_flow, FlowField};
pub use instancemotseg::{load_instancemotseg, split_sequences, IndexRecord, InstanceRecord, Split};
pub use synthetic::{generate_synthetic, ShapeKind, SyntheticSceneConfig};

/// Loads `split` of the dataset at `cfg.root`. The class-agnostic layout has
/// no split and always loads every frame.
pub fn load_split(cfg: &crate::config::DatasetConfig, split: Split) -> crate::error::Result<Vec<FrameSample>> {
    match cfg.kind {
        crate::config::DatasetKind::Instancemotseg => load_instancemotseg(&cfg.root, split),
        crate::config::DatasetKind::ClassAgnostic => load_class_agnostic(&cfg.root),
    }
}

use crate::geometry::{BBox, BitMask};

/// Object category. `Generic` only appears in class-agnostic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Car,
    Truck,
    Van,
    Pedestrian,
    Cyclist,
    Generic,
}

impl Category {
    /// Categories predicted by the semantic head, in label order.
    pub const SEMANTIC: [Category; 5] = [
        Category::Car,
        Category::Truck,
        Category::Van,
        Category::Pedestrian,
        Category::Cyclist,
    ];

    /// 1-based semantic label (0 is background), `None` for `Generic`.
    pub fn semantic_label(self) -> Option<usize> {
        Self::SEMANTIC.iter().position(|&c| c == self).map(|i| i + 1)
    }

    pub fn from_semantic_label(label: usize) -> Option<Category> {
        label.checked_sub(1).and_then(|i| Self::SEMANTIC.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Truck => "truck",
            Category::Van => "van",
            Category::Pedestrian => "pedestrian",
            Category::Cyclist => "cyclist",
            Category::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub instance_id: u32,
    pub category: Category,
    pub moving: bool,
    pub bbox: BBox,
    pub mask: BitMask,
}

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub frame_id: String,
    pub sequence_id: String,
    pub image_t: RgbImage,
    pub image_t1: Option<RgbImage>,
    pub flow: Option<FlowField>,
    pub annotations: Vec<InstanceAnnotation>,
    pub negative_frame: bool,
}

impl FrameSample {
    /// Builds a sample, deriving `negative_frame` from the annotations.
    pub fn new(
        sequence_id: impl Into<String>,
        frame_id: impl Into<String>,
        image_t: RgbImage,
        image_t1: Option<RgbImage>,
        flow: Option<FlowField>,
        annotations: Vec<InstanceAnnotation>,
    ) -> Self {
        let negative_frame = !annotations.iter().any(|a| a.moving);
        Self {
            frame_id: frame_id.into(),
            sequence_id: sequence_id.into(),
            image_t,
            image_t1,
            flow,
            annotations,
            negative_frame,
        }
    }

    pub fn width(&self) -> usize {
        self.image_t.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image_t.height() as usize
    }

    /// Checks raster dimensions and the negative-frame flag.
    pub fn validate(&self) -> Result<(), String> {
        let dims = (self.width(), self.height());
        if let Some(im) = &self.image_t1 {
            if (im.width() as usize, im.height() as usize) != dims {
                return Err(format!("{}: image_t1 size differs from image_t", self.frame_id));
            }
        }
        if let Some(f) = &self.flow {
            if (f.width(), f.height()) != dims {
                return Err(format!("{}: flow size differs from image_t", self.frame_id));
            }
        }
        for a in &self.annotations {
            if a.mask.dims() != dims {
                return Err(format!("{}: mask of instance {} has wrong size", self.frame_id, a.instance_id));
            }
        }
        if self.negative_frame == self.annotations.iter().any(|a| a.moving) {
            return Err(format!("{}: negative_frame flag inconsistent", self.frame_id));
        }
        Ok(())
    }

    pub fn recompute_negative(&mut self) {
        self.negative_frame = !self.annotations.iter().any(|a| a.moving);
    }
}
