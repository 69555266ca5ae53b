//! Pixel-level moving/background IoU over a dataset-wide confusion matrix.

use crate::error::{Error, Result};
use crate::geometry::BitMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PixelConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PixelConfusion {
    /// Adds one frame; `true` marks moving pixels.
    pub fn add(&mut self, pred: &BitMask, gt: &BitMask) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::Shape(format!(
                "predicted mask {:?} vs ground truth {:?}",
                pred.dims(),
                gt.dims()
            )));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, o: &PixelConfusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// IoU of each class in percent; NaN when a class never appears in
    /// either mask.
    pub fn metrics(&self) -> MotionMetrics {
        let ratio = |a: u64, b: u64| 100.0 * a as f64 / b as f64;
        let moving = ratio(self.tp, self.tp + self.fp + self.fn_);
        let background = ratio(self.tn, self.tn + self.fp + self.fn_);
        MotionMetrics {
            moving_iou: moving,
            background_iou: background,
            miou: (moving + background) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MotionMetrics {
    pub moving_iou: f64,
    pub background_iou: f64,
    pub miou: f64,
}

/// Metrics of a single prediction.
pub fn motion_pixel_metrics(pred: &BitMask, gt: &BitMask) -> Result<MotionMetrics> {
    let mut c = PixelConfusion::default();
    c.add(pred, gt)?;
    Ok(c.metrics())
}
