//! Detection geometry and post-processing: IoU, score thresholding, greedy
//! NMS, and the detection cap applied to every per-image prediction list.

mod density;
mod dog;
mod eval;
mod focal;

pub use density::{density_map, gaussian_blur, local_maxima, DensityParams};
pub use dog::{dog_detect, dog_response, DogParams};
pub use eval::{
    average_precision, map_over_thresholds, pooled_average_precision, pr_curve, write_pr_csv,
    PrPoint,
};
pub use focal::{binary_cross_entropy, focal_loss, FocalParams};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Axis-aligned box, inclusive-exclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(CoreError::Geometry(format!(
                "degenerate box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union of two boxes, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Scored box: posterior that the box contains a nucleus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(CoreError::Geometry(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, score })
    }
}

/// Matching and cap configuration shared by post-processing and evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatchConfig {
    /// IoU required for a prediction to match a ground-truth box.
    pub iou_threshold: f64,
    /// Per-image cap on surviving detections.
    pub max_detections: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            max_detections: 500,
        }
    }
}

/// Sort detection indices by descending score; equal scores keep input order.
fn sorted_indices_by_score(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Score thresholding, greedy NMS, and detection cap.
///
/// Keeps detections with `score >= score_threshold`, suppresses any box with
/// IoU strictly above `nms_iou` against an already kept higher-scored box,
/// then truncates to `cfg.max_detections`. Output is sorted by descending
/// score; ties keep input order.
pub fn postprocess(
    dets: &[Detection],
    score_threshold: f64,
    cfg: &MatchConfig,
    nms_iou: f64,
) -> Vec<Detection> {
    let order = sorted_indices_by_score(dets);
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        if dets[i].score < score_threshold {
            continue;
        }
        if kept.iter().any(|k| iou(&k.bbox, &dets[i].bbox) > nms_iou) {
            continue;
        }
        kept.push(dets[i]);
        if kept.len() == cfg.max_detections {
            break;
        }
    }
    kept
}

/// Wire format for detections: `{"x", "y", "w", "h", "score"}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

/// Wire format for ground truth: same shape without a score.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoxRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<Detection> for DetectionRecord {
    fn from(d: Detection) -> Self {
        Self {
            x: d.bbox.x_min,
            y: d.bbox.y_min,
            w: d.bbox.width(),
            h: d.bbox.height(),
            score: d.score,
        }
    }
}

impl TryFrom<DetectionRecord> for Detection {
    type Error = CoreError;

    fn try_from(r: DetectionRecord) -> Result<Self> {
        Detection::new(BBox::from_xywh(r.x, r.y, r.w, r.h)?, r.score)
    }
}

impl From<BBox> for BoxRecord {
    fn from(b: BBox) -> Self {
        Self {
            x: b.x_min,
            y: b.y_min,
            w: b.width(),
            h: b.height(),
        }
    }
}

impl TryFrom<BoxRecord> for BBox {
    type Error = CoreError;

    fn try_from(r: BoxRecord) -> Result<Self> {
        BBox::from_xywh(r.x, r.y, r.w, r.h)
    }
}
