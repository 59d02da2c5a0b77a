//! Difference-of-Gaussians nuclei detector over the haematoxylin plane.
//!
//! Nuclei are haematoxylin-dense, so they appear as bright blobs in the H
//! concentration plane; a band-pass DoG response peaks at blob centers. Peaks
//! become fixed-size boxes scored by max-normalized response, then go through
//! the standard post-processing (NMS + cap).

use serde::{Deserialize, Serialize};

use super::density::{gaussian_blur, local_maxima};
use super::{postprocess, BBox, Detection, MatchConfig};
use crate::error::{CoreError, Result};
use crate::imgcore::{Image, Plane};
use crate::stain::{hematoxylin_channel, StainMatrix};

/// DoG detector parameters. The defaults are tuned to the synthetic tile
/// generator's nucleus scale (semi-axes 12-20 px); detection on other scales
/// should set sigmas near `radius / sqrt(2)` and `box_radius` near the
/// expected blob radius.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DogParams {
    pub sigma_small: f64,
    pub sigma_large: f64,
    /// Half-side of emitted boxes, in pixels.
    pub box_radius: u32,
    /// Threshold on the max-normalized response, in [0, 1].
    pub response_threshold: f64,
    /// Peak separation radius for local maxima.
    pub min_distance: u32,
    /// IoU above which a lower-scored box is suppressed.
    pub nms_iou: f64,
    #[serde(default)]
    pub match_cfg: MatchConfig,
}

impl Default for DogParams {
    fn default() -> Self {
        Self {
            sigma_small: 8.0,
            sigma_large: 13.0,
            box_radius: 15,
            response_threshold: 0.1,
            min_distance: 15,
            nms_iou: 0.3,
            match_cfg: MatchConfig::default(),
        }
    }
}

impl DogParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_small > 0.0 && self.sigma_small < self.sigma_large) {
            return Err(CoreError::Config(format!(
                "need 0 < sigma_small < sigma_large, got {} and {}",
                self.sigma_small, self.sigma_large
            )));
        }
        if self.box_radius == 0 {
            return Err(CoreError::Config("box_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Band-pass response: `blur(sigma_small) - blur(sigma_large)` of a plane.
pub fn dog_response(plane: &Plane, sigma_small: f64, sigma_large: f64) -> Plane {
    let fine = gaussian_blur(plane, sigma_small);
    let coarse = gaussian_blur(plane, sigma_large);
    let mut out = fine;
    for (o, c) in out.data.iter_mut().zip(coarse.data()) {
        *o -= c;
    }
    out
}

/// Detect nuclei-like blobs. Returns post-processed detections sorted by
/// descending score; never more than `match_cfg.max_detections`.
pub fn dog_detect(image: &Image, m: &StainMatrix, params: &DogParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let h_plane = hematoxylin_channel(image, m);
    let response = dog_response(&h_plane, params.sigma_small, params.sigma_large);

    let peak = response.max();
    if peak <= 0.0 || peak.is_nan() {
        return Ok(Vec::new());
    }
    let mut normalized = response;
    normalized.data.iter_mut().for_each(|v| *v /= peak);

    let centers = local_maxima(&normalized, params.min_distance, params.response_threshold);
    let r = params.box_radius as f64;
    let (w, h) = (image.width() as f64, image.height() as f64);
    let mut dets = Vec::with_capacity(centers.len());
    for (cx, cy) in centers {
        let x_min = (cx as f64 - r).max(0.0);
        let y_min = (cy as f64 - r).max(0.0);
        let x_max = (cx as f64 + r).min(w);
        let y_max = (cy as f64 + r).min(h);
        if x_min >= x_max || y_min >= y_max {
            continue;
        }
        let score = normalized.get(cx, cy).clamp(0.0, 1.0);
        dets.push(Detection::new(BBox::new(x_min, y_min, x_max, y_max)?, score)?);
    }
    Ok(postprocess(&dets, 0.0, &params.match_cfg, params.nms_iou))
}
