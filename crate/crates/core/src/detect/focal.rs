//! Binary focal loss: cross entropy scaled by `(1 - p_t)^gamma`, so well
//! classified examples contribute little and training focuses on hard ones.

use serde::{Deserialize, Serialize};

/// Focusing parameters. `gamma = 0, alpha = 1` reduces to cross entropy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

const P_FLOOR: f64 = 1e-12;

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` with `p_t = p` for the positive
/// class and `1 - p` otherwise. `p` is clamped away from {0, 1}.
pub fn focal_loss(p: f64, y: bool, fp: &FocalParams) -> f64 {
    let p = p.clamp(P_FLOOR, 1.0 - P_FLOOR);
    let p_t = if y { p } else { 1.0 - p };
    -fp.alpha * (1.0 - p_t).powf(fp.gamma) * p_t.ln()
}

/// Binary cross entropy, same clamping as [`focal_loss`].
pub fn binary_cross_entropy(p: f64, y: bool) -> f64 {
    focal_loss(p, y, &FocalParams { alpha: 1.0, gamma: 0.0 })
}
