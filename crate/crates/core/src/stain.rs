//! Optical-density conversion, RGB <-> HED colour deconvolution, and
//! stain-transformation augmentation.
//!
//! Per-pixel optical density is `OD_c = -log10((v_c + 1) / 256)` (the +1
//! avoids log(0)). A 3x3 stain matrix `M`, whose rows are unit-length OD
//! vectors for Haematoxylin, Eosin, and DAB/residual, relates concentrations
//! to densities by `od = conc * M`, so deconvolution is `conc = od * M^-1`.
//! Recomposition maps back to RGB with clamping to [0, 255]; round trips are
//! exact up to quantization (<= 2 of 255 per channel).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imgcore::{Image, Plane};
use crate::rng::seeded_rng;

/// 3x3 stain matrix; rows are unit-norm OD vectors (H, E, D).
/// Serialized as a row-major 9-number array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
    inv: [[f64; 3]; 3],
}

impl TryFrom<Vec<f64>> for StainMatrix {
    type Error = CoreError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        if v.len() != 9 {
            return Err(CoreError::Config(format!(
                "stain matrix needs 9 numbers, got {}",
                v.len()
            )));
        }
        Self::from_rows([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }
}

impl From<StainMatrix> for Vec<f64> {
    fn from(m: StainMatrix) -> Vec<f64> {
        m.rows.iter().flatten().copied().collect()
    }
}

impl StainMatrix {
    /// Build from row vectors; rows are normalized to unit length.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut norm_rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter().enumerate() {
            let n = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            if n < 1e-12 {
                return Err(CoreError::SingularMatrix(format!("row {i} has zero norm")));
            }
            for c in 0..3 {
                norm_rows[i][c] = row[c] / n;
            }
        }
        let inv = invert3(&norm_rows)?;
        Ok(Self { rows: norm_rows, inv })
    }

    /// Parse a row-major 9-number JSON array.
    pub fn from_json(json: &str) -> Result<Self> {
        let v: Vec<f64> = serde_json::from_str(json)?;
        Self::try_from(v)
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    /// Standard H&E-DAB stain vectors (Ruifrok & Johnston), row-normalized.
    pub fn he_dab() -> Self {
        Self::from_rows([
            [0.650, 0.704, 0.286],
            [0.072, 0.990, 0.105],
            [0.268, 0.570, 0.776],
        ])
        .expect("built-in stain matrix is invertible")
    }

    /// Synthesize the RGB rendering of a single pure stain at the given
    /// concentration. Useful for tests and synthetic data.
    pub fn render_pure_stain(&self, stain: usize, concentration: f64) -> [u8; 3] {
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let od = concentration * self.rows[stain][c];
            rgb[c] = od_to_channel(od);
        }
        rgb
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::he_dab()
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-9 {
        return Err(CoreError::SingularMatrix(format!("determinant {det}")));
    }
    let inv = [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
        ],
    ];
    // Condition check via max-norm of M and M^-1.
    let norm = |a: &[[f64; 3]; 3]| {
        a.iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max)
    };
    if norm(m) * norm(&inv) > 1e6 {
        return Err(CoreError::SingularMatrix("condition number above 1e6".into()));
    }
    Ok(inv)
}

#[inline]
fn channel_to_od(v: u8) -> f64 {
    -((v as f64 + 1.0) / 256.0).log10()
}

#[inline]
fn od_to_channel(od: f64) -> u8 {
    let v = 256.0 * 10f64.powf(-od) - 1.0;
    v.round().clamp(0.0, 255.0) as u8
}

/// Stain-concentration image: H, E, D planes of the same dimensions as the
/// source RGB. Concentrations can be negative for colours outside the stain
/// span; they are kept as-is so recomposition stays exact.
#[derive(Clone, Debug, PartialEq)]
pub struct HedImage {
    pub h: Plane,
    pub e: Plane,
    pub d: Plane,
}

impl HedImage {
    pub fn width(&self) -> u32 {
        self.h.width()
    }

    pub fn height(&self) -> u32 {
        self.h.height()
    }

    pub fn plane(&self, idx: usize) -> &Plane {
        match idx {
            0 => &self.h,
            1 => &self.e,
            _ => &self.d,
        }
    }
}

/// Deconvolve RGB into HED stain concentrations.
pub fn rgb_to_hed(image: &Image, m: &StainMatrix) -> HedImage {
    let (w, hgt) = (image.width(), image.height());
    let mut h = Plane::new(w, hgt);
    let mut e = Plane::new(w, hgt);
    let mut d = Plane::new(w, hgt);
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        let od = [channel_to_od(px[0]), channel_to_od(px[1]), channel_to_od(px[2])];
        let mut conc = [0.0; 3];
        for (s, c) in conc.iter_mut().enumerate() {
            *c = od[0] * m.inv[0][s] + od[1] * m.inv[1][s] + od[2] * m.inv[2][s];
        }
        h.data[i] = conc[0];
        e.data[i] = conc[1];
        d.data[i] = conc[2];
    }
    HedImage { h, e, d }
}

/// Recompose HED concentrations into RGB, clamping to [0, 255].
pub fn hed_to_rgb(hed: &HedImage, m: &StainMatrix) -> Image {
    let (w, hgt) = (hed.width(), hed.height());
    let mut data = Vec::with_capacity(w as usize * hgt as usize * 3);
    for i in 0..w as usize * hgt as usize {
        let conc = [hed.h.data[i], hed.e.data[i], hed.d.data[i]];
        for c in 0..3 {
            let od = conc[0] * m.rows[0][c] + conc[1] * m.rows[1][c] + conc[2] * m.rows[2][c];
            data.push(od_to_channel(od));
        }
    }
    Image::from_raw(w, hgt, data).expect("dimensions preserved")
}

/// Mean optical density across all pixels and channels.
pub fn mean_od(image: &Image) -> f64 {
    let sum: f64 = image.data().iter().map(|&v| channel_to_od(v)).sum();
    sum / image.data().len() as f64
}

/// Stain-transform augmentation parameters. Scale factors are sampled
/// uniformly from [scale_low, scale_high]; by default one factor is shared
/// by all three concentration planes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StainTransformConfig {
    pub scale_low: f64,
    pub scale_high: f64,
    /// Sample an independent factor per stain plane.
    pub per_channel: bool,
}

impl Default for StainTransformConfig {
    fn default() -> Self {
        Self {
            scale_low: 0.95,
            scale_high: 1.05,
            per_channel: false,
        }
    }
}

impl StainTransformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_low > 0.0 && self.scale_low <= self.scale_high) {
            return Err(CoreError::Config(format!(
                "invalid stain scale interval [{}, {}]",
                self.scale_low, self.scale_high
            )));
        }
        Ok(())
    }
}

/// Simulate under-/over-staining: deconvolve, scale concentrations by a
/// uniformly sampled factor, recompose. Deterministic for a given seed.
pub fn stain_transform(
    image: &Image,
    m: &StainMatrix,
    cfg: &StainTransformConfig,
    rng_seed: u64,
) -> Result<Image> {
    cfg.validate()?;
    let mut rng = seeded_rng(rng_seed);
    let factors = if cfg.per_channel {
        [
            rng.gen_range(cfg.scale_low..=cfg.scale_high),
            rng.gen_range(cfg.scale_low..=cfg.scale_high),
            rng.gen_range(cfg.scale_low..=cfg.scale_high),
        ]
    } else {
        let f = rng.gen_range(cfg.scale_low..=cfg.scale_high);
        [f, f, f]
    };
    Ok(stain_scale(image, m, factors))
}

/// Scale HED concentration planes by fixed factors and recompose.
pub fn stain_scale(image: &Image, m: &StainMatrix, factors: [f64; 3]) -> Image {
    let mut hed = rgb_to_hed(image, m);
    for (plane, f) in [&mut hed.h, &mut hed.e, &mut hed.d].into_iter().zip(factors) {
        plane.data.iter_mut().for_each(|v| *v *= f);
    }
    hed_to_rgb(&hed, m)
}

/// Haematoxylin concentration plane, min-max normalized to [0, 1].
/// Constant images (zero range) produce an all-zero plane.
pub fn hematoxylin_channel(image: &Image, m: &StainMatrix) -> Plane {
    rgb_to_hed(image, m).h.normalized()
}
