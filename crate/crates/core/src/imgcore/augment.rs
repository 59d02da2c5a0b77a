//! Geometric augmentation: flips, quarter-turn rotations, horizontal shear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;

/// One concrete geometric transform. Applying the identity spec is a
/// bit-exact no-op; hflip/vflip are involutions; `rot90_k` is taken mod 4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub hflip: bool,
    pub vflip: bool,
    /// Quarter turns, clockwise. Swaps dimensions on non-square inputs
    /// when odd.
    pub rot90_k: u8,
    /// Horizontal shear factor; exposed area is reflect-filled.
    pub shear_factor: f64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Draw a random spec: independent flips, uniform quarter turn, shear
    /// uniform in [-max_shear, max_shear].
    pub fn sample<R: Rng>(rng: &mut R, max_shear: f64) -> Self {
        Self {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            rot90_k: rng.gen_range(0..4u8),
            shear_factor: if max_shear > 0.0 {
                rng.gen_range(-max_shear..=max_shear)
            } else {
                0.0
            },
        }
    }
}

fn hflip(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(w - 1 - x, y, img.get(x, y));
        }
    }
    out
}

fn vflip(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, h - 1 - y, img.get(x, y));
        }
    }
    out
}

fn rot90_cw(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(h - 1 - y, x, img.get(x, y));
        }
    }
    out
}

/// Horizontal shear about the image center, bilinear sampling with reflect
/// fill. Zero factor is a bit-exact no-op.
fn shear_x(img: &Image, s: f64) -> Image {
    if s == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Image::new(w, h);
    for y in 0..h {
        let dx = s * (y as f64 - cy);
        for x in 0..w {
            let fx = x as f64 - dx;
            let x0 = fx.floor();
            let t = fx - x0;
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let a = img.get_reflect(x0 as i64, y as i64)[c] as f64;
                let b = img.get_reflect(x0 as i64 + 1, y as i64)[c] as f64;
                rgb[c] = (a * (1.0 - t) + b * t).round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, rgb);
        }
    }
    out
}

/// Apply flips, then rotation, then shear.
pub fn augment_geometric(image: &Image, spec: &AugmentSpec) -> Image {
    let mut out = image.clone();
    if spec.hflip {
        out = hflip(&out);
    }
    if spec.vflip {
        out = vflip(&out);
    }
    for _ in 0..(spec.rot90_k % 4) {
        out = rot90_cw(&out);
    }
    if spec.shear_factor != 0.0 {
        out = shear_x(&out, spec.shear_factor);
    }
    out
}
