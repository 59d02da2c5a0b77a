//! Density-map targets and peak extraction.
//!
//! A density map places one unit-mass truncated Gaussian per annotated
//! nucleus center; its integral counts nuclei. `local_maxima` converts any
//! smooth response plane (density prediction, DoG output) back into point
//! detections.

use serde::{Deserialize, Serialize};

use crate::imgcore::{reflect_index, Plane};

/// Gaussian target parameters; kernels are truncated at `4 * sigma` and
/// normalized to unit mass within the truncation window.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DensityParams {
    pub sigma: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self { sigma: 4.0 }
    }
}

/// Sum of unit-mass isotropic Gaussians centered at each point. Mass falling
/// outside the plane is lost, so edge-adjacent centers contribute less than 1.
pub fn density_map(centers: &[(u32, u32)], dp: &DensityParams, width: u32, height: u32) -> Plane {
    let mut plane = Plane::new(width, height);
    if dp.sigma <= 0.0 {
        return plane;
    }
    let radius = (4.0 * dp.sigma).ceil() as i64;
    let inv_two_sigma2 = 1.0 / (2.0 * dp.sigma * dp.sigma);

    // One shared window of weights, normalized to unit mass.
    let span = (2 * radius + 1) as usize;
    let mut window = vec![0.0f64; span * span];
    let mut total = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let w = (-((dx * dx + dy * dy) as f64) * inv_two_sigma2).exp();
            window[((dy + radius) as usize) * span + (dx + radius) as usize] = w;
            total += w;
        }
    }
    window.iter_mut().for_each(|w| *w /= total);

    for &(cx, cy) in centers {
        for dy in -radius..=radius {
            let y = cy as i64 + dy;
            if y < 0 || y >= height as i64 {
                continue;
            }
            for dx in -radius..=radius {
                let x = cx as i64 + dx;
                if x < 0 || x >= width as i64 {
                    continue;
                }
                let w = window[((dy + radius) as usize) * span + (dx + radius) as usize];
                plane.set(x as u32, y as u32, plane.get(x as u32, y as u32) + w);
            }
        }
    }
    plane
}

/// Pixels that are strict maxima within a Euclidean `min_distance` radius and
/// at least `threshold`, sorted by descending response (ties by row, column).
pub fn local_maxima(plane: &Plane, min_distance: u32, threshold: f64) -> Vec<(u32, u32)> {
    let min_distance = min_distance.max(1);
    let (w, h) = (plane.width() as i64, plane.height() as i64);
    let r = min_distance as i64;
    let r2 = r * r;
    let mut peaks: Vec<(u32, u32, f64)> = Vec::new();

    for y in 0..h {
        'col: for x in 0..w {
            let v = plane.get(x as u32, y as u32);
            if v < threshold {
                continue;
            }
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h {
                    continue;
                }
                for dx in -r..=r {
                    if (dx == 0 && dy == 0) || dx * dx + dy * dy > r2 {
                        continue;
                    }
                    let nx = x + dx;
                    if nx < 0 || nx >= w {
                        continue;
                    }
                    if plane.get(nx as u32, ny as u32) >= v {
                        continue 'col;
                    }
                }
            }
            peaks.push((x as u32, y as u32, v));
        }
    }

    peaks.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });
    peaks.into_iter().map(|(x, y, _)| (x, y)).collect()
}

/// Separable Gaussian blur with reflect borders; kernel truncated at
/// `ceil(3 * sigma)`.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    for d in -radius..=radius {
        let w = (-(d * d) as f64 * inv_two_sigma2).exp();
        kernel.push(w);
        sum += w;
    }
    kernel.iter_mut().for_each(|w| *w /= sum);

    let (w, h) = (plane.width() as i64, plane.height() as i64);
    let mut horiz = Plane::new(plane.width(), plane.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sx = reflect_index(x + k as i64 - radius, w);
                acc += wt * plane.get(sx as u32, y as u32);
            }
            horiz.set(x as u32, y as u32, acc);
        }
    }
    let mut out = Plane::new(plane.width(), plane.height());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sy = reflect_index(y + k as i64 - radius, h);
                acc += wt * horiz.get(x as u32, sy as u32);
            }
            out.set(x as u32, y as u32, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_centers_give_zero_plane() {
        let p = density_map(&[], &DensityParams::default(), 64, 64);
        assert_eq!(p.sum(), 0.0);
    }

    #[test]
    fn interior_centers_integrate_to_count() {
        let dp = DensityParams { sigma: 4.0 };
        let centers = [(20u32, 20u32), (44, 20), (32, 44)];
        let p = density_map(&centers, &dp, 64, 64);
        assert!((p.sum() - 3.0).abs() < 1e-3, "integral {}", p.sum());
    }

    #[test]
    fn single_center_is_argmax() {
        let p = density_map(&[(17, 23)], &DensityParams::default(), 48, 48);
        let mut best = (0u32, 0u32, f64::NEG_INFINITY);
        for y in 0..48u32 {
            for x in 0..48u32 {
                if p.get(x, y) > best.2 {
                    best = (x, y, p.get(x, y));
                }
            }
        }
        assert_eq!((best.0, best.1), (17, 23));
    }

    #[test]
    fn edge_center_keeps_partial_mass() {
        let p = density_map(&[(0, 0)], &DensityParams { sigma: 4.0 }, 64, 64);
        let s = p.sum();
        assert!(s > 0.2 && s < 1.0, "partial mass {s}");
    }

    #[test]
    fn maxima_recover_separated_centers() {
        let dp = DensityParams { sigma: 3.0 };
        let centers = [(16u32, 16u32), (48, 16), (32, 48)];
        let p = density_map(&centers, &dp, 64, 64);
        let peaks = local_maxima(&p, 5, 1e-6);
        assert_eq!(peaks.len(), 3);
        for &(cx, cy) in &centers {
            assert!(
                peaks
                    .iter()
                    .any(|&(px, py)| (px as i64 - cx as i64).abs() <= 1
                        && (py as i64 - cy as i64).abs() <= 1),
                "center ({cx},{cy}) not found in {peaks:?}"
            );
        }
    }

    #[test]
    fn constant_plane_has_no_strict_maxima() {
        let p = Plane::from_vec(32, 32, vec![0.7; 1024]).unwrap();
        assert!(local_maxima(&p, 3, 0.0).is_empty());
    }

    #[test]
    fn threshold_above_global_max_gives_empty() {
        let p = density_map(&[(16, 16)], &DensityParams::default(), 32, 32);
        assert!(local_maxima(&p, 3, p.max() * 2.0).is_empty());
    }

    #[test]
    fn maxima_sorted_by_descending_response() {
        let mut p = Plane::new(32, 32);
        p.set(5, 5, 1.0);
        p.set(20, 20, 3.0);
        p.set(5, 25, 2.0);
        let peaks = local_maxima(&p, 3, 0.5);
        assert_eq!(peaks, vec![(20, 20), (5, 25), (5, 5)]);
    }

    #[test]
    fn blur_preserves_mass_of_interior_blob() {
        let mut p = Plane::new(64, 64);
        p.set(32, 32, 1.0);
        let b = gaussian_blur(&p, 2.0);
        assert!((b.sum() - 1.0).abs() < 1e-6);
        assert!(b.get(32, 32) < 1.0);
        assert!(b.get(32, 32) > b.get(36, 32));
    }
}
