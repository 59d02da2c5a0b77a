//! Raster image representation, tiling, patch extraction, and artifact scoring.
//!
//! All pixel processing in this crate runs on [`Image`] (8-bit RGB, row major)
//! and [`Plane`] (f64, row major). Both are plain owned buffers, immutable in
//! practice once built, and safe to share across threads.

mod augment;
mod io;

pub use augment::{augment_geometric, AugmentSpec};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    /// Black image of the given dimensions.
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    /// Constant-colour image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Wrap an existing row-major RGB buffer.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(CoreError::Geometry(format!(
                "buffer length {} does not match {}x{} RGB",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixel lookup with reflect indexing for out-of-bounds coordinates.
    #[inline]
    pub fn get_reflect(&self, x: i64, y: i64) -> [u8; 3] {
        let xr = reflect_index(x, self.width as i64);
        let yr = reflect_index(y, self.height as i64);
        self.get(xr as u32, yr as u32)
    }

    /// Rec. 601 luma in [0, 255].
    pub fn luma_plane(&self) -> Plane {
        let mut p = Plane::new(self.width, self.height);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            p.data[i] = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        }
        p
    }

    /// Crop `w`x`h` at `(x, y)`; the rectangle must lie inside the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Image> {
        if x + w > self.width || y + h > self.height {
            return Err(CoreError::Geometry(format!(
                "crop {}x{}+{}+{} exceeds {}x{}",
                w, h, x, y, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Image::from_raw(w, h, data)
    }

    /// Bilinear resize. Identity dimensions return an exact copy.
    pub fn resize_bilinear(&self, new_w: u32, new_h: u32) -> Image {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let mut out = Image::new(new_w, new_h);
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        for y in 0..new_h {
            // Pixel-center mapping.
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..new_w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let mut rgb = [0u8; 3];
                for c in 0..3 {
                    let p00 = self.get(x0, y0)[c] as f64;
                    let p10 = self.get(x1, y0)[c] as f64;
                    let p01 = self.get(x0, y1)[c] as f64;
                    let p11 = self.get(x1, y1)[c] as f64;
                    let v = p00 * (1.0 - wx) * (1.0 - wy)
                        + p10 * wx * (1.0 - wy)
                        + p01 * (1.0 - wx) * wy
                        + p11 * wx * wy;
                    rgb[c] = v.round().clamp(0.0, 255.0) as u8;
                }
                out.set(x, y, rgb);
            }
        }
        out
    }
}

/// Real-valued single-channel raster, row-major f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: u32,
    height: u32,
    pub(crate) data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(CoreError::Geometry(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Min-max normalize to [0, 1]; a constant plane maps to all zeros.
    pub fn normalized(&self) -> Plane {
        let (lo, hi) = (self.min(), self.max());
        let range = hi - lo;
        let mut out = self.clone();
        if range <= 0.0 {
            out.data.iter_mut().for_each(|v| *v = 0.0);
        } else {
            out.data.iter_mut().for_each(|v| *v = (*v - lo) / range);
        }
        out
    }
}

/// Reflect an index into [0, n) without duplicating the edge sample
/// (…, 2, 1 | 0, 1, 2, … | n-2, n-3, …).
#[inline]
pub fn reflect_index(i: i64, n: i64) -> i64 {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m
}

/// Fixed-size tiling parameters. Defaults to landscape 1600x1200 tiles.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_width: u32,
    pub tile_height: u32,
}

impl Default for TileGrid {
    fn default() -> Self {
        Self {
            tile_width: 1600,
            tile_height: 1200,
        }
    }
}

/// Offset and size of a tile inside its source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileOffset {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Split an image into disjoint fixed-size tiles.
///
/// Produces `floor(W/tw) * floor(H/th)` tiles in row-major order; partial
/// remainders at the right and bottom edges are dropped.
pub fn split_tiles(image: &Image, grid: &TileGrid) -> Result<Vec<(TileOffset, Image)>> {
    if grid.tile_width == 0 || grid.tile_height == 0 {
        return Err(CoreError::Config("tile dimensions must be positive".into()));
    }
    if grid.tile_width > image.width() || grid.tile_height > image.height() {
        return Err(CoreError::Geometry(format!(
            "tile {}x{} larger than image {}x{}",
            grid.tile_width,
            grid.tile_height,
            image.width(),
            image.height()
        )));
    }
    let nx = image.width() / grid.tile_width;
    let ny = image.height() / grid.tile_height;
    let mut tiles = Vec::with_capacity((nx * ny) as usize);
    for ty in 0..ny {
        for tx in 0..nx {
            let x = tx * grid.tile_width;
            let y = ty * grid.tile_height;
            let img = image.crop(x, y, grid.tile_width, grid.tile_height)?;
            tiles.push((
                TileOffset {
                    x,
                    y,
                    width: grid.tile_width,
                    height: grid.tile_height,
                },
                img,
            ));
        }
    }
    Ok(tiles)
}

/// Fixed-size crop centred on a source coordinate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub side: u32,
    pub center: (u32, u32),
    pub image: Image,
}

/// Extract a `side`x`side` patch centred at `center`, reflect-padding where
/// the window leaves the image.
pub fn extract_patch(image: &Image, center: (u32, u32), side: u32) -> Result<Patch> {
    let (cx, cy) = center;
    if cx >= image.width() || cy >= image.height() {
        return Err(CoreError::Geometry(format!(
            "patch center ({}, {}) outside {}x{} image",
            cx,
            cy,
            image.width(),
            image.height()
        )));
    }
    if side == 0 {
        return Err(CoreError::Config("patch side must be positive".into()));
    }
    let half = side as i64 / 2;
    let x0 = cx as i64 - half;
    let y0 = cy as i64 - half;
    let mut data = Vec::with_capacity(side as usize * side as usize * 3);
    for dy in 0..side as i64 {
        for dx in 0..side as i64 {
            let px = image.get_reflect(x0 + dx, y0 + dy);
            data.extend_from_slice(&px);
        }
    }
    Ok(Patch {
        side,
        center,
        image: Image::from_raw(side, side, data)?,
    })
}

/// Fraction of the patch window that lies outside the source image.
/// Used to flag near-edge detections downstream.
pub fn patch_padding_fraction(image: &Image, center: (u32, u32), side: u32) -> f64 {
    let half = side as i64 / 2;
    let x0 = center.0 as i64 - half;
    let y0 = center.1 as i64 - half;
    let x1 = x0 + side as i64;
    let y1 = y0 + side as i64;
    let in_w = (x1.min(image.width() as i64) - x0.max(0)).max(0);
    let in_h = (y1.min(image.height() as i64) - y0.max(0)).max(0);
    1.0 - (in_w * in_h) as f64 / (side as i64 * side as i64) as f64
}

/// Blur and tissue-content scores used for artifact filtering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactScore {
    /// Variance of the 3x3 Laplacian response on luma; low = blurred.
    pub blur_score: f64,
    /// Fraction of pixels darker than the tissue luma threshold.
    pub tissue_fraction: f64,
}

/// Thresholds for declaring a tile an artifact. The defaults are heuristics;
/// no claim is made that they match any particular manual curation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ArtifactConfig {
    pub min_blur_score: f64,
    pub min_tissue_fraction: f64,
    /// Pixels with luma below this count as tissue.
    pub tissue_luma_threshold: f64,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self {
            min_blur_score: 50.0,
            min_tissue_fraction: 0.05,
            tissue_luma_threshold: 220.0,
        }
    }
}

impl ArtifactConfig {
    /// True when a tile should be filtered out (blurred or mostly background).
    pub fn is_artifact(&self, score: &ArtifactScore) -> bool {
        score.blur_score < self.min_blur_score || score.tissue_fraction < self.min_tissue_fraction
    }
}

/// Score a tile for blur (Laplacian variance on luma) and tissue content.
pub fn artifact_score(tile: &Image, cfg: &ArtifactConfig) -> ArtifactScore {
    let luma = tile.luma_plane();
    let (w, h) = (tile.width() as usize, tile.height() as usize);

    // Laplacian over the interior; a tile without interior scores 0.
    let mut responses = Vec::new();
    if w >= 3 && h >= 3 {
        responses.reserve((w - 2) * (h - 2));
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let c = luma.data[y * w + x];
                let up = luma.data[(y - 1) * w + x];
                let down = luma.data[(y + 1) * w + x];
                let left = luma.data[y * w + x - 1];
                let right = luma.data[y * w + x + 1];
                responses.push(up + down + left + right - 4.0 * c);
            }
        }
    }
    let blur_score = if responses.is_empty() {
        0.0
    } else {
        let mean = responses.iter().sum::<f64>() / responses.len() as f64;
        responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / responses.len() as f64
    };

    let tissue = luma
        .data()
        .iter()
        .filter(|&&v| v < cfg.tissue_luma_threshold)
        .count();
    ArtifactScore {
        blur_score,
        tissue_fraction: tissue as f64 / (w * h) as f64,
    }
}

/// 5x5 box blur with reflect borders. Used in tests to order blur scores.
pub fn box_blur5(image: &Image) -> Image {
    let mut out = Image::new(image.width(), image.height());
    for y in 0..image.height() as i64 {
        for x in 0..image.width() as i64 {
            let mut acc = [0f64; 3];
            for dy in -2..=2 {
                for dx in -2..=2 {
                    let px = image.get_reflect(x + dx, y + dy);
                    for c in 0..3 {
                        acc[c] += px[c] as f64;
                    }
                }
            }
            let rgb = [
                (acc[0] / 25.0).round() as u8,
                (acc[1] / 25.0).round() as u8,
                (acc[2] / 25.0).round() as u8,
            ];
            out.set(x as u32, y as u32, rgb);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(w: u32, h: u32, cell: u32) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if ((x / cell) + (y / cell)) % 2 == 0 { 255 } else { 0 };
                img.set(x, y, [v, v, v]);
            }
        }
        img
    }

    #[test]
    fn split_4800x3600_into_1600x1200_gives_nine_tiles() {
        let img = Image::filled(4800, 3600, [200, 180, 190]);
        let tiles = split_tiles(&img, &TileGrid::default()).unwrap();
        assert_eq!(tiles.len(), 9);
        // Disjoint offsets, union covers the cropped region.
        let area: u64 = tiles.iter().map(|(o, _)| o.width as u64 * o.height as u64).sum();
        assert_eq!(area, 4800 * 3600);
    }

    #[test]
    fn split_identity_case() {
        let img = checkerboard(1600, 1200, 7);
        let tiles = split_tiles(&img, &TileGrid::default()).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].0, TileOffset { x: 0, y: 0, width: 1600, height: 1200 });
        assert_eq!(tiles[0].1, img);
    }

    #[test]
    fn split_drops_partial_remainder() {
        let img = Image::filled(1700, 1300, [10, 10, 10]);
        let tiles = split_tiles(&img, &TileGrid::default()).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].0.x, 0);
        assert_eq!(tiles[0].0.y, 0);
    }

    #[test]
    fn split_rejects_tile_larger_than_image() {
        let img = Image::new(100, 100);
        assert!(split_tiles(&img, &TileGrid::default()).is_err());
    }

    #[test]
    fn tiles_are_disjoint() {
        let img = Image::new(3200, 2400);
        let tiles = split_tiles(&img, &TileGrid::default()).unwrap();
        for (i, (a, _)) in tiles.iter().enumerate() {
            for (b, _) in tiles.iter().skip(i + 1) {
                let overlap_x = a.x < b.x + b.width && b.x < a.x + a.width;
                let overlap_y = a.y < b.y + b.height && b.y < a.y + a.height;
                assert!(!(overlap_x && overlap_y), "tiles {a:?} and {b:?} overlap");
            }
        }
    }

    #[test]
    fn patch_interior_is_plain_crop() {
        let img = checkerboard(400, 400, 13);
        let p = extract_patch(&img, (200, 200), 200).unwrap();
        assert_eq!(p.image, img.crop(100, 100, 200, 200).unwrap());
    }

    #[test]
    fn patch_at_origin_is_padded_to_full_size() {
        let img = checkerboard(400, 400, 13);
        let p = extract_patch(&img, (0, 0), 200).unwrap();
        assert_eq!(p.image.width(), 200);
        assert_eq!(p.image.height(), 200);
        // Reflected content: pixel left of origin mirrors pixel 1.
        assert_eq!(p.image.get(99, 100), img.get(1, 0));
    }

    #[test]
    fn patch_of_constant_image_is_constant() {
        let img = Image::filled(50, 50, [120, 30, 99]);
        let p = extract_patch(&img, (0, 49), 64).unwrap();
        assert!(p.image.data().chunks_exact(3).all(|px| px == [120, 30, 99]));
    }

    #[test]
    fn patch_center_outside_errors() {
        let img = Image::new(50, 50);
        assert!(extract_patch(&img, (50, 10), 16).is_err());
    }

    #[test]
    fn patch_dims_always_side_by_side() {
        let img = checkerboard(61, 47, 5);
        for &(cx, cy) in &[(0u32, 0u32), (60, 46), (30, 0), (0, 23), (30, 23)] {
            let p = extract_patch(&img, (cx, cy), 32).unwrap();
            assert_eq!((p.image.width(), p.image.height()), (32, 32));
        }
    }

    #[test]
    fn padding_fraction_zero_in_interior() {
        let img = Image::new(300, 300);
        assert_eq!(patch_padding_fraction(&img, (150, 150), 100), 0.0);
        let corner = patch_padding_fraction(&img, (0, 0), 100);
        assert!(corner > 0.7 && corner < 0.76, "corner fraction {corner}");
    }

    #[test]
    fn artifact_white_tile_scores_zero() {
        let img = Image::filled(64, 64, [255, 255, 255]);
        let s = artifact_score(&img, &ArtifactConfig::default());
        assert_eq!(s.blur_score, 0.0);
        assert_eq!(s.tissue_fraction, 0.0);
        assert!(ArtifactConfig::default().is_artifact(&s));
    }

    #[test]
    fn artifact_dark_tile_is_all_tissue() {
        let img = Image::filled(32, 32, [40, 20, 60]);
        let s = artifact_score(&img, &ArtifactConfig::default());
        assert_eq!(s.tissue_fraction, 1.0);
    }

    #[test]
    fn blur_reduces_laplacian_variance() {
        let sharp = checkerboard(64, 64, 4);
        let blurred = box_blur5(&sharp);
        let cfg = ArtifactConfig::default();
        let s_sharp = artifact_score(&sharp, &cfg);
        let s_blur = artifact_score(&blurred, &cfg);
        assert!(
            s_sharp.blur_score > s_blur.blur_score,
            "sharp {} vs blurred {}",
            s_sharp.blur_score,
            s_blur.blur_score
        );
    }

    #[test]
    fn reflect_indexing_folds_correctly() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(200, 200, [13, 200, 77]);
        let out = img.resize_bilinear(32, 32);
        assert!(out.data().chunks_exact(3).all(|px| px == [13, 200, 77]));
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = checkerboard(33, 21, 3);
        assert_eq!(img.resize_bilinear(33, 21), img);
    }
}
