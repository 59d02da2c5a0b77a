//! Synthetic histology-like tiles with exact ground truth.
//!
//! Tiles are pale pink backgrounds with mild noise and anti-aliased ellipse
//! "nuclei". Each of the five classes has a disjoint hue band and its own
//! size/eccentricity range, so classes are separable by colour and shape by
//! construction; the fibroblast analogue is deliberately elongated. Ground
//! truth (tight ellipse bounding boxes, centers, labels) is exact, and every
//! tile is a pure function of its spec and seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{CellType, LabeledPatch, NUM_CLASSES};
use crate::detect::BBox;
use crate::error::{CoreError, Result};
use crate::imgcore::{extract_patch, Image};
use crate::rng::{seeded_rng, stream_rng};

/// Rendering style for one class.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ClassStyle {
    /// Semi-major axis range, px.
    pub axis_range: (f64, f64),
    /// Semi-minor / semi-major ratio range.
    pub ratio_range: (f64, f64),
    /// Hue band in degrees; bands must be pairwise disjoint across classes.
    pub hue_range: (f64, f64),
    pub saturation_range: (f64, f64),
    pub value_range: (f64, f64),
}

/// Tile geometry, density and appearance parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    /// Inclusive range for the nuclei count per tile.
    pub count_range: (u32, u32),
    /// Minimum distance between nucleus centers, px.
    pub min_separation: f64,
    pub styles: [ClassStyle; NUM_CLASSES],
    pub background: [u8; 3],
    /// Uniform per-pixel background noise, +- this many levels per channel.
    pub noise_amplitude: u8,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            count_range: (8, 16),
            min_separation: 44.0,
            // All hue bands sit where colour deconvolution assigns a strong
            // haematoxylin component (teal through purple); classes separate
            // by hue and, for the fibroblast analogue, by elongation.
            styles: [
                // CYT: round, purple-magenta.
                ClassStyle {
                    axis_range: (12.0, 15.0),
                    ratio_range: (0.85, 1.0),
                    hue_range: (272.0, 290.0),
                    saturation_range: (0.55, 0.75),
                    value_range: (0.55, 0.70),
                },
                // FIB: elongated, teal-green; recreates the hard case of
                // non-spherical nuclei for detector regression tests.
                ClassStyle {
                    axis_range: (17.0, 20.0),
                    ratio_range: (0.50, 0.65),
                    hue_range: (160.0, 180.0),
                    saturation_range: (0.55, 0.75),
                    value_range: (0.45, 0.60),
                },
                // HOF: round, blue.
                ClassStyle {
                    axis_range: (13.0, 16.0),
                    ratio_range: (0.85, 1.0),
                    hue_range: (230.0, 248.0),
                    saturation_range: (0.55, 0.75),
                    value_range: (0.55, 0.70),
                },
                // SYN: round-ish, azure.
                ClassStyle {
                    axis_range: (14.0, 17.0),
                    ratio_range: (0.80, 0.95),
                    hue_range: (185.0, 205.0),
                    saturation_range: (0.60, 0.80),
                    value_range: (0.50, 0.65),
                },
                // VAS: round-ish, violet.
                ClassStyle {
                    axis_range: (13.0, 16.0),
                    ratio_range: (0.75, 0.90),
                    hue_range: (252.0, 268.0),
                    saturation_range: (0.55, 0.75),
                    value_range: (0.50, 0.65),
                },
            ],
            background: [247, 231, 236],
            noise_amplitude: 4,
        }
    }
}

impl SynthSpec {
    pub fn max_axis(&self) -> f64 {
        self.styles.iter().map(|s| s.axis_range.1).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::Config("tile dimensions must be positive".into()));
        }
        if self.count_range.0 > self.count_range.1 {
            return Err(CoreError::Config("count range inverted".into()));
        }
        if self.min_separation <= self.max_axis() {
            return Err(CoreError::Config(format!(
                "min separation {} must exceed max ellipse semi-axis {}",
                self.min_separation,
                self.max_axis()
            )));
        }
        for (i, a) in self.styles.iter().enumerate() {
            for b in self.styles.iter().skip(i + 1) {
                if a.hue_range.0 < b.hue_range.1 && b.hue_range.0 < a.hue_range.1 {
                    return Err(CoreError::Config(format!(
                        "hue bands overlap: {:?} and {:?}",
                        a.hue_range, b.hue_range
                    )));
                }
            }
        }
        let margin = self.max_axis().ceil() + 2.0;
        if 2.0 * margin >= self.width as f64 || 2.0 * margin >= self.height as f64 {
            return Err(CoreError::Config("tile too small for nucleus margin".into()));
        }
        Ok(())
    }
}

/// One generated tile with its exact ground truth.
#[derive(Clone, Debug)]
pub struct SynthTile {
    pub image: Image,
    pub gt_boxes: Vec<BBox>,
    pub gt_labels: Vec<CellType>,
    pub gt_centers: Vec<(u32, u32)>,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

struct Nucleus {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    fill: [u8; 3],
    label: CellType,
}

impl Nucleus {
    /// Tight axis-aligned bounding box of the rotated ellipse.
    fn tight_bbox(&self) -> BBox {
        let (sin, cos) = self.theta.sin_cos();
        let half_w = ((self.a * cos).powi(2) + (self.b * sin).powi(2)).sqrt();
        let half_h = ((self.a * sin).powi(2) + (self.b * cos).powi(2)).sqrt();
        BBox {
            x_min: self.cx - half_w,
            y_min: self.cy - half_h,
            x_max: self.cx + half_w,
            y_max: self.cy + half_h,
        }
    }

    /// Coverage in [0, 1] of a pixel by the ellipse, 4x4 supersampled.
    fn coverage(&self, px: u32, py: u32) -> f64 {
        let (sin, cos) = self.theta.sin_cos();
        let mut inside = 0u32;
        for sy in 0..4 {
            for sx in 0..4 {
                let x = px as f64 + (sx as f64 + 0.5) / 4.0 - self.cx;
                let y = py as f64 + (sy as f64 + 0.5) / 4.0 - self.cy;
                let u = (x * cos + y * sin) / self.a;
                let v = (-x * sin + y * cos) / self.b;
                if u * u + v * v <= 1.0 {
                    inside += 1;
                }
            }
        }
        inside as f64 / 16.0
    }
}

fn sample_nucleus(
    spec: &SynthSpec,
    label: CellType,
    cx: f64,
    cy: f64,
    rng: &mut ChaCha8Rng,
) -> Nucleus {
    let style = &spec.styles[label.index()];
    let a = rng.gen_range(style.axis_range.0..=style.axis_range.1);
    let ratio = rng.gen_range(style.ratio_range.0..=style.ratio_range.1);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let hue = rng.gen_range(style.hue_range.0..=style.hue_range.1);
    let sat = rng.gen_range(style.saturation_range.0..=style.saturation_range.1);
    let val = rng.gen_range(style.value_range.0..=style.value_range.1);
    Nucleus {
        cx,
        cy,
        a,
        b: a * ratio,
        theta,
        fill: hsv_to_rgb(hue, sat, val),
        label,
    }
}

/// Render a tile with one nucleus per provided label. Placement is rejection
/// sampling with a total budget of `10 * labels.len()` attempts.
fn render_tile(spec: &SynthSpec, labels: &[CellType], rng: &mut ChaCha8Rng) -> Result<SynthTile> {
    let margin = spec.max_axis().ceil() + 2.0;
    let min_sep2 = spec.min_separation * spec.min_separation;

    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(labels.len());
    let budget = 10 * labels.len().max(1);
    let mut attempts = 0;
    while centers.len() < labels.len() {
        if attempts >= budget {
            return Err(CoreError::Synth(format!(
                "placed only {} of {} nuclei in {} attempts; lower the density or separation",
                centers.len(),
                labels.len(),
                budget
            )));
        }
        attempts += 1;
        let cand = (
            rng.gen_range(margin..spec.width as f64 - margin),
            rng.gen_range(margin..spec.height as f64 - margin),
        );
        let ok = centers
            .iter()
            .all(|c| (c.0 - cand.0).powi(2) + (c.1 - cand.1).powi(2) >= min_sep2);
        if ok {
            centers.push(cand);
        }
    }

    let nuclei: Vec<Nucleus> = labels
        .iter()
        .zip(&centers)
        .map(|(&label, &(cx, cy))| sample_nucleus(spec, label, cx, cy, rng))
        .collect();

    // Background with mild noise.
    let amp = spec.noise_amplitude as i16;
    let mut image = Image::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let px: [u8; 3] = std::array::from_fn(|c| {
                let noise = if amp > 0 { rng.gen_range(-amp..=amp) } else { 0 };
                (spec.background[c] as i16 + noise).clamp(0, 255) as u8
            });
            image.set(x, y, px);
        }
    }

    // Composite ellipses over their bounding windows only.
    for n in &nuclei {
        let bbox = n.tight_bbox();
        let x0 = bbox.x_min.floor().max(0.0) as u32;
        let y0 = bbox.y_min.floor().max(0.0) as u32;
        let x1 = (bbox.x_max.ceil() as u32).min(spec.width - 1);
        let y1 = (bbox.y_max.ceil() as u32).min(spec.height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let alpha = n.coverage(x, y);
                if alpha <= 0.0 {
                    continue;
                }
                let bg = image.get(x, y);
                let px: [u8; 3] = std::array::from_fn(|c| {
                    (alpha * n.fill[c] as f64 + (1.0 - alpha) * bg[c] as f64).round() as u8
                });
                image.set(x, y, px);
            }
        }
    }

    Ok(SynthTile {
        gt_boxes: nuclei.iter().map(Nucleus::tight_bbox).collect(),
        gt_centers: nuclei
            .iter()
            .map(|n| (n.cx.round() as u32, n.cy.round() as u32))
            .collect(),
        gt_labels: nuclei.iter().map(|n| n.label).collect(),
        image,
    })
}

/// Generate one tile; the count is drawn from the configured range and labels
/// uniformly over the five classes. Deterministic per seed.
pub fn generate_tile(spec: &SynthSpec, rng_seed: u64) -> Result<SynthTile> {
    spec.validate()?;
    let mut rng = seeded_rng(rng_seed);
    let count = rng.gen_range(spec.count_range.0..=spec.count_range.1) as usize;
    let labels: Vec<CellType> =
        (0..count).map(|_| CellType::ALL[rng.gen_range(0..NUM_CLASSES)]).collect();
    render_tile(spec, &labels, &mut rng)
}

/// Train / validation / test split membership, assigned per tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A generated corpus: tiles, per-tile splits, and the labelled patch set.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub tiles: Vec<SynthTile>,
    pub tile_splits: Vec<Split>,
    pub patches: Vec<LabeledPatch>,
    /// Split of each patch (inherited from its tile).
    pub patch_splits: Vec<Split>,
    /// Tile index of each patch.
    pub patch_tiles: Vec<usize>,
}

impl SynthDataset {
    pub fn patches_in(&self, split: Split) -> Vec<LabeledPatch> {
        self.patches
            .iter()
            .zip(&self.patch_splits)
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.clone())
            .collect()
    }
}

/// Generate `n_tiles` tiles whose pooled class counts follow `class_mix`
/// (largest-remainder quotas, so counts are within 1 of the exact target),
/// then cut patches of `patch_side` around every nucleus. Tiles are split
/// 70/15/15 into train/val/test; splits never share a tile.
pub fn generate_dataset(
    spec: &SynthSpec,
    n_tiles: usize,
    class_mix: [f64; NUM_CLASSES],
    patch_side: u32,
    rng_seed: u64,
) -> Result<SynthDataset> {
    spec.validate()?;
    if n_tiles == 0 {
        return Err(CoreError::Config("need at least one tile".into()));
    }
    let mix_sum: f64 = class_mix.iter().sum();
    if class_mix.iter().any(|&m| m < 0.0) || (mix_sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::Config(format!(
            "class mix must be non-negative and sum to 1 (sum {mix_sum})"
        )));
    }

    // Per-tile nucleus counts.
    let counts: Vec<usize> = (0..n_tiles)
        .map(|t| {
            let mut rng = stream_rng(rng_seed, &[10, t as u64]);
            rng.gen_range(spec.count_range.0..=spec.count_range.1) as usize
        })
        .collect();
    let total: usize = counts.iter().sum();

    // Largest-remainder quotas for exact class counts.
    let mut quotas = [0usize; NUM_CLASSES];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(NUM_CLASSES);
    let mut assigned = 0usize;
    for c in 0..NUM_CLASSES {
        let exact = class_mix[c] * total as f64;
        quotas[c] = exact.floor() as usize;
        assigned += quotas[c];
        remainders.push((c, exact - exact.floor()));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    for k in 0..total - assigned {
        quotas[remainders[k % NUM_CLASSES].0] += 1;
    }

    let mut pool: Vec<CellType> = Vec::with_capacity(total);
    for (c, &q) in quotas.iter().enumerate() {
        pool.extend(std::iter::repeat(CellType::ALL[c]).take(q));
    }
    let mut pool_rng = stream_rng(rng_seed, &[11]);
    for i in (1..pool.len()).rev() {
        let j = pool_rng.gen_range(0..=i);
        pool.swap(i, j);
    }

    // Render tiles with their label slices.
    let mut tiles = Vec::with_capacity(n_tiles);
    let mut cursor = 0usize;
    for (t, &count) in counts.iter().enumerate() {
        let labels = &pool[cursor..cursor + count];
        cursor += count;
        let mut rng = stream_rng(rng_seed, &[12, t as u64]);
        tiles.push(render_tile(spec, labels, &mut rng)?);
    }

    // Tile splits: shuffle, then 70/15/15.
    let mut order: Vec<usize> = (0..n_tiles).collect();
    let mut split_rng = stream_rng(rng_seed, &[13]);
    for i in (1..order.len()).rev() {
        let j = split_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n_tiles as f64) * 0.7).round() as usize;
    let n_val = ((n_tiles as f64) * 0.15).round() as usize;
    let mut tile_splits = vec![Split::Train; n_tiles];
    for (rank, &t) in order.iter().enumerate() {
        tile_splits[t] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    // Patches around every nucleus.
    let mut patches = Vec::with_capacity(total);
    let mut patch_splits = Vec::with_capacity(total);
    let mut patch_tiles = Vec::with_capacity(total);
    for (t, tile) in tiles.iter().enumerate() {
        for (i, (&center, &label)) in tile.gt_centers.iter().zip(&tile.gt_labels).enumerate() {
            let patch = extract_patch(&tile.image, center, patch_side)?;
            patches.push(LabeledPatch {
                patch,
                label,
                source: format!("tile{t:04}/n{i:03}"),
            });
            patch_splits.push(tile_splits[t]);
            patch_tiles.push(t);
        }
    }

    Ok(SynthDataset { tiles, tile_splits, patches, patch_splits, patch_tiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::iou;

    #[test]
    fn zero_count_gives_blank_tile() {
        let spec = SynthSpec { count_range: (0, 0), ..Default::default() };
        let tile = generate_tile(&spec, 1).unwrap();
        assert!(tile.gt_boxes.is_empty());
        assert!(tile.gt_labels.is_empty());
        // All pixels near background, within noise.
        for px in tile.image.data().chunks_exact(3) {
            for (c, &v) in px.iter().enumerate() {
                assert!((v as i16 - spec.background[c] as i16).abs() <= spec.noise_amplitude as i16);
            }
        }
    }

    #[test]
    fn requested_count_is_exact_and_separated() {
        let spec = SynthSpec { count_range: (12, 12), ..Default::default() };
        let tile = generate_tile(&spec, 7).unwrap();
        assert_eq!(tile.gt_boxes.len(), 12);
        assert_eq!(tile.gt_labels.len(), 12);
        assert_eq!(tile.gt_centers.len(), 12);
        for (i, a) in tile.gt_centers.iter().enumerate() {
            for b in tile.gt_centers.iter().skip(i + 1) {
                let d2 = (a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2);
                // Centers are rounded to integers; allow 1 px of slack.
                assert!(
                    d2.sqrt() >= spec.min_separation - 1.5,
                    "centers {a:?} and {b:?} too close"
                );
            }
        }
    }

    #[test]
    fn same_seed_bit_identical_distinct_seeds_differ() {
        let spec = SynthSpec::default();
        let a = generate_tile(&spec, 42).unwrap();
        let b = generate_tile(&spec, 42).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.gt_boxes.len(), b.gt_boxes.len());
        let c = generate_tile(&spec, 43).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn boxes_lie_inside_image_and_match_centers() {
        let tile = generate_tile(&SynthSpec::default(), 5).unwrap();
        for (bbox, &(cx, cy)) in tile.gt_boxes.iter().zip(&tile.gt_centers) {
            assert!(bbox.x_min >= 0.0 && bbox.y_min >= 0.0);
            assert!(bbox.x_max <= 640.0 && bbox.y_max <= 480.0);
            let (bx, by) = bbox.center();
            assert!((bx - cx as f64).abs() <= 0.5 + 1e-9);
            assert!((by - cy as f64).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn gt_box_is_the_tight_ellipse_bound_and_matches_render() {
        let spec = SynthSpec { count_range: (1, 1), noise_amplitude: 0, ..Default::default() };
        for seed in 0..5 {
            let tile = generate_tile(&spec, seed).unwrap();
            let gt = tile.gt_boxes[0];
            // Solidly painted pixels (alpha >= ~0.5): strong channel shift
            // away from the background.
            let mut min_x = f64::INFINITY;
            let mut min_y = f64::INFINITY;
            let mut max_x = f64::NEG_INFINITY;
            let mut max_y = f64::NEG_INFINITY;
            for y in 0..tile.image.height() {
                for x in 0..tile.image.width() {
                    let px = tile.image.get(x, y);
                    let strong = px
                        .iter()
                        .zip(&spec.background)
                        .any(|(&v, &b)| (v as i16 - b as i16).abs() > 60);
                    if strong {
                        min_x = min_x.min(x as f64);
                        min_y = min_y.min(y as f64);
                        max_x = max_x.max(x as f64 + 1.0);
                        max_y = max_y.max(y as f64 + 1.0);
                    }
                }
            }
            let painted = BBox::new(min_x, min_y, max_x, max_y).unwrap();
            let v = iou(&painted, &gt);
            assert!(v >= 0.90, "seed {seed}: painted-vs-gt IoU {v}");
            // The GT box is exactly the analytic tight bound, so a detector
            // that reproduces the ellipse bound scores IoU ~1 against GT.
            assert!(gt.area() > 0.0);
        }
    }

    #[test]
    fn impossible_density_errors_with_hint() {
        let spec = SynthSpec {
            width: 120,
            height: 120,
            count_range: (30, 30),
            ..Default::default()
        };
        let err = generate_tile(&spec, 1).unwrap_err();
        assert!(err.to_string().contains("lower the density"));
    }

    #[test]
    fn dataset_quotas_and_splits() {
        let spec = SynthSpec {
            width: 320,
            height: 240,
            count_range: (4, 8),
            ..Default::default()
        };
        let mix = [0.2; 5];
        let ds = generate_dataset(&spec, 40, mix, 64, 9).unwrap();
        let total = ds.patches.len();
        let mut counts = [0usize; 5];
        for p in &ds.patches {
            counts[p.label.index()] += 1;
        }
        for &c in &counts {
            let expected = 0.2 * total as f64;
            assert!(
                (c as f64 - expected).abs() <= (0.02 * total as f64).max(1.0),
                "count {c} vs expected {expected}"
            );
        }
        // Splits partition tiles.
        let n_train = ds.tile_splits.iter().filter(|&&s| s == Split::Train).count();
        let n_val = ds.tile_splits.iter().filter(|&&s| s == Split::Val).count();
        let n_test = ds.tile_splits.iter().filter(|&&s| s == Split::Test).count();
        assert_eq!(n_train + n_val + n_test, 40);
        assert!(n_train >= 25 && n_val >= 3 && n_test >= 3);
        // Patch splits match their tile's split.
        for (i, &t) in ds.patch_tiles.iter().enumerate() {
            assert_eq!(ds.patch_splits[i], ds.tile_splits[t]);
        }
        // Patch dimensions.
        assert!(ds.patches.iter().all(|p| p.patch.image.width() == 64));
    }

    #[test]
    fn imbalanced_mix_respected() {
        let spec = SynthSpec {
            width: 320,
            height: 240,
            count_range: (5, 9),
            ..Default::default()
        };
        let mix = [0.18, 0.34, 0.06, 0.21, 0.21];
        let ds = generate_dataset(&spec, 60, mix, 48, 3).unwrap();
        let total = ds.patches.len() as f64;
        let hof = ds.patches.iter().filter(|p| p.label == CellType::Hof).count() as f64;
        assert!(
            (hof / total - 0.06).abs() <= 0.02,
            "minority fraction {}",
            hof / total
        );
    }

    #[test]
    fn bad_mix_rejected() {
        let spec = SynthSpec::default();
        assert!(generate_dataset(&spec, 4, [0.3, 0.3, 0.3, 0.3, 0.3], 64, 1).is_err());
    }
}
