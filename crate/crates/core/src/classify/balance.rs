//! Training-set balancing: bootstrap oversampling to the majority class,
//! downsampling to the minority class, and inverse-frequency class weights.

use rand::Rng;

use super::{CellType, LabeledPatch, NUM_CLASSES};
use crate::error::{CoreError, Result};
use crate::rng::seeded_rng;

/// Per-class example counts, in fixed class order.
pub fn class_counts(data: &[LabeledPatch]) -> [usize; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for item in data {
        counts[item.label.index()] += 1;
    }
    counts
}

fn per_class_indices(data: &[LabeledPatch]) -> Result<[Vec<usize>; NUM_CLASSES]> {
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, item) in data.iter().enumerate() {
        by_class[item.label.index()].push(i);
    }
    for (c, indices) in by_class.iter().enumerate() {
        if indices.is_empty() {
            return Err(CoreError::Config(format!(
                "class {} has no examples; cannot balance",
                CellType::ALL[c]
            )));
        }
    }
    Ok(by_class)
}

/// Resample every class with replacement up to the majority-class count.
/// Items are drawn only from their own class; order is class-major.
pub fn balance_bootstrap(data: &[LabeledPatch], rng_seed: u64) -> Result<Vec<LabeledPatch>> {
    let by_class = per_class_indices(data)?;
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = seeded_rng(rng_seed);
    let mut out = Vec::with_capacity(target * NUM_CLASSES);
    for indices in &by_class {
        for _ in 0..target {
            let pick = indices[rng.gen_range(0..indices.len())];
            out.push(data[pick].clone());
        }
    }
    Ok(out)
}

/// Reduce every class, without replacement, to the minority-class count.
pub fn balance_downsample(data: &[LabeledPatch], rng_seed: u64) -> Result<Vec<LabeledPatch>> {
    let by_class = per_class_indices(data)?;
    let target = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = seeded_rng(rng_seed);
    let mut out = Vec::with_capacity(target * NUM_CLASSES);
    for indices in &by_class {
        // Partial Fisher-Yates: first `target` slots are a uniform sample.
        let mut pool = indices.clone();
        for i in 0..target {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
            out.push(data[pool[i]].clone());
        }
    }
    Ok(out)
}

/// Inverse-frequency weights `w_c = N / (K * n_c)`; uniform counts give 1.0.
pub fn class_weights(data: &[LabeledPatch]) -> Result<[f64; NUM_CLASSES]> {
    let counts = class_counts(data);
    if counts.iter().any(|&c| c == 0) {
        return Err(CoreError::Config("every class must be non-empty for weighting".into()));
    }
    let total: usize = counts.iter().sum();
    let mut weights = [0.0; NUM_CLASSES];
    for (w, &c) in weights.iter_mut().zip(&counts) {
        *w = total as f64 / (NUM_CLASSES as f64 * c as f64);
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::{Image, Patch};

    fn tiny_patch() -> Patch {
        Patch { side: 2, center: (0, 0), image: Image::new(2, 2) }
    }

    pub(crate) fn dataset_with_counts(counts: [usize; NUM_CLASSES]) -> Vec<LabeledPatch> {
        let mut out = Vec::new();
        for (ci, &n) in counts.iter().enumerate() {
            for k in 0..n {
                out.push(LabeledPatch {
                    patch: tiny_patch(),
                    label: CellType::ALL[ci],
                    source: format!("{ci}-{k}"),
                });
            }
        }
        out
    }

    #[test]
    fn bootstrap_reaches_majority_count() {
        let data = dataset_with_counts([1359, 2577, 478, 1576, 1539]);
        let balanced = balance_bootstrap(&data, 7).unwrap();
        assert_eq!(class_counts(&balanced), [2577; 5]);
    }

    #[test]
    fn downsample_reaches_minority_count() {
        let data = dataset_with_counts([1359, 2577, 478, 1576, 1539]);
        let balanced = balance_downsample(&data, 7).unwrap();
        assert_eq!(class_counts(&balanced), [478; 5]);
    }

    #[test]
    fn weights_follow_inverse_frequency() {
        let data = dataset_with_counts([100, 100, 100, 100, 50]);
        let w = class_weights(&data).unwrap();
        assert!((w[4] - 450.0 / (5.0 * 50.0)).abs() < 1e-12);
        let uniform = dataset_with_counts([40; 5]);
        assert!(class_weights(&uniform).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn balanced_input_keeps_counts() {
        let data = dataset_with_counts([30; 5]);
        let b = balance_bootstrap(&data, 3).unwrap();
        assert_eq!(class_counts(&b), [30; 5]);
        let d = balance_downsample(&data, 3).unwrap();
        assert_eq!(class_counts(&d), [30; 5]);
    }

    #[test]
    fn resampling_never_crosses_class_boundaries() {
        let data = dataset_with_counts([5, 9, 3, 7, 4]);
        let b = balance_bootstrap(&data, 11).unwrap();
        for item in &b {
            let class_digit: usize = item.source.split('-').next().unwrap().parse().unwrap();
            assert_eq!(CellType::ALL[class_digit], item.label);
        }
    }

    #[test]
    fn downsample_has_no_duplicates_within_class() {
        let data = dataset_with_counts([10, 6, 8, 12, 9]);
        let d = balance_downsample(&data, 13).unwrap();
        let mut sources: Vec<&str> = d.iter().map(|p| p.source.as_str()).collect();
        sources.sort_unstable();
        let before = sources.len();
        sources.dedup();
        assert_eq!(before, sources.len());
    }

    #[test]
    fn same_seed_gives_identical_sequence() {
        let data = dataset_with_counts([8, 5, 6, 7, 9]);
        let a = balance_bootstrap(&data, 21).unwrap();
        let b = balance_bootstrap(&data, 21).unwrap();
        let keys = |v: &[LabeledPatch]| v.iter().map(|p| p.source.clone()).collect::<Vec<_>>();
        assert_eq!(keys(&a), keys(&b));
    }

    #[test]
    fn empty_class_is_an_error() {
        let data = dataset_with_counts([4, 4, 0, 4, 4]);
        assert!(balance_bootstrap(&data, 1).is_err());
        assert!(balance_downsample(&data, 1).is_err());
        assert!(class_weights(&data).is_err());
    }
}
