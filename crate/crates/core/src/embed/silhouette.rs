//! Mean silhouette coefficient for labelled 2-D points.

use crate::classify::CellType;
use crate::error::{CoreError, Result};

/// Mean silhouette over all points with Euclidean distances, in [-1, 1].
/// Each point's coefficient is `(b - a) / max(a, b)` where `a` is the mean
/// intra-cluster distance and `b` the smallest mean distance to another
/// cluster; singleton-cluster points score 0.
pub fn silhouette(points: &[(f64, f64)], labels: &[CellType]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(CoreError::Config("points and labels length mismatch".into()));
    }
    if points.is_empty() {
        return Err(CoreError::Config("empty input".into()));
    }
    let mut present: Vec<CellType> = Vec::new();
    for &l in labels {
        if !present.contains(&l) {
            present.push(l);
        }
    }
    if present.len() < 2 {
        return Err(CoreError::Config("silhouette needs at least two clusters".into()));
    }

    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, (&pi, &li)) in points.iter().zip(labels).enumerate() {
        let mut intra_sum = 0.0;
        let mut intra_n = 0usize;
        let other_classes: Vec<CellType> = present.iter().copied().filter(|&c| c != li).collect();
        let mut other: Vec<(f64, usize)> = vec![(0.0, 0); other_classes.len()];
        for (j, (&pj, &lj)) in points.iter().zip(labels).enumerate() {
            if i == j {
                continue;
            }
            let d = dist(pi, pj);
            if lj == li {
                intra_sum += d;
                intra_n += 1;
            } else {
                let k = other_classes.iter().position(|&c| c == lj).unwrap();
                other[k].0 += d;
                other[k].1 += 1;
            }
        }
        if intra_n == 0 {
            // Singleton cluster: conventionally 0.
            continue;
        }
        let a = intra_sum / intra_n as f64;
        let b = other
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| s / *n as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn far_separated_tight_clusters_score_near_one() {
        let mut rng = crate::rng::seeded_rng(4);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for k in 0..2 {
            let cx = k as f64 * 100.0;
            for _ in 0..40 {
                points.push((cx + rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)));
                labels.push(if k == 0 { CellType::Cyt } else { CellType::Fib });
            }
        }
        let s = silhouette(&points, &labels).unwrap();
        assert!(s > 0.9, "silhouette {s}");
    }

    #[test]
    fn interleaved_identical_clusters_score_near_zero() {
        let mut rng = crate::rng::seeded_rng(9);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..120 {
            points.push((rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            labels.push(if i % 2 == 0 { CellType::Syn } else { CellType::Vas });
        }
        let s = silhouette(&points, &labels).unwrap();
        assert!(s.abs() < 0.12, "silhouette {s}");
    }

    #[test]
    fn always_in_unit_interval() {
        let mut rng = crate::rng::seeded_rng(14);
        for _ in 0..20 {
            let n = rng.gen_range(4..40);
            let points: Vec<(f64, f64)> =
                (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let labels: Vec<CellType> =
                (0..n).map(|_| CellType::ALL[rng.gen_range(0..5)]).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let s = silhouette(&points, &labels).unwrap();
            assert!((-1.0..=1.0).contains(&s), "silhouette {s}");
        }
    }

    #[test]
    fn single_cluster_is_an_error() {
        let points = vec![(0.0, 0.0), (1.0, 1.0)];
        let labels = vec![CellType::Hof, CellType::Hof];
        assert!(silhouette(&points, &labels).is_err());
    }
}
