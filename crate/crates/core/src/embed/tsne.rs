//! Exact O(N^2) t-SNE.
//!
//! High-dimensional affinities use per-row Gaussian kernels whose bandwidths
//! are found by binary search so each row's entropy matches
//! log2(perplexity); the symmetrized matrix P sums to 1. The 2-D embedding
//! minimizes KL(P || Q) against Student-t (1 d.o.f.) affinities by gradient
//! descent with early exaggeration and a momentum schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::rng::seeded_rng;

const P_FLOOR: f64 = 1e-12;
const ENTROPY_TOL_BITS: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;
/// Bandwidth floor: sigma >= 1e-12, i.e. beta = 1/(2 sigma^2) is capped.
const BETA_CAP: f64 = 0.5e24;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum_start: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum_start: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    pub coords: Vec<(f64, f64)>,
    pub initial_kl: f64,
    pub final_kl: f64,
    /// Perplexity actually used (auto-clamped for tiny N).
    pub effective_perplexity: f64,
    pub perplexity_clamped: bool,
}

fn squared_distances(x: &EmbeddingMatrix) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let ri = x.row(i);
        for j in (i + 1)..n {
            let rj = x.row(j);
            let dist: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    d
}

/// Row entropy in bits and the conditional row distribution for a given
/// precision beta = 1 / (2 sigma^2). Distances are shifted by the row
/// minimum before exponentiating, which leaves the normalized distribution
/// unchanged but keeps the nearest-neighbour term at exp(0) = 1, so the sum
/// can never underflow to zero even at the bandwidth floor.
fn row_entropy(dist_row: &[f64], skip: usize, beta: f64, p_out: &mut [f64]) -> f64 {
    let d_min = dist_row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != skip)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, p)) in dist_row.iter().zip(p_out.iter_mut()).enumerate() {
        *p = if j == skip { 0.0 } else { (-beta * (d - d_min)).exp() };
        sum += *p;
    }
    let mut h = 0.0;
    for p in p_out.iter_mut() {
        *p /= sum;
        if *p > 0.0 {
            h -= *p * p.log2();
        }
    }
    h
}

/// Binary search for the row bandwidth whose entropy matches `target_bits`;
/// writes the calibrated conditional distribution into `p_out` and returns
/// the achieved entropy in bits.
fn calibrate_row(row: &[f64], skip: usize, target_bits: f64, p_out: &mut [f64]) -> f64 {
    let mut beta = 1.0;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    let mut entropy = row_entropy(row, skip, beta, p_out);
    for _ in 0..MAX_BISECTIONS {
        let diff = entropy - target_bits;
        if diff.abs() < ENTROPY_TOL_BITS {
            break;
        }
        if diff > 0.0 {
            // Entropy too high: narrow the kernel.
            beta_min = beta;
            beta = if beta_max.is_finite() { (beta + beta_max) / 2.0 } else { beta * 2.0 };
        } else {
            beta_max = beta;
            beta = if beta_min.is_finite() { (beta + beta_min) / 2.0 } else { beta / 2.0 };
        }
        beta = beta.min(BETA_CAP);
        entropy = row_entropy(row, skip, beta, p_out);
    }
    entropy
}

fn check_perplexity_range(perplexity: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(CoreError::Config("need at least 2 rows for affinities".into()));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(CoreError::Config(format!(
            "perplexity {perplexity} outside (1, {n})"
        )));
    }
    Ok(())
}

/// Achieved per-row perplexity (`2^entropy`) after bandwidth calibration.
/// For targets that are attainable this is within ~1e-3 of the request.
pub fn calibrated_row_perplexities(x: &EmbeddingMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    check_perplexity_range(perplexity, n)?;
    let d = squared_distances(x);
    let target = perplexity.log2();
    let mut scratch = vec![0.0; n];
    Ok((0..n)
        .map(|i| {
            let entropy = calibrate_row(&d[i * n..(i + 1) * n], i, target, &mut scratch);
            2f64.powf(entropy)
        })
        .collect())
}

/// Symmetrized affinity matrix P: per-row bandwidth calibrated to the target
/// perplexity, then `(P + P^T) / 2N`. Zero diagonal; entries sum to 1.
pub fn pairwise_affinities(x: &EmbeddingMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    check_perplexity_range(perplexity, n)?;
    let d = squared_distances(x);
    let target = perplexity.log2();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        calibrate_row(&d[i * n..(i + 1) * n], i, target, &mut cond[i * n..(i + 1) * n]);
    }

    // Symmetrize and normalize to unit total mass.
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
            }
        }
    }
    Ok(p)
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(P_FLOOR)).ln())
        .sum()
}

/// Student-t affinities for the current embedding. Returns (q, num) where
/// `num[ij] = 1 / (1 + ||y_i - y_j||^2)` and q is normalized with zero diag.
fn student_t_affinities(y: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i].0 - y[j].0;
            let dy = y[i].1 - y[j].1;
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    let q: Vec<f64> = num.iter().map(|&v| (v / z).max(0.0)).collect();
    (q, num)
}

/// Exact t-SNE to 2-D. Deterministic for a given config (seed included).
pub fn tsne(x: &EmbeddingMatrix, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    if n < 5 {
        return Err(CoreError::Config(format!("t-SNE needs at least 5 rows, got {n}")));
    }
    if cfg.iterations == 0 {
        return Err(CoreError::Config("iterations must be >= 1".into()));
    }
    let max_perplexity = (n as f64 - 1.0) / 3.0;
    let (perplexity, clamped) = if cfg.perplexity > max_perplexity {
        (max_perplexity, true)
    } else {
        (cfg.perplexity, false)
    };
    if perplexity <= 1.0 {
        return Err(CoreError::Config(format!(
            "effective perplexity {perplexity} too small for n = {n}"
        )));
    }

    let p = pairwise_affinities(x, perplexity)?;

    let mut rng = seeded_rng(cfg.seed);
    let mut y: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            // Box-Muller; sigma 1e-4 start as is conventional.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt() * 1e-4;
            (r * u2.cos(), r * u2.sin())
        })
        .collect();
    let mut velocity = vec![(0.0f64, 0.0f64); n];

    let (q0, _) = student_t_affinities(&y);
    let initial_kl = kl_divergence(&p, &q0);

    let mut grad = vec![(0.0f64, 0.0f64); n];
    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.momentum_start
        } else {
            cfg.momentum_final
        };
        let (q, num) = student_t_affinities(&y);

        for (i, g) in grad.iter_mut().enumerate() {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = i * n + j;
                let coeff = (exaggeration * p[k] - q[k]) * num[k];
                gx += coeff * (y[i].0 - y[j].0);
                gy += coeff * (y[i].1 - y[j].1);
            }
            *g = (4.0 * gx, 4.0 * gy);
        }

        let mut mean = (0.0, 0.0);
        for i in 0..n {
            velocity[i].0 = momentum * velocity[i].0 - cfg.learning_rate * grad[i].0;
            velocity[i].1 = momentum * velocity[i].1 - cfg.learning_rate * grad[i].1;
            y[i].0 += velocity[i].0;
            y[i].1 += velocity[i].1;
            if !(y[i].0.is_finite() && y[i].1.is_finite()) {
                return Err(CoreError::Diverged {
                    epoch: iter,
                    reason: "non-finite embedding coordinate".into(),
                });
            }
            mean.0 += y[i].0;
            mean.1 += y[i].1;
        }
        mean.0 /= n as f64;
        mean.1 /= n as f64;
        for yi in y.iter_mut() {
            yi.0 -= mean.0;
            yi.1 -= mean.1;
        }
    }

    let (qf, _) = student_t_affinities(&y);
    let final_kl = kl_divergence(&p, &qf);
    Ok(TsneResult {
        coords: y,
        initial_kl,
        final_kl,
        effective_perplexity: perplexity,
        perplexity_clamped: clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = seeded_rng(seed);
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ids = (0..n).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::new(ids, d, data).unwrap()
    }

    #[test]
    fn affinities_sum_to_one_and_are_symmetric() {
        let x = random_matrix(40, 8, 3);
        let p = pairwise_affinities(&x, 10.0).unwrap();
        let n = 40;
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "sum {total}");
        for i in 0..n {
            assert_eq!(p[i * n + i], 0.0);
            for j in 0..n {
                assert!((p[i * n + j] - p[j * n + i]).abs() < 1e-15);
                assert!(p[i * n + j] >= 0.0);
            }
        }
    }

    #[test]
    fn per_row_perplexity_matches_target() {
        let x = random_matrix(60, 10, 5);
        let target = 12.0;
        for (i, perp) in calibrated_row_perplexities(&x, target).unwrap().iter().enumerate() {
            assert!(
                (perp - target).abs() < 1e-3,
                "row {i}: perplexity {perp} vs target {target}"
            );
        }
    }

    #[test]
    fn three_equidistant_points_have_equal_affinities() {
        // Simplex corners: pairwise squared distances are exactly 2.0.
        let x = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let p = pairwise_affinities(&x, 1.5).unwrap();
        let off: Vec<f64> = (0..3)
            .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| p[i * 3 + j])
            .collect();
        for v in &off {
            assert!((v - off[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_points_do_not_break_calibration() {
        let mut data = vec![0.5; 4 * 3];
        data.extend_from_slice(&[9.0, 9.0, 9.0, 8.0, 8.5, 9.0]);
        let ids = (0..6).map(|i| format!("p{i}")).collect();
        let x = EmbeddingMatrix::new(ids, 3, data).unwrap();
        let p = pairwise_affinities(&x, 2.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tsne_is_deterministic_per_seed() {
        let x = random_matrix(30, 6, 8);
        let cfg = TsneConfig { iterations: 120, seed: 5, ..Default::default() };
        let a = tsne(&x, &cfg).unwrap();
        let b = tsne(&x, &cfg).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.final_kl, b.final_kl);
    }

    #[test]
    fn tsne_reduces_kl_on_clustered_data() {
        // Two tight 10-D Gaussian clusters far apart.
        let mut rng = seeded_rng(10);
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for k in 0..2 {
            for i in 0..25 {
                for d in 0..10 {
                    let center = if k == 0 { 0.0 } else if d == 0 { 10.0 } else { 0.0 };
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    data.push(center + 0.1 * (-2.0 * u1.ln()).sqrt() * u2.cos());
                }
                ids.push(format!("{k}-{i}"));
            }
        }
        let x = EmbeddingMatrix::new(ids, 10, data).unwrap();
        let cfg = TsneConfig { iterations: 500, seed: 2, ..Default::default() };
        let out = tsne(&x, &cfg).unwrap();
        assert!(out.final_kl >= 0.0);
        assert!(
            out.final_kl < out.initial_kl,
            "final {} vs initial {}",
            out.final_kl,
            out.initial_kl
        );
        assert!(out.perplexity_clamped, "perplexity 30 must clamp for n=50");
    }

    #[test]
    fn tiny_inputs_are_rejected() {
        let x = random_matrix(4, 3, 1);
        assert!(tsne(&x, &TsneConfig::default()).is_err());
    }
}
