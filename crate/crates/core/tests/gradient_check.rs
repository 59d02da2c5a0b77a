//! Finite-difference oracle for the CNN backward pass: central differences
//! with h = 1e-5 in double precision, compared per parameter tensor.

use phenotile_core::classify::{CnnConfig, LossKind, Mode, TinyCnn};
use phenotile_core::detect::FocalParams;
use phenotile_core::rng::{seeded_rng, stream_rng};
use rand::Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_GUARD: f64 = 1e-12;

fn random_batch(side: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let inputs = (0..n)
        .map(|_| (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..5)).collect();
    (inputs, labels)
}

/// Mean batch loss with per-sample dropout streams derived from
/// `(dropout_seed, sample index)`; identical streams for every call, so the
/// loss is a deterministic function of the parameters.
fn batch_loss(
    model: &TinyCnn,
    inputs: &[Vec<f64>],
    labels: &[usize],
    loss: &LossKind,
    dropout_seed: u64,
) -> f64 {
    let mut total = 0.0;
    for (i, (input, &label)) in inputs.iter().zip(labels).enumerate() {
        let mut rng = stream_rng(dropout_seed, &[i as u64]);
        let out = model.forward_one(input, Mode::Train, Some(&mut rng)).unwrap();
        let cache = out.cache.unwrap();
        let (l, _) = model.backward_one(&cache, label, loss, 1.0).unwrap();
        total += l;
    }
    total / inputs.len() as f64
}

fn analytic_gradients(
    model: &TinyCnn,
    inputs: &[Vec<f64>],
    labels: &[usize],
    loss: &LossKind,
    dropout_seed: u64,
) -> Vec<Vec<f64>> {
    let mut sums: Vec<Vec<f64>> =
        model.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    for (i, (input, &label)) in inputs.iter().zip(labels).enumerate() {
        let mut rng = stream_rng(dropout_seed, &[i as u64]);
        let out = model.forward_one(input, Mode::Train, Some(&mut rng)).unwrap();
        let cache = out.cache.unwrap();
        let (_, grads) = model.backward_one(&cache, label, loss, 1.0).unwrap();
        for (sum, (_, g)) in sums.iter_mut().zip(grads.tensors()) {
            for (s, v) in sum.iter_mut().zip(g) {
                *s += v / inputs.len() as f64;
            }
        }
    }
    sums
}

fn check_loss(loss: LossKind, seed: u64) {
    let cfg = CnnConfig {
        input_side: 16,
        conv1_channels: 4,
        conv2_channels: 6,
        hidden_units: 12,
        dropout_rate: 0.5,
    };
    let model = TinyCnn::new(cfg, seed).unwrap();
    let (inputs, labels) = random_batch(16, 3, seed + 100);
    let dropout_seed = seed + 200;

    let analytic = analytic_gradients(&model, &inputs, &labels, &loss, dropout_seed);
    let names: Vec<&str> = model.tensors().iter().map(|(n, _)| *n).collect();

    for (ti, name) in names.iter().enumerate() {
        let len = model.tensors()[ti].1.len();
        let mut worst_rel = 0.0f64;
        let mut worst_pair = (0.0, 0.0);
        for ei in 0..len {
            let mut plus = model.clone();
            plus.tensors_mut()[ti].1[ei] += H;
            let mut minus = model.clone();
            minus.tensors_mut()[ti].1[ei] -= H;
            let numeric = (batch_loss(&plus, &inputs, &labels, &loss, dropout_seed)
                - batch_loss(&minus, &inputs, &labels, &loss, dropout_seed))
                / (2.0 * H);
            let exact = analytic[ti][ei];
            let diff = (numeric - exact).abs();
            if diff <= ABS_GUARD {
                continue;
            }
            let rel = diff / exact.abs().max(numeric.abs()).max(ABS_GUARD);
            if rel > worst_rel {
                worst_rel = rel;
                worst_pair = (exact, numeric);
            }
        }
        assert!(
            worst_rel < REL_TOL,
            "{name}: worst relative error {worst_rel:.3e} (analytic {}, numeric {})",
            worst_pair.0,
            worst_pair.1
        );
        println!("{name}: ok (worst rel err {worst_rel:.3e})");
    }
}

#[test]
fn gradients_match_finite_differences_cross_entropy() {
    check_loss(LossKind::CrossEntropy, 41);
}

#[test]
fn gradients_match_finite_differences_focal() {
    check_loss(LossKind::Focal(FocalParams { alpha: 0.25, gamma: 2.0 }), 43);
}
