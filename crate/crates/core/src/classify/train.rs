//! SGD training loop: balancing, run-time augmentation (geometric + stain),
//! momentum updates, and model selection on validation accuracy.
//!
//! Reproducibility: every random stream (balancing, shuffling, per-sample
//! augmentation, per-sample dropout) is derived from the run seed and stable
//! indices, and batch gradients are reduced in sample order, so training is
//! bit-identical for any thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    balance_bootstrap, balance_downsample, class_weights, patch_to_input, CnnGradients,
    LabeledPatch, LossKind, Mode, TinyCnn,
};
use crate::error::{CoreError, Result};
use crate::imgcore::{augment_geometric, AugmentSpec, Image};
use crate::rng::{derive_seed, stream_rng};
use crate::stain::{stain_transform, StainMatrix, StainTransformConfig};

/// How the training set is balanced before SGD.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceStrategy {
    /// Oversample every class with replacement to the majority count.
    Bootstrap,
    /// Reduce every class to the minority count.
    Downsample,
    /// Keep the raw set and weight per-sample losses by inverse frequency.
    ClassWeights,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub balance: BalanceStrategy,
    pub augment: bool,
    pub max_shear: f64,
    pub stain_cfg: StainTransformConfig,
    pub stain_matrix: StainMatrix,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 85,
            learning_rate: 0.01,
            momentum: 0.9,
            balance: BalanceStrategy::Bootstrap,
            augment: true,
            max_shear: 0.1,
            stain_cfg: StainTransformConfig::default(),
            stain_matrix: StainMatrix::he_dab(),
            loss: LossKind::CrossEntropy,
        }
    }
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_accuracy: f64,
}

/// Trained model (parameters from the best validation epoch) plus history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TinyCnn,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Fraction of patches whose argmax posterior matches the label.
pub fn evaluate_accuracy(model: &TinyCnn, data: &[LabeledPatch]) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::Config("empty evaluation set".into()));
    }
    let side = model.cfg.input_side;
    let correct: usize = data
        .par_iter()
        .map(|item| {
            let input = patch_to_input(&item.patch.image, side);
            let out = model.forward_one(&input, Mode::Infer, None)?;
            Ok(usize::from(out.posterior.argmax().0 == item.label))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / data.len() as f64)
}

fn augment_patch(
    image: &Image,
    cfg: &TrainConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Image> {
    let spec = AugmentSpec::sample(rng, cfg.max_shear);
    let geo = augment_geometric(image, &spec);
    let stain_seed: u64 = rng.gen();
    stain_transform(&geo, &cfg.stain_matrix, &cfg.stain_cfg, stain_seed)
}

/// Train with SGD + momentum. Returns the parameters from the epoch with the
/// highest validation accuracy (earliest epoch wins ties).
pub fn train(
    model: TinyCnn,
    train_set: &[LabeledPatch],
    val_set: &[LabeledPatch],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CoreError::Config("train and validation sets must be non-empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(CoreError::Config("epochs and batch_size must be positive".into()));
    }
    model.validate_finite()?;

    let (balanced, weights) = match cfg.balance {
        BalanceStrategy::Bootstrap => (balance_bootstrap(train_set, derive_seed(seed, &[0]))?, None),
        BalanceStrategy::Downsample => {
            (balance_downsample(train_set, derive_seed(seed, &[0]))?, None)
        }
        BalanceStrategy::ClassWeights => (train_set.to_vec(), Some(class_weights(train_set)?)),
    };

    let side = model.cfg.input_side;
    // Resize once; augmentation then works on the small rasters.
    let resized: Vec<(Image, usize)> = balanced
        .par_iter()
        .map(|item| (item.patch.image.resize_bilinear(side, side), item.label.index()))
        .collect();

    let mut current = model;
    let mut velocity = CnnGradients::zeros_like(&current);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, TinyCnn)> = None;

    for epoch in 0..cfg.epochs {
        // Epoch shuffle.
        let mut order: Vec<usize> = (0..resized.len()).collect();
        let mut epoch_rng = stream_rng(seed, &[1, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = epoch_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let snapshot = &current;
            let results: Vec<(f64, CnnGradients)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &data_idx)| {
                    let position = (batch_idx * cfg.batch_size + k) as u64;
                    let mut rng = stream_rng(seed, &[2, epoch as u64, position]);
                    let (image, label) = &resized[data_idx];
                    let prepared = if cfg.augment {
                        augment_patch(image, cfg, &mut rng)?
                    } else {
                        image.clone()
                    };
                    let input = patch_to_input(&prepared, side);
                    let mut dropout_rng = stream_rng(seed, &[3, epoch as u64, position]);
                    let out = snapshot.forward_one(&input, Mode::Train, Some(&mut dropout_rng))?;
                    let cache = out.cache.expect("train mode caches");
                    let weight = weights.map_or(1.0, |w| w[*label]);
                    snapshot.backward_one(&cache, *label, &cfg.loss, weight)
                })
                .collect::<Result<Vec<_>>>()?;

            let inv_batch = 1.0 / batch.len() as f64;
            let mut grads = CnnGradients::zeros_like(&current);
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                grads.add_scaled(g, inv_batch);
            }
            batch_loss *= inv_batch;
            if !batch_loss.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    reason: format!("batch {batch_idx} loss {batch_loss}"),
                });
            }
            loss_sum += batch_loss * batch.len() as f64;
            sample_count += batch.len();

            for ((_, v), (_, g)) in velocity.tensors_mut().into_iter().zip(grads.tensors()) {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
                }
            }
            for ((_, p), (_, v)) in current.tensors_mut().into_iter().zip(velocity.tensors()) {
                for (pi, vi) in p.iter_mut().zip(v) {
                    *pi += vi;
                }
            }
        }

        let val_accuracy = evaluate_accuracy(&current, val_set)?;
        history.push(EpochStats {
            epoch,
            mean_train_loss: loss_sum / sample_count as f64,
            val_accuracy,
        });
        if best.as_ref().map_or(true, |(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, current.clone()));
        }
    }

    let (best_epoch, best_val_accuracy, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, history, best_epoch, best_val_accuracy })
}
