//! A small from-scratch CNN with exact, finite-difference-checked gradients.
//!
//! Architecture: conv 3x3 + ReLU, 2x2 max pool, conv 3x3 + ReLU, 2x2 max
//! pool, global max pool, dense hidden layer of ReLU units, dense softmax
//! output over the five cell types. Dropout (inverted, train only) precedes
//! each dense layer. Everything is f64, single sample at a time; batches are
//! mapped over samples with a fixed reduction order so results do not depend
//! on thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PosteriorVector, NUM_CLASSES};
use crate::detect::FocalParams;
use crate::error::{CoreError, Result};
use crate::imgcore::Image;
use crate::rng::{seeded_rng, stream_rng};

/// Network shape. The default mirrors the reference head (global pooling
/// into a 128-unit ReLU hidden layer into 5 softmax outputs) on a small
/// two-conv backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub input_side: u32,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            conv1_channels: 8,
            conv2_channels: 16,
            hidden_units: 128,
            dropout_rate: 0.5,
        }
    }
}

impl CnnConfig {
    /// Wider conv backbone (12/24 channels), same head.
    pub fn wide() -> Self {
        Self { conv1_channels: 12, conv2_channels: 24, ..Default::default() }
    }

    fn dims(&self) -> Result<Dims> {
        let s = self.input_side as usize;
        if s < 8 {
            return Err(CoreError::Config(format!("input side {s} too small (minimum 8)")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let c1 = s - 2;
        let p1 = c1 / 2;
        if p1 < 3 {
            return Err(CoreError::Config("input too small after first pool".into()));
        }
        let c2 = p1 - 2;
        let p2 = c2 / 2;
        if p2 < 1 {
            return Err(CoreError::Config("input too small after second pool".into()));
        }
        Ok(Dims { s, c1, p1, c2, p2 })
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    s: usize,
    c1: usize,
    p1: usize,
    c2: usize,
    p2: usize,
}

/// Loss driving `backward`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum LossKind {
    CrossEntropy,
    Focal(FocalParams),
}

/// Forward mode: `Train` caches activations and applies dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// The model: plain parameter buffers, immutable during inference.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCnn {
    pub cfg: CnnConfig,
    pub seed: u64,
    conv1_w: Vec<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>,
    conv2_b: Vec<f64>,
    fc1_w: Vec<f64>,
    fc1_b: Vec<f64>,
    fc2_w: Vec<f64>,
    fc2_b: Vec<f64>,
}

/// Per-parameter-tensor gradients, same shapes as [`TinyCnn`].
#[derive(Clone, Debug)]
pub struct CnnGradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl CnnGradients {
    pub fn zeros_like(model: &TinyCnn) -> Self {
        Self {
            conv1_w: vec![0.0; model.conv1_w.len()],
            conv1_b: vec![0.0; model.conv1_b.len()],
            conv2_w: vec![0.0; model.conv2_w.len()],
            conv2_b: vec![0.0; model.conv2_b.len()],
            fc1_w: vec![0.0; model.fc1_w.len()],
            fc1_b: vec![0.0; model.fc1_b.len()],
            fc2_w: vec![0.0; model.fc2_w.len()],
            fc2_b: vec![0.0; model.fc2_b.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &CnnGradients, factor: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.1.iter_mut().zip(src.1) {
                *d += factor * s;
            }
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 8] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
        ]
    }
}

/// Cached activations from a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    conv1_out: Vec<f64>,
    pool1_out: Vec<f64>,
    pool1_idx: Vec<usize>,
    conv2_out: Vec<f64>,
    pool2_idx: Vec<usize>,
    gmp_idx: Vec<usize>,
    gmp_dropped: Vec<f64>,
    mask1: Vec<f64>,
    hidden: Vec<f64>,
    hidden_dropped: Vec<f64>,
    mask2: Vec<f64>,
    pub posterior: PosteriorVector,
}

/// Result of a forward pass; `hidden` is the ReLU hidden layer used as the
/// per-member embedding.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub posterior: PosteriorVector,
    pub hidden: Vec<f64>,
    pub cache: Option<ForwardCache>,
}

/// Resize a patch image to the model input and scale channels to [0, 1].
/// Layout is channel-major: `[c][y][x]`.
pub fn patch_to_input(image: &Image, input_side: u32) -> Vec<f64> {
    let resized = image.resize_bilinear(input_side, input_side);
    let s = input_side as usize;
    let mut out = vec![0.0; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let px = resized.get(x as u32, y as u32);
            for c in 0..3 {
                out[c * s * s + y * s + x] = px[c] as f64 / 255.0;
            }
        }
    }
    out
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Valid 3x3 convolution forward: `out[oc][oy][ox]`.
fn conv3x3_forward(
    input: &[f64],
    in_ch: usize,
    in_side: usize,
    weights: &[f64],
    biases: &[f64],
    out_ch: usize,
) -> Vec<f64> {
    let out_side = in_side - 2;
    let mut out = vec![0.0; out_ch * out_side * out_side];
    for oc in 0..out_ch {
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut acc = biases[oc];
                for ic in 0..in_ch {
                    let w_base = ((oc * in_ch + ic) * 3) * 3;
                    let i_base = ic * in_side * in_side;
                    for ky in 0..3 {
                        let row = i_base + (oy + ky) * in_side + ox;
                        let w_row = w_base + ky * 3;
                        acc += weights[w_row] * input[row]
                            + weights[w_row + 1] * input[row + 1]
                            + weights[w_row + 2] * input[row + 2];
                    }
                }
                out[(oc * out_side + oy) * out_side + ox] = acc;
            }
        }
    }
    out
}

/// Backward for the valid 3x3 convolution; returns gradient w.r.t. input.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_ch: usize,
    in_side: usize,
    weights: &[f64],
    out_ch: usize,
    d_out: &[f64],
    d_weights: &mut [f64],
    d_biases: &mut [f64],
) -> Vec<f64> {
    let out_side = in_side - 2;
    let mut d_in = vec![0.0; in_ch * in_side * in_side];
    for oc in 0..out_ch {
        for oy in 0..out_side {
            for ox in 0..out_side {
                let g = d_out[(oc * out_side + oy) * out_side + ox];
                if g == 0.0 {
                    continue;
                }
                d_biases[oc] += g;
                for ic in 0..in_ch {
                    let w_base = ((oc * in_ch + ic) * 3) * 3;
                    let i_base = ic * in_side * in_side;
                    for ky in 0..3 {
                        let row = i_base + (oy + ky) * in_side + ox;
                        let w_row = w_base + ky * 3;
                        for kx in 0..3 {
                            d_weights[w_row + kx] += g * input[row + kx];
                            d_in[row + kx] += g * weights[w_row + kx];
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// 2x2 max pool with stride 2 (floor on odd sides). Ties pick the first
/// window element in row-major order. Returns (output, argmax indices).
fn maxpool2(input: &[f64], ch: usize, in_side: usize) -> (Vec<f64>, Vec<usize>) {
    let out_side = in_side / 2;
    let mut out = vec![0.0; ch * out_side * out_side];
    let mut idx = vec![0usize; ch * out_side * out_side];
    for c in 0..ch {
        for py in 0..out_side {
            for px in 0..out_side {
                let mut best_v = f64::NEG_INFINITY;
                let mut best_i = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (c * in_side + 2 * py + dy) * in_side + 2 * px + dx;
                        if input[i] > best_v {
                            best_v = input[i];
                            best_i = i;
                        }
                    }
                }
                let o = (c * out_side + py) * out_side + px;
                out[o] = best_v;
                idx[o] = best_i;
            }
        }
    }
    (out, idx)
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

const P_FLOOR: f64 = 1e-12;

/// Mean loss value and gradient w.r.t. logits for one sample.
fn loss_and_dlogits(
    posterior: &PosteriorVector,
    label: usize,
    loss: &LossKind,
) -> (f64, [f64; NUM_CLASSES]) {
    let p = posterior.values();
    let p_y = p[label].clamp(P_FLOOR, 1.0 - P_FLOOR);
    match loss {
        LossKind::CrossEntropy => {
            let mut d = [0.0; NUM_CLASSES];
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = p[j] - if j == label { 1.0 } else { 0.0 };
            }
            (-p_y.ln(), d)
        }
        LossKind::Focal(fp) => {
            let one_minus = 1.0 - p_y;
            let loss_v = -fp.alpha * one_minus.powf(fp.gamma) * p_y.ln();
            // dL/dp_y, then through the softmax Jacobian.
            let dldp = -fp.alpha
                * (one_minus.powf(fp.gamma) / p_y
                    - fp.gamma * one_minus.powf(fp.gamma - 1.0) * p_y.ln());
            let mut d = [0.0; NUM_CLASSES];
            for (j, dj) in d.iter_mut().enumerate() {
                let delta = if j == label { 1.0 } else { 0.0 };
                *dj = dldp * p_y * (delta - p[j]);
            }
            (loss_v, d)
        }
    }
}

impl TinyCnn {
    /// Fresh model with He-uniform weights and small positive biases.
    pub fn new(cfg: CnnConfig, seed: u64) -> Result<Self> {
        cfg.dims()?;
        let mut rng = seeded_rng(seed);
        let c1 = cfg.conv1_channels;
        let c2 = cfg.conv2_channels;
        let h = cfg.hidden_units;
        let conv1_w = he_uniform(&mut rng, 3 * 9, c1 * 3 * 9);
        let conv1_b = vec![0.01; c1];
        let conv2_w = he_uniform(&mut rng, c1 * 9, c2 * c1 * 9);
        let conv2_b = vec![0.01; c2];
        let fc1_w = he_uniform(&mut rng, c2, h * c2);
        let fc1_b = vec![0.01; h];
        // Zero-initialized output layer: the first posterior is exactly
        // uniform and early updates stay well scaled even though the global
        // max pool inflates feature magnitudes.
        let fc2_w = vec![0.0; NUM_CLASSES * h];
        let fc2_b = vec![0.0; NUM_CLASSES];
        Ok(Self {
            cfg,
            seed,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    pub fn hidden_units(&self) -> usize {
        self.cfg.hidden_units
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 8] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
        ]
    }

    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Model(format!("non-finite parameter in {name}")));
            }
        }
        Ok(())
    }

    /// Forward one sample. `dropout_rng` supplies the train-mode masks and
    /// must be present exactly when `mode == Train`.
    pub fn forward_one(
        &self,
        input: &[f64],
        mode: Mode,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let dims = self.cfg.dims()?;
        if input.len() != 3 * dims.s * dims.s {
            return Err(CoreError::Model(format!(
                "input length {} does not match 3x{}x{}",
                input.len(),
                dims.s,
                dims.s
            )));
        }
        let c1n = self.cfg.conv1_channels;
        let c2n = self.cfg.conv2_channels;
        let h = self.cfg.hidden_units;

        let mut conv1_out =
            conv3x3_forward(input, 3, dims.s, &self.conv1_w, &self.conv1_b, c1n);
        relu_inplace(&mut conv1_out);
        let (pool1_out, pool1_idx) = maxpool2(&conv1_out, c1n, dims.c1);

        let mut conv2_out =
            conv3x3_forward(&pool1_out, c1n, dims.p1, &self.conv2_w, &self.conv2_b, c2n);
        relu_inplace(&mut conv2_out);
        let (pool2_out, pool2_idx) = maxpool2(&conv2_out, c2n, dims.c2);

        // Global max pool per channel.
        let plane = dims.p2 * dims.p2;
        let mut gmp = vec![0.0; c2n];
        let mut gmp_idx = vec![0usize; c2n];
        for c in 0..c2n {
            let base = c * plane;
            let mut best_v = f64::NEG_INFINITY;
            let mut best_i = base;
            for i in base..base + plane {
                if pool2_out[i] > best_v {
                    best_v = pool2_out[i];
                    best_i = i;
                }
            }
            gmp[c] = best_v;
            gmp_idx[c] = best_i;
        }

        let train = mode == Mode::Train;
        let keep = 1.0 - self.cfg.dropout_rate;
        let (mask1, mask2) = if train {
            let rng = dropout_rng
                .ok_or_else(|| CoreError::Model("train-mode forward needs a dropout rng".into()))?;
            let m1: Vec<f64> =
                (0..c2n).map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 }).collect();
            let m2: Vec<f64> =
                (0..h).map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 }).collect();
            (m1, m2)
        } else {
            (vec![1.0; c2n], vec![1.0; h])
        };

        let gmp_dropped: Vec<f64> = gmp.iter().zip(&mask1).map(|(v, m)| v * m).collect();

        let mut hidden = vec![0.0; h];
        for (u, hv) in hidden.iter_mut().enumerate() {
            let mut acc = self.fc1_b[u];
            let row = u * c2n;
            for c in 0..c2n {
                acc += self.fc1_w[row + c] * gmp_dropped[c];
            }
            *hv = acc;
        }
        relu_inplace(&mut hidden);
        let hidden_dropped: Vec<f64> = hidden.iter().zip(&mask2).map(|(v, m)| v * m).collect();

        let mut logits = [0.0; NUM_CLASSES];
        for (k, logit) in logits.iter_mut().enumerate() {
            let mut acc = self.fc2_b[k];
            let row = k * h;
            for u in 0..h {
                acc += self.fc2_w[row + u] * hidden_dropped[u];
            }
            *logit = acc;
        }
        let posterior = PosteriorVector::from_logits(logits);

        let cache = train.then(|| ForwardCache {
            input: input.to_vec(),
            conv1_out,
            pool1_out,
            pool1_idx,
            conv2_out,
            pool2_idx,
            gmp_idx,
            gmp_dropped,
            mask1,
            hidden: hidden.clone(),
            hidden_dropped,
            mask2,
            posterior,
        });
        Ok(ForwardOutput { posterior, hidden, cache })
    }

    /// Gradient of this sample's loss w.r.t. every parameter tensor.
    /// `weight` scales both the reported loss and the gradients.
    pub fn backward_one(
        &self,
        cache: &ForwardCache,
        label: usize,
        loss: &LossKind,
        weight: f64,
    ) -> Result<(f64, CnnGradients)> {
        if label >= NUM_CLASSES {
            return Err(CoreError::Model(format!("label index {label} out of range")));
        }
        let dims = self.cfg.dims()?;
        let c1n = self.cfg.conv1_channels;
        let c2n = self.cfg.conv2_channels;
        let h = self.cfg.hidden_units;
        let mut grads = CnnGradients::zeros_like(self);

        let (loss_v, mut d_logits) = loss_and_dlogits(&cache.posterior, label, loss);
        d_logits.iter_mut().for_each(|d| *d *= weight);

        // fc2
        let mut d_hidden_dropped = vec![0.0; h];
        for k in 0..NUM_CLASSES {
            let g = d_logits[k];
            grads.fc2_b[k] += g;
            let row = k * h;
            for u in 0..h {
                grads.fc2_w[row + u] += g * cache.hidden_dropped[u];
                d_hidden_dropped[u] += g * self.fc2_w[row + u];
            }
        }

        // dropout2 + ReLU
        let mut d_hidden_pre = vec![0.0; h];
        for u in 0..h {
            if cache.hidden[u] > 0.0 {
                d_hidden_pre[u] = d_hidden_dropped[u] * cache.mask2[u];
            }
        }

        // fc1
        let mut d_gmp_dropped = vec![0.0; c2n];
        for u in 0..h {
            let g = d_hidden_pre[u];
            if g == 0.0 {
                continue;
            }
            grads.fc1_b[u] += g;
            let row = u * c2n;
            for c in 0..c2n {
                grads.fc1_w[row + c] += g * cache.gmp_dropped[c];
                d_gmp_dropped[c] += g * self.fc1_w[row + c];
            }
        }

        // dropout1, then route through global max pool.
        let mut d_pool2 = vec![0.0; c2n * dims.p2 * dims.p2];
        for c in 0..c2n {
            let g = d_gmp_dropped[c] * cache.mask1[c];
            if g != 0.0 {
                d_pool2[cache.gmp_idx[c]] += g;
            }
        }

        // pool2 -> conv2 (ReLU)
        let mut d_conv2 = vec![0.0; c2n * dims.c2 * dims.c2];
        for (o, &src) in cache.pool2_idx.iter().enumerate() {
            if d_pool2[o] != 0.0 && cache.conv2_out[src] > 0.0 {
                d_conv2[src] += d_pool2[o];
            }
        }

        let d_pool1 = conv3x3_backward(
            &cache.pool1_out,
            c1n,
            dims.p1,
            &self.conv2_w,
            c2n,
            &d_conv2,
            &mut grads.conv2_w,
            &mut grads.conv2_b,
        );

        // pool1 -> conv1 (ReLU)
        let mut d_conv1 = vec![0.0; c1n * dims.c1 * dims.c1];
        for (o, &src) in cache.pool1_idx.iter().enumerate() {
            if d_pool1[o] != 0.0 && cache.conv1_out[src] > 0.0 {
                d_conv1[src] += d_pool1[o];
            }
        }

        conv3x3_backward(
            &cache.input,
            3,
            dims.s,
            &self.conv1_w,
            c1n,
            &d_conv1,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
        );

        Ok((loss_v * weight, grads))
    }

    /// Inference posteriors for a batch of patch images (any size; resized
    /// to the model input). Deterministic: dropout is disabled.
    pub fn predict_batch(&self, batch: &[&Image]) -> Result<Vec<PosteriorVector>> {
        self.validate_finite()?;
        batch
            .iter()
            .map(|img| {
                let input = patch_to_input(img, self.cfg.input_side);
                Ok(self.forward_one(&input, Mode::Infer, None)?.posterior)
            })
            .collect()
    }

    /// Hidden-layer embeddings for a batch of patch images.
    pub fn embed_batch(&self, batch: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.validate_finite()?;
        batch
            .iter()
            .map(|img| {
                let input = patch_to_input(img, self.cfg.input_side);
                Ok(self.forward_one(&input, Mode::Infer, None)?.hidden)
            })
            .collect()
    }

    /// Train-mode forward for a batch; per-sample dropout streams are derived
    /// from `(rng_seed, sample index)` so evaluation order cannot matter.
    pub fn forward_batch_train(
        &self,
        inputs: &[Vec<f64>],
        rng_seed: u64,
    ) -> Result<Vec<ForwardCache>> {
        self.validate_finite()?;
        inputs
            .iter()
            .enumerate()
            .map(|(i, input)| {
                let mut rng = stream_rng(rng_seed, &[i as u64]);
                let out = self.forward_one(input, Mode::Train, Some(&mut rng))?;
                Ok(out.cache.expect("train mode caches"))
            })
            .collect()
    }
}

// ---- serialization ----------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"PTCN";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    config: CnnConfig,
    seed: u64,
    tensor_lens: Vec<usize>,
}

impl TinyCnn {
    /// Serialize: magic, version, JSON header length + bytes, then all
    /// parameter tensors as little-endian f64 in fixed order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            version: MODEL_VERSION,
            config: self.cfg,
            seed: self.seed,
            tensor_lens: self.tensors().iter().map(|(_, t)| t.len()).collect(),
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, t) in self.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |msg: &str| CoreError::Model(format!("model file: {msg}"));
        if bytes.len() < 16 || &bytes[0..4] != MODEL_MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + hlen {
            return Err(err("truncated header"));
        }
        let header: ModelHeader = serde_json::from_slice(&bytes[16..16 + hlen])?;
        let mut model = TinyCnn::new(header.config, header.seed)?;
        let expected: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        if expected != header.tensor_lens {
            return Err(err("tensor shape mismatch"));
        }
        let mut off = 16 + hlen;
        for (_, tensor) in model.tensors_mut() {
            for v in tensor.iter_mut() {
                let end = off + 8;
                if end > bytes.len() {
                    return Err(CoreError::Model("model file: truncated parameters".into()));
                }
                *v = f64::from_le_bytes(bytes[off..end].try_into().unwrap());
                off = end;
            }
        }
        if off != bytes.len() {
            return Err(CoreError::Model("model file: trailing bytes".into()));
        }
        model.validate_finite()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CnnConfig {
        CnnConfig { input_side: 12, conv1_channels: 4, conv2_channels: 6, hidden_units: 16, dropout_rate: 0.5 }
    }

    fn random_input(side: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let model = TinyCnn::new(small_cfg(), 1).unwrap();
        for s in 0..5 {
            let out = model.forward_one(&random_input(12, s), Mode::Infer, None).unwrap();
            let sum: f64 = out.posterior.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zeroed_output_layer_gives_uniform_posterior() {
        let mut model = TinyCnn::new(small_cfg(), 2).unwrap();
        model.fc2_w.iter_mut().for_each(|v| *v = 0.0);
        model.fc2_b.iter_mut().for_each(|v| *v = 0.0);
        let out = model.forward_one(&random_input(12, 9), Mode::Infer, None).unwrap();
        for v in out.posterior.values() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_inputs_give_identical_infer_rows() {
        let model = TinyCnn::new(small_cfg(), 3).unwrap();
        let input = random_input(12, 4);
        let a = model.forward_one(&input, Mode::Infer, None).unwrap();
        let b = model.forward_one(&input, Mode::Infer, None).unwrap();
        assert_eq!(a.posterior, b.posterior);
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn same_seed_same_model() {
        let a = TinyCnn::new(small_cfg(), 7).unwrap();
        let b = TinyCnn::new(small_cfg(), 7).unwrap();
        assert_eq!(a, b);
        let c = TinyCnn::new(small_cfg(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn non_finite_parameter_is_rejected() {
        let mut model = TinyCnn::new(small_cfg(), 5).unwrap();
        model.fc1_w[3] = f64::NAN;
        assert!(model.validate_finite().is_err());
        let img = Image::filled(12, 12, [128, 90, 200]);
        assert!(model.predict_batch(&[&img]).is_err());
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let model = TinyCnn::new(CnnConfig::default(), 42).unwrap();
        let bytes = model.to_bytes().unwrap();
        let back = TinyCnn::from_bytes(&bytes).unwrap();
        assert_eq!(model, back);
        assert_eq!(bytes, back.to_bytes().unwrap());
    }

    #[test]
    fn corrupt_model_bytes_rejected() {
        let model = TinyCnn::new(small_cfg(), 6).unwrap();
        let mut bytes = model.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(TinyCnn::from_bytes(&bytes).is_err());
        let mut truncated = model.to_bytes().unwrap();
        truncated.truncate(truncated.len() - 9);
        assert!(TinyCnn::from_bytes(&truncated).is_err());
    }

    #[test]
    fn focal_gamma_zero_alpha_one_matches_cross_entropy_gradient() {
        let model = TinyCnn::new(small_cfg(), 11).unwrap();
        let input = random_input(12, 12);
        let mut rng = seeded_rng(100);
        let out = model.forward_one(&input, Mode::Train, Some(&mut rng)).unwrap();
        let cache = out.cache.unwrap();
        let (l_ce, g_ce) = model.backward_one(&cache, 2, &LossKind::CrossEntropy, 1.0).unwrap();
        let focal = LossKind::Focal(FocalParams { alpha: 1.0, gamma: 0.0 });
        let (l_f, g_f) = model.backward_one(&cache, 2, &focal, 1.0).unwrap();
        assert!((l_ce - l_f).abs() < 1e-12);
        for ((_, a), (_, b)) in g_ce.tensors().iter().zip(g_f.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_output_gradient() {
        // Force a one-hot posterior by saturating the output layer.
        let mut model = TinyCnn::new(small_cfg(), 13).unwrap();
        model.fc2_w.iter_mut().for_each(|v| *v = 0.0);
        model.fc2_b = vec![0.0; NUM_CLASSES];
        model.fc2_b[1] = 60.0; // softmax saturates to class 1
        let input = random_input(12, 14);
        let mut rng = seeded_rng(15);
        let out = model.forward_one(&input, Mode::Train, Some(&mut rng)).unwrap();
        let cache = out.cache.unwrap();
        let (loss, grads) = model.backward_one(&cache, 1, &LossKind::CrossEntropy, 1.0).unwrap();
        assert!(loss < 1e-12);
        assert!(grads.fc2_b.iter().all(|g| g.abs() < 1e-12));
        assert!(grads.fc2_w.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn patch_to_input_scales_channels() {
        let img = Image::filled(20, 20, [255, 0, 128]);
        let input = patch_to_input(&img, 8);
        assert_eq!(input.len(), 3 * 64);
        assert!((input[0] - 1.0).abs() < 1e-12);
        assert_eq!(input[64], 0.0);
        assert!((input[128] - 128.0 / 255.0).abs() < 1e-12);
    }
}
