//! Five-class cell phenotyping: labelled patches, posterior vectors,
//! balancing strategies, a small gradient-checked CNN, ensembling, and
//! classification metrics.

mod backend;
mod balance;
mod cnn;
mod ensemble;
mod metrics;
mod train;

pub use backend::{patch_key, ClassifierBackend, ReplayBackend};
pub use balance::{balance_bootstrap, balance_downsample, class_counts, class_weights};
pub use cnn::{patch_to_input, CnnConfig, CnnGradients, ForwardCache, LossKind, Mode, TinyCnn};
pub use ensemble::ensemble_predict;
pub use metrics::{
    classification_report, report_from_precision_recall, ClassMetrics, ClassReport,
    ConfusionMatrix,
};
pub use train::{evaluate_accuracy, train, BalanceStrategy, EpochStats, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imgcore::Patch;

/// The five term-placenta cell types, in fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellType {
    #[serde(rename = "CYT")]
    Cyt,
    #[serde(rename = "FIB")]
    Fib,
    #[serde(rename = "HOF")]
    Hof,
    #[serde(rename = "SYN")]
    Syn,
    #[serde(rename = "VAS")]
    Vas,
}

pub const NUM_CLASSES: usize = 5;

impl CellType {
    pub const ALL: [CellType; NUM_CLASSES] =
        [CellType::Cyt, CellType::Fib, CellType::Hof, CellType::Syn, CellType::Vas];

    pub fn index(self) -> usize {
        match self {
            CellType::Cyt => 0,
            CellType::Fib => 1,
            CellType::Hof => 2,
            CellType::Syn => 3,
            CellType::Vas => 4,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| CoreError::Config(format!("class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            CellType::Cyt => "CYT",
            CellType::Fib => "FIB",
            CellType::Hof => "HOF",
            CellType::Syn => "SYN",
            CellType::Vas => "VAS",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CYT" => Ok(CellType::Cyt),
            "FIB" => Ok(CellType::Fib),
            "HOF" => Ok(CellType::Hof),
            "SYN" => Ok(CellType::Syn),
            "VAS" => Ok(CellType::Vas),
            other => Err(CoreError::Annotation(format!(
                "unknown cell type label '{other}' (expected CYT, FIB, HOF, SYN, or VAS)"
            ))),
        }
    }

    /// Fixed overlay palette: CYT red, FIB green, HOF blue, SYN orange,
    /// VAS purple.
    pub fn color(self) -> [u8; 3] {
        match self {
            CellType::Cyt => [220, 30, 30],
            CellType::Fib => [30, 180, 30],
            CellType::Hof => [40, 70, 230],
            CellType::Syn => [245, 150, 20],
            CellType::Vas => [150, 50, 200],
        }
    }
}

impl std::fmt::Display for CellType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A patch with its ground-truth cell type and provenance id.
#[derive(Clone, Debug)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub label: CellType,
    pub source: String,
}

/// Probability vector over the five cell types; entries in [0, 1], unit sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorVector([f64; NUM_CLASSES]);

impl PosteriorVector {
    pub fn new(values: [f64; NUM_CLASSES]) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::Model(format!(
                "invalid posterior {values:?} (sum {sum})"
            )));
        }
        Ok(Self(values))
    }

    /// Softmax of raw scores (numerically stabilized).
    pub fn from_logits(logits: [f64; NUM_CLASSES]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut exps = [0.0; NUM_CLASSES];
        let mut sum = 0.0;
        for (e, &z) in exps.iter_mut().zip(&logits) {
            *e = (z - max).exp();
            sum += *e;
        }
        exps.iter_mut().for_each(|e| *e /= sum);
        Self(exps)
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn values(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn get(&self, class: CellType) -> f64 {
        self.0[class.index()]
    }

    /// Highest-posterior class; ties break to the lower class index.
    pub fn argmax(&self) -> (CellType, f64) {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (CellType::ALL[best], self.0[best])
    }
}
