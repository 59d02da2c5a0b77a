//! `train`, `classify`, and `report`.

use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use phenotile_core::classify::{
    classification_report, ensemble_predict, train as train_model, BalanceStrategy, CellType,
    CnnConfig, ConfusionMatrix, PosteriorVector, TinyCnn,
};
use phenotile_core::imgcore::Image;
use phenotile_core::rng::derive_seed;
use phenotile_core::synthgen::Split;

use crate::config::{parse_split, Context, DatasetFile};

#[derive(Args)]
pub struct TrainArgs {
    /// dataset.json produced by `synth`.
    #[arg(long)]
    dataset: PathBuf,

    /// Ensemble members to train (seeds and widths vary per member).
    #[arg(long, default_value_t = 3)]
    members: usize,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    batch_size: Option<usize>,

    #[arg(long)]
    lr: Option<f64>,

    /// bootstrap | downsample | class-weights
    #[arg(long)]
    balance: Option<String>,

    /// Disable run-time augmentation.
    #[arg(long)]
    no_augment: bool,

    /// CNN input side (patches are resized to this).
    #[arg(long, default_value_t = 32)]
    input_side: u32,
}

fn parse_balance(s: &str) -> Result<BalanceStrategy> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "bootstrap" => Ok(BalanceStrategy::Bootstrap),
        "downsample" | "down_sample" => Ok(BalanceStrategy::Downsample),
        "class_weights" | "weights" => Ok(BalanceStrategy::ClassWeights),
        other => anyhow::bail!("unknown balance strategy '{other}'"),
    }
}

#[derive(Serialize, Deserialize)]
struct TrainSummary {
    members: Vec<MemberSummary>,
}

#[derive(Serialize, Deserialize)]
struct MemberSummary {
    model: String,
    seed: u64,
    wide: bool,
    best_epoch: usize,
    best_val_accuracy: f64,
    history: Vec<phenotile_core::classify::EpochStats>,
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let (ds, base) = DatasetFile::load(&args.dataset)?;
    let train_set: Vec<_> =
        ds.patches(&base, Split::Train)?.into_iter().map(|(_, p)| p).collect();
    let val_set: Vec<_> = ds.patches(&base, Split::Val)?.into_iter().map(|(_, p)| p).collect();
    anyhow::ensure!(!train_set.is_empty(), "dataset has no training patches");
    anyhow::ensure!(!val_set.is_empty(), "dataset has no validation patches");

    let mut cfg = ctx.file.train.clone().unwrap_or_default();
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(balance) = &args.balance {
        cfg.balance = parse_balance(balance)?;
    }
    if args.no_augment {
        cfg.augment = false;
    }

    let models_dir = ctx.out.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let mut summaries = Vec::with_capacity(args.members);
    for member in 0..args.members {
        // Ensemble variation: a distinct seed per member and alternating
        // conv widths.
        let wide = member % 2 == 1;
        let mut cnn_cfg = if wide { CnnConfig::wide() } else { CnnConfig::default() };
        cnn_cfg.input_side = args.input_side;
        let member_seed = derive_seed(ctx.seed, &[100, member as u64]);
        let model = TinyCnn::new(cnn_cfg, member_seed)
            .map_err(|e| anyhow::anyhow!("building member {member}: {e}"))?;
        let outcome = train_model(model, &train_set, &val_set, &cfg, member_seed)
            .map_err(|e| anyhow::anyhow!("training member {member}: {e}"))?;
        let rel = format!("models/member_{member}.bin");
        outcome.model.save(ctx.out.join(&rel))?;
        println!(
            "train: member {member} ({}) best val accuracy {:.4} at epoch {}",
            if wide { "wide" } else { "base" },
            outcome.best_val_accuracy,
            outcome.best_epoch
        );
        summaries.push(MemberSummary {
            model: rel,
            seed: member_seed,
            wide,
            best_epoch: outcome.best_epoch,
            best_val_accuracy: outcome.best_val_accuracy,
            history: outcome.history,
        });
    }
    std::fs::write(
        ctx.out.join("training.json"),
        serde_json::to_vec_pretty(&TrainSummary { members: summaries })?,
    )?;
    Ok(0)
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// Comma-separated model files.
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,

    /// dataset.json with labelled patches.
    #[arg(long)]
    dataset: PathBuf,

    /// Which split to classify.
    #[arg(long, default_value = "test")]
    split: String,

    /// Use only the first model instead of the max-posterior ensemble.
    #[arg(long)]
    no_ensemble: bool,
}

#[derive(Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<CellType>,
    pub label: CellType,
    pub confidence: f64,
}

pub fn classify(ctx: &Context, args: ClassifyArgs) -> Result<i32> {
    ctx.ensure_out()?;
    anyhow::ensure!(!args.models.is_empty(), "need at least one --models file");
    let members: Vec<TinyCnn> = args
        .models
        .iter()
        .map(|p| TinyCnn::load(p).map_err(|e| anyhow::anyhow!("loading {}: {e}", p.display())))
        .collect::<Result<_>>()?;
    let (ds, base) = DatasetFile::load(&args.dataset)?;
    let split = parse_split(&args.split)?;
    let patches = ds.patches(&base, split)?;
    anyhow::ensure!(!patches.is_empty(), "split '{}' has no patches", args.split);

    let refs: Vec<&Image> = patches.iter().map(|(_, p)| &p.patch.image).collect();
    let mut member_posteriors: Vec<Vec<PosteriorVector>> = Vec::new();
    for m in &members {
        member_posteriors.push(m.predict_batch(&refs)?);
    }

    let mut records = Vec::with_capacity(patches.len());
    for (i, (id, patch)) in patches.iter().enumerate() {
        let (label, confidence) = if args.no_ensemble {
            member_posteriors[0][i].argmax()
        } else {
            let rows: Vec<PosteriorVector> = member_posteriors.iter().map(|m| m[i]).collect();
            ensemble_predict(&rows)?
        };
        records.push(PredictionRecord {
            id: id.clone(),
            truth: Some(patch.label),
            label,
            confidence,
        });
    }
    let path = ctx.out.join("predictions.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&records)?)?;
    let correct = records
        .iter()
        .filter(|r| r.truth == Some(r.label))
        .count();
    println!(
        "classify: {} patches, accuracy {:.4}, wrote {}",
        records.len(),
        correct as f64 / records.len() as f64,
        path.display()
    );
    Ok(0)
}

#[derive(Args)]
pub struct ReportArgs {
    /// predictions.json from `classify`.
    #[arg(long)]
    predictions: PathBuf,
}

pub fn report(ctx: &Context, args: ReportArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let records: Vec<PredictionRecord> =
        serde_json::from_slice(&std::fs::read(&args.predictions)?)
            .with_context(|| format!("parsing {}", args.predictions.display()))?;
    let pairs: Vec<(CellType, CellType)> = records
        .iter()
        .filter_map(|r| r.truth.map(|t| (t, r.label)))
        .collect();
    anyhow::ensure!(
        !pairs.is_empty(),
        "predictions carry no ground-truth labels; nothing to score"
    );
    let cm = ConfusionMatrix::from_pairs(&pairs);
    let report = classification_report(&cm)?;
    print!("{report}");
    println!("\nconfusion matrix (rows = true, cols = predicted):");
    print!("{:>8}", "");
    for c in CellType::ALL {
        print!("{:>6}", c.name());
    }
    println!();
    for t in CellType::ALL {
        print!("{:>8}", t.name());
        for p in CellType::ALL {
            print!("{:>6}", cm.count(t, p));
        }
        println!();
    }
    std::fs::write(ctx.out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(ctx.out.join("confusion.json"), serde_json::to_vec_pretty(&cm)?)?;
    Ok(0)
}
