//! `embed` and `tsne`.

use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;

use phenotile_core::classify::{CellType, TinyCnn};
use phenotile_core::embed::{
    concat_member_embeddings, read_embeddings_csv, silhouette, tsne as run_tsne,
    write_embeddings_csv, write_scatter_svg, write_tsne_csv, EmbeddingMatrix, TsneConfig,
};
use phenotile_core::imgcore::Image;

use crate::config::{parse_split, Context, DatasetFile};

#[derive(Args)]
pub struct EmbedArgs {
    /// Comma-separated model files; embeddings are concatenated row-wise.
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,

    /// dataset.json with labelled patches.
    #[arg(long)]
    dataset: PathBuf,

    #[arg(long, default_value = "test")]
    split: String,

    /// Also capture per-member posterior/embedding replay files, usable as
    /// classifier members in `run`.
    #[arg(long)]
    replay_out: bool,
}

pub fn embed(ctx: &Context, args: EmbedArgs) -> Result<i32> {
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

    let ids: Vec<String> = patches.iter().map(|(id, _)| id.clone()).collect();
    let refs: Vec<&Image> = patches.iter().map(|(_, p)| &p.patch.image).collect();
    let mut member_matrices = Vec::with_capacity(members.len());
    for (k, m) in members.iter().enumerate() {
        let rows = m.embed_batch(&refs)?;
        member_matrices.push(EmbeddingMatrix::from_rows(ids.clone(), &rows)?);
        if args.replay_out {
            let replay = phenotile_core::classify::ReplayBackend::capture(m, &refs)?;
            let dir = ctx.out.join("replay");
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("member_{k}.json"));
            replay.save(&path)?;
            println!("embed: replay for member {k} -> {}", path.display());
        }
    }
    let matrix = concat_member_embeddings(&member_matrices)?;

    let emb_path = ctx.out.join("embeddings.csv");
    write_embeddings_csv(&matrix, &emb_path)?;
    // Side file with labels so `tsne` can colour its output.
    let mut labels_csv = String::from("id,label\n");
    for (id, patch) in &patches {
        labels_csv.push_str(&format!("{id},{}\n", patch.label.name()));
    }
    std::fs::write(ctx.out.join("embedding_labels.csv"), labels_csv)?;
    println!(
        "embed: {} rows x {} dims ({} members) -> {}",
        matrix.len(),
        matrix.dim(),
        members.len(),
        emb_path.display()
    );
    Ok(0)
}

#[derive(Args)]
pub struct TsneArgs {
    /// embeddings.csv written by `embed`.
    #[arg(long)]
    embeddings: PathBuf,

    /// Optional id,label CSV to colour the output.
    #[arg(long)]
    labels: Option<PathBuf>,

    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,

    #[arg(long, default_value_t = 1000)]
    iterations: usize,

    /// Also render an SVG scatter plot.
    #[arg(long)]
    svg: bool,
}

fn read_labels(path: &PathBuf, ids: &[String]) -> Result<Vec<CellType>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        if let Some((id, label)) = line.split_once(',') {
            map.insert(id.to_string(), CellType::from_name(label)?);
        }
    }
    ids.iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| anyhow::anyhow!("labels file has no entry for '{id}'"))
        })
        .collect()
}

pub fn tsne(ctx: &Context, args: TsneArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let matrix = read_embeddings_csv(&args.embeddings)
        .with_context(|| format!("reading {}", args.embeddings.display()))?;
    let cfg = TsneConfig {
        perplexity: args.perplexity,
        iterations: args.iterations,
        seed: ctx.seed,
        ..Default::default()
    };
    let result = run_tsne(&matrix, &cfg)?;
    if result.perplexity_clamped {
        eprintln!(
            "tsne: perplexity clamped to {:.2} for {} rows",
            result.effective_perplexity,
            matrix.len()
        );
    }

    let labels = match &args.labels {
        Some(path) => Some(read_labels(path, matrix.ids())?),
        None => None,
    };
    let csv_path = ctx.out.join("tsne.csv");
    write_tsne_csv(matrix.ids(), &result.coords, labels.as_deref(), &csv_path)?;
    println!(
        "tsne: {} points, KL {:.4} -> {:.4}, wrote {}",
        matrix.len(),
        result.initial_kl,
        result.final_kl,
        csv_path.display()
    );
    if let Some(labels) = &labels {
        let s = silhouette(&result.coords, labels)?;
        println!("tsne: silhouette {s:.4}");
    }
    if args.svg {
        let svg_path = ctx.out.join("tsne.svg");
        write_scatter_svg(&result.coords, labels.as_deref(), &svg_path)?;
        println!("tsne: wrote {}", svg_path.display());
    }
    Ok(0)
}
