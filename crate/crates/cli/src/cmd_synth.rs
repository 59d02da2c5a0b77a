//! `synth`: generate tiles + ground truth + the patch dataset description.

use anyhow::{Context as _, Result};
use clap::Args;

use phenotile_core::detect::BoxRecord;
use phenotile_core::synthgen::{generate_dataset, Split};

use crate::config::{Context, DatasetFile, NucleusEntry, TileEntry};

#[derive(Args)]
pub struct SynthArgs {
    /// Number of tiles to generate.
    #[arg(long, default_value_t = 40)]
    tiles: usize,

    /// Class mix over CYT,FIB,HOF,SYN,VAS (must sum to 1).
    #[arg(long, default_value = "0.2,0.2,0.2,0.2,0.2", value_parser = parse_mix)]
    mix: Mix,

    /// Patch side in pixels for the extracted dataset.
    #[arg(long)]
    patch_side: Option<u32>,
}

#[derive(Clone)]
pub struct Mix(pub [f64; 5]);

fn parse_mix(s: &str) -> Result<Mix, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 5 {
        return Err(format!("expected 5 comma-separated fractions, got {}", parts.len()));
    }
    Ok(Mix([parts[0], parts[1], parts[2], parts[3], parts[4]]))
}

pub fn run(ctx: &Context, args: SynthArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let spec = ctx.synth_spec();
    let patch_side = args
        .patch_side
        .or(ctx.file.patch_side)
        .unwrap_or(56);

    let dataset = generate_dataset(&spec, args.tiles, args.mix.0, patch_side, ctx.seed)
        .context("generating synthetic dataset")?;

    let tiles_dir = ctx.out.join("tiles");
    let gt_dir = ctx.out.join("gt");
    std::fs::create_dir_all(&tiles_dir)?;
    std::fs::create_dir_all(&gt_dir)?;

    let mut entries = Vec::with_capacity(dataset.tiles.len());
    for (t, tile) in dataset.tiles.iter().enumerate() {
        let id = format!("tile_{t:04}");
        let image_rel = format!("tiles/{id}.png");
        let gt_rel = format!("gt/{id}.json");
        tile.image.save_png(ctx.out.join(&image_rel))?;
        let records: Vec<BoxRecord> = tile.gt_boxes.iter().map(|&b| b.into()).collect();
        std::fs::write(ctx.out.join(&gt_rel), serde_json::to_vec_pretty(&records)?)?;
        entries.push(TileEntry {
            id,
            image: image_rel,
            gt: gt_rel,
            split: dataset.tile_splits[t],
            nuclei: tile
                .gt_centers
                .iter()
                .zip(&tile.gt_labels)
                .zip(&tile.gt_boxes)
                .map(|((&(x, y), &label), &bbox)| NucleusEntry {
                    x,
                    y,
                    label,
                    bbox: bbox.into(),
                })
                .collect(),
        });
    }
    let file = DatasetFile { patch_side, tiles: entries };
    std::fs::write(ctx.out.join("dataset.json"), serde_json::to_vec_pretty(&file)?)?;

    let n = |s: Split| file.tiles.iter().filter(|t| t.split == s).count();
    let total: usize = file.tiles.iter().map(|t| t.nuclei.len()).sum();
    println!(
        "synth: {} tiles ({} train / {} val / {} test), {} nuclei, patch side {}",
        args.tiles,
        n(Split::Train),
        n(Split::Val),
        n(Split::Test),
        total,
        patch_side
    );
    println!("synth: wrote {}", ctx.out.join("dataset.json").display());
    Ok(0)
}
