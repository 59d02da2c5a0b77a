//! `run` (full pipeline) and `import-via`.

use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;

use phenotile_core::detect::DetectionRecord;
use phenotile_core::imgcore::Image;
use phenotile_core::pipeline::{
    export_via_annotations, import_via_annotations, DetectorChoice, Pipeline, PipelineConfig,
    TileInput,
};

use crate::config::{png_inputs, stem_of, Context};

#[derive(Args)]
pub struct RunArgs {
    /// Directory of PNG tiles (or a single PNG).
    #[arg(long)]
    tiles: PathBuf,

    /// Comma-separated classifier model files.
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,

    /// Replay detections from this directory instead of running DoG.
    #[arg(long)]
    replay_detections: Option<PathBuf>,

    /// Use only the first model instead of the max-posterior ensemble.
    #[arg(long)]
    no_ensemble: bool,

    /// Patch side cut around each detection.
    #[arg(long)]
    patch_side: Option<u32>,
}

pub fn run(ctx: &Context, args: RunArgs) -> Result<i32> {
    ctx.ensure_out()?;
    anyhow::ensure!(!args.models.is_empty(), "need at least one --models file");
    let detector = match &args.replay_detections {
        Some(dir) => DetectorChoice::Replay { dir: dir.clone() },
        None => DetectorChoice::Dog(ctx.dog_params()),
    };
    let config = PipelineConfig {
        stain_matrix: ctx.stain_matrix(),
        detector,
        classifier_paths: args.models.clone(),
        ensemble: !args.no_ensemble,
        match_cfg: ctx.file.match_cfg.unwrap_or_default(),
        patch_side: args.patch_side.or(ctx.file.patch_side).unwrap_or(56),
        edge_padding_threshold: 0.5,
        seed: ctx.seed,
    };
    let pipeline = Pipeline::from_config(config)?;

    let mut tiles = Vec::new();
    for path in png_inputs(&args.tiles)? {
        tiles.push(TileInput {
            id: stem_of(&path),
            image: Image::load_png(&path)
                .with_context(|| format!("loading {}", path.display()))?,
            offset: None,
        });
    }
    let manifest = pipeline.run_dataset(&tiles, &ctx.out)?;
    println!(
        "run: {} tiles, {} detections, {} failures; manifest at {}",
        manifest.tiles.len(),
        manifest.total_detections,
        manifest.failed_tiles,
        ctx.out.join("manifest.json").display()
    );
    for (name, pct) in &manifest.aggregate_percentages {
        println!("  {name}: {pct:.1}%");
    }
    Ok(if manifest.failed_tiles > 0 { 1 } else { 0 })
}

#[derive(Args)]
pub struct ImportViaArgs {
    /// VIA project or export JSON.
    #[arg(long)]
    input: PathBuf,

    /// Re-export the parsed annotations as VIA JSON (round-trip check).
    #[arg(long)]
    reexport: bool,
}

#[derive(serde::Serialize)]
struct LabeledPoint {
    x: f64,
    y: f64,
    label: String,
}

pub fn import_via(ctx: &Context, args: ImportViaArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let imported = import_via_annotations(&text)?;

    let gt_dir = ctx.out.join("via_gt");
    let points_dir = ctx.out.join("via_points");
    std::fs::create_dir_all(&gt_dir)?;
    std::fs::create_dir_all(&points_dir)?;

    let mut n_boxes = 0usize;
    let mut n_points = 0usize;
    for (key, ann) in &imported {
        let stem = std::path::Path::new(&ann.filename)
            .file_stem()
            .map_or_else(|| key.clone(), |s| s.to_string_lossy().into_owned());
        let boxes: Vec<DetectionRecord> = ann
            .boxes
            .iter()
            .map(|(b, _)| DetectionRecord {
                x: b.x_min,
                y: b.y_min,
                w: b.width(),
                h: b.height(),
                score: 1.0,
            })
            .collect();
        // Ground truth uses the same record shape without scores.
        let gt: Vec<serde_json::Value> = boxes
            .iter()
            .map(|r| serde_json::json!({"x": r.x, "y": r.y, "w": r.w, "h": r.h}))
            .collect();
        std::fs::write(gt_dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&gt)?)?;
        let points: Vec<LabeledPoint> = ann
            .points
            .iter()
            .map(|(x, y, label)| LabeledPoint { x: *x, y: *y, label: label.name().into() })
            .collect();
        std::fs::write(
            points_dir.join(format!("{stem}.json")),
            serde_json::to_vec_pretty(&points)?,
        )?;
        n_boxes += ann.boxes.len();
        n_points += ann.points.len();
    }
    println!(
        "import-via: {} images, {} boxes, {} labelled points",
        imported.len(),
        n_boxes,
        n_points
    );
    if args.reexport {
        let path = ctx.out.join("via_reexport.json");
        std::fs::write(&path, export_via_annotations(&imported)?)?;
        println!("import-via: re-exported to {}", path.display());
    }
    Ok(0)
}
