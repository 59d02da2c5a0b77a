//! `tile`, `detect`, and `eval-map`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::Args;
use serde::Serialize;

use phenotile_core::detect::{
    dog_detect, map_over_thresholds, pooled_average_precision, pr_curve, write_pr_csv,
    average_precision, BBox, BoxRecord, Detection, DetectionRecord,
};
use phenotile_core::imgcore::{artifact_score, split_tiles, ArtifactConfig, Image, TileGrid};
use phenotile_core::pipeline::render_overlay;

use crate::config::{png_inputs, stem_of, Context};

#[derive(Args)]
pub struct TileArgs {
    /// Source image (PNG).
    #[arg(long)]
    input: PathBuf,

    #[arg(long, default_value_t = 1600)]
    tile_width: u32,

    #[arg(long, default_value_t = 1200)]
    tile_height: u32,

    /// Drop tiles that look blurred or empty.
    #[arg(long)]
    filter_artifacts: bool,

    /// Manual exclusion list: one tile id per line, skipped on write.
    #[arg(long)]
    exclude: Option<PathBuf>,
}

#[derive(Serialize)]
struct TileRecord {
    id: String,
    x: u32,
    y: u32,
    width: u32,
    height: u32,
    blur_score: f64,
    tissue_fraction: f64,
    artifact: bool,
}

pub fn tile(ctx: &Context, args: TileArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let image = Image::load_png(&args.input)
        .with_context(|| format!("loading {}", args.input.display()))?;
    let grid = TileGrid { tile_width: args.tile_width, tile_height: args.tile_height };
    let tiles = split_tiles(&image, &grid)?;
    let tiles_dir = ctx.out.join("tiles");
    std::fs::create_dir_all(&tiles_dir)?;

    let excluded: std::collections::HashSet<String> = match &args.exclude {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading exclusion list {}", path.display()))?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect(),
        None => Default::default(),
    };

    let stem = stem_of(&args.input);
    let artifact_cfg = ArtifactConfig::default();
    let mut records = Vec::with_capacity(tiles.len());
    let mut kept = 0usize;
    for (offset, tile_img) in &tiles {
        let id = format!("{stem}_x{:05}_y{:05}", offset.x, offset.y);
        let score = artifact_score(tile_img, &artifact_cfg);
        let artifact = artifact_cfg.is_artifact(&score);
        let drop = (args.filter_artifacts && artifact) || excluded.contains(&id);
        if !drop {
            tile_img.save_png(tiles_dir.join(format!("{id}.png")))?;
            kept += 1;
        }
        records.push(TileRecord {
            id,
            x: offset.x,
            y: offset.y,
            width: offset.width,
            height: offset.height,
            blur_score: score.blur_score,
            tissue_fraction: score.tissue_fraction,
            artifact,
        });
    }
    std::fs::write(ctx.out.join("offsets.json"), serde_json::to_vec_pretty(&records)?)?;
    println!("tile: {} tiles, {} written ({} filtered)", records.len(), kept, records.len() - kept);
    Ok(0)
}

#[derive(Args)]
pub struct DetectArgs {
    /// PNG file or directory of PNG tiles.
    #[arg(long)]
    input: PathBuf,

    /// Also write detection overlays.
    #[arg(long)]
    overlay: bool,

    /// Drop detections below this score before writing.
    #[arg(long, default_value_t = 0.0)]
    score_threshold: f64,
}

pub fn detect(ctx: &Context, args: DetectArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let params = ctx.dog_params();
    let matrix = ctx.stain_matrix();
    let det_dir = ctx.out.join("detections");
    std::fs::create_dir_all(&det_dir)?;
    let overlay_dir = ctx.out.join("overlays");
    if args.overlay {
        std::fs::create_dir_all(&overlay_dir)?;
    }

    let mut total = 0usize;
    for path in png_inputs(&args.input)? {
        let image = Image::load_png(&path)?;
        let dets: Vec<Detection> = dog_detect(&image, &matrix, &params)?
            .into_iter()
            .filter(|d| d.score >= args.score_threshold)
            .collect();
        total += dets.len();
        let stem = stem_of(&path);
        let records: Vec<DetectionRecord> = dets.iter().map(|&d| d.into()).collect();
        std::fs::write(det_dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&records)?)?;
        if args.overlay {
            use phenotile_core::classify::CellType;
            let boxes: Vec<(BBox, CellType)> =
                dets.iter().map(|d| (d.bbox, CellType::Cyt)).collect();
            render_overlay(&image, &boxes).save_png(overlay_dir.join(format!("{stem}.png")))?;
        }
    }
    println!("detect: {total} detections written to {}", det_dir.display());
    Ok(0)
}

#[derive(Args)]
pub struct EvalMapArgs {
    /// Directory of per-image detection JSON files.
    #[arg(long)]
    pred: PathBuf,

    /// Directory of matching ground-truth JSON files (same stems).
    #[arg(long)]
    gt: PathBuf,

    /// Ascending posterior thresholds.
    #[arg(long, default_value = "0.05,0.25,0.35,0.50")]
    thresholds: String,

    /// IoU used for greedy NMS inside post-processing.
    #[arg(long, default_value_t = 0.3)]
    nms_iou: f64,

    /// Average per-image APs instead of pooling one PR curve.
    #[arg(long)]
    per_image_average: bool,
}

fn load_pairs(args: &EvalMapArgs) -> Result<Vec<(Vec<Detection>, Vec<BBox>)>> {
    let mut per_image = Vec::new();
    let mut gt_files: Vec<PathBuf> = std::fs::read_dir(&args.gt)
        .with_context(|| format!("reading {}", args.gt.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    gt_files.sort();
    anyhow::ensure!(!gt_files.is_empty(), "no ground-truth JSON under {}", args.gt.display());
    for gt_path in gt_files {
        let stem = stem_of(&gt_path);
        let gt_records: Vec<BoxRecord> = serde_json::from_slice(&std::fs::read(&gt_path)?)?;
        let gts: Vec<BBox> = gt_records
            .into_iter()
            .map(BBox::try_from)
            .collect::<phenotile_core::Result<_>>()?;
        let pred_path = args.pred.join(format!("{stem}.json"));
        let preds: Vec<Detection> = if pred_path.exists() {
            let records: Vec<DetectionRecord> = serde_json::from_slice(&std::fs::read(&pred_path)?)?;
            records
                .into_iter()
                .map(Detection::try_from)
                .collect::<phenotile_core::Result<_>>()?
        } else {
            Vec::new()
        };
        per_image.push((preds, gts));
    }
    Ok(per_image)
}

pub fn eval_map(ctx: &Context, args: EvalMapArgs) -> Result<i32> {
    ctx.ensure_out()?;
    let thresholds: Vec<f64> = args
        .thresholds
        .split(',')
        .map(|t| t.trim().parse::<f64>().context("parsing threshold"))
        .collect::<Result<_>>()?;
    let per_image = load_pairs(&args)?;
    let cfg = ctx.file.match_cfg.unwrap_or_default();

    let sweep = if args.per_image_average {
        let mut rows = Vec::new();
        for &t in &thresholds {
            let aps: Vec<f64> = per_image
                .iter()
                .map(|(preds, gts)| {
                    let kept = phenotile_core::detect::postprocess(preds, t, &cfg, args.nms_iou);
                    average_precision(&kept, gts, &cfg)
                })
                .collect();
            rows.push((t, aps.iter().sum::<f64>() / aps.len() as f64));
        }
        rows
    } else {
        map_over_thresholds(&per_image, &thresholds, &cfg, args.nms_iou)?
    };

    println!("{:>10} {:>8}", "threshold", "mAP");
    let mut csv = String::from("threshold,map\n");
    for (t, m) in &sweep {
        println!("{t:>10.2} {m:>8.4}");
        csv.push_str(&format!("{t},{m}\n"));
    }
    std::fs::write(ctx.out.join("map.csv"), csv)?;

    let points = pr_curve(&per_image, &cfg);
    write_pr_csv(&points, ctx.out.join("pr.csv"))?;
    let pooled = pooled_average_precision(&per_image, &cfg);
    println!("pooled AP (no threshold): {pooled:.4}");

    let summary: BTreeMap<String, f64> =
        sweep.iter().map(|(t, m)| (format!("{t}"), *m)).collect();
    std::fs::write(ctx.out.join("map.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(0)
}
