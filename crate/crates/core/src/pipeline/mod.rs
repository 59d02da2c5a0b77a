//! End-to-end orchestration: detect nuclei on a tile, cut a patch around
//! every detection, classify it (optionally with a max-posterior ensemble),
//! and emit reports, overlays, and a reproducible run manifest.
//!
//! Runs are deterministic by construction: all randomness is seeded, tiles
//! are processed independently, and results are merged in tile order, so a
//! run is byte-identical for any parallelism degree. Manifests carry no
//! timing fields.

mod overlay;
mod via;

pub use overlay::{draw_box_outline, render_overlay};
pub use via::{export_via_annotations, import_via_annotations, ImageAnnotations, ViaImport};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    ensemble_predict, CellType, ClassifierBackend, PosteriorVector, TinyCnn,
};
use crate::detect::{dog_detect, postprocess, Detection, DetectionRecord, DogParams, MatchConfig};
use crate::error::{CoreError, Result};
use crate::imgcore::{extract_patch, patch_padding_fraction, Image, TileOffset};
use crate::stain::StainMatrix;

/// One tile to process, with a stable id used for file names and seeding.
#[derive(Clone, Debug)]
pub struct TileInput {
    pub id: String,
    pub image: Image,
    pub offset: Option<TileOffset>,
}

/// Where detections come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorChoice {
    /// Difference-of-Gaussians detector on the haematoxylin plane.
    Dog(DogParams),
    /// Replay detections from `<dir>/<tile_id>.json` files
    /// (`[{"x","y","w","h","score"}]`); only the cap is applied.
    Replay { dir: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stain_matrix: StainMatrix,
    pub detector: DetectorChoice,
    /// Model files for the classifier members; more than one enables the
    /// max-posterior ensemble (unless `ensemble` is false).
    pub classifier_paths: Vec<PathBuf>,
    pub ensemble: bool,
    pub match_cfg: MatchConfig,
    pub patch_side: u32,
    /// Detections whose patch needs more than this padding fraction are
    /// flagged `edge` in the report.
    pub edge_padding_threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stain_matrix: StainMatrix::he_dab(),
            detector: DetectorChoice::Dog(DogParams::default()),
            classifier_paths: Vec::new(),
            ensemble: true,
            match_cfg: MatchConfig::default(),
            patch_side: 200,
            edge_padding_threshold: 0.5,
            seed: 0,
        }
    }
}

/// One classified detection in a tile report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedDetection {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub label: CellType,
    pub confidence: f64,
    pub edge: bool,
}

/// Per-tile outcome: detections with labels plus population statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileReport {
    pub tile_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<TileOffset>,
    pub total: u64,
    pub counts: BTreeMap<String, u64>,
    pub percentages: BTreeMap<String, f64>,
    pub detections: Vec<ClassifiedDetection>,
}

fn breakdown(labels: impl Iterator<Item = CellType>) -> (BTreeMap<String, u64>, BTreeMap<String, f64>, u64) {
    let mut counts: BTreeMap<String, u64> =
        CellType::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
    let mut total = 0u64;
    for label in labels {
        *counts.get_mut(label.name()).expect("fixed keys") += 1;
        total += 1;
    }
    let percentages = counts
        .iter()
        .map(|(k, &v)| {
            let pct = if total == 0 { 0.0 } else { 100.0 * v as f64 / total as f64 };
            (k.clone(), pct)
        })
        .collect();
    (counts, percentages, total)
}

/// Status of one tile in a batch run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileStatus {
    pub tile_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Batch-run record: config snapshot, per-tile outcomes, aggregate stats.
/// Re-running with the same config and seed reproduces it byte-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub failed_tiles: usize,
    pub total_detections: u64,
    pub aggregate_counts: BTreeMap<String, u64>,
    pub aggregate_percentages: BTreeMap<String, f64>,
    pub tiles: Vec<TileStatus>,
}

impl PartialEq for PipelineConfig {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_string(self).ok() == serde_json::to_string(other).ok()
    }
}

/// A loaded, immutable pipeline ready to process tiles concurrently.
pub struct Pipeline {
    config: PipelineConfig,
    members: Vec<Box<dyn ClassifierBackend>>,
}

impl Pipeline {
    /// Load classifier members from the config's model paths: `.json` files
    /// load as replay backends, anything else as model binaries. Fails up
    /// front, before any tile is touched.
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        if config.classifier_paths.is_empty() {
            return Err(CoreError::Config("config needs at least one classifier model".into()));
        }
        let mut members: Vec<Box<dyn ClassifierBackend>> = Vec::new();
        for path in &config.classifier_paths {
            let is_replay = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
            let member: Box<dyn ClassifierBackend> = if is_replay {
                Box::new(crate::classify::ReplayBackend::load(path).map_err(|e| {
                    CoreError::Config(format!("cannot load replay {}: {e}", path.display()))
                })?)
            } else {
                Box::new(TinyCnn::load(path).map_err(|e| {
                    CoreError::Config(format!("cannot load classifier {}: {e}", path.display()))
                })?)
            };
            members.push(member);
        }
        Self::with_backends(config, members)
    }

    /// Use pre-built backends (trained models, replay files, test stubs).
    pub fn with_backends(
        config: PipelineConfig,
        members: Vec<Box<dyn ClassifierBackend>>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(CoreError::Config("pipeline needs at least one classifier member".into()));
        }
        if let DetectorChoice::Dog(params) = &config.detector {
            params.validate()?;
        }
        Ok(Self { config, members })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn detect(&self, tile: &TileInput) -> Result<Vec<Detection>> {
        match &self.config.detector {
            DetectorChoice::Dog(params) => {
                let mut params = *params;
                params.match_cfg = self.config.match_cfg;
                dog_detect(&tile.image, &self.config.stain_matrix, &params)
            }
            DetectorChoice::Replay { dir } => {
                let path = dir.join(format!("{}.json", tile.id));
                let records: Vec<DetectionRecord> =
                    serde_json::from_slice(&std::fs::read(&path).map_err(|e| {
                        CoreError::Config(format!("replay file {}: {e}", path.display()))
                    })?)?;
                let dets = records
                    .into_iter()
                    .map(Detection::try_from)
                    .collect::<Result<Vec<_>>>()?;
                // Replayed detections are trusted as-is; only sort and cap.
                Ok(postprocess(&dets, 0.0, &self.config.match_cfg, 1.0))
            }
        }
    }

    /// Process one tile: detect, patch, classify, aggregate, draw overlay.
    pub fn run_tile(&self, tile: &TileInput) -> Result<(TileReport, Image)> {
        let detections = self.detect(tile)?;
        let side = self.config.patch_side;
        let (w, h) = (tile.image.width(), tile.image.height());

        let mut patches = Vec::with_capacity(detections.len());
        let mut edges = Vec::with_capacity(detections.len());
        for det in &detections {
            let (cx, cy) = det.bbox.center();
            let center = (
                (cx.round().max(0.0) as u32).min(w.saturating_sub(1)),
                (cy.round().max(0.0) as u32).min(h.saturating_sub(1)),
            );
            edges.push(patch_padding_fraction(&tile.image, center, side) > self.config.edge_padding_threshold);
            patches.push(extract_patch(&tile.image, center, side)?);
        }
        let patch_refs: Vec<&Image> = patches.iter().map(|p| &p.image).collect();

        let mut member_posteriors: Vec<Vec<PosteriorVector>> =
            Vec::with_capacity(self.members.len());
        for member in &self.members {
            member_posteriors.push(member.predict_posteriors(&patch_refs)?);
        }

        let mut classified = Vec::with_capacity(detections.len());
        for (i, det) in detections.iter().enumerate() {
            let (label, confidence) = if self.config.ensemble {
                let rows: Vec<PosteriorVector> =
                    member_posteriors.iter().map(|m| m[i]).collect();
                ensemble_predict(&rows)?
            } else {
                member_posteriors[0][i].argmax()
            };
            classified.push(ClassifiedDetection {
                x: det.bbox.x_min,
                y: det.bbox.y_min,
                w: det.bbox.width(),
                h: det.bbox.height(),
                score: det.score,
                label,
                confidence,
                edge: edges[i],
            });
        }

        let (counts, percentages, total) = breakdown(classified.iter().map(|c| c.label));
        let overlay = render_overlay(
            &tile.image,
            &classified
                .iter()
                .zip(&detections)
                .map(|(c, d)| (d.bbox, c.label))
                .collect::<Vec<_>>(),
        );
        Ok((
            TileReport {
                tile_id: tile.id.clone(),
                offset: tile.offset,
                total,
                counts,
                percentages,
                detections: classified,
            },
            overlay,
        ))
    }

    /// Process tiles independently (parallel over the ambient rayon pool),
    /// writing `reports/<id>.json`, `overlays/<id>.png`, and `manifest.json`
    /// under `out_dir`. Per-tile failures are recorded in the manifest and do
    /// not stop the run.
    pub fn run_dataset(&self, tiles: &[TileInput], out_dir: impl AsRef<Path>) -> Result<RunManifest> {
        if tiles.is_empty() {
            return Err(CoreError::Config("no tiles to process".into()));
        }
        let out_dir = out_dir.as_ref();
        std::fs::create_dir_all(out_dir.join("reports"))?;
        std::fs::create_dir_all(out_dir.join("overlays"))?;

        let results: Vec<Result<(TileReport, Image)>> =
            tiles.par_iter().map(|tile| self.run_tile(tile)).collect();

        let mut statuses = Vec::with_capacity(tiles.len());
        let mut aggregate_labels: Vec<CellType> = Vec::new();
        let mut failed = 0usize;
        for (tile, result) in tiles.iter().zip(results) {
            match result {
                Ok((report, overlay)) => {
                    let report_rel = format!("reports/{}.json", tile.id);
                    let overlay_rel = format!("overlays/{}.png", tile.id);
                    std::fs::write(
                        out_dir.join(&report_rel),
                        serde_json::to_vec_pretty(&report)?,
                    )?;
                    overlay.save_png(out_dir.join(&overlay_rel))?;
                    for det in &report.detections {
                        aggregate_labels.push(det.label);
                    }
                    statuses.push(TileStatus {
                        tile_id: tile.id.clone(),
                        report: Some(report_rel),
                        overlay: Some(overlay_rel),
                        error: None,
                    });
                }
                Err(e) => {
                    failed += 1;
                    statuses.push(TileStatus {
                        tile_id: tile.id.clone(),
                        report: None,
                        overlay: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }

        let (aggregate_counts, aggregate_percentages, total_detections) =
            breakdown(aggregate_labels.into_iter());
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config: self.config.clone(),
            failed_tiles: failed,
            total_detections,
            aggregate_counts,
            aggregate_percentages,
            tiles: statuses,
        };
        std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}
