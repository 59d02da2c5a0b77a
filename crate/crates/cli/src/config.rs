//! Global CLI context and the JSON config file, plus the on-disk dataset
//! description shared by synth, train, classify, and embed.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};

use phenotile_core::classify::{CellType, LabeledPatch, TrainConfig};
use phenotile_core::detect::{BoxRecord, DogParams, MatchConfig};
use phenotile_core::imgcore::{extract_patch, Image};
use phenotile_core::stain::StainMatrix;
use phenotile_core::synthgen::{Split, SynthSpec};

/// Optional sections of the `--config` JSON file. Absent sections fall back
/// to built-in defaults.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub synth: Option<SynthSpec>,
    pub dog: Option<DogParams>,
    pub train: Option<TrainConfig>,
    pub match_cfg: Option<MatchConfig>,
    /// Row-major 9-number stain matrix.
    pub stain_matrix: Option<StainMatrix>,
    pub patch_side: Option<u32>,
}

/// Loaded global options shared by every subcommand.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub file: FileConfig,
}

impl Context {
    pub fn load(seed: u64, config: Option<&Path>, out: PathBuf) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        Ok(Self { seed, out, file })
    }

    pub fn synth_spec(&self) -> SynthSpec {
        self.file.synth.clone().unwrap_or_default()
    }

    pub fn dog_params(&self) -> DogParams {
        let mut params = self.file.dog.unwrap_or_default();
        if let Some(m) = self.file.match_cfg {
            params.match_cfg = m;
        }
        params
    }

    pub fn stain_matrix(&self) -> StainMatrix {
        self.file.stain_matrix.unwrap_or_default()
    }

    pub fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output dir {}", self.out.display()))
    }
}

/// One nucleus in the dataset description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NucleusEntry {
    pub x: u32,
    pub y: u32,
    pub label: CellType,
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
}

/// One tile in the dataset description; paths are relative to dataset.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TileEntry {
    pub id: String,
    pub image: String,
    pub gt: String,
    pub split: Split,
    pub nuclei: Vec<NucleusEntry>,
}

/// The dataset description written by `synth` and consumed by `train`,
/// `classify`, and `embed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetFile {
    pub patch_side: u32,
    pub tiles: Vec<TileEntry>,
}

impl DatasetFile {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading dataset {}", path.display()))?;
        let ds: DatasetFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing dataset {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((ds, base))
    }

    /// Extract labelled patches for one split, with stable per-patch ids.
    pub fn patches(&self, base: &Path, split: Split) -> Result<Vec<(String, LabeledPatch)>> {
        let mut out = Vec::new();
        for tile in self.tiles.iter().filter(|t| t.split == split) {
            let image = Image::load_png(base.join(&tile.image))
                .with_context(|| format!("loading tile image {}", tile.image))?;
            for (i, n) in tile.nuclei.iter().enumerate() {
                let patch = extract_patch(&image, (n.x, n.y), self.patch_side)
                    .with_context(|| format!("patch {i} of tile {}", tile.id))?;
                let id = format!("{}/n{i:03}", tile.id);
                out.push((
                    id.clone(),
                    LabeledPatch { patch, label: n.label, source: id },
                ));
            }
        }
        Ok(out)
    }
}

/// Parse a `Split` name from the CLI.
pub fn parse_split(s: &str) -> Result<Split> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "val" | "validation" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => anyhow::bail!("unknown split '{other}' (expected train, val, or test)"),
    }
}

/// Sorted PNG files of a directory (or the single file itself).
pub fn png_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    anyhow::ensure!(!files.is_empty(), "no PNG files under {}", path.display());
    Ok(files)
}

pub fn stem_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned())
}
