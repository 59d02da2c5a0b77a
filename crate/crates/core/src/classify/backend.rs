//! Classifier backend abstraction.
//!
//! Anything that can emit posteriors and embeddings for patch images can
//! drive the pipeline: a trained [`TinyCnn`], or a [`ReplayBackend`] that
//! replays precomputed outputs keyed by patch content, which lets the
//! pipeline and embedding stages be exercised without training.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PosteriorVector, TinyCnn};
use crate::error::{CoreError, Result};
use crate::imgcore::Image;

/// Posterior + embedding source for patch images.
pub trait ClassifierBackend: Send + Sync {
    fn predict_posteriors(&self, batch: &[&Image]) -> Result<Vec<PosteriorVector>>;
    fn embed(&self, batch: &[&Image]) -> Result<Vec<Vec<f64>>>;
    fn embedding_dim(&self) -> usize;
}

impl ClassifierBackend for TinyCnn {
    fn predict_posteriors(&self, batch: &[&Image]) -> Result<Vec<PosteriorVector>> {
        self.predict_batch(batch)
    }

    fn embed(&self, batch: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.embed_batch(batch)
    }

    fn embedding_dim(&self) -> usize {
        self.hidden_units()
    }
}

/// Content key for a patch image: FNV-1a over dimensions and pixel bytes.
/// Stable across runs and independent of evaluation order.
pub fn patch_key(image: &Image) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in image.width().to_le_bytes() {
        eat(b);
    }
    for b in image.height().to_le_bytes() {
        eat(b);
    }
    for &b in image.data() {
        eat(b);
    }
    hash
}

#[derive(Serialize, Deserialize)]
struct ReplayEntry {
    key: String,
    posterior: PosteriorVector,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReplayFile {
    embedding_dim: usize,
    entries: Vec<ReplayEntry>,
}

/// File-backed backend replaying precomputed posteriors and embeddings,
/// keyed by [`patch_key`] of the patch content.
pub struct ReplayBackend {
    map: HashMap<u64, (PosteriorVector, Vec<f64>)>,
    embedding_dim: usize,
}

impl ReplayBackend {
    pub fn new(embedding_dim: usize) -> Self {
        Self { map: HashMap::new(), embedding_dim }
    }

    pub fn insert(&mut self, image: &Image, posterior: PosteriorVector, embedding: Vec<f64>) -> Result<()> {
        if embedding.len() != self.embedding_dim {
            return Err(CoreError::Model(format!(
                "embedding length {} does not match declared dim {}",
                embedding.len(),
                self.embedding_dim
            )));
        }
        self.map.insert(patch_key(image), (posterior, embedding));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Record a model's outputs for the given patches.
    pub fn capture(backend: &dyn ClassifierBackend, patches: &[&Image]) -> Result<Self> {
        let posteriors = backend.predict_posteriors(patches)?;
        let embeddings = backend.embed(patches)?;
        let mut replay = Self::new(backend.embedding_dim());
        for ((img, post), emb) in patches.iter().zip(posteriors).zip(embeddings) {
            replay.insert(img, post, emb)?;
        }
        Ok(replay)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut entries: Vec<ReplayEntry> = self
            .map
            .iter()
            .map(|(k, (p, e))| ReplayEntry {
                key: format!("{k:016x}"),
                posterior: *p,
                embedding: e.clone(),
            })
            .collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        let file = ReplayFile { embedding_dim: self.embedding_dim, entries };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ReplayFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let mut map = HashMap::with_capacity(file.entries.len());
        for entry in file.entries {
            let key = u64::from_str_radix(&entry.key, 16)
                .map_err(|e| CoreError::Model(format!("bad replay key '{}': {e}", entry.key)))?;
            if entry.embedding.len() != file.embedding_dim {
                return Err(CoreError::Model("replay embedding length mismatch".into()));
            }
            map.insert(key, (entry.posterior, entry.embedding));
        }
        Ok(Self { map, embedding_dim: file.embedding_dim })
    }

    fn lookup(&self, image: &Image) -> Result<&(PosteriorVector, Vec<f64>)> {
        self.map.get(&patch_key(image)).ok_or_else(|| {
            CoreError::Model(format!(
                "replay backend has no entry for patch {:016x}",
                patch_key(image)
            ))
        })
    }
}

impl ClassifierBackend for ReplayBackend {
    fn predict_posteriors(&self, batch: &[&Image]) -> Result<Vec<PosteriorVector>> {
        batch.iter().map(|img| Ok(self.lookup(img)?.0)).collect()
    }

    fn embed(&self, batch: &[&Image]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|img| Ok(self.lookup(img)?.1.clone())).collect()
    }

    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::CnnConfig;

    #[test]
    fn replay_reproduces_model_outputs() {
        let cfg = CnnConfig { input_side: 12, conv1_channels: 4, conv2_channels: 6, hidden_units: 16, dropout_rate: 0.5 };
        let model = TinyCnn::new(cfg, 3).unwrap();
        let imgs: Vec<Image> = (0..4)
            .map(|i| Image::filled(12, 12, [i * 40, 255 - i * 30, 100 + i * 10]))
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let replay = ReplayBackend::capture(&model, &refs).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.json");
        replay.save(&path).unwrap();
        let loaded = ReplayBackend::load(&path).unwrap();

        assert_eq!(
            loaded.predict_posteriors(&refs).unwrap(),
            model.predict_batch(&refs).unwrap()
        );
        assert_eq!(loaded.embed(&refs).unwrap(), model.embed_batch(&refs).unwrap());
        assert_eq!(loaded.embedding_dim(), 16);
    }

    #[test]
    fn replay_rejects_unknown_patches() {
        let replay = ReplayBackend::new(8);
        let img = Image::filled(4, 4, [1, 2, 3]);
        assert!(replay.predict_posteriors(&[&img]).is_err());
    }

    #[test]
    fn patch_key_differs_for_different_content() {
        let a = Image::filled(4, 4, [1, 2, 3]);
        let mut b = a.clone();
        b.set(2, 2, [9, 9, 9]);
        assert_ne!(patch_key(&a), patch_key(&b));
        // Same bytes, different dims.
        let c = Image::filled(2, 8, [1, 2, 3]);
        assert_ne!(patch_key(&a), patch_key(&c));
    }
}
