//! Frozen-feature extraction with a content-addressed disk cache.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::IoContext;
use crate::model::{checkpoint, Network};
use crate::train::data::{collate, MultimodalSource};
use crate::trifeature::{BimodalDataset, Split};
use crate::{Error, Result};

const FEATURES_KEY: &str = "features";

/// Clean-input features of every sample of `source`, in order.
pub fn extract_features(net: &Network, source: &dyn MultimodalSource, batch_size: usize) -> Result<Array2<f32>> {
    let expected: Vec<_> = net.architecture().modalities().iter().map(|m| m.input).collect();
    if source.inputs() != expected {
        return Err(Error::Checkpoint(format!(
            "model expects inputs {expected:?}, data provides {:?}",
            source.inputs()
        )));
    }
    let dim = net.feature_dim();
    let mut data = Vec::with_capacity(source.len() * dim);
    let batch_size = batch_size.max(1);
    let inputs = source.inputs();
    for start in (0..source.len()).step_by(batch_size) {
        let samples = (start..(start + batch_size).min(source.len()))
            .map(|i| source.sample(i))
            .collect::<Result<Vec<_>>>()?;
        let f = net.features(&collate(&samples, &inputs)?)?.detach();
        data.extend(f.flatten_all()?.to_vec1::<f32>()?);
    }
    Array2::from_shape_vec((source.len(), dim), data).map_err(|e| Error::validation(e.to_string()))
}

/// Digest identifying the pairs of one split of a dataset.
pub fn dataset_fingerprint(dataset: &BimodalDataset, split: Split) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&dataset.spec)?);
    h.update(dataset.seed.to_le_bytes());
    h.update(split.as_str().as_bytes());
    for p in dataset.pairs_in(split) {
        h.update(p.first.image_id.to_le_bytes());
        h.update(p.second.image_id.to_le_bytes());
    }
    for img in &dataset.images {
        h.update(&img.pixels);
    }
    Ok(hex::encode(h.finalize()))
}

/// Append-only cache of feature tables keyed by (weights, data) digests.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(weights_sha256: &str, data_fingerprint: &str) -> String {
        let mut h = Sha256::new();
        h.update(weights_sha256.as_bytes());
        h.update(b"/");
        h.update(data_fingerprint.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.safetensors"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Array2<f32>>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let mut tensors = candle_core::safetensors::load(&path, &Device::Cpu)?;
        let t = tensors
            .remove(FEATURES_KEY)
            .ok_or_else(|| Error::Checkpoint(format!("{}: no feature tensor", path.display())))?;
        let (rows, dim) = t.dims2()?;
        let data = t.flatten_all()?.to_vec1::<f32>()?;
        Ok(Some(Array2::from_shape_vec((rows, dim), data).map_err(|e| Error::validation(e.to_string()))?))
    }

    pub fn put(&self, key: &str, features: &Array2<f32>) -> Result<()> {
        fs::create_dir_all(&self.dir).at(&self.dir)?;
        let path = self.path(key);
        let tmp = self.dir.join(format!("{key}.partial"));
        let t = Tensor::from_vec(features.iter().copied().collect::<Vec<_>>(), features.dim(), &Device::Cpu)?;
        candle_core::safetensors::save(&HashMap::from([(FEATURES_KEY.to_string(), t)]), &tmp)?;
        fs::rename(&tmp, &path).at(&path)?;
        Ok(())
    }

    /// Returns cached features when present, extracting and storing them
    /// otherwise. The flag reports a cache hit.
    pub fn get_or_extract(
        &self,
        net: &Network,
        weights_sha256: &str,
        data_fingerprint: &str,
        source: &dyn MultimodalSource,
        batch_size: usize,
    ) -> Result<(Array2<f32>, bool)> {
        let key = Self::key(weights_sha256, data_fingerprint);
        if let Some(f) = self.get(&key)? {
            if f.nrows() == source.len() && f.ncols() == net.feature_dim() {
                return Ok((f, true));
            }
        }
        let f = extract_features(net, source, batch_size)?;
        self.put(&key, &f)?;
        Ok((f, false))
    }
}

/// A loaded checkpoint together with its weight digest.
#[derive(Debug)]
pub struct FrozenModel {
    pub network: Network,
    pub weights_sha256: String,
    pub label: String,
}

impl FrozenModel {
    pub fn load(dir: &Path) -> Result<Self> {
        let (network, meta) = checkpoint::load(dir)?;
        Ok(Self {
            network,
            weights_sha256: meta.weights_sha256,
            label: dir.display().to_string(),
        })
    }

    pub fn from_network(network: Network, label: impl Into<String>) -> Result<Self> {
        Ok(Self {
            weights_sha256: checkpoint::weights_digest(&network)?,
            network,
            label: label.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelConfig};
    use crate::train::VectorSource;

    fn toy() -> (Network, VectorSource) {
        let net = Network::build(&Architecture::Comm(ModelConfig::toy_vectors(2, 3, 8)), 1).unwrap();
        let rows = (0..10)
            .map(|b| (0..2).map(|i| (0..3).map(|k| (b * 7 + i * 3 + k) as f32 / 10.0).collect()).collect())
            .collect();
        (net, VectorSource::new(vec![3, 3], rows).unwrap())
    }

    #[test]
    fn one_row_per_sample_and_batching_is_irrelevant() {
        let (net, src) = toy();
        let a = extract_features(&net, &src, 3).unwrap();
        let b = extract_features(&net, &src, 10).unwrap();
        assert_eq!(a.dim(), (10, 8));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn cache_hit_is_bit_identical() {
        let (net, src) = toy();
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let digest = checkpoint::weights_digest(&net).unwrap();
        let (first, hit1) = cache.get_or_extract(&net, &digest, "toy", &src, 4).unwrap();
        let (second, hit2) = cache.get_or_extract(&net, &digest, "toy", &src, 4).unwrap();
        assert!(!hit1 && hit2);
        let bits = |a: &Array2<f32>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&first), bits(&second));
    }

    #[test]
    fn features_are_not_head_outputs() {
        let (net, src) = toy();
        let f = extract_features(&net, &src, 10).unwrap();
        let Network::Comm(m) = &net else { unreachable!() };
        assert_eq!(f.ncols(), m.embed_dim());
        assert_ne!(f.ncols(), m.config.head.output);
    }

    #[test]
    fn input_mismatch_is_a_checkpoint_error() {
        let (net, _) = toy();
        let src = VectorSource::new(vec![4, 4], vec![vec![vec![0.0; 4]; 2]]).unwrap();
        assert!(matches!(extract_features(&net, &src, 1), Err(Error::Checkpoint(_))));
    }
}
