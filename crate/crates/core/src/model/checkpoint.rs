//! On-disk checkpoints: `weights.safetensors` plus `architecture.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, Network};
use crate::error::IoContext;
use crate::{Error, Result};

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const ARCHITECTURE_FILE: &str = "architecture.json";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureFile {
    pub format_version: u32,
    pub architecture: Architecture,
    pub parameter_count: usize,
    /// Digest of the weights in parameter-name order.
    pub weights_sha256: String,
}

/// SHA-256 over every parameter's name, shape and little-endian values.
pub fn weights_digest(net: &Network) -> Result<String> {
    let mut h = Sha256::new();
    for (name, var) in net.params().vars() {
        h.update(name.as_bytes());
        for d in var.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Writes weights and architecture into an existing directory.
pub fn write_into(net: &Network, dir: &Path) -> Result<ArchitectureFile> {
    fs::create_dir_all(dir).at(dir)?;
    candle_core::safetensors::save(&net.params().to_map(), dir.join(WEIGHTS_FILE))?;
    let meta = ArchitectureFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        architecture: net.architecture(),
        parameter_count: net.params().num_parameters(),
        weights_sha256: weights_digest(net)?,
    };
    let path = dir.join(ARCHITECTURE_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).at(&path)?;
    Ok(meta)
}

/// Fills a staging directory next to `dir` with `fill`, then moves it into
/// place, so `dir` is either absent, the old version, or complete.
pub fn atomic_dir(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).at(parent)?;
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let staging = parent.join(name);
    if staging.exists() {
        fs::remove_dir_all(&staging).at(&staging)?;
    }
    fs::create_dir_all(&staging).at(&staging)?;
    fill(&staging)?;
    if dir.exists() {
        fs::remove_dir_all(dir).at(dir)?;
    }
    fs::rename(&staging, dir).at(dir)?;
    Ok(())
}

/// Writes the checkpoint into `dir` atomically.
pub fn save(net: &Network, dir: &Path) -> Result<ArchitectureFile> {
    let mut meta = None;
    atomic_dir(dir, |staging| {
        meta = Some(write_into(net, staging)?);
        Ok(())
    })?;
    Ok(meta.expect("filled by the closure"))
}

pub fn read_architecture(dir: &Path) -> Result<ArchitectureFile> {
    let path = dir.join(ARCHITECTURE_FILE);
    let meta: ArchitectureFile = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {}",
            path.display(),
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Rebuilds the network described in `dir` and loads its weights.
pub fn load(dir: &Path) -> Result<(Network, ArchitectureFile)> {
    let meta = read_architecture(dir)?;
    let net = Network::build(&meta.architecture, 0)?;
    load_weights_into(&net, dir)?;
    if weights_digest(&net)? != meta.weights_sha256 {
        return Err(Error::Checkpoint(format!("{}: weight digest mismatch", dir.display())));
    }
    Ok((net, meta))
}

/// Loads weights from `dir` into an existing network of the same
/// architecture.
pub fn load_weights_into(net: &Network, dir: &Path) -> Result<()> {
    let meta = read_architecture(dir)?;
    if meta.architecture != net.architecture() {
        return Err(Error::Checkpoint(format!(
            "{}: architecture does not match the model",
            dir.display()
        )));
    }
    let path = dir.join(WEIGHTS_FILE);
    if !path.exists() {
        return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let tensors = candle_core::safetensors::load(&path, &candle_core::Device::Cpu)?;
    net.params().load_from(&tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DualEncoderConfig, ModelConfig};

    #[test]
    fn round_trip_preserves_weights_and_architecture() {
        let tmp = tempfile::tempdir().unwrap();
        for arch in [
            Architecture::Comm(ModelConfig::toy_vectors(2, 5, 16)),
            Architecture::DualEncoder(DualEncoderConfig::toy_vectors(2, 5, 16, true)),
        ] {
            let net = Network::build(&arch, 11).unwrap();
            let dir = tmp.path().join("ckpt");
            let meta = save(&net, &dir).unwrap();
            let (back, meta2) = load(&dir).unwrap();
            assert_eq!(meta, meta2);
            assert_eq!(back.params().flat_values().unwrap(), net.params().flat_values().unwrap());
            assert_eq!(back.architecture(), arch);
        }
    }

    #[test]
    fn architecture_mismatch_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let a = Network::build(&Architecture::Comm(ModelConfig::toy_vectors(2, 5, 16)), 0).unwrap();
        let b = Network::build(&Architecture::Comm(ModelConfig::toy_vectors(3, 5, 16)), 0).unwrap();
        save(&a, tmp.path().join("a").as_path()).unwrap();
        assert!(matches!(load_weights_into(&b, &tmp.path().join("a")), Err(Error::Checkpoint(_))));
    }
}
