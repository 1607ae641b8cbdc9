//! Checkpoints: a JSON manifest plus a little-endian `f32` blob.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use resonance_core::model::{ModelConfig, ParameterSet};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "resonance-lab-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset in values (not bytes) into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub n_values: usize,
    /// File name of the blob, relative to the manifest.
    pub blob: String,
    pub metrics: Option<MetricsSummary>,
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(blob)
}

/// Writes `<stem>.json` and `<stem>.bin` next to each other.
pub fn save(
    manifest_path: &Path,
    model: &ModelConfig,
    params: &ParameterSet<f32>,
    metrics: Option<MetricsSummary>,
) -> Result<CheckpointManifest> {
    let blob = manifest_path
        .with_extension("bin")
        .file_name()
        .context("checkpoint path has no file name")?
        .to_string_lossy()
        .into_owned();
    let tensors = params
        .layout()
        .tensors()
        .iter()
        .map(|t| TensorEntry { name: t.name.clone(), shape: [t.rows, t.cols], offset: t.offset })
        .collect();
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        model: model.clone(),
        tensors,
        n_values: params.values().len(),
        blob,
        metrics,
    };
    let bytes: Vec<u8> = params.values().iter().flat_map(|x| x.to_le_bytes()).collect();
    if let Some(dir) = manifest_path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(blob_path(manifest_path, &manifest.blob), bytes)?;
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load(manifest_path: &Path) -> Result<(CheckpointManifest, ParameterSet<f32>)> {
    let text = fs::read_to_string(manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        bail!("unsupported checkpoint format {:?}", manifest.format);
    }
    let bytes = fs::read(blob_path(manifest_path, &manifest.blob))?;
    if bytes.len() != manifest.n_values * 4 {
        bail!("blob holds {} bytes, expected {}", bytes.len(), manifest.n_values * 4);
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let params = ParameterSet::from_values(&manifest.model, values)?;
    for (entry, t) in manifest.tensors.iter().zip(params.layout().tensors()) {
        if entry.name != t.name || entry.shape != [t.rows, t.cols] || entry.offset != t.offset {
            bail!("tensor {} does not match the model layout", entry.name);
        }
    }
    if manifest.tensors.len() != params.layout().tensors().len() {
        bail!("checkpoint lists {} tensors", manifest.tensors.len());
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use resonance_core::ScalingSpec;

    #[test]
    fn round_trips_bitwise() {
        let config = ModelConfig::reduced(17, ScalingSpec::yarn(4.0, 64));
        let params = ParameterSet::<f32>::init(&config, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.json");
        save(&path, &config, &params, None).unwrap();
        assert!(dir.path().join("best.bin").exists());
        let (manifest, back) = load(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(manifest.model, config);
        assert_eq!(manifest.tensors[0].name, "tok_emb");
    }

    #[test]
    fn rejects_truncated_blob() {
        let config = ModelConfig::reduced(17, ScalingSpec::rope(64));
        let params = ParameterSet::<f32>::init(&config, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save(&path, &config, &params, None).unwrap();
        let blob = dir.path().join("c.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load(&path).is_err());
    }
}
