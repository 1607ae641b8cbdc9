//! PosGen datasets on disk: one JSONL file per split plus a manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use resonance_core::posgen::{make_splits, oracle_verify, DatasetSplit, PosGenSpec, SequenceSample};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: PosGenSpec,
    pub master_seed: u64,
    pub counts: SplitCounts,
    pub tool_version: String,
}

fn split_file(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.jsonl"))
}

pub fn write_jsonl(path: &Path, samples: &[SequenceSample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SequenceSample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Writes the three splits and the manifest into `dir`.
pub fn write_dataset(dir: &Path, spec: &PosGenSpec, data: &DatasetSplit) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, samples) in SPLITS.iter().zip([&data.train, &data.val, &data.test]) {
        write_jsonl(&split_file(dir, name), samples)?;
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        master_seed: data.master_seed,
        counts: SplitCounts { train: data.train.len(), val: data.val.len(), test: data.test.len() },
        tool_version: crate::VERSION.to_string(),
    };
    // manifest last: its presence marks a complete dataset
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads a dataset and checks every sequence against the generation rule.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, DatasetSplit)> {
    let manifest = read_manifest(dir)?;
    let mut splits = Vec::with_capacity(3);
    for name in SPLITS {
        let samples = read_jsonl(&split_file(dir, name))?;
        if let Some(bad) = samples.iter().position(|s| !oracle_verify(s, &manifest.spec)) {
            bail!("{name} sample {bad} in {} violates the generation rule", dir.display());
        }
        splits.push(samples);
    }
    let test = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let counts = SplitCounts { train: train.len(), val: val.len(), test: test.len() };
    if counts != manifest.counts {
        bail!("{}: split sizes {:?} differ from manifest {:?}", dir.display(), counts, manifest.counts);
    }
    let master_seed = manifest.master_seed;
    Ok((manifest, DatasetSplit { train, val, test, master_seed }))
}

/// Reuses the dataset in `dir` when its manifest matches, else generates it.
pub fn ensure_dataset(
    dir: &Path,
    spec: &PosGenSpec,
    counts: &SplitCounts,
    master_seed: u64,
) -> Result<DatasetSplit> {
    if let Ok(m) = read_manifest(dir) {
        if m.spec == *spec && m.master_seed == master_seed && m.counts == *counts {
            return Ok(load_dataset(dir)?.1);
        }
        log::warn!("{}: manifest differs from the request, regenerating", dir.display());
    }
    let data = make_splits(spec, counts.train, counts.val, counts.test, master_seed)?;
    write_dataset(dir, spec, &data)?;
    Ok(data)
}
