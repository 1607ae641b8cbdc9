//! The experiment grid: datasets, one isolated run per cell, resumable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{Context, Result};
use resonance_core::model::{
    evaluate, train, EpochMetrics, EvalOptions, EvalReport, ModelConfig, ParameterSet,
    TrainConfig, TrainObserver, TrainSet, Transformer,
};
use resonance_core::posgen::{DatasetSplit, PosGenSpec, Subtask};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, MetricsSummary};
use crate::config::{spec_slug, ExperimentConfig};
use crate::dataset::{ensure_dataset, SplitCounts};
use crate::metrics::MetricsWriter;

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "best.json";
pub const EVAL_FILE: &str = "eval.json";
pub const THREADS_ENV: &str = "RESONANCE_LAB_THREADS";

/// Everything needed to re-execute one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub posgen: PosGenSpec,
    pub counts: SplitCounts,
    pub data_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub autoregressive_eval: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub test_ood_accuracy: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub run_id: String,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub snapshot: RunSnapshot,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub result: Option<RunResult>,
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn write(&self, run_dir: &Path) -> Result<()> {
        fs::write(run_dir.join(RUN_MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Complete, and every artifact it names is on disk.
    pub fn is_complete(&self, run_dir: &Path) -> bool {
        self.status == RunStatus::Complete
            && self.result.is_some()
            && self.artifacts.iter().all(|a| run_dir.join(a).exists())
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub subtask: Subtask,
    pub spec_index: usize,
    pub seed: u64,
}

pub fn run_dir(output_dir: &Path, slug: &str, subtask: Subtask, seed: u64) -> PathBuf {
    output_dir.join("runs").join(slug).join(subtask.name()).join(format!("seed-{seed}"))
}

pub fn data_dir(output_dir: &Path, subtask: Subtask, seed: u64) -> PathBuf {
    output_dir.join("data").join(subtask.name()).join(format!("seed-{seed}"))
}

impl ExperimentConfig {
    /// Cells in table order: setting, then subtask, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for spec_index in 0..self.scaling_specs.len() {
            for &subtask in &self.task.subtasks {
                for &seed in &self.seeds {
                    cells.push(Cell { subtask, spec_index, seed });
                }
            }
        }
        cells
    }

    pub fn snapshot(&self, cell: &Cell) -> RunSnapshot {
        RunSnapshot {
            posgen: self.task.spec(cell.subtask),
            counts: SplitCounts { train: self.task.n_train, val: self.task.n_val, test: self.task.n_test },
            data_seed: cell.seed,
            model: self.model_config(&self.scaling_specs[cell.spec_index]),
            train: TrainConfig { seed: cell.seed, ..self.train.clone() },
            autoregressive_eval: self.autoregressive_eval,
        }
    }

    pub fn run_id(&self, cell: &Cell) -> String {
        format!(
            "{}/{}/seed-{}",
            spec_slug(&self.scaling_specs[cell.spec_index]),
            cell.subtask.name(),
            cell.seed
        )
    }
}

/// Streams metrics to JSONL and logs progress.
struct RunObserver<'a> {
    run_id: &'a str,
    epochs: usize,
    started: Instant,
    writer: MetricsWriter,
    error: Option<anyhow::Error>,
}

impl TrainObserver for RunObserver<'_> {
    fn now(&mut self) -> Option<f64> {
        Some(self.started.elapsed().as_secs_f64())
    }

    fn on_epoch(&mut self, m: &EpochMetrics, _params: &ParameterSet<f32>) {
        log::info!(
            "{} epoch {}/{}: train {:.4} val {:.4} val-ood {:.2}% ({:.1}s)",
            self.run_id,
            m.epoch,
            self.epochs,
            m.train_loss,
            m.val_loss,
            100.0 * m.val_ood_accuracy,
            m.wall_clock_seconds.unwrap_or(0.0)
        );
        if let Err(e) = self.writer.append(m) {
            self.error.get_or_insert(e);
        }
    }
}

/// Trains, checkpoints the best epoch and scores it on the test split.
/// Writes metrics, checkpoint and evaluation into `run_dir`.
pub fn train_and_evaluate(
    run_id: &str,
    snapshot: &RunSnapshot,
    data: &DatasetSplit,
    run_dir: &Path,
) -> Result<(RunResult, EvalReport)> {
    fs::create_dir_all(run_dir)?;
    let mut observer = RunObserver {
        run_id,
        epochs: snapshot.train.epochs,
        started: Instant::now(),
        writer: MetricsWriter::create(&run_dir.join(METRICS_FILE))?,
        error: None,
    };
    let mask = snapshot.posgen.seed_len();
    let threshold = snapshot.posgen.train_length;
    let set = TrainSet { train: &data.train, val: &data.val, loss_mask_start: mask, ood_threshold: threshold };
    let (params, metrics) = train(&snapshot.model, &snapshot.train, set, &mut observer)?;
    if let Some(e) = observer.error {
        return Err(e);
    }
    let best_val_loss = metrics.best_epoch.map(|e| metrics.epochs[e - 1].val_loss);
    let summary = MetricsSummary { epochs: metrics.epochs.len(), best_epoch: metrics.best_epoch, best_val_loss };
    checkpoint::save(&run_dir.join(CHECKPOINT_FILE), &snapshot.model, &params, Some(summary))?;

    let options = EvalOptions {
        batch_size: snapshot.train.eval_batch_size,
        autoregressive: snapshot.autoregressive_eval,
        ..EvalOptions::new(threshold, mask)
    };
    let mut model = Transformer::new(&snapshot.model, params)?;
    let report = evaluate(&mut model, &data.test, &options)?;
    fs::write(run_dir.join(EVAL_FILE), serde_json::to_string_pretty(&report)?)?;
    let result = RunResult {
        epochs_run: metrics.epochs.len(),
        best_epoch: metrics.best_epoch,
        test_ood_accuracy: report.ood_accuracy,
        test_loss: report.loss,
    };
    Ok((result, report))
}

/// Runs one cell and records the outcome in its manifest.
pub fn run_cell(run_id: &str, snapshot: &RunSnapshot, data: &DatasetSplit, run_dir: &Path) -> RunManifest {
    let outcome = train_and_evaluate(run_id, snapshot, data, run_dir);
    let (status, error, result) = match outcome {
        Ok((result, _)) => (RunStatus::Complete, None, Some(result)),
        Err(e) => (RunStatus::Failed, Some(format!("{e:#}")), None),
    };
    let manifest = RunManifest {
        tool_version: crate::VERSION.to_string(),
        run_id: run_id.to_string(),
        status,
        error,
        snapshot: snapshot.clone(),
        artifacts: [METRICS_FILE, CHECKPOINT_FILE, "best.bin", EVAL_FILE].map(String::from).to_vec(),
        result,
    };
    if let Err(e) = manifest.write(run_dir) {
        log::error!("{run_id}: could not write manifest: {e:#}");
    }
    manifest
}

/// Worker count: `requested` (0 = available cores), capped by
/// `RESONANCE_LAB_THREADS` when set.
pub fn resolve_workers(requested: usize, jobs: usize) -> usize {
    let mut n = if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    };
    if let Some(cap) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if cap > 0 {
            n = n.min(cap);
        }
    }
    n.clamp(1, jobs.max(1))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridOutcome {
    pub trained: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Runs every missing cell of the grid, then rewrites the summary tables.
/// Cells whose manifest is complete and matches the config are skipped.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridOutcome> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(EXPERIMENT_FILE), config.to_json())?;

    let mut outcome = GridOutcome::default();
    let mut todo = Vec::new();
    for cell in config.cells() {
        let id = config.run_id(&cell);
        let slug = spec_slug(&config.scaling_specs[cell.spec_index]);
        let dir = run_dir(out, &slug, cell.subtask, cell.seed);
        let snapshot = config.snapshot(&cell);
        match RunManifest::read(&dir) {
            Ok(m) if m.snapshot == snapshot && m.is_complete(&dir) => outcome.skipped.push(id),
            _ => todo.push((id, dir, snapshot, cell)),
        }
    }

    let mut datasets: BTreeMap<(Subtask, u64), DatasetSplit> = BTreeMap::new();
    for (_, _, snapshot, cell) in &todo {
        if let std::collections::btree_map::Entry::Vacant(slot) = datasets.entry((cell.subtask, cell.seed)) {
            let dir = data_dir(out, cell.subtask, cell.seed);
            slot.insert(ensure_dataset(&dir, &snapshot.posgen, &snapshot.counts, snapshot.data_seed)?);
        }
    }

    let workers = resolve_workers(config.workers, todo.len());
    log::info!(
        "grid: {} cells, {} already complete, {} to run on {workers} worker(s)",
        todo.len() + outcome.skipped.len(),
        outcome.skipped.len(),
        todo.len()
    );
    let next = AtomicUsize::new(0);
    let finished = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((id, dir, snapshot, cell)) = todo.get(i) else { break };
                let data = &datasets[&(cell.subtask, cell.seed)];
                let manifest = run_cell(id, snapshot, data, dir);
                if let Some(e) = &manifest.error {
                    log::error!("{id} failed: {e}");
                }
                finished.lock().unwrap().push((i, manifest));
            });
        }
    });
    let mut finished = finished.into_inner().unwrap();
    finished.sort_by_key(|(i, _)| *i);
    for (_, m) in finished {
        match m.error {
            Some(e) => outcome.failed.push((m.run_id, e)),
            None => outcome.trained.push(m.run_id),
        }
    }
    crate::report::report(out)?;
    Ok(outcome)
}
