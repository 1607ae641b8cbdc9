//! Aggregates finished runs into `ood_table.csv` and `loss_curves.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use resonance_core::posgen::Subtask;
use resonance_core::ScalingSpec;

use crate::config::{spec_slug, ExperimentConfig};
use crate::metrics::read_metrics;
use crate::repro::{run_dir, RunManifest, EXPERIMENT_FILE, METRICS_FILE};

pub const OOD_TABLE: &str = "ood_table.csv";
pub const LOSS_CURVES: &str = "loss_curves.csv";

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Self { mean, std: var.sqrt(), n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub setting: String,
    pub slug: String,
    /// Test OOD accuracy per subtask, in [`Subtask::ALL`] order.
    pub cells: [Option<Stats>; 3],
    /// Expected runs that are missing or failed, as `subtask/seed-N`.
    pub gaps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub setting: String,
    pub slug: String,
    pub subtask: Subtask,
    pub epoch: usize,
    pub val_loss: Stats,
    pub val_ood_accuracy: Stats,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<TableRow>,
    pub curves: Vec<CurvePoint>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn row(&self, slug: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.slug == slug)
    }
}

impl TableRow {
    pub fn cell(&self, subtask: Subtask) -> Option<Stats> {
        self.cells[Subtask::ALL.iter().position(|&s| s == subtask).unwrap()]
    }
}

struct Grid {
    specs: Vec<ScalingSpec>,
    subtasks: Vec<Subtask>,
    seeds: Vec<u64>,
}

/// The grid from `experiment.json`, or else whatever run manifests exist.
fn discover(dir: &Path) -> Result<Option<Grid>> {
    let path = dir.join(EXPERIMENT_FILE);
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(Some(Grid {
            specs: config.scaling_specs,
            subtasks: config.task.subtasks,
            seeds: config.seeds,
        }));
    }
    let runs = dir.join("runs");
    if !runs.is_dir() {
        return Ok(None);
    }
    let mut specs = BTreeMap::new();
    let mut subtasks = Vec::new();
    let mut seeds = Vec::new();
    for slug in sorted_entries(&runs)? {
        for subtask in sorted_entries(&slug)? {
            for seed in sorted_entries(&subtask)? {
                if let Ok(m) = RunManifest::read(&seed) {
                    let pe = m.snapshot.model.pe.clone();
                    specs.insert(spec_slug(&pe), pe);
                    subtasks.push(m.snapshot.posgen.subtask);
                    seeds.push(m.snapshot.train.seed);
                }
            }
        }
    }
    subtasks.sort();
    subtasks.dedup();
    seeds.sort();
    seeds.dedup();
    if specs.is_empty() {
        return Ok(None);
    }
    Ok(Some(Grid { specs: specs.into_values().collect(), subtasks, seeds }))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Reads every expected run under `dir`. Missing runs are reported, never
/// fatal.
pub fn collect(dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    let Some(grid) = discover(dir)? else {
        report.warnings.push(format!("no runs found under {}", dir.display()));
        return Ok(report);
    };
    for spec in &grid.specs {
        let slug = spec_slug(spec);
        let setting = spec.display_name();
        let mut row = TableRow { setting: setting.clone(), slug: slug.clone(), cells: [None; 3], gaps: Vec::new() };
        for &subtask in &grid.subtasks {
            let mut accuracies = Vec::new();
            let mut histories = Vec::new();
            for &seed in &grid.seeds {
                let rd = run_dir(dir, &slug, subtask, seed);
                let result = RunManifest::read(&rd)
                    .ok()
                    .filter(|m| m.is_complete(&rd))
                    .and_then(|m| m.result);
                match (result, read_metrics(&rd.join(METRICS_FILE))) {
                    (Some(r), Ok(history)) => {
                        accuracies.push(100.0 * r.test_ood_accuracy);
                        histories.push(history);
                    }
                    _ => row.gaps.push(format!("{}/seed-{seed}", subtask.name())),
                }
            }
            let idx = Subtask::ALL.iter().position(|&s| s == subtask).unwrap();
            row.cells[idx] = Stats::of(&accuracies);
            let epochs = histories.iter().map(Vec::len).min().unwrap_or(0);
            for e in 0..epochs {
                let losses: Vec<f64> = histories.iter().map(|h| h[e].val_loss).collect();
                let accs: Vec<f64> = histories.iter().map(|h| 100.0 * h[e].val_ood_accuracy).collect();
                report.curves.push(CurvePoint {
                    setting: setting.clone(),
                    slug: slug.clone(),
                    subtask,
                    epoch: e + 1,
                    val_loss: Stats::of(&losses).unwrap(),
                    val_ood_accuracy: Stats::of(&accs).unwrap(),
                });
            }
        }
        if !row.gaps.is_empty() {
            report.warnings.push(format!("{setting} ({slug}): missing {}", row.gaps.join(", ")));
        }
        report.rows.push(row);
    }
    Ok(report)
}

fn fmt(x: f64, decimals: usize) -> String {
    format!("{x:.decimals$}")
}

/// Writes both CSV files into `dir`.
pub fn write(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut table = csv::Writer::from_path(dir.join(OOD_TABLE))?;
    let mut header = vec![String::from("setting"), String::from("slug")];
    for s in Subtask::ALL {
        for col in ["mean", "std", "n"] {
            header.push(format!("{}_{col}", s.name()));
        }
    }
    header.push("gaps".into());
    table.write_record(&header)?;
    for row in &report.rows {
        let mut rec = vec![row.setting.clone(), row.slug.clone()];
        for cell in &row.cells {
            match cell {
                Some(s) => rec.extend([fmt(s.mean, 2), fmt(s.std, 2), s.n.to_string()]),
                None => rec.extend([String::new(), String::new(), String::from("0")]),
            }
        }
        rec.push(row.gaps.join(";"));
        table.write_record(&rec)?;
    }
    table.flush()?;

    let mut curves = csv::Writer::from_path(dir.join(LOSS_CURVES))?;
    curves.write_record([
        "setting",
        "slug",
        "subtask",
        "epoch",
        "val_loss_mean",
        "val_loss_std",
        "val_ood_accuracy_mean",
        "val_ood_accuracy_std",
        "n",
    ])?;
    for p in &report.curves {
        curves.write_record([
            p.setting.clone(),
            p.slug.clone(),
            p.subtask.name().to_string(),
            p.epoch.to_string(),
            fmt(p.val_loss.mean, 6),
            fmt(p.val_loss.std, 6),
            fmt(p.val_ood_accuracy.mean, 4),
            fmt(p.val_ood_accuracy.std, 4),
            p.val_loss.n.to_string(),
        ])?;
    }
    curves.flush()?;
    Ok(())
}

/// [`collect`] then [`write`]; warnings go to the log.
pub fn report(dir: &Path) -> Result<Report> {
    let report = collect(dir)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write(dir, &report)?;
    Ok(report)
}

/// Fixed-width rendering of the OOD table for the terminal.
pub fn render(report: &Report) -> String {
    let mut out = format!("{:<14}", "Setting");
    for s in Subtask::ALL {
        out.push_str(&format!("{:>18}", s.name()));
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!("{:<14}", row.setting));
        for cell in &row.cells {
            let text = match cell {
                Some(s) => format!("{:.2} ± {:.2}", s.mean, s.std),
                None => String::from("-"),
            };
            out.push_str(&format!("{text:>18}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let s = Stats::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
        assert_eq!(Stats::of(&[5.0]).unwrap().std, 0.0);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn empty_dir_gives_headers_and_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(dir.path()).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.warnings.len(), 1);
        let table = fs::read_to_string(dir.path().join(OOD_TABLE)).unwrap();
        assert_eq!(
            table.trim_end(),
            "setting,slug,recursive_mean,recursive_std,recursive_n,cot_mean,cot_std,cot_n,\
             semi_recursive_mean,semi_recursive_std,semi_recursive_n,gaps"
        );
        let curves = fs::read_to_string(dir.path().join(LOSS_CURVES)).unwrap();
        assert_eq!(curves.lines().count(), 1);
    }
}
