//! Command-line front end shared by the `resonance-lab` and `posgen` binaries.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use resonance_core::model::{evaluate, EvalOptions, Transformer};
use resonance_core::posgen::{make_splits, PosGenSpec, SemiVariant, Subtask};
use resonance_core::{ScalingMethod, ScalingSpec};
use serde::de::DeserializeOwned;

use crate::analyze::{analyze, render, AnalyzeRequest};
use crate::config::{spec_slug, ExperimentConfig, Profile};
use crate::dataset::{load_dataset, write_dataset};
use crate::repro::{run_cell, run_grid, RunSnapshot, RunStatus};
use crate::{checkpoint, report, schedule_doc};

/// Parses a snake_case name through the type's serde representation.
fn parse_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "resonance-lab", version, about = "RoPE scaling analysis and PosGen experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wavelengths, critical split, feature gaps and the resonance LCM.
    Analyze(AnalyzeArgs),
    /// Generate a PosGen dataset.
    Gen(GenArgs),
    /// Train one model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the experiment grid (resumable) and write the summary tables.
    Repro(ReproArgs),
    /// Rebuild ood_table.csv and loss_curves.csv from finished runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PeArgs {
    /// none, ntk_aware, dynamic_ntk or yarn.
    #[arg(long, value_parser = parse_name::<ScalingMethod>)]
    pub method: Option<ScalingMethod>,
    /// Scale factor s (default 4 for yarn, 1 otherwise).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 32.0)]
    pub beta: f64,
    /// Round wavelengths to integers after scaling.
    #[arg(long)]
    pub resonance: bool,
    /// Round before scaling instead (ablation).
    #[arg(long, requires = "resonance")]
    pub resonance_first: bool,
    /// Extra multiplier on attention logits.
    #[arg(long)]
    pub attention_scale: Option<f64>,
}

impl PeArgs {
    pub fn spec(&self, train_length: usize) -> ScalingSpec {
        let method = self.method.unwrap_or(ScalingMethod::None);
        let default_scale = if method == ScalingMethod::Yarn { 4.0 } else { 1.0 };
        ScalingSpec {
            alpha: self.alpha,
            beta: self.beta,
            resonance: self.resonance,
            resonance_first: self.resonance_first,
            attention_scale: self.attention_scale,
            ..ScalingSpec::new(method, self.scale.unwrap_or(default_scale), train_length)
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Head dimension.
    #[arg(long = "d", default_value_t = 128)]
    pub head_dim: usize,
    /// Rotary base.
    #[arg(long = "b", default_value_t = 10000.0)]
    pub base: f64,
    /// Training length L.
    #[arg(long = "L", alias = "train-len")]
    pub train_length: usize,
    /// Test length L' (default 4 L).
    #[arg(long = "L-prime", alias = "test-len")]
    pub test_length: Option<usize>,
    #[command(flatten)]
    pub pe: PeArgs,
    /// Also write both gap reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write the analysed schedule as JSON.
    #[arg(long)]
    pub schedule_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_name::<Subtask>)]
    pub subtask: Subtask,
    #[arg(long, default_value_t = 1)]
    pub j: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long = "mod", default_value_t = 17)]
    pub modulus: u32,
    #[arg(long, default_value_t = 64)]
    pub train_len: usize,
    #[arg(long, default_value_t = 256)]
    pub eval_len: usize,
    /// Train, validation and test sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [10000, 1000, 1000])]
    pub counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_name::<SemiVariant>, default_value = "halved")]
    pub semi_variant: SemiVariant,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (JSON). Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in config used when --config is absent.
    #[arg(long, value_enum, default_value_t = Profile::Reduced)]
    pub profile: Profile,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::profile(self.profile),
        };
        if let Some(e) = self.epochs {
            config.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            config.train.learning_rate = lr;
        }
        if let Some(wd) = self.weight_decay {
            config.train.weight_decay = wd;
        }
        if let Some(b) = self.batch_size {
            config.train.batch_size = b;
        }
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// PE for this run; without --method the config's first spec is used.
    #[command(flatten)]
    pub pe: PeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint manifest (`best.json`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Feed back the model's own predictions past L.
    #[arg(long)]
    pub autoregressive: bool,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_name::<Subtask>)]
    pub subtasks: Option<Vec<Subtask>>,
    /// Grid workers (0 = one per core); RESONANCE_LAB_THREADS caps it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a `repro` run.
    pub dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Repro(a) => cmd_repro(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let request = AnalyzeRequest {
        head_dim: args.head_dim,
        rotary_base: args.base,
        train_length: args.train_length,
        test_length: args.test_length.unwrap_or(4 * args.train_length),
        spec: args.pe.spec(args.train_length),
    };
    let analysis = analyze(&request)?;
    print!("{}", render(&analysis));
    if let Some(path) = &args.json {
        let doc = serde_json::json!({ "joint": analysis.joint, "worst_ood": analysis.worst_ood });
        fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    }
    if let Some(path) = &args.schedule_out {
        fs::write(path, schedule_doc::to_json(&analysis.schedule))?;
    }
    Ok(0)
}

pub fn gen_spec(args: &GenArgs) -> PosGenSpec {
    PosGenSpec {
        subtask: args.subtask,
        j: args.j,
        k: args.k,
        modulus: args.modulus,
        vocab_size: args.modulus,
        train_length: args.train_len,
        eval_length: args.eval_len,
        semi_variant: args.semi_variant,
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let spec = gen_spec(args);
    if args.counts.len() != 3 {
        bail!("--counts takes train,val,test sizes, got {:?}", args.counts);
    }
    let data = make_splits(&spec, args.counts[0], args.counts[1], args.counts[2], args.seed)?;
    write_dataset(&args.out, &spec, &data)?;
    println!(
        "wrote {} / {} / {} {} sequences to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        spec.subtask.name(),
        args.out.display()
    );
    Ok(0)
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let config = args.config.resolve()?;
    let (manifest, data) = load_dataset(&args.data)?;
    let pe = match args.pe.method {
        Some(_) => args.pe.spec(manifest.spec.train_length),
        None => config.scaling_specs[0].clone(),
    };
    let mut model = config.model_config(&pe);
    model.vocab_size = manifest.spec.vocab_size as usize;
    model.max_positions = manifest.spec.eval_length;
    let snapshot = RunSnapshot {
        posgen: manifest.spec.clone(),
        counts: manifest.counts.clone(),
        data_seed: manifest.master_seed,
        model,
        train: resonance_core::model::TrainConfig { seed: args.seed, ..config.train.clone() },
        autoregressive_eval: config.autoregressive_eval,
    };
    let id = format!("{}/{}/seed-{}", spec_slug(&pe), manifest.spec.subtask.name(), args.seed);
    let m = run_cell(&id, &snapshot, &data, &args.out);
    match (m.status, m.result, m.error) {
        (RunStatus::Complete, Some(r), _) => {
            println!(
                "{id}: best epoch {:?}, test OOD accuracy {:.2}%, test loss {:.4}",
                r.best_epoch,
                100.0 * r.test_ood_accuracy,
                r.test_loss
            );
            Ok(0)
        }
        (_, _, e) => bail!("{id} failed: {}", e.unwrap_or_default()),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let (ckpt, params) = checkpoint::load(&args.checkpoint)?;
    let (manifest, data) = load_dataset(&args.data)?;
    let sequences = match args.split.as_str() {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        other => bail!("unknown split {other:?}"),
    };
    let options = EvalOptions {
        batch_size: args.batch_size,
        autoregressive: args.autoregressive,
        ..EvalOptions::new(manifest.spec.train_length, manifest.spec.seed_len())
    };
    let mut model = Transformer::new(&ckpt.model, params).context("checkpoint does not match its config")?;
    let report = evaluate(&mut model, sequences, &options)?;
    println!(
        "{} sequences: OOD accuracy {:.2}%, loss {:.4}",
        report.n_sequences,
        100.0 * report.ood_accuracy,
        report.loss
    );
    if let Some(path) = &args.json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(0)
}

pub fn resolve_repro(args: &ReproArgs) -> Result<ExperimentConfig> {
    let mut config = args.config.resolve()?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(subtasks) = &args.subtasks {
        config.task.subtasks = subtasks.clone();
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_repro(args: &ReproArgs) -> Result<i32> {
    let config = resolve_repro(args)?;
    if args.print_config {
        println!("{}", config.to_json());
        return Ok(0);
    }
    let outcome = run_grid(&config)?;
    let summary = report::collect(&config.output_dir)?;
    print!("{}", report::render(&summary));
    println!(
        "trained {}, skipped {} (already complete), failed {}",
        outcome.trained.len(),
        outcome.skipped.len(),
        outcome.failed.len()
    );
    for (id, e) in &outcome.failed {
        eprintln!("failed: {id}: {e}");
    }
    Ok(if outcome.failed.is_empty() { 0 } else { 1 })
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let summary = report::report(&args.dir)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", report::render(&summary));
    Ok(0)
}

#[derive(Debug, Parser)]
#[command(name = "posgen", version, about = "PosGen dataset generator")]
pub struct PosgenCli {
    #[command(subcommand)]
    pub command: PosgenCommand,
}

#[derive(Debug, Subcommand)]
pub enum PosgenCommand {
    Gen(GenArgs),
}
