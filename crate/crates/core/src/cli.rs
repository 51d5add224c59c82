//! The `forge` command line: dataset generation, PFL, training runs,
//! ablation grids and report aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ForgeError, Result};
use crate::predictor::{pfl_train, PflConfig, PredictorModel};
use crate::problems::{
    generate_dataset, Dataset, Family, GeneratorConfig, KpConfig, ToyConfig, WsmcConfig,
};
use crate::report::{self, RunReport, REPORT_FILE};
use crate::trainer::{train, Ablation, Method, RunMetrics, TrainerConfig};

#[derive(Debug, Parser)]
#[command(
    name = "forge",
    version,
    about = "Decision-focused learning with GP regret surrogates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark dataset.
    Gen(GenArgs),
    /// Train a predictor for mean squared error only.
    Pfl(PflArgs),
    /// Run decision-focused training for one or more seeds.
    Train(TrainArgs),
    /// Aggregate run directories into CSV tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub family: Family,
    /// Output dimension of the toy family.
    #[arg(long)]
    pub dim_y: Option<usize>,
    /// Knapsack items or covering items.
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub sets: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub dim_x: Option<usize>,
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub penalty: Option<f64>,
    /// key=value overrides applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "FORGE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PflArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "FORGE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, e.g. `32,32`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gsl")]
    pub method: Method,
    /// Comma-separated seeds; defaults to FORGE_SEED or 0.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// key=value overrides of the trainer configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub retrain_trigger: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub sigma_init: Option<f64>,
    #[arg(long)]
    pub sigma_smooth: Option<f64>,
    #[arg(long)]
    pub sigma_per_dim: bool,
    #[arg(long)]
    pub warm_start_epochs: Option<usize>,
    #[arg(long)]
    pub d_max: Option<f64>,
    /// Wall-clock limit per run in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub no_smoothing: bool,
    #[arg(long)]
    pub no_pretrain: bool,
    #[arg(long)]
    pub sharing: bool,
    #[arg(long)]
    pub no_differentiation: bool,
    /// Run the full method and each single-flag-off variant.
    #[arg(long)]
    pub ablation_grid: bool,
    /// Runs executed in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories or report files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Summary table; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch regret-versus-calls curves.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub family: Family,
    pub dataset_seed: u64,
    pub generator: GeneratorConfig,
    pub method: Method,
    pub label: String,
    pub seeds: Vec<u64>,
    pub trainer: TrainerConfig,
}

/// Parse `key = value` lines. Values are read as JSON when possible and as
/// strings otherwise; dotted keys address nested fields.
pub fn parse_overrides(text: &str) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ForgeError::Config(format!("line {}: expected key=value", n + 1)))?;
        let v = v.trim();
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.push((k.trim().to_string(), value));
    }
    Ok(out)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ForgeError::Config(format!("`{key}` does not name a field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Apply overrides to a serializable default and read it back; unknown keys
/// are rejected by the target type.
pub fn apply_overrides<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    overrides: &[(String, Value)],
) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    for (k, val) in overrides {
        set_path(&mut v, k, val.clone())?;
    }
    serde_json::from_value(v).map_err(|e| ForgeError::Config(format!("invalid configuration: {e}")))
}

fn read_overrides(path: Option<&Path>) -> Result<Vec<(String, Value)>> {
    match path {
        Some(p) => parse_overrides(&fs::read_to_string(p)?),
        None => Ok(Vec::new()),
    }
}

fn push<T: Serialize>(o: &mut Vec<(String, Value)>, key: &str, v: Option<T>) -> Result<()> {
    if let Some(v) = v {
        o.push((key.to_string(), serde_json::to_value(v)?));
    }
    Ok(())
}

pub fn generator_config(args: &GenArgs) -> Result<GeneratorConfig> {
    let mut o = read_overrides(args.config.as_deref())?;
    push(&mut o, "n_instances", args.instances)?;
    push(&mut o, "dim_x", args.dim_x)?;
    let reject = |flag: &str| {
        Err(ForgeError::Config(format!(
            "--{flag} does not apply to family {}",
            args.family
        )))
    };
    let cfg = match args.family {
        Family::Toy => {
            if args.items.is_some() || args.sets.is_some() {
                return reject("items/--sets");
            }
            push(&mut o, "dim_y", args.dim_y)?;
            GeneratorConfig::Toy(apply_overrides(&ToyConfig::default(), &o)?)
        }
        Family::Wsmc => {
            if args.dim_y.is_some() {
                return reject("dim-y");
            }
            push(&mut o, "n_items", args.items)?;
            push(&mut o, "n_sets", args.sets)?;
            push(&mut o, "degree", args.degree)?;
            push(&mut o, "penalty", args.penalty)?;
            GeneratorConfig::Wsmc(apply_overrides(&WsmcConfig::default(), &o)?)
        }
        f => {
            if args.dim_y.is_some() || args.sets.is_some() {
                return reject("dim-y/--sets");
            }
            push(&mut o, "n_items", args.items)?;
            push(&mut o, "degree", args.degree)?;
            push(&mut o, "penalty", args.penalty)?;
            let uncertain = match f {
                Family::KnapsackWeights => "weights",
                Family::KnapsackValues => "values",
                _ => "capacity",
            };
            o.push(("uncertain".into(), Value::String(uncertain.into())));
            GeneratorConfig::Kp(apply_overrides(&KpConfig::default(), &o)?)
        }
    };
    Ok(cfg)
}

pub fn trainer_config(args: &TrainArgs) -> Result<TrainerConfig> {
    let mut o = read_overrides(args.config.as_deref())?;
    push(&mut o, "beta", args.beta)?;
    push(&mut o, "retrain_trigger", args.retrain_trigger)?;
    push(&mut o, "epochs", args.epochs)?;
    push(&mut o, "patience", args.patience)?;
    push(&mut o, "batch_size", args.batch_size)?;
    push(&mut o, "lr", args.lr)?;
    push(&mut o, "sigma_init", args.sigma_init)?;
    push(&mut o, "sigma_smooth", args.sigma_smooth)?;
    push(&mut o, "warm_start_epochs", args.warm_start_epochs)?;
    push(&mut o, "d_max", args.d_max)?;
    push(&mut o, "time_limit_seconds", args.time_limit)?;
    push(&mut o, "sigma_per_dim", args.sigma_per_dim.then_some(true))?;
    if !args.hidden.is_empty() {
        push(&mut o, "hidden", Some(&args.hidden))?;
    }
    push(
        &mut o,
        "ablation.smoothing",
        args.no_smoothing.then_some(false),
    )?;
    push(
        &mut o,
        "ablation.pretrain",
        args.no_pretrain.then_some(false),
    )?;
    push(&mut o, "ablation.sharing", args.sharing.then_some(true))?;
    push(
        &mut o,
        "ablation.differentiation",
        args.no_differentiation.then_some(false),
    )?;
    let cfg: TrainerConfig = apply_overrides(&TrainerConfig::default(), &o)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_gen(args: &GenArgs) -> Result<String> {
    let cfg = generator_config(args)?;
    let ds = generate_dataset(&cfg, args.seed)?;
    ds.save(&args.out)?;
    Ok(ds.summary())
}

pub fn cmd_pfl(args: &PflArgs) -> Result<String> {
    let ds = Dataset::load(&args.data)?;
    let d = PflConfig::default();
    let cfg = PflConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        patience: args.patience.unwrap_or(d.patience),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        lr: args.lr.unwrap_or(d.lr),
    };
    let init = PredictorModel::for_dataset(&ds, &args.hidden, args.seed)?;
    let out = pfl_train(&init, &ds, &cfg, args.seed)?;
    out.model.save(&args.out)?;
    Ok(format!(
        "pfl: {} epochs, train mse {:.6}, val mse {:.6}",
        out.epochs_run, out.train_mse, out.val_mse
    ))
}

#[derive(Debug, Clone, Serialize)]
struct SummaryEntry {
    label: String,
    seeds: Vec<u64>,
    regret_mean: f64,
    regret_std: f64,
    calls_mean: f64,
    calls_std: f64,
}

fn run_one(ds: &Dataset, rc: &RunConfig, seed: u64, dir: &Path) -> Result<RunMetrics> {
    fs::create_dir_all(dir)?;
    let single = RunConfig {
        seeds: vec![seed],
        ..rc.clone()
    };
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&single)?,
    )?;
    let out = train(ds, &rc.trainer, seed)?;
    out.model.save(dir.join("model.json"))?;
    out.metrics.write_csv(dir.join("metrics.csv"))?;
    let report = RunReport {
        label: rc.label.clone(),
        method: rc.method,
        metrics: out.metrics.clone(),
    };
    fs::write(
        dir.join(REPORT_FILE),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(out.metrics)
}

pub fn cmd_train(args: &TrainArgs) -> Result<String> {
    let base = trainer_config(args)?;
    let seeds = if args.seeds.is_empty() {
        vec![std::env::var("FORGE_SEED")
            .ok()
            .map(|s| s.parse::<u64>())
            .transpose()
            .map_err(|e| ForgeError::Config(format!("FORGE_SEED: {e}")))?
            .unwrap_or(0)]
    } else {
        args.seeds.clone()
    };
    let ds = Dataset::load(&args.data)?;
    let variants: Vec<(String, TrainerConfig)> = if args.ablation_grid {
        Ablation::grid()
            .into_iter()
            .map(|(name, ab)| {
                (
                    name,
                    TrainerConfig {
                        ablation: ab,
                        ..base.clone()
                    },
                )
            })
            .collect()
    } else {
        vec![(args.method.name().to_string(), base.for_method(args.method))]
    };
    let method = if args.ablation_grid {
        Method::Gsl
    } else {
        args.method
    };
    let configs: Vec<RunConfig> = variants
        .into_iter()
        .map(|(label, trainer)| RunConfig {
            data: args.data.clone(),
            family: ds.family,
            dataset_seed: ds.seed,
            generator: ds.config.clone(),
            method,
            label,
            seeds: seeds.clone(),
            trainer,
        })
        .collect();

    fs::create_dir_all(&args.out)?;
    let top = if configs.len() == 1 {
        serde_json::to_value(&configs[0])?
    } else {
        serde_json::to_value(&configs)?
    };
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&top)?,
    )?;

    let tasks: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<RunMetrics>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(c, seed)) = tasks.get(k) else {
            break;
        };
        let rc = &configs[c];
        let dir = args.out.join(&rc.label).join(format!("seed-{seed}"));
        log::info!("{} seed {seed} -> {}", rc.label, dir.display());
        let r = run_one(&ds, rc, seed, &dir);
        results.lock().expect("result lock")[k] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 1..args.jobs.max(1).min(tasks.len()) {
            s.spawn(worker);
        }
        worker();
    });

    let results: Vec<RunMetrics> = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect::<Result<_>>()?;
    let reports: Vec<RunReport> = tasks
        .iter()
        .zip(results)
        .map(|(&(c, _), metrics)| RunReport {
            label: configs[c].label.clone(),
            method: configs[c].method,
            metrics,
        })
        .collect();
    let rows = report::aggregate(&reports)?;
    let summary: Vec<SummaryEntry> = rows
        .iter()
        .map(|r| SummaryEntry {
            label: r.method.clone(),
            seeds: seeds.clone(),
            regret_mean: r.regret_mean,
            regret_std: r.regret_std,
            calls_mean: r.calls_mean,
            calls_std: r.calls_std,
        })
        .collect();
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary
        .iter()
        .map(|s| {
            format!(
                "{}: test regret {:.4} +- {:.4}, calls/instance {:.2} +- {:.2}",
                s.label, s.regret_mean, s.regret_std, s.calls_mean, s.calls_std
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let runs = report::collect_reports(&args.inputs)?;
    let rows = report::aggregate(&runs)?;
    if let Some(p) = &args.curves {
        report::write_curves(&runs, fs::File::create(p)?)?;
    }
    match &args.out {
        Some(p) => {
            report::write_summary(&rows, fs::File::create(p)?)?;
            Ok(format!(
                "{} rows from {} runs -> {}",
                rows.len(),
                runs.len(),
                p.display()
            ))
        }
        None => {
            let mut buf = Vec::new();
            report::write_summary(&rows, &mut buf)?;
            Ok(String::from_utf8_lossy(&buf).trim_end().to_string())
        }
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Pfl(a) => cmd_pfl(a),
        Command::Train(a) => cmd_train(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Process exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &ForgeError) -> i32 {
    match e {
        ForgeError::Config(_) => 2,
        _ => 1,
    }
}
