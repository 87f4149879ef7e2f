//! Command-line front end: single experiment runs, policy/N/seed sweeps,
//! and a dump of the built-in defaults.
//!
//! Configuration is JSON mirroring `covsim::ExperimentConfig`. Override
//! precedence is CLI `--set` > config file > built-in default. Exit codes:
//! 0 success, 1 runtime failure, 2 validation failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covsim::engine::{run_experiment, ExperimentConfig, ExperimentSummary, FrameLog};
use covsim::scheduling::Policy;

#[derive(Debug)]
pub enum CliError {
    /// Bad input: config, flags, overrides. Exit code 2.
    Validation(String),
    /// Failure while running or writing. Exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<covsim::Error> for CliError {
    fn from(e: covsim::Error) -> Self {
        match e {
            covsim::Error::Config(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "covsim", about = "Collaborative-perception scheduling simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonOpts {
    /// Path to a JSON config file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. --set scheduling.n=4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write per-frame and summary CSVs.
    Run {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the |policies| x |N| x |seeds| Cartesian sweep.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated policies (all|closest|coverage|etc|mass|cmass).
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        /// Comma-separated N values.
        #[arg(long = "n-list", value_delimiter = ',', required = true)]
        n_list: Vec<u32>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Bound on concurrently running experiments.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the complete default configuration as JSON.
    DumpDefaults,
}

/// Deep-merges `overlay` into `base` (objects merge, everything else
/// replaces).
fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge_json(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("--set '{spec}' is not of the form KEY=VALUE"))
    })?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    for part in key.split('.') {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Validation(format!("--set key '{key}': '{part}' is not an object"))
        })?;
        node = obj
            .entry(part.to_string())
            .or_insert(serde_json::Value::Null);
    }
    *node = value;
    Ok(())
}

/// Resolves the effective configuration: defaults, then the config file,
/// then `--set` overrides and `--seed`.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig, CliError> {
    let mut root = serde_json::to_value(ExperimentConfig::default())
        .expect("default config serializes");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", p.display()))
        })?;
        let file: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("config {} is not valid JSON: {e}", p.display()))
        })?;
        merge_json(&mut root, file);
    }
    for s in sets {
        apply_override(&mut root, s)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(root)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn dump_defaults_json() -> String {
    serde_json::to_string_pretty(&ExperimentConfig::default()).expect("serializable")
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn write_frames_csv(path: &Path, cfg: &ExperimentConfig, logs: &[FrameLog]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["frame", "policy", "n_selected", "delivered_rfms", "loss", "recall"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for log in logs {
        w.write_record([
            log.frame.to_string(),
            cfg.scheduling.policy.to_string(),
            log.decision.selected.len().to_string(),
            log.delivered_rfms().to_string(),
            fmt6(log.metrics.loss),
            fmt6(log.metrics.recall),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub policy: String,
    pub n: u32,
    pub seed: u64,
    pub frames: u64,
    pub mean_loss: Option<f64>,
    pub mean_recall: Option<f64>,
    pub wall_time_s: f64,
    pub status: String,
}

impl SummaryRow {
    fn ok(s: &ExperimentSummary) -> Self {
        SummaryRow {
            policy: s.policy.clone(),
            n: s.n,
            seed: s.seed,
            frames: s.frames,
            mean_loss: Some(s.mean_loss),
            mean_recall: Some(s.mean_recall),
            wall_time_s: s.wall_time_s,
            status: "ok".into(),
        }
    }

    fn failed(cfg: &ExperimentConfig, err: &CliError) -> Self {
        SummaryRow {
            policy: cfg.scheduling.policy.to_string(),
            n: cfg.scheduling.n,
            seed: cfg.seed,
            frames: cfg.frames,
            mean_loss: None,
            mean_recall: None,
            wall_time_s: 0.0,
            status: err.to_string(),
        }
    }
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record([
        "policy",
        "N",
        "seed",
        "frames",
        "mean_loss",
        "mean_recall",
        "wall_time_s",
        "status",
    ])
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.n.to_string(),
            r.seed.to_string(),
            r.frames.to_string(),
            r.mean_loss.map(fmt6).unwrap_or_default(),
            r.mean_recall.map(fmt6).unwrap_or_default(),
            fmt6(r.wall_time_s),
            r.status.clone(),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(io_err)
}

pub fn cmd_run(common: &CommonOpts) -> Result<(), CliError> {
    let cfg = load_config(common.config.as_deref(), &common.set, common.seed)?;
    let result = run_experiment(&cfg)?;
    std::fs::create_dir_all(&common.out).map_err(io_err)?;
    write_frames_csv(&common.out.join("frames.csv"), &cfg, &result.logs)?;
    write_summary_csv(
        &common.out.join("summary.csv"),
        &[SummaryRow::ok(&result.summary)],
    )?;
    println!(
        "policy={} N={} seed={} frames={} mean_loss={:.6} mean_recall={:.6}",
        result.summary.policy,
        result.summary.n,
        result.summary.seed,
        result.summary.frames,
        result.summary.mean_loss,
        result.summary.mean_recall
    );
    Ok(())
}

/// The full Cartesian sweep; rows come back in (policy, N, seed) input
/// order no matter how the jobs interleave.
pub fn run_sweep(
    base: &ExperimentConfig,
    policies: &[Policy],
    n_list: &[u32],
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<SummaryRow>, CliError> {
    if policies.is_empty() || n_list.is_empty() || seeds.is_empty() {
        return Err(CliError::Validation(
            "sweep requires non-empty --policies, --n-list, and --seeds".into(),
        ));
    }
    let mut configs = Vec::new();
    for &policy in policies {
        for &n in n_list {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.scheduling.policy = policy;
                cfg.scheduling.n = n;
                cfg.seed = seed;
                configs.push(cfg);
            }
        }
    }
    let run_one = |cfg: &ExperimentConfig| match run_experiment(cfg) {
        Ok(r) => SummaryRow::ok(&r.summary),
        Err(e) => SummaryRow::failed(cfg, &e.into()),
    };
    let rows: Vec<SummaryRow> = match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            pool.install(|| {
                use rayon::prelude::*;
                configs.par_iter().map(run_one).collect()
            })
        }
        None => {
            use rayon::prelude::*;
            configs.par_iter().map(run_one).collect()
        }
    };
    Ok(rows)
}

pub fn cmd_sweep(
    common: &CommonOpts,
    policies: &[String],
    n_list: &[u32],
    seeds: &[u64],
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let base = load_config(common.config.as_deref(), &common.set, common.seed)?;
    let policies: Vec<Policy> = policies
        .iter()
        .map(|p| p.parse().map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let rows = run_sweep(&base, &policies, n_list, seeds, jobs)?;
    std::fs::create_dir_all(&common.out).map_err(io_err)?;
    write_summary_csv(&common.out.join("summary.csv"), &rows)?;
    let failed: Vec<&SummaryRow> = rows.iter().filter(|r| r.status != "ok").collect();
    for r in &failed {
        eprintln!(
            "row (policy={}, N={}, seed={}) failed: {}",
            r.policy, r.n, r.seed, r.status
        );
    }
    println!("{} rows written, {} failed", rows.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} sweep rows failed", failed.len())))
    }
}

/// Groups sweep rows by (policy, N) and averages across seeds. Used by the
/// acceptance checks and handy for quick analysis.
pub fn seed_averaged(rows: &[SummaryRow]) -> BTreeMap<(String, u32), (f64, f64)> {
    let mut acc: BTreeMap<(String, u32), (f64, f64, u32)> = BTreeMap::new();
    for r in rows {
        if let (Some(l), Some(rc)) = (r.mean_loss, r.mean_recall) {
            let e = acc.entry((r.policy.clone(), r.n)).or_insert((0.0, 0.0, 0));
            e.0 += l;
            e.1 += rc;
            e.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (l, r, c))| (k, (l / c as f64, r / c as f64)))
        .collect()
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { common } => cmd_run(common),
        Command::Sweep {
            common,
            policies,
            n_list,
            seeds,
            jobs,
        } => cmd_sweep(common, policies, n_list, seeds, *jobs),
        Command::DumpDefaults => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", dump_defaults_json()).ok();
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Validation(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
