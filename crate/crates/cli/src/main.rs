//! `pricerule` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage, 3 config, 4 input data, 5 proposer,
//! 6 search or evaluation, 7 I/O, 8 refused, 9 check failed.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pricerule::sim::DemandFamily;

use crate::commands::{absolute, Written};
use crate::config::{Method, RunConfig, SegmentBy};
use crate::error::CliError;
use crate::manifest::{Manifest, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "pricerule", version, about = "Search, evaluate and deploy interpretable pricing rules")]
struct Cli {
    /// TOML config; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 is the reproducible mode, 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Exponential,
    RegionalLinear,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world: CSV bundle, truth.json and golden.csv.
    GenData {
        #[arg(long)]
        customers: Option<usize>,
        #[arg(long)]
        skus: Option<usize>,
        #[arg(long, value_enum)]
        family: Option<Family>,
        #[arg(long)]
        force: bool,
    },
    /// Run one search backend and write the best rule, its report and the trace.
    Search {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        budget: Option<usize>,
        /// `mock` or an endpoint URL.
        #[arg(long)]
        proposer: Option<String>,
        #[arg(long)]
        golden: Option<PathBuf>,
        #[arg(long, value_enum)]
        segment: Option<SegmentBy>,
    },
    /// Score a rule file against a dataset.
    Eval {
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Build the allocation plan.
    Pipeline {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lock_file: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Run every backend and both baselines on one world and rank them.
    Compare {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        proposer: Option<String>,
        #[arg(long)]
        b_t: Option<f64>,
        #[arg(long)]
        p_t: Option<f64>,
    },
    /// Emit plot data from trace CSVs and check archive monotonicity.
    Report {
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
    },
    /// Re-run a manifest and verify every output hash.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn init_threads(n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn absolutize(cfg: &mut RunConfig) {
    for p in [&mut cfg.data, &mut cfg.truth, &mut cfg.golden, &mut cfg.rule, &mut cfg.lock_file, &mut cfg.out]
        .into_iter()
        .flatten()
    {
        *p = absolute(p);
    }
    for p in &mut cfg.traces {
        *p = absolute(p);
    }
}

fn dispatch(command: &str, cfg: &RunConfig, force: bool) -> Result<Written, CliError> {
    match command {
        "gen-data" => commands::gen_data(cfg, force),
        "search" => commands::search(cfg),
        "eval" => commands::eval(cfg),
        "pipeline" => commands::pipeline(cfg),
        "compare" => commands::compare(cfg),
        "report" => commands::report(cfg),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

/// Runs the command and, when it has an output directory, records the manifest.
fn execute(command: &str, cfg: &RunConfig, force: bool) -> Result<Manifest, CliError> {
    let result = dispatch(command, cfg, force);
    let (written, err) = match result {
        Ok(w) => (Some(w), None),
        Err(CliError::Check(m)) if cfg.out.is_some() => (None, Some(CliError::Check(m))),
        Err(e) => return Err(e),
    };
    let mut m = Manifest::new(command, cfg, written.as_ref().and_then(|w| w.dataset_fingerprint.clone()));
    if let (Some(out), Some(w)) = (cfg.out.as_deref(), &written) {
        m.hash_outputs(out, &w.files)?;
        m.write(out)?;
    }
    match err {
        Some(e) => Err(e),
        None => Ok(m),
    }
}

fn replay(manifest_path: &std::path::Path, cli: &Cli) -> Result<(), CliError> {
    let old = Manifest::read(manifest_path)?;
    let mut cfg = old.config.clone();
    cfg.threads = cli.threads.unwrap_or(1);
    let out = cli
        .out
        .clone()
        .ok_or_else(|| CliError::Config("replay needs --out".into()))?;
    if out.join(MANIFEST_FILE) == absolute(manifest_path) {
        return Err(CliError::Refused("replay would overwrite the manifest it reads".into()));
    }
    cfg.out = Some(absolute(&out));
    init_threads(cfg.threads)?;
    let new = execute(&old.command, &cfg, true)?;
    let mut diff = Vec::new();
    for (f, h) in &old.outputs {
        match new.outputs.get(f) {
            Some(g) if g == h => {}
            Some(_) => diff.push(format!("{f} differs")),
            None => diff.push(format!("{f} missing")),
        }
    }
    for f in new.outputs.keys().filter(|f| !old.outputs.contains_key(*f)) {
        diff.push(format!("{f} is new"));
    }
    if diff.is_empty() {
        println!("replay identical: {} files", old.outputs.len());
        Ok(())
    } else {
        Err(CliError::Check(format!("replay mismatch: {}", diff.join("; "))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Cmd::Replay { manifest } = &cli.cmd {
        return replay(manifest, &cli);
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    set_opt(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    set_opt(&mut cfg.out, cli.out.clone());
    let mut force = false;
    let command = match cli.cmd {
        Cmd::GenData {
            customers,
            skus,
            family,
            force: f,
        } => {
            set(&mut cfg.world.customers, customers);
            set(&mut cfg.world.skus, skus);
            set(
                &mut cfg.world.family,
                family.map(|f| match f {
                    Family::Exponential => DemandFamily::Exponential,
                    Family::RegionalLinear => DemandFamily::RegionalLinear,
                }),
            );
            force = f;
            "gen-data"
        }
        Cmd::Search {
            data,
            method,
            budget,
            proposer,
            golden,
            segment,
        } => {
            set_opt(&mut cfg.data, data);
            set(&mut cfg.method, method);
            set(&mut cfg.budget, budget);
            cfg.apply_proposer_env(proposer.is_some());
            set(&mut cfg.proposer, proposer);
            set_opt(&mut cfg.golden, golden);
            set(&mut cfg.segment, segment);
            "search"
        }
        Cmd::Eval { rule, data, golden } => {
            set_opt(&mut cfg.rule, rule);
            set_opt(&mut cfg.data, data);
            set_opt(&mut cfg.golden, golden);
            "eval"
        }
        Cmd::Pipeline { data, lock_file, theta } => {
            set_opt(&mut cfg.data, data);
            set_opt(&mut cfg.lock_file, lock_file);
            set(&mut cfg.pipeline.theta, theta);
            "pipeline"
        }
        Cmd::Compare {
            data,
            truth,
            budget,
            proposer,
            b_t,
            p_t,
        } => {
            set_opt(&mut cfg.data, data);
            set_opt(&mut cfg.truth, truth);
            set(&mut cfg.budget, budget);
            cfg.apply_proposer_env(proposer.is_some());
            set(&mut cfg.proposer, proposer);
            set(&mut cfg.compare.b_t, b_t);
            set(&mut cfg.compare.p_t, p_t);
            "compare"
        }
        Cmd::Report { traces } => {
            cfg.traces = traces;
            "report"
        }
        Cmd::Replay { .. } => unreachable!(),
    };
    cfg.resolve_seeds();
    absolutize(&mut cfg);
    init_threads(cfg.threads)?;
    execute(command, &cfg, force).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pricerule: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
