//! Command-line driver: single runs, policy sweeps and gateway conformance.
//!
//! Exit codes are the machine contract: 0 success, 1 failed conformance
//! check, 2 configuration or usage error, 3 backend failure.

pub mod config;
mod output;
mod world;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use semcomm::gateway::conformance;
use semcomm::metrics::{summarize, summary_csv};
use semcomm::{PolicyKind, SessionTranscript};

pub use config::{BackendKind, ExperimentConfig, Scenario};
pub use output::transcript_file_name;
use world::World;

pub const GATEWAY_URL_ENV: &str = "SEMCOMM_GATEWAY_URL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Backend(String),
    Conformance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Conformance(_) => 1,
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Backend(m) => write!(f, "backend failure: {m}"),
            CliError::Conformance(m) => write!(f, "conformance failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(
    name = "semcomm",
    version,
    about = "Word-by-word semantic transmission experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy over every scenario.
    Run(RunArgs),
    /// Run scenarios x policies x seeds and summarise.
    Sweep(SweepArgs),
    /// Check a gateway against wire protocol v1.
    Conformance(ConformanceArgs),
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
        .map_err(|e: semcomm::config::ConfigError| e.to_string())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the config's session policy.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<PolicyKind>,
    /// Defaults to the config's session seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `all` or a comma-separated list of policy names.
    #[arg(long, default_value = "all")]
    pub policies: String,
    /// Seeds per cell, offset from the config's session seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Worker threads; defaults to the number of processors.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    /// Base URL; falls back to SEMCOMM_GATEWAY_URL.
    #[arg(long)]
    pub gateway: Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Conformance(a) => cmd_conformance(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("semcomm: {e}");
            e.exit_code()
        }
    }
}

pub fn parse_policy_list(spec: &str) -> Result<Vec<PolicyKind>, CliError> {
    if spec.trim() == "all" {
        return Ok(PolicyKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: PolicyKind = name.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no policies given".into()));
    }
    Ok(out)
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let policy = args.policy.unwrap_or(cfg.session.policy);
    let seed = args.seed.unwrap_or(cfg.session.seed);
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    output::ensure_dir(&out_dir)?;
    let world = World::connect(&cfg)?;

    let mut failures = 0;
    for (i, scenario) in world.prepare_all().iter().enumerate() {
        let result = scenario
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|s| world.run_cell(s, policy, seed));
        match result {
            Ok(t) => {
                output::write_atomic(
                    &out_dir.join(transcript_file_name(i, policy, seed)),
                    t.to_jsonl().as_bytes(),
                )?;
                println!("{}", describe(i, &t));
            }
            Err(e) => {
                failures += 1;
                eprintln!("scenario {i}: {e}");
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Backend(format!(
            "{failures} of {} scenarios failed",
            cfg.scenarios.len()
        )));
    }
    Ok(())
}

fn describe(index: usize, t: &SessionTranscript) -> String {
    let d = t
        .final_distance()
        .map(semcomm::jsonl::fixed6)
        .unwrap_or_default();
    format!(
        "scenario {index}: {} {:?} after {} steps, distance {d}, {} bytes",
        t.config.policy,
        t.outcome,
        t.steps.len(),
        t.bytes_total()
    )
}

struct Cell {
    scenario: usize,
    policy: PolicyKind,
    seed: u64,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let policies = parse_policy_list(&args.policies)?;
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let jobs = match args.jobs {
        Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    output::ensure_dir(&out_dir)?;
    let world = World::connect(&cfg)?;
    let prepared = world.prepare_all();

    let mut cells = Vec::new();
    for scenario in 0..cfg.scenarios.len() {
        for &policy in &policies {
            for k in 0..args.seeds {
                cells.push(Cell {
                    scenario,
                    policy,
                    seed: cfg.session.seed.wrapping_add(k),
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<SessionTranscript, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let prepared = prepared[c.scenario].as_ref().map_err(Clone::clone)?;
                let t = world.run_cell(prepared, c.policy, c.seed)?;
                let path = out_dir.join(transcript_file_name(c.scenario, c.policy, c.seed));
                output::write_atomic(&path, t.to_jsonl().as_bytes())?;
                Ok(t)
            })
            .collect()
    });

    let mut transcripts = Vec::new();
    let mut failed: BTreeMap<PolicyKind, usize> = BTreeMap::new();
    let mut series = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(t) => {
                series.push(output::Series::new(cell.scenario, cell.seed, &t));
                transcripts.push(t);
            }
            Err(e) => {
                eprintln!(
                    "cell scenario {} policy {} seed {}: {e}",
                    cell.scenario, cell.policy, cell.seed
                );
                *failed.entry(cell.policy).or_default() += 1;
            }
        }
    }
    let [h, w] = cfg.image_dims;
    let csv = summary_csv(&summarize(&transcripts, h, w), &failed);
    output::write_atomic(&out_dir.join("summary.csv"), csv.as_bytes())?;
    let plot = output::plot_data(&policies, cfg.session.threshold, &series);
    output::write_atomic(&out_dir.join("plot_data.json"), plot.as_bytes())?;
    print!("{csv}");

    let failures: usize = failed.values().sum();
    if failures == cells.len() {
        return Err(CliError::Backend(format!("all {failures} cells failed")));
    }
    if failures > 0 {
        eprintln!("warning: {failures} of {} cells failed", cells.len());
    }
    Ok(())
}

pub fn cmd_conformance(args: &ConformanceArgs) -> Result<(), CliError> {
    let url = args
        .gateway
        .clone()
        .or_else(|| std::env::var(GATEWAY_URL_ENV).ok())
        .filter(|u| !u.is_empty())
        .ok_or_else(|| CliError::Config(format!("pass --gateway or set {GATEWAY_URL_ENV}")))?;
    let report = conformance::run(&url).map_err(|e| CliError::Config(e.to_string()))?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        Err(CliError::Conformance(names.join(", ")))
    }
}
