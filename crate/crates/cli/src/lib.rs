//! Command implementations behind the `duospace` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use duospace::ingest::{
    load_scenario, parse_scenario_table, set_dotted_key, ConfigError, Scenario,
};
use duospace::metrics::{
    export_trace, latency_reduction, summarize, Report, RunTrace, TraceFormat,
};
use duospace::pipeline::{run_simulation, Mode, SimulationError};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "duospace",
    version,
    about = "Simulate XR teleoperation latency in baseline and duo modes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario in one mode.
    Run(RunArgs),
    /// Run baseline and duo with the same seed and compare them.
    Compare(CompareArgs),
    /// Run once per value of a scenario key.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Duo,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Duo => Mode::Duo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for TraceFormat {
    fn from(f: FormatArg) -> TraceFormat {
        match f {
            FormatArg::Csv => TraceFormat::Csv,
            FormatArg::Jsonl => TraceFormat::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Defaults to the scenario's `mode`.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Defaults to the scenario's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// `key=v1,v2,...` with a dotted scenario key, e.g.
    /// `calibration_period=100ms,500ms,1s`.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Runs in flight at once; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.into()),
        }
    }
}

/// Runs a parsed command and returns the one-line summary for stdout.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs and writes `frames`, `merges` and `report.json` into `out`.
fn run_into(
    scenario: &Scenario,
    mode: Mode,
    seed: u64,
    format: FormatArg,
    out: &Path,
) -> Result<Report, CliError> {
    let trace: RunTrace = run_simulation(scenario, mode, seed)?;
    let report = summarize(&trace).context("summarizing run")?;
    export_trace(&trace, format.into(), out)
        .with_context(|| format!("writing trace to {}", out.display()))?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn fmt_secs(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |s| format!("{s:.4} s"))
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let mode = args.mode.map_or(scenario.mode, Mode::from);
    let seed = args.seed.unwrap_or(scenario.seed);
    let report = run_into(&scenario, mode, seed, args.format, &args.out)?;
    Ok(format!(
        "{mode}: {} frames, mean AoI {}",
        report.frame_count,
        fmt_secs(report.mean_aoi_s)
    ))
}

#[derive(Debug, Serialize)]
struct Comparison {
    seed: u64,
    baseline_fingerprint: String,
    duo_fingerprint: String,
    baseline_mean_aoi_s: Option<f64>,
    duo_mean_aoi_s: Option<f64>,
    latency_reduction_pct: f64,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let base = run_into(
        &scenario,
        Mode::Baseline,
        seed,
        args.format,
        &args.out.join("baseline"),
    )?;
    let duo = run_into(
        &scenario,
        Mode::Duo,
        seed,
        args.format,
        &args.out.join("duo"),
    )?;
    let reduction = latency_reduction(&base, &duo).context("computing latency reduction")?;
    let comparison = Comparison {
        seed,
        baseline_fingerprint: base.fingerprint.clone(),
        duo_fingerprint: duo.fingerprint.clone(),
        baseline_mean_aoi_s: base.mean_aoi_s,
        duo_mean_aoi_s: duo.mean_aoi_s,
        latency_reduction_pct: reduction,
    };
    write_json(&args.out.join("comparison.json"), &comparison)?;
    Ok(format!(
        "baseline {} -> duo {}: {reduction:.1}% lower",
        fmt_secs(base.mean_aoi_s),
        fmt_secs(duo.mean_aoi_s)
    ))
}

/// Splits `key=v1,v2` into the key and its values.
pub fn parse_param(spec: &str) -> Result<(String, Vec<String>), ConfigError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::invalid("--param", "expected key=v1,v2,..."))?;
    let key = key.trim();
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if key.is_empty() || values.iter().any(String::is_empty) {
        return Err(ConfigError::invalid(
            "--param",
            "key and values must be non-empty",
        ));
    }
    Ok((key.to_string(), values))
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let (key, values) = parse_param(&args.param)?;
    let text = fs::read_to_string(&args.scenario).map_err(|e| ConfigError::Io {
        path: args.scenario.display().to_string(),
        reason: e.to_string(),
    })?;
    let base_dir = args.scenario.parent().unwrap_or(Path::new("."));
    let table = parse_scenario_table(&text)?;

    // validate every variant before running any
    let mut scenarios = Vec::with_capacity(values.len());
    for value in &values {
        let mut t = table.clone();
        set_dotted_key(&mut t, &key, value)?;
        let scenario = Scenario::from_table(t, base_dir).map_err(|e| match e {
            ConfigError::Syntax(reason) => ConfigError::invalid(key.clone(), reason),
            other => other,
        })?;
        scenarios.push(scenario);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .context("starting worker pool")?;
    let reports: Vec<Result<Report, CliError>> = pool.install(|| {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, scenario)| {
                let mode = args.mode.map_or(scenario.mode, Mode::from);
                let seed = args.seed.unwrap_or(scenario.seed);
                run_into(
                    scenario,
                    mode,
                    seed,
                    args.format,
                    &args.out.join(format!("run{i:03}")),
                )
            })
            .collect()
    });

    let mut csv = String::from("value,mean_aoi_s,mean_delta_d_m,max_max_step_m\n");
    for (value, report) in values.iter().zip(reports) {
        let report = report?;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(value),
            opt_num(report.mean_aoi_s),
            opt_num(report.mean_delta_d_m),
            opt_num(report.max_max_step_m)
        ));
    }
    let path = args.out.join("sweep.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(format!("{key}: {} runs", values.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_spec() {
        let (k, v) = parse_param("calibration_period=100ms,500ms,1s").unwrap();
        assert_eq!(k, "calibration_period");
        assert_eq!(v, ["100ms", "500ms", "1s"]);
        assert!(parse_param("calibration_period").is_err());
        assert!(parse_param("merge=snap,,blend:0.3").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            CliError::Config(ConfigError::invalid("k", "r")).exit_code(),
            1
        );
        assert_eq!(CliError::Runtime(anyhow::anyhow!("boom")).exit_code(), 2);
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("snap"), "snap");
        assert_eq!(csv_field("[1, 2]"), "\"[1, 2]\"");
    }
}
