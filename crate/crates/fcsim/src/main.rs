//! Command-line front end: validate scenarios, run single simulations and
//! fan out parameter sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fcsim::controller::ControlMode;
use fcsim::output::write_logs;
use fcsim::scenario::{load_scenario, Overrides, ScenarioConfig, SweepParam};
use fcsim::sim::{run, run_batch};

#[derive(Parser)]
#[command(name = "fcsim", version, about = "EV fast-charging station simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv / summary.csv.
    Simulate(SimulateArgs),
    /// Run the same scenario once per value of a weight parameter.
    Sweep(SweepArgs),
    /// Check a scenario file and report every problem found.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Operating mode override: standalone or grid.
    #[arg(long)]
    mode: Option<String>,
    /// Grid ramp weight override.
    #[arg(long)]
    delta: Option<f64>,
    /// Priority exponent override.
    #[arg(long)]
    e: Option<f64>,
    /// Seed for synthetic PV noise (inert when the profile has no noise).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for trace.csv and summary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter to sweep: alpha, beta, gamma, delta or e.
    #[arg(long)]
    param: String,
    /// Comma-separated parameter values, e.g. `10,5e6`.
    #[arg(long)]
    values: String,
    /// Output directory; one `<param>_<value>` subdirectory per value.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
}

fn parse_mode(s: &str) -> anyhow::Result<ControlMode> {
    match s {
        "standalone" => Ok(ControlMode::Standalone),
        "grid" | "grid-connected" | "grid_connected" => Ok(ControlMode::Grid),
        other => bail!("unknown mode {other:?}; use standalone or grid"),
    }
}

fn load_with_overrides(common: &CommonArgs) -> anyhow::Result<(ScenarioConfig, PathBuf)> {
    let mut config = load_scenario(&common.scenario)?;
    let overrides = Overrides {
        mode: common.mode.as_deref().map(parse_mode).transpose()?,
        delta: common.delta,
        e: common.e,
        seed: common.seed,
    };
    overrides.apply(&mut config);
    let base_dir = common
        .scenario
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    Ok((config, base_dir))
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let (config, base_dir) = load_with_overrides(&args.common)?;
    let scenario = config.build(&base_dir)?;
    let log = run(&scenario).context("simulation failed")?;
    write_logs(&log, &args.out)
        .with_context(|| format!("cannot write results to {}", args.out.display()))?;
    let completed = log
        .sessions
        .iter()
        .filter(|s| s.t_complete_s.is_some())
        .count();
    println!(
        "simulated {} steps, {} sessions ({} completed), results in {}",
        log.steps.len(),
        log.sessions.len(),
        completed,
        args.out.display()
    );
    Ok(())
}

/// Directory-safe token for a sweep value: the raw text with anything
/// outside `[A-Za-z0-9.+-]` replaced by `_`.
fn value_token(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let param = SweepParam::parse(&args.param)
        .with_context(|| format!("unknown sweep parameter {:?}", args.param))?;
    let tokens: Vec<&str> = args
        .values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if tokens.is_empty() {
        bail!("no sweep values given");
    }
    let values: Vec<f64> = tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("cannot parse sweep value {t:?}"))
        })
        .collect::<anyhow::Result<_>>()?;

    let (base_config, base_dir) = load_with_overrides(&args.common)?;
    let mut scenarios = Vec::with_capacity(values.len());
    for value in &values {
        let mut config = base_config.clone();
        param.apply(&mut config, *value);
        scenarios.push(config.build(&base_dir)?);
    }

    let results = run_batch(&scenarios);
    for (result, token) in results.into_iter().zip(&tokens) {
        let log = result.with_context(|| format!("run for {}={token} failed", args.param))?;
        let subdir = args
            .out
            .join(format!("{}_{}", args.param, value_token(token)));
        write_logs(&log, &subdir)
            .with_context(|| format!("cannot write results to {}", subdir.display()))?;
        println!("{}={} -> {}", args.param, token, subdir.display());
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> anyhow::Result<()> {
    let config = load_scenario(&args.scenario)?;
    let base_dir = args
        .scenario
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    config.build(&base_dir)?;
    println!("{}: ok", args.scenario.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::Validate(args) => validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
