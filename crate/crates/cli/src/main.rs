//! `dln`: coefficient dumps, convergence tables and adaptive runs.

mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use config::{Algorithm, CaseArg, ExperimentConfig, OdeCase};

#[derive(Parser)]
#[command(name = "dln", version, about = "DLN time-integration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump one-leg and refactorization coefficients per (theta, eps).
    Coeffs(Flags),
    /// ODE convergence table over halving steps.
    IvpConverge(Flags),
    /// Navier–Stokes convergence table on a fixed grid.
    NseConverge(Flags),
    /// Adaptive Navier–Stokes runs with the LTE and/or dissipation controller.
    NseAdapt(Flags),
}

/// Parse `0.8`, `2/3` or `2/sqrt5` (also `2/sqrt(5)`).
fn parse_theta(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad number `{v}`: {e}"));
    match s.split_once('/') {
        None => num(s),
        Some((a, b)) => {
            let b = b.trim();
            let den = match b.strip_prefix("sqrt") {
                Some(rest) => num(rest.trim_start_matches('(').trim_end_matches(')'))?.sqrt(),
                None => num(b)?,
            };
            Ok(num(a)? / den)
        }
    }
}

#[derive(Args, Default)]
struct Flags {
    /// Comma-separated theta values; accepts fractions like 2/3 and 2/sqrt5.
    #[arg(long, value_delimiter = ',', value_parser = parse_theta)]
    theta: Option<Vec<f64>>,
    /// Comma-separated step variabilities for `coeffs`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eps: Option<Vec<f64>>,
    /// Points per side of the periodic grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Coarsest step of a convergence table.
    #[arg(long)]
    k: Option<f64>,
    /// Number of step halvings.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, value_enum)]
    ode_case: Option<OdeCase>,
    /// Random step ratios on the coarsest level.
    #[arg(long)]
    variable_steps: bool,
    /// Tolerance of the LTE controller.
    #[arg(long)]
    tol: Option<f64>,
    /// Tolerance of the dissipation-ratio controller.
    #[arg(long)]
    tol_nd: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    k0: Option<f64>,
    #[arg(long)]
    kmin: Option<f64>,
    #[arg(long)]
    kmax: Option<f64>,
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also render SVG traces (`nse-adapt`).
    #[arg(long)]
    svg: bool,
}

impl Flags {
    fn overrides(&self) -> Value {
        let mut m = Map::new();
        let mut put = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(key.to_string(), v);
            }
        };
        put("thetas", self.theta.as_ref().map(|v| json!(v)));
        put("eps", self.eps.as_ref().map(|v| json!(v)));
        put("grid", self.grid.map(|v| json!(v)));
        put("k", self.k.map(|v| json!(v)));
        put("levels", self.levels.map(|v| json!(v)));
        put("ode_case", self.ode_case.map(|v| json!(v)));
        put("variable_steps", self.variable_steps.then_some(json!(true)));
        put("tol", self.tol.map(|v| json!(v)));
        put("tol_nd", self.tol_nd.map(|v| json!(v)));
        put("kappa", self.kappa.map(|v| json!(v)));
        put("k0", self.k0.map(|v| json!(v)));
        put("kmin", self.kmin.map(|v| json!(v)));
        put("kmax", self.kmax.map(|v| json!(v)));
        put("case", self.case.map(|v| json!(v)));
        put("omega", self.omega.map(|v| json!(v)));
        put("tau", self.tau.map(|v| json!(v)));
        put("t_end", self.t_end.map(|v| json!(v)));
        put("algorithm", self.algorithm.map(|v| json!(v)));
        put("seed", self.seed.map(|v| json!(v)));
        Value::Object(m)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (name, flags) = match &cli.command {
        Command::Coeffs(f) => ("coeffs", f),
        Command::IvpConverge(f) => ("ivp-converge", f),
        Command::NseConverge(f) => ("nse-converge", f),
        Command::NseAdapt(f) => ("nse-adapt", f),
    };
    let cfg = ExperimentConfig::resolve(name, flags.config.as_deref(), flags.overrides())?;
    let artifacts = match cli.command {
        Command::Coeffs(_) => commands::coeffs(&cfg)?,
        Command::IvpConverge(_) => commands::ivp_converge(&cfg)?,
        Command::NseConverge(_) => commands::nse_converge(&cfg)?,
        Command::NseAdapt(ref f) => commands::nse_adapt(&cfg, f.svg)?,
    };
    output::write_all(&flags.out, &cfg, &artifacts)?;
    for line in &artifacts.summary {
        println!("{line}");
    }
    for check in artifacts.checks.iter().filter(|c| !c.passed) {
        eprintln!("check failed: {} {}", check.name, check.detail);
    }
    let passed = artifacts.passed();
    println!(
        "{name}: {} of {} checks passed; outputs in {}",
        artifacts.checks.iter().filter(|c| c.passed).count(),
        artifacts.checks.len(),
        flags.out.display()
    );
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()).map_err(|e| anyhow!("{e:#}")) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_fractions() {
        assert_eq!(parse_theta("0.5").unwrap(), 0.5);
        assert!((parse_theta("2/3").unwrap() - 2.0 / 3.0).abs() < 1e-16);
        assert!((parse_theta("2/sqrt5").unwrap() - 2.0 / 5f64.sqrt()).abs() < 1e-16);
        assert!((parse_theta("2/sqrt(5)").unwrap() - 2.0 / 5f64.sqrt()).abs() < 1e-16);
        assert!(parse_theta("x").is_err());
    }

    #[test]
    fn only_given_flags_override() {
        let f = Flags {
            grid: Some(32),
            ..Default::default()
        };
        assert_eq!(f.overrides(), json!({"grid": 32}));
    }
}
