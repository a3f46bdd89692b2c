use std::path::Path;

use anyhow::{bail, Context, Result};
use dln::nse2d::CaseKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Lte,
    Nd,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OdeCase {
    /// `y' = -y + sin t`
    ForcedDecay,
    /// `y' = 0`
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CaseArg {
    Decay,
    Growth,
}

impl From<CaseArg> for CaseKind {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Decay => CaseKind::TaylorGreenDecay,
            CaseArg::Growth => CaseKind::TaylorGreenGrowth,
        }
    }
}

/// Parameters of one CLI run. Unused fields are ignored by a command but still echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: String,
    pub thetas: Vec<f64>,
    pub eps: Vec<f64>,
    /// Coarsest step of a convergence table.
    pub k: f64,
    /// Number of halvings after the coarsest step.
    pub levels: usize,
    pub ode_case: OdeCase,
    /// Random step ratios in `[0.5, 2]` on the coarsest level.
    pub variable_steps: bool,
    pub grid: usize,
    pub side_length: f64,
    pub case: CaseArg,
    pub omega: f64,
    pub tau: f64,
    pub t_end: f64,
    pub algorithm: Algorithm,
    pub tol: f64,
    pub tol_nd: f64,
    pub kappa: f64,
    pub k0: f64,
    pub kmin: f64,
    pub kmax: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn defaults(command: &str) -> Self {
        let base = ExperimentConfig {
            command: command.to_string(),
            thetas: vec![2.0 / 3.0, 2.0 / 5f64.sqrt(), 1.0],
            eps: vec![-0.5, 0.0, 0.5],
            k: 0.2,
            levels: 4,
            ode_case: OdeCase::ForcedDecay,
            variable_steps: false,
            grid: 64,
            side_length: 2.0,
            case: CaseArg::Decay,
            omega: 1.0,
            tau: 100.0,
            t_end: 8.0,
            algorithm: Algorithm::Both,
            tol: 1e-7,
            tol_nd: 1e-14,
            kappa: 0.95,
            k0: 5e-4,
            kmin: 5e-4,
            kmax: 0.05,
            seed: 0,
        };
        match command {
            "nse-converge" => ExperimentConfig {
                k: 1.0 / 16.0,
                levels: 3,
                t_end: 1.0,
                thetas: vec![2.0 / 3.0, 2.0 / 5f64.sqrt()],
                ..base
            },
            "nse-adapt" => ExperimentConfig {
                grid: 48,
                case: CaseArg::Growth,
                tau: 2500.0,
                t_end: 10.0,
                thetas: vec![2.0 / 5f64.sqrt()],
                ..base
            },
            _ => base,
        }
    }

    /// Command defaults, then the JSON file, then explicit flags.
    pub fn resolve(command: &str, file: Option<&Path>, overrides: Value) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::defaults(command))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            overlay(&mut merged, doc)?;
        }
        overlay(&mut merged, overrides)?;
        merged["command"] = Value::String(command.to_string());
        let cfg: ExperimentConfig = serde_json::from_value(merged).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            bail!("thetas must be a non-empty list in [0, 1]");
        }
        if self.eps.iter().any(|e| !(*e > -1.0 && *e < 1.0)) {
            bail!("eps values must lie in (-1, 1)");
        }
        for (name, v) in [("k", self.k), ("t_end", self.t_end), ("tau", self.tau), ("tol", self.tol), ("tol_nd", self.tol_nd)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            bail!("kappa must be in (0, 1]");
        }
        if !(self.kmin > 0.0 && self.kmin <= self.kmax && self.k0 > 0.0) {
            bail!("need 0 < kmin <= kmax and k0 > 0");
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn overlay(base: &mut Value, top: Value) -> Result<()> {
    let Value::Object(top) = top else {
        bail!("configuration must be a JSON object");
    };
    let base = base.as_object_mut().expect("defaults are an object");
    for (key, value) in top {
        if !base.contains_key(&key) {
            bail!("unknown configuration key `{key}`");
        }
        base.insert(key, value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = std::env::temp_dir().join(format!("dln-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("c.json");
        std::fs::write(&file, r#"{"grid": 32, "tau": 50.0}"#).unwrap();
        let cfg = ExperimentConfig::resolve("nse-converge", Some(&file), json!({"tau": 10.0})).unwrap();
        assert_eq!(cfg.grid, 32);
        assert_eq!(cfg.tau, 10.0);
        assert_eq!(cfg.t_end, 1.0);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::resolve("coeffs", None, json!({"gird": 3})).is_err());
        assert!(ExperimentConfig::resolve("coeffs", None, json!({"thetas": [1.5]})).is_err());
        assert!(ExperimentConfig::resolve("nse-adapt", None, json!({"kmin": 1.0, "kmax": 0.1})).is_err());
    }

    #[test]
    fn canonical_json_round_trips() {
        let cfg = ExperimentConfig::defaults("nse-adapt");
        let back: ExperimentConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
