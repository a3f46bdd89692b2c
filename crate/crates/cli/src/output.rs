use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// An in-run invariant and whether it held.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Files produced by a command, keyed by file name so the write order is fixed.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub csv: BTreeMap<String, String>,
    pub svg: BTreeMap<String, String>,
    pub checks: Vec<Check>,
    pub summary: Vec<String>,
}

impl Artifacts {
    pub fn add_csv(&mut self, name: impl Into<String>, body: String) {
        self.csv.insert(name.into(), body);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Prefix a CSV body with `# config:` and `# sha256:` comment lines.
///
/// The hash covers the config line and the body.
pub fn with_metadata(config: &ExperimentConfig, body: &str) -> String {
    let config_line = format!("# config: {}\n", config.canonical_json());
    let hash = sha256_hex(format!("{config_line}{body}").as_bytes());
    format!("{config_line}# sha256: {hash}\n{body}")
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    files: BTreeMap<&'a str, String>,
    checks: &'a [Check],
    passed: bool,
}

pub fn write_all(dir: &Path, config: &ExperimentConfig, artifacts: &Artifacts) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = BTreeMap::new();
    for (name, body) in &artifacts.csv {
        let text = with_metadata(config, body);
        files.insert(name.as_str(), sha256_hex(text.as_bytes()));
        fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
    }
    for (name, body) in &artifacts.svg {
        fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
    }
    let meta = Metadata {
        command: &config.command,
        config,
        files,
        checks: &artifacts.checks,
        passed: artifacts.passed(),
    };
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
