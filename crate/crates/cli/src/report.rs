//! Machine-readable run reports.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: &'static str,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=",
            limit,
            pass: value <= limit,
        }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=",
            limit,
            pass: value >= limit,
        }
    }

    /// `|value - target| <= tol`; the reported value is the deviation.
    pub fn near(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self::at_most(name, (value - target).abs(), tol)
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            relation: "==",
            limit: 1.0,
            pass: ok,
        }
    }
}

/// Input echo, computed values, checks and emitted files of one run.
/// Object keys are emitted in sorted order, so equal runs give equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub results: Value,
    pub checks: Vec<Check>,
    pub outputs: Vec<String>,
    pub pass: bool,
}

impl Report {
    pub fn new(
        command: &str,
        config: &impl Serialize,
        results: &impl Serialize,
        checks: Vec<Check>,
        outputs: Vec<String>,
    ) -> Result<Self> {
        let to_value = |v: serde_json::Result<Value>| v.map_err(|e| CliError::Config(e.to_string()));
        let pass = checks.iter().all(|c| c.pass);
        Ok(Self {
            command: command.into(),
            config: to_value(serde_json::to_value(config))?,
            results: to_value(serde_json::to_value(results))?,
            checks,
            outputs,
            pass,
        })
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values are serializable")
    }
}

/// Destination for emitted data files. Without a directory nothing is
/// written. File names are recorded relative to the directory.
#[derive(Debug, Default)]
pub struct OutputDir {
    dir: Option<PathBuf>,
    written: Vec<String>,
}

impl OutputDir {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        Ok(Self { dir, written: Vec::new() })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Runs `write` on the target path when a directory is set.
    pub fn emit(&mut self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if let Some(d) = &self.dir {
            write(&d.join(name))?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn written(&self) -> Vec<String> {
        self.written.clone()
    }
}
