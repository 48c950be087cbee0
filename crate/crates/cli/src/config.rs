//! Pieces shared by the subcommand configurations.

use std::path::{Path, PathBuf};

use behavioral_core::ocp::Grid;
use behavioral_core::rng::SeededRng;
use behavioral_core::system::{catalog, System};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::read_json;

/// A built-in system by name, a path to a system JSON file, or an inline
/// system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Named(String),
    Inline(System),
}

pub const BUILTIN_SYSTEMS: [&str; 4] = ["siso_validation", "planar_nonlinear", "scalar_quadratic", "input_copy"];

impl SystemSpec {
    pub fn named(name: &str) -> Self {
        Self::Named(name.to_string())
    }

    pub fn resolve(&self) -> Result<System> {
        match self {
            Self::Inline(sys) => Ok(sys.clone()),
            Self::Named(name) => Ok(match name.as_str() {
                "siso_validation" => System::Lti(catalog::siso_validation()),
                "planar_nonlinear" => System::Poly(catalog::planar_nonlinear()),
                "scalar_quadratic" => System::Poly(catalog::scalar_quadratic()),
                "input_copy" => System::Poly(catalog::input_copy()),
                path => read_json(Path::new(path))?,
            }),
        }
    }
}

/// Tensor lattice bounds and point counts per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn uniform(dim: usize, lower: f64, upper: f64, count: usize) -> Self {
        Self {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
            counts: vec![count; dim],
        }
    }

    pub fn build(&self) -> Result<Grid> {
        Ok(Grid::new(self.lower.clone(), self.upper.clone(), self.counts.clone())?)
    }
}

/// How an input sequence is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    /// Independent `N(0, std^2)` samples per channel.
    Gaussian { std: f64 },
    /// The same input vector at every step.
    Constant { value: Vec<f64> },
}

impl InputSignal {
    pub fn generate(&self, rng: &mut SeededRng, n_u: usize, steps: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Gaussian { std } => {
                if !(*std >= 0.0 && std.is_finite()) {
                    return Err(CliError::Config(format!("input std {std} must be finite and nonnegative")));
                }
                Ok((0..steps)
                    .map(|_| rng.normal_vec(n_u).into_iter().map(|v| v * std).collect())
                    .collect())
            }
            Self::Constant { value } => {
                if value.len() != n_u {
                    return Err(CliError::Config(format!(
                        "constant input has {} entries, the system has {n_u} inputs",
                        value.len()
                    )));
                }
                Ok(vec![value.clone(); steps])
            }
        }
    }
}

/// Command-line tolerance overrides; `None` keeps the configured value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tolerances {
    pub rank: Option<f64>,
    pub membership: Option<f64>,
    pub duality: Option<f64>,
    pub slack: Option<f64>,
    pub moment: Option<f64>,
    pub kernel: Option<f64>,
}

pub(crate) fn set(target: &mut f64, value: Option<f64>) {
    if let Some(v) = value {
        *target = v;
    }
}

/// Behaviour every subcommand configuration shares.
pub trait CommandConfig: Serialize + DeserializeOwned + Default {
    fn set_seed(&mut self, seed: u64);
    fn apply_tolerances(&mut self, tol: &Tolerances);
}

/// The defaults, or the JSON file at `path`; missing fields keep defaults.
pub fn load<C: CommandConfig>(path: Option<&PathBuf>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => read_json(p),
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {value}")))
    }
}
