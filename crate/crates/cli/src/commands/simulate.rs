use behavioral_core::rng::SeededRng;
use behavioral_core::system::{graph_residual, simulate, Dynamics};
use serde::{Deserialize, Serialize};

use crate::config::{CommandConfig, InputSignal, SystemSpec, Tolerances};
use crate::error::{CliError, Result};
use crate::io::write_trajectory_csv;
use crate::report::{Check, OutputDir, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub system: SystemSpec,
    /// Zero when absent.
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
    pub input: InputSignal,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::named("siso_validation"),
            x0: None,
            steps: 80,
            input: InputSignal::Gaussian { std: 1.0 },
            seed: 1,
        }
    }
}

impl CommandConfig for SimulateConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn apply_tolerances(&mut self, _: &Tolerances) {}
}

#[derive(Serialize)]
struct Results {
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    final_state: Vec<f64>,
}

pub fn run(cfg: &SimulateConfig, out: &mut OutputDir) -> Result<Report> {
    let sys = cfg.system.resolve()?;
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; sys.state_dim()]);
    if x0.len() != sys.state_dim() {
        return Err(CliError::Config(format!(
            "x0 has {} entries, the system has {} states",
            x0.len(),
            sys.state_dim()
        )));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let u = cfg.input.generate(&mut rng, sys.input_dim(), cfg.steps)?;
    let traj = simulate(&sys, &x0, &u)?;
    out.emit("trajectory.csv", |p| write_trajectory_csv(p, &traj))?;
    let results = Results {
        horizon: traj.horizon(),
        state_dim: sys.state_dim(),
        input_dim: sys.input_dim(),
        output_dim: sys.output_dim(),
        final_state: traj.states().last().cloned().unwrap_or_default(),
    };
    let checks = vec![Check::at_most("graph_residual", graph_residual(&sys, &traj)?, 0.0)];
    Report::new("simulate", cfg, &results, checks, out.written())
}
