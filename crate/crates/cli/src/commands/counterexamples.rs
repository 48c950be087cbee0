use behavioral_core::measure::{metric_residual, weak_operator_residual, weak_vs_graph_counterexample};
use behavioral_core::stochastic::{
    history_counterexample, history_kernel_residual, marginal_kernel_residual, onestep_kernel_residual,
    sample_from_kernels, IndexMap, PolicyKernel, SamplingMode,
};
use behavioral_core::system::catalog::input_copy;
use serde::{Deserialize, Serialize};

use crate::config::{CommandConfig, Tolerances};
use crate::error::Result;
use crate::report::{Check, OutputDir, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    /// Atoms in the weak-identity counterexample.
    pub n: usize,
    /// Highest monomial degree of the weak test functions.
    pub max_degree: u32,
    pub metric_target: f64,
    pub metric_tol: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            n: 100,
            max_degree: 4,
            metric_target: 0.3333,
            metric_tol: 1e-3,
        }
    }
}

impl CommandConfig for CounterexampleConfig {
    fn set_seed(&mut self, _: u64) {}
    fn apply_tolerances(&mut self, _: &Tolerances) {}
}

#[derive(Debug, Serialize)]
pub struct CounterexampleResults {
    pub weak_residual: f64,
    pub metric_residual: f64,
    pub history_residual: f64,
    pub onestep_residual: f64,
    pub marginal_residual: f64,
    pub sanity_history_residual: f64,
    pub sanity_onestep_residual: f64,
}

pub fn compute(cfg: &CounterexampleConfig) -> Result<CounterexampleResults> {
    let sys = input_copy();
    let mu = weak_vs_graph_counterexample(cfg.n)?;
    let (st_mu, kernels) = history_counterexample();

    // Deterministic kernels with a deterministic policy from a spread-out start.
    let map = IndexMap {
        next: vec![vec![1, 2], vec![2, 0], vec![0, 1]],
    };
    let det = map.kernels(3)?;
    let policy = PolicyKernel::deterministic(&vec![vec![0, 1, 1]; 3], 2)?;
    let sample = sample_from_kernels(&[0.5, 0.25, 0.25], &det, &policy, SamplingMode::Exact)?;

    Ok(CounterexampleResults {
        weak_residual: weak_operator_residual(&mu, &sys, cfg.max_degree)?,
        metric_residual: metric_residual(&mu, &sys)?,
        history_residual: history_kernel_residual(&st_mu, &kernels)?,
        onestep_residual: onestep_kernel_residual(&st_mu, &kernels)?,
        marginal_residual: marginal_kernel_residual(&st_mu, &kernels)?,
        sanity_history_residual: history_kernel_residual(&sample, &det)?,
        sanity_onestep_residual: onestep_kernel_residual(&sample, &det)?,
    })
}

pub fn run(cfg: &CounterexampleConfig, out: &mut OutputDir) -> Result<Report> {
    let r = compute(cfg)?;
    let checks = vec![
        Check::at_most("weak_residual", r.weak_residual, 0.0),
        Check::near("metric_residual", r.metric_residual, cfg.metric_target, cfg.metric_tol),
        Check::near("history_residual", r.history_residual, 0.5, 0.0),
        Check::at_most("onestep_residual", r.onestep_residual, 0.0),
        Check::at_most("sanity_history_residual", r.sanity_history_residual, 0.0),
        Check::at_most("sanity_onestep_residual", r.sanity_onestep_residual, 0.0),
    ];
    Report::new("counterexamples", cfg, &r, checks, out.written())
}
