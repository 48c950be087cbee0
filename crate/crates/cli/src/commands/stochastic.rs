use std::path::PathBuf;

use behavioral_core::rng::SeededRng;
use behavioral_core::stochastic::{
    history_kernel_residual, marginal_kernel_residual, onestep_kernel_residual, sample_from_kernels, FiniteKernel,
    FinitePathMeasure, PolicyKernel, SamplingMode,
};
use serde::{Deserialize, Serialize};

use crate::config::{check_positive, set, CommandConfig, Tolerances};
use crate::error::{CliError, Result};
use crate::io::{read_json, write_table_csv};
use crate::report::{Check, OutputDir, Report};

/// With `kernels` and `measure` set, checks that measure against those
/// kernels. Otherwise runs the randomized study: kernel-sampled measures,
/// their mixtures, and the ordering of the three residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticConfig {
    pub kernels: Option<PathBuf>,
    pub measure: Option<PathBuf>,
    pub n_instances: usize,
    pub max_states: usize,
    pub max_inputs: usize,
    pub max_horizon: usize,
    pub seed: u64,
    pub kernel_tol: f64,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            kernels: None,
            measure: None,
            n_instances: 200,
            max_states: 4,
            max_inputs: 3,
            max_horizon: 3,
            seed: 11,
            kernel_tol: 1e-12,
        }
    }
}

impl CommandConfig for StochasticConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn apply_tolerances(&mut self, tol: &Tolerances) {
        set(&mut self.kernel_tol, tol.kernel);
    }
}

#[derive(Debug, Serialize)]
pub struct FileResults {
    pub history_residual: f64,
    pub onestep_residual: f64,
    pub marginal_residual: f64,
}

#[derive(Debug, Default, Serialize)]
pub struct StudyResults {
    pub instances: usize,
    pub max_sampled_history: f64,
    pub max_mixture_history: f64,
    /// Instances where a smaller-conditioning residual was nonzero while a
    /// larger one vanished.
    pub ordering_violations: usize,
    /// Arbitrary measures that passed the history check.
    pub arbitrary_consistent: usize,
}

fn run_file(cfg: &StochasticConfig, kernels: &PathBuf, measure: &PathBuf) -> Result<(FileResults, Vec<Check>)> {
    let k: FiniteKernel = read_json(kernels)?;
    let mu: FinitePathMeasure = read_json(measure)?;
    let r = FileResults {
        history_residual: history_kernel_residual(&mu, &k)?,
        onestep_residual: onestep_kernel_residual(&mu, &k)?,
        marginal_residual: marginal_kernel_residual(&mu, &k)?,
    };
    let checks = vec![Check::at_most("history_residual", r.history_residual, cfg.kernel_tol)];
    Ok((r, checks))
}

fn run_study(cfg: &StochasticConfig, out: &mut OutputDir) -> Result<(StudyResults, Vec<Check>)> {
    if cfg.max_states < 1 || cfg.max_inputs < 1 || cfg.max_horizon < 1 {
        return Err(CliError::Config("alphabet sizes and horizon must be at least 1".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut r = StudyResults {
        instances: cfg.n_instances,
        ..Default::default()
    };
    let tol = cfg.kernel_tol;
    let mut rows = Vec::with_capacity(cfg.n_instances);
    for case in 0..cfg.n_instances {
        let t = 1 + rng.below(cfg.max_horizon);
        let s = 1 + rng.below(cfg.max_states);
        let a = 1 + rng.below(cfg.max_inputs);
        let k = FiniteKernel::random(&mut rng, t, s, a)?;
        let rho0 = rng.simplex_point(s);
        let p1 = PolicyKernel::random(&mut rng, t, s, a)?;
        let p2 = PolicyKernel::random(&mut rng, t, s, a)?;
        let mu1 = sample_from_kernels(&rho0, &k, &p1, SamplingMode::Exact)?;
        let mu2 = sample_from_kernels(&rho0, &k, &p2, SamplingMode::Exact)?;
        let mix = mu1.mixture(&mu2, rng.uniform())?;
        let sampled = history_kernel_residual(&mu1, &k)?.max(history_kernel_residual(&mu2, &k)?);
        let mixed = history_kernel_residual(&mix, &k)?;
        r.max_sampled_history = r.max_sampled_history.max(sampled);
        r.max_mixture_history = r.max_mixture_history.max(mixed);

        let n_atoms = 1 + rng.below(6);
        let arbitrary = FinitePathMeasure::random(&mut rng, t, s, a, n_atoms)?;
        let mut ordering_ok = true;
        for mu in [&mix, &arbitrary] {
            let h = history_kernel_residual(mu, &k)?;
            let o = onestep_kernel_residual(mu, &k)?;
            let m = marginal_kernel_residual(mu, &k)?;
            ordering_ok &= !(h <= tol && o > tol) && !(o <= tol && m > tol);
        }
        if !ordering_ok {
            r.ordering_violations += 1;
        }
        if history_kernel_residual(&arbitrary, &k)? <= tol {
            r.arbitrary_consistent += 1;
        }
        rows.push(vec![case as f64, t as f64, s as f64, a as f64, sampled, mixed]);
    }
    out.emit("stochastic_cases.csv", |p| {
        write_table_csv(
            p,
            &["case", "horizon", "states", "inputs", "sampled_history", "mixture_history"],
            &rows,
        )
    })?;
    let checks = vec![
        Check::at_most("max_sampled_history", r.max_sampled_history, tol),
        Check::at_most("max_mixture_history", r.max_mixture_history, tol),
        Check::at_most("ordering_violations", r.ordering_violations as f64, 0.0),
    ];
    Ok((r, checks))
}

pub fn run(cfg: &StochasticConfig, out: &mut OutputDir) -> Result<Report> {
    check_positive("kernel_tol", cfg.kernel_tol)?;
    match (&cfg.kernels, &cfg.measure) {
        (Some(k), Some(m)) => {
            let (r, checks) = run_file(cfg, k, m)?;
            Report::new("stochastic-check", cfg, &r, checks, out.written())
        }
        (None, None) => {
            let (r, checks) = run_study(cfg, out)?;
            Report::new("stochastic-check", cfg, &r, checks, out.written())
        }
        _ => Err(CliError::Config("kernels and measure must be given together".into())),
    }
}
