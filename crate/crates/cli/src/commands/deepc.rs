use std::path::PathBuf;

use behavioral_core::data_driven::{deepc_point, distributional_weights, ExpectationConstraint, QuadraticPathCost, Sense};
use behavioral_core::hankel::{pinv_lift, HankelMatrix, MEMBERSHIP_RTOL};
use behavioral_core::rng::SeededRng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fresh_window, identification_data, resolve_lti};
use crate::config::{check_positive, set, CommandConfig, InputSignal, SystemSpec, Tolerances};
use crate::error::{CliError, Result};
use crate::io::{read_json, read_matrix_csv, write_table_csv};
use crate::report::{Check, OutputDir, Report};

/// Any input file left out is generated from `system` with `seed`: the
/// Hankel matrix from an identification experiment, `w_ref` as a fresh
/// behavior window, and the atoms as lifts of fresh windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepcConfig {
    /// Matrix CSV of a block-Hankel matrix.
    pub hankel: Option<PathBuf>,
    pub depth: usize,
    /// Matrix CSV holding one row or one column.
    pub w_ref: Option<PathBuf>,
    /// Matrix CSV; identity when absent.
    pub weight: Option<PathBuf>,
    /// Matrix CSV with one coefficient vector per row.
    pub atoms: Option<PathBuf>,
    /// JSON list of expectation constraints.
    pub constraints: Option<PathBuf>,
    pub system: SystemSpec,
    pub n_data: usize,
    pub n_atoms: usize,
    pub seed: u64,
    pub membership_tol: f64,
}

impl Default for DeepcConfig {
    fn default() -> Self {
        Self {
            hankel: None,
            depth: 6,
            w_ref: None,
            weight: None,
            atoms: None,
            constraints: None,
            system: SystemSpec::named("siso_validation"),
            n_data: 80,
            n_atoms: 20,
            seed: 2024,
            membership_tol: MEMBERSHIP_RTOL,
        }
    }
}

impl CommandConfig for DeepcConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn apply_tolerances(&mut self, tol: &Tolerances) {
        set(&mut self.membership_tol, tol.membership);
    }
}

#[derive(Debug, Serialize)]
pub struct Residuals {
    /// `|w* - H H^+ w*| / max(1, |w*|)`.
    pub point_membership: f64,
    /// Largest constraint violation of the distributional solution.
    pub constraint_violation: f64,
    pub weight_mass_error: f64,
}

#[derive(Debug, Serialize)]
pub struct DeepcResults {
    /// Point optimum `min_g c(Hg)`.
    pub point_value: f64,
    pub w_star: Vec<f64>,
    /// Distributional optimum over the atom set.
    pub value: f64,
    pub weights: Vec<f64>,
    pub argmin_index: usize,
    pub atom_costs: Vec<f64>,
    pub residuals: Residuals,
    pub w_ref_generated: bool,
}

fn as_vector(m: DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    if m.nrows() == 1 || m.ncols() == 1 {
        Ok(DVector::from_iterator(m.len(), m.iter().copied()))
    } else {
        Err(CliError::Config(format!("{what} must have a single row or column")))
    }
}

pub fn run(cfg: &DeepcConfig, out: &mut OutputDir) -> Result<Report> {
    check_positive("membership_tol", cfg.membership_tol)?;
    let mut rng = SeededRng::new(cfg.seed);
    let sys = resolve_lti(&cfg.system);
    let h = match &cfg.hankel {
        Some(p) => HankelMatrix::from_matrix(&read_matrix_csv(p)?, cfg.depth)?,
        None => {
            let signal = InputSignal::Gaussian { std: 1.0 };
            let (data, _) = identification_data(sys.as_ref().map_err(clone_err)?, &signal, &mut rng, cfg.n_data)?;
            HankelMatrix::build(&data, cfg.depth)?
        }
    };
    let (w_ref, w_ref_generated) = match &cfg.w_ref {
        Some(p) => (as_vector(read_matrix_csv(p)?, "w_ref")?, false),
        None => (fresh_window(sys.as_ref().map_err(clone_err)?, &mut rng, cfg.depth)?, true),
    };
    let weight = cfg.weight.as_ref().map(|p| read_matrix_csv(p)).transpose()?;
    let atoms: Vec<DVector<f64>> = match &cfg.atoms {
        Some(p) => {
            let m = read_matrix_csv(p)?;
            m.row_iter().map(|r| r.transpose()).collect()
        }
        None => (0..cfg.n_atoms)
            .map(|_| {
                let w = fresh_window(sys.as_ref().map_err(clone_err)?, &mut rng, cfg.depth)?;
                Ok(pinv_lift(&h, &w)?.g)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let constraints: Vec<ExpectationConstraint> = match &cfg.constraints {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };

    let cost = QuadraticPathCost::new(w_ref.clone(), weight)?;
    let point = deepc_point(&h, &cost)?;
    let dist = distributional_weights(&h, &atoms, &cost, &constraints)?;

    let windows: Vec<DVector<f64>> = atoms.iter().map(|g| h.matrix() * g).collect();
    let constraint_violation = constraints
        .iter()
        .map(|c| {
            let e: f64 = dist.weights.iter().zip(&windows).map(|(p, w)| p * c.phi(w)).sum();
            match c.sense {
                Sense::Le => (e - c.bound).max(0.0),
                Sense::Eq => (e - c.bound).abs(),
            }
        })
        .fold(0.0, f64::max);
    let residuals = Residuals {
        point_membership: h.relative_membership_residual(&point.w),
        constraint_violation,
        weight_mass_error: (dist.weights.iter().sum::<f64>() - 1.0).abs(),
    };

    let rows: Vec<Vec<f64>> = dist
        .weights
        .iter()
        .zip(&dist.atom_costs)
        .enumerate()
        .map(|(i, (p, c))| vec![i as f64, *p, *c])
        .collect();
    out.emit("deepc_weights.csv", |p| write_table_csv(p, &["atom", "weight", "cost"], &rows))?;

    let tol = cfg.membership_tol;
    let scale = w_ref.norm_squared().max(1.0);
    let mut checks = vec![
        Check::at_most("point_membership", residuals.point_membership, tol),
        Check::at_most("constraint_violation", residuals.constraint_violation, tol),
        Check::at_most("weight_mass_error", residuals.weight_mass_error, 1e-12),
        // The point problem ranges over all of col H, so it cannot lose to an atom.
        Check::at_most("point_minus_best_atom", (point.value - dist.atom_costs[dist.argmin_index]) / scale, tol),
    ];
    if w_ref_generated {
        checks.push(Check::at_most("behavior_reference_value", point.value / scale, tol));
    }
    let results = DeepcResults {
        point_value: point.value,
        w_star: point.w.as_slice().to_vec(),
        value: dist.value,
        weights: dist.weights,
        argmin_index: dist.argmin_index,
        atom_costs: dist.atom_costs,
        residuals,
        w_ref_generated,
    };
    Report::new("deepc", cfg, &results, checks, out.written())
}

fn clone_err(e: &CliError) -> CliError {
    CliError::Config(e.to_string())
}
