use behavioral_core::moments::{graph_ideal_residual, mixed_moments, moment_identity_residual, projection_cloud, sample_box_measure};
use behavioral_core::rng::SeededRng;
use behavioral_core::system::{bounds_violation, System};
use serde::{Deserialize, Serialize};

use crate::config::{check_positive, set, CommandConfig, SystemSpec, Tolerances};
use crate::error::{CliError, Result};
use crate::io::{write_moments_csv, write_table_csv};
use crate::report::{Check, OutputDir, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub system: SystemSpec,
    pub n_measures: usize,
    pub max_atoms: usize,
    /// Relaxation order `r`; identities up to total degree `2r` are checked.
    pub order: u32,
    pub cloud_points: usize,
    pub seed: u64,
    pub moment_tol: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::named("scalar_quadratic"),
            n_measures: 200,
            max_atoms: 8,
            order: 3,
            cloud_points: 2000,
            seed: 7,
            moment_tol: 1e-12,
        }
    }
}

impl CommandConfig for MomentsConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn apply_tolerances(&mut self, tol: &Tolerances) {
        set(&mut self.moment_tol, tol.moment);
    }
}

#[derive(Debug, Serialize)]
pub struct MomentsResults {
    pub n_measures: usize,
    pub max_identity_residual: f64,
    pub max_graph_ideal_residual: f64,
    pub max_bounds_violation: f64,
    pub cloud_points: usize,
    /// Bounding box of the cloud, `[min, max]` per coordinate.
    pub cloud_range: [[f64; 2]; 2],
}

pub fn run(cfg: &MomentsConfig, out: &mut OutputDir) -> Result<Report> {
    check_positive("moment_tol", cfg.moment_tol)?;
    if cfg.n_measures == 0 || cfg.max_atoms == 0 {
        return Err(CliError::Config("n_measures and max_atoms must be positive".into()));
    }
    let sys = match cfg.system.resolve()? {
        System::Poly(p) => p,
        System::Lti(_) => return Err(CliError::Config("moments needs a scalar polynomial system".into())),
    };
    let mut rng = SeededRng::new(cfg.seed);
    let (mut identity, mut ideal, mut violation) = (0.0f64, 0.0f64, 0.0f64);
    let mut first_table = None;
    for _ in 0..cfg.n_measures {
        let n_atoms = 1 + rng.below(cfg.max_atoms);
        let mu = sample_box_measure(&sys, &mut rng, n_atoms)?;
        identity = identity.max(moment_identity_residual(&mu, &sys, 0)?);
        ideal = ideal.max(graph_ideal_residual(&mu, &sys, 0, cfg.order)?);
        for a in mu.atoms() {
            violation = violation.max(bounds_violation(&sys, &a.traj));
        }
        if first_table.is_none() {
            first_table = Some(mixed_moments(&mu, 0, 2 * cfg.order)?);
        }
    }
    // A separate stream so the cloud does not depend on n_measures.
    let cloud = projection_cloud(&sys, cfg.cloud_points, cfg.seed.wrapping_add(1))?;
    let range = |f: fn(&(f64, f64)) -> f64| {
        cloud
            .iter()
            .map(f)
            .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
    };
    let cloud_range = [range(|p| p.0), range(|p| p.1)];
    let rows: Vec<Vec<f64>> = cloud.iter().map(|&(a, b)| vec![a, b]).collect();
    out.emit("projection_cloud.csv", |p| write_table_csv(p, &["m110", "m001"], &rows))?;
    if let Some(table) = &first_table {
        out.emit("moments.csv", |p| write_moments_csv(p, table))?;
    }

    let inside = cloud.iter().all(|&(a, b)| a.abs() <= 1.0 && b.abs() <= 1.0);
    let checks = vec![
        Check::at_most("moment_identity_residual", identity, cfg.moment_tol),
        Check::at_most("graph_ideal_residual", ideal, cfg.moment_tol),
        Check::at_most("bounds_violation", violation, 0.0),
        Check::holds("cloud_inside_unit_box", inside),
    ];
    let results = MomentsResults {
        n_measures: cfg.n_measures,
        max_identity_residual: identity,
        max_graph_ideal_residual: ideal,
        max_bounds_violation: violation,
        cloud_points: cloud.len(),
        cloud_range,
    };
    Report::new("moments", cfg, &results, checks, out.written())
}
