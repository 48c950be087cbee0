use behavioral_core::hankel::{
    behavior_rank, check_pe, covariance_transfer_residual, factorize_measure, mean_behavior_residual, pinv_lift,
    pushforward_measure, HankelMatrix, MEMBERSHIP_RTOL, RANK_RTOL,
};
use behavioral_core::measure::DiscreteDistribution;
use behavioral_core::rng::SeededRng;
use behavioral_core::system::Dynamics;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{fresh_window, identification_data, resolve_lti};
use crate::config::{check_positive, set, CommandConfig, InputSignal, SystemSpec, Tolerances};
use crate::error::{CliError, Result};
use crate::io::write_table_csv;
use crate::report::{Check, OutputDir, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HankelConfig {
    pub system: SystemSpec,
    /// Length of the identification experiment.
    pub n_data: usize,
    /// Window length `L`.
    pub depth: usize,
    pub input: InputSignal,
    /// Fresh windows checked for membership.
    pub n_val: usize,
    /// Windows in the empirical-mean test (the first `n_mean` of the fresh ones).
    pub n_mean: usize,
    /// Random measures in the factorization round trip.
    pub n_roundtrip: usize,
    pub max_roundtrip_atoms: usize,
    pub seed: u64,
    pub rank_rtol: f64,
    pub min_gap_ratio: f64,
    pub membership_tol: f64,
}

impl Default for HankelConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::named("siso_validation"),
            n_data: 80,
            depth: 6,
            input: InputSignal::Gaussian { std: 1.0 },
            n_val: 200,
            n_mean: 25,
            n_roundtrip: 100,
            max_roundtrip_atoms: 10,
            seed: 2024,
            rank_rtol: RANK_RTOL,
            min_gap_ratio: 1e6,
            membership_tol: MEMBERSHIP_RTOL,
        }
    }
}

impl CommandConfig for HankelConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
    fn apply_tolerances(&mut self, tol: &Tolerances) {
        set(&mut self.rank_rtol, tol.rank);
        set(&mut self.membership_tol, tol.membership);
    }
}

#[derive(Debug, Serialize)]
pub struct PeSummary {
    pub order: usize,
    pub required_rank: usize,
    pub achieved_rank: usize,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct HankelResults {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub hankel_rows: usize,
    pub hankel_cols: usize,
    pub persistency: PeSummary,
    pub rank: usize,
    pub expected_rank: usize,
    /// `sigma_r / sigma_{r+1}`; `null` when infinite.
    pub gap_ratio: f64,
    pub singular_values: Vec<f64>,
    pub max_window_residual: f64,
    pub mean_residual: f64,
    /// `null` when some window could not be lifted.
    pub covariance_residual: Option<f64>,
    pub roundtrip_max_error: Option<f64>,
    pub failure: Option<String>,
    /// Per-window residuals, emitted as CSV rather than in the report.
    #[serde(skip)]
    pub window_residuals: Vec<f64>,
}

/// Largest `|H g - w| / max(1, |w|)` over atoms after factorizing and
/// pushing forward again, together with the largest weight change.
fn round_trip_error(h: &HankelMatrix, mu: &DiscreteDistribution, tol: f64) -> behavioral_core::Result<f64> {
    let nu = factorize_measure(h, mu, tol)?;
    let back = pushforward_measure(h, &nu)?;
    let mut worst = 0.0f64;
    for (a, b) in back.atoms().iter().zip(mu.atoms()) {
        worst = worst.max((a.weight - b.weight).abs());
        let d = DVector::from_column_slice(&a.point) - DVector::from_column_slice(&b.point);
        worst = worst.max(d.norm() / DVector::from_column_slice(&b.point).norm().max(1.0));
    }
    Ok(if back.atoms().len() == mu.atoms().len() { worst } else { f64::INFINITY })
}

pub fn compute(cfg: &HankelConfig) -> Result<HankelResults> {
    check_positive("membership_tol", cfg.membership_tol)?;
    if cfg.n_val == 0 || cfg.n_mean == 0 || cfg.n_mean > cfg.n_val {
        return Err(CliError::Config("need 0 < n_mean <= n_val".into()));
    }
    let sys = resolve_lti(&cfg.system)?;
    let (n_x, n_u, n_y) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
    let mut rng = SeededRng::new(cfg.seed);
    let (data, u) = identification_data(&sys, &cfg.input, &mut rng, cfg.n_data)?;

    let pe = check_pe(&u, cfg.depth + n_x)?;
    let h = HankelMatrix::build_with_rtol(&data, cfg.depth, cfg.rank_rtol)?;
    let br = behavior_rank(&h, n_u, n_x);

    let windows = (0..cfg.n_val)
        .map(|_| fresh_window(&sys, &mut rng, cfg.depth))
        .collect::<Result<Vec<_>>>()?;
    let residuals = windows
        .iter()
        .map(|w| Ok(pinv_lift(&h, w)?.relative_residual(w)))
        .collect::<Result<Vec<f64>>>()?;
    let max_window_residual = residuals.iter().copied().fold(0.0, f64::max);

    let uniform = |ws: &[DVector<f64>]| {
        DiscreteDistribution::from_pairs(ws.iter().map(|w| (1.0 / ws.len() as f64, w.as_slice().to_vec())))
    };
    let mean_residual = mean_behavior_residual(&uniform(&windows[..cfg.n_mean])?, &h)?;

    let mut failure = None;
    let covariance_residual = match covariance_transfer_residual(&uniform(&windows)?, &h, cfg.membership_tol) {
        Ok(r) => Some(r),
        Err(e) => {
            failure = Some(e.to_string());
            None
        }
    };

    let mut roundtrip_max_error = Some(0.0f64);
    for _ in 0..cfg.n_roundtrip {
        let k = 1 + rng.below(cfg.max_roundtrip_atoms.max(1));
        let weights = rng.simplex_point(k);
        let pairs = weights
            .into_iter()
            .map(|p| Ok((p, fresh_window(&sys, &mut rng, cfg.depth)?.as_slice().to_vec())))
            .collect::<Result<Vec<_>>>()?;
        let mu = DiscreteDistribution::from_pairs(pairs)?;
        match round_trip_error(&h, &mu, cfg.membership_tol) {
            Ok(e) => roundtrip_max_error = roundtrip_max_error.map(|m| m.max(e)),
            Err(e) => {
                failure.get_or_insert(e.to_string());
                roundtrip_max_error = None;
                break;
            }
        }
    }

    Ok(HankelResults {
        n_x,
        n_u,
        n_y,
        hankel_rows: h.nrows(),
        hankel_cols: h.ncols(),
        persistency: PeSummary {
            order: pe.order,
            required_rank: pe.required_rank,
            achieved_rank: pe.achieved_rank,
            pass: pe.pass,
        },
        rank: br.rank,
        expected_rank: br.expected,
        gap_ratio: br.gap_ratio,
        singular_values: h.singular_values().to_vec(),
        max_window_residual,
        mean_residual,
        covariance_residual,
        roundtrip_max_error,
        failure,
        window_residuals: residuals,
    })
}

pub fn run(cfg: &HankelConfig, out: &mut OutputDir) -> Result<Report> {
    let r = compute(cfg)?;
    let sv: Vec<Vec<f64>> = r
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, s)| vec![(i + 1) as f64, *s])
        .collect();
    out.emit("singular_values.csv", |p| write_table_csv(p, &["index", "sigma"], &sv))?;
    let rows: Vec<Vec<f64>> = r
        .window_residuals
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i as f64, *v])
        .collect();
    out.emit("window_residuals.csv", |p| write_table_csv(p, &["window", "relative_residual"], &rows))?;

    let tol = cfg.membership_tol;
    let checks = vec![
        Check::holds("persistency_of_excitation", r.persistency.pass),
        Check::holds("rank_matches_behavior_dimension", r.rank == r.expected_rank),
        Check::at_least("singular_value_gap", r.gap_ratio, cfg.min_gap_ratio),
        Check::at_most("max_window_residual", r.max_window_residual, tol),
        Check::at_most("mean_residual", r.mean_residual, tol),
        Check::at_most("covariance_residual", r.covariance_residual.unwrap_or(f64::INFINITY), tol),
        Check::at_most("roundtrip_max_error", r.roundtrip_max_error.unwrap_or(f64::INFINITY), tol),
    ];
    Report::new("hankel-validate", cfg, &r, checks, out.written())
}
