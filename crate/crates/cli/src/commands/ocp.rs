use behavioral_core::ocp::{
    assemble_lp, assemble_lp_reachable, bellman_solve, discretize, distributional_value, duality_report,
    extract_policy, flow_check, lp_solve, rollout, DistributionalValue, InitialLaw, QuadraticCosts, DUALITY_RTOL,
};
use behavioral_core::system::{cost_eval, matrix_from_rows, simulate, Dynamics};
use serde::{Deserialize, Serialize};

use crate::config::{check_positive, set, CommandConfig, GridSpec, SystemSpec, Tolerances};
use crate::error::{CliError, Result};
use crate::io::write_table_csv;
use crate::report::{Check, OutputDir, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub system: SystemSpec,
    pub state_grid: GridSpec,
    pub input_grid: GridSpec,
    /// Row-major stage weight.
    pub q: Vec<Vec<f64>>,
    pub r: f64,
    pub qf: Vec<Vec<f64>>,
    pub horizon: usize,
    pub initial_law: InitialLaw,
    /// Second initial law solved for its integrated value; skipped when absent.
    pub distributional: Option<InitialLaw>,
    /// Input sequence evaluated on the continuous dynamics from a Dirac `x0`.
    pub reference_inputs: Option<Vec<Vec<f64>>>,
    /// Restrict the LP to states reachable from the support of the initial law.
    pub reachable_only: bool,
    pub duality_rtol: f64,
    pub slack_tol: f64,
    pub flow_tol: f64,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::named("planar_nonlinear"),
            state_grid: GridSpec::uniform(2, -1.5, 1.5, 41),
            input_grid: GridSpec::uniform(1, -1.0, 1.0, 21),
            q: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
            r: 0.05,
            qf: vec![vec![4.0, 0.0], vec![0.0, 2.0]],
            horizon: 2,
            initial_law: InitialLaw::Dirac { x0: vec![0.9, 0.4] },
            distributional: Some(InitialLaw::UniformBox {
                lower: vec![0.7, 0.2],
                upper: vec![1.1, 0.6],
            }),
            reference_inputs: Some(vec![vec![-1.0], vec![0.691]]),
            reachable_only: true,
            duality_rtol: DUALITY_RTOL,
            slack_tol: 1e-8,
            flow_tol: 1e-9,
        }
    }
}

impl CommandConfig for OcpConfig {
    fn set_seed(&mut self, _: u64) {}
    fn apply_tolerances(&mut self, tol: &Tolerances) {
        set(&mut self.duality_rtol, tol.duality);
        set(&mut self.slack_tol, tol.slack);
    }
}

#[derive(Debug, Serialize)]
pub struct PathSummary {
    pub inputs: Vec<Vec<f64>>,
    pub cost: f64,
}

#[derive(Debug, Serialize)]
pub struct PolicyEntry {
    pub t: usize,
    pub state: usize,
    pub x: Vec<f64>,
    pub input: usize,
    pub u: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct OcpResults {
    pub n_states: usize,
    pub n_inputs: usize,
    pub lp_rows: usize,
    pub lp_cols: usize,
    pub lp_iterations: usize,
    pub p_star: f64,
    pub d_star: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub flow_marginal: f64,
    pub flow_dynamics: f64,
    pub flow_mass: f64,
    pub slackness_checked: usize,
    pub max_slack: Option<f64>,
    pub policy: Vec<PolicyEntry>,
    /// Greedy lattice feedback applied to the continuous dynamics.
    pub rollout: Option<PathSummary>,
    pub rollout_relative_to_dp: Option<f64>,
    pub reference: Option<PathSummary>,
    pub distributional: Option<DistributionalValue>,
    pub failure: Option<String>,
}

pub fn run(cfg: &OcpConfig, out: &mut OutputDir) -> Result<Report> {
    check_positive("duality_rtol", cfg.duality_rtol)?;
    check_positive("slack_tol", cfg.slack_tol)?;
    let sys = cfg.system.resolve()?;
    let xg = cfg.state_grid.build()?;
    let ug = cfg.input_grid.build()?;
    let costs = QuadraticCosts {
        q: matrix_from_rows(&cfg.q)?,
        r: cfg.r,
        qf: matrix_from_rows(&cfg.qf)?,
    };
    let n_x = sys.state_dim();
    for (m, name) in [(&costs.q, "q"), (&costs.qf, "qf")] {
        if m.shape() != (n_x, n_x) {
            return Err(CliError::Config(format!("{name} must be {n_x}x{n_x}")));
        }
    }

    let ocp = discretize(&sys, &xg, &ug, &costs, cfg.horizon, &cfg.initial_law)?;
    let vt = bellman_solve(&ocp);
    let occ = if cfg.reachable_only {
        assemble_lp_reachable(&ocp)
    } else {
        assemble_lp(&ocp)
    };
    let sol = lp_solve(&occ, &ocp)?;
    let duality = duality_report(&sol, &vt, &ocp);
    let (flow_marginal, flow_dynamics, flow_mass) = flow_check(&sol, &ocp);

    let mut failure = None;
    let (policy, max_slack, slackness_checked) = match extract_policy(&sol, &vt, &ocp, cfg.slack_tol) {
        Ok(p) => (p.policy, Some(p.max_slack), p.checked),
        Err(e) => {
            failure = Some(e.to_string());
            (vec![vec![None; ocp.n_states()]; ocp.horizon()], None, 0)
        }
    };
    let policy_entries: Vec<PolicyEntry> = policy
        .iter()
        .enumerate()
        .flat_map(|(t, row)| {
            row.iter().enumerate().filter_map(move |(x, u)| u.map(|u| (t, x, u)))
        })
        .map(|(t, x, u)| PolicyEntry {
            t,
            state: x,
            x: ocp.state_points()[x].clone(),
            input: u,
            u: ocp.input_points()[u].clone(),
        })
        .collect();

    let dirac_x0 = match &cfg.initial_law {
        InitialLaw::Dirac { x0 } => Some(x0.clone()),
        InitialLaw::UniformBox { .. } => None,
    };
    let (rollout_summary, rollout_relative_to_dp) = match &dirac_x0 {
        Some(x0) => {
            let (traj, cost) = rollout(&sys, &ocp, &vt, &xg, &costs, x0)?;
            let rel = (cost - duality.dual) / duality.dual.abs().max(f64::MIN_POSITIVE);
            (
                Some(PathSummary {
                    inputs: traj.inputs().to_vec(),
                    cost,
                }),
                Some(rel),
            )
        }
        None => (None, None),
    };
    let reference = match (&dirac_x0, &cfg.reference_inputs) {
        (Some(x0), Some(inputs)) => {
            let traj = simulate(&sys, x0, inputs)?;
            Some(PathSummary {
                inputs: inputs.clone(),
                cost: cost_eval(&traj, &costs.q, costs.r, &costs.qf)?,
            })
        }
        _ => None,
    };
    let distributional = match &cfg.distributional {
        Some(law) => {
            let spread = discretize(&sys, &xg, &ug, &costs, cfg.horizon, law)?;
            Some(distributional_value(&spread, &xg)?)
        }
        None => None,
    };

    let v0: Vec<Vec<f64>> = ocp
        .state_points()
        .iter()
        .zip(&vt.values[0])
        .map(|(p, v)| p.iter().copied().chain([*v]).collect())
        .collect();
    let mut v0_header: Vec<String> = (1..=n_x).map(|i| format!("x{i}")).collect();
    v0_header.push("v0".into());
    out.emit("value_function.csv", |p| {
        write_table_csv(p, &v0_header.iter().map(String::as_str).collect::<Vec<_>>(), &v0)
    })?;
    let n_u = ug.dim();
    let mut pol_header: Vec<String> = vec!["t".into(), "state".into()];
    pol_header.extend((1..=n_x).map(|i| format!("x{i}")));
    pol_header.push("input".into());
    pol_header.extend((1..=n_u).map(|i| format!("u{i}")));
    let pol_rows: Vec<Vec<f64>> = policy_entries
        .iter()
        .map(|e| {
            let mut row = vec![e.t as f64, e.state as f64];
            row.extend(&e.x);
            row.push(e.input as f64);
            row.extend(&e.u);
            row
        })
        .collect();
    out.emit("policy.csv", |p| {
        write_table_csv(p, &pol_header.iter().map(String::as_str).collect::<Vec<_>>(), &pol_rows)
    })?;
    let a = ocp.n_inputs();
    let occupation: Vec<Vec<f64>> = sol
        .lambda
        .iter()
        .enumerate()
        .flat_map(|(t, table)| {
            table
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(move |(k, &m)| vec![t as f64, (k / a) as f64, (k % a) as f64, m])
        })
        .collect();
    out.emit("occupation.csv", |p| write_table_csv(p, &["t", "state", "input", "mass"], &occupation))?;

    let mut checks = vec![
        Check::at_most("duality_relative_gap", duality.relative_gap, cfg.duality_rtol),
        Check::at_most("max_slack", max_slack.unwrap_or(f64::INFINITY), cfg.slack_tol),
        Check::at_most("flow_marginal", flow_marginal, cfg.flow_tol),
        Check::at_most("flow_dynamics", flow_dynamics, cfg.flow_tol),
        Check::at_most("flow_mass", flow_mass, cfg.flow_tol),
    ];
    if let Some(d) = &distributional {
        let rel = (d.lp_value - d.integrated_value).abs() / d.integrated_value.abs().max(1.0);
        checks.push(Check::at_most("distributional_relative_gap", rel, cfg.duality_rtol));
    }

    let results = OcpResults {
        n_states: ocp.n_states(),
        n_inputs: ocp.n_inputs(),
        lp_rows: occ.lp.n_rows(),
        lp_cols: occ.lp.n_cols(),
        lp_iterations: sol.iterations,
        p_star: duality.primal,
        d_star: duality.dual,
        gap: duality.gap,
        relative_gap: duality.relative_gap,
        flow_marginal,
        flow_dynamics,
        flow_mass,
        slackness_checked,
        max_slack,
        policy: policy_entries,
        rollout: rollout_summary,
        rollout_relative_to_dp,
        reference,
        distributional,
        failure,
    };
    Report::new("ocp-solve", cfg, &results, checks, out.written())
}
