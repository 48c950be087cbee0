//! Finite optimal-control instances: discretization on state/input lattices,
//! the backward Bellman recursion, the occupation-measure LP, strong-duality
//! and complementary-slackness audits, and policy extraction.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::lp::{self, StandardLp};
use crate::measure::{DiscreteDistribution, MASS_TOL};
use crate::rng::SeededRng;
use crate::system::{cost_eval, simulate, Dynamics, Trajectory};

/// Tensor lattice over a box; the first coordinate varies slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        check_dim("grid upper bounds", lower.len(), upper.len())?;
        check_dim("grid counts", lower.len(), counts.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one dimension".into()));
        }
        for ((&lo, &hi), &n) in lower.iter().zip(&upper).zip(&counts) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) || n < 2 {
                return Err(Error::InvalidArgument(format!(
                    "grid axis [{lo}, {hi}] with {n} points"
                )));
            }
        }
        Ok(Self { lower, upper, counts })
    }

    /// Same bounds and count on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn step(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    fn coordinate(&self, axis: usize, k: usize) -> f64 {
        if k == self.counts[axis] - 1 {
            self.upper[axis]
        } else {
            self.lower[axis] + k as f64 * self.step(axis)
        }
    }

    fn flat(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.counts).fold(0, |acc, (&k, &n)| acc * n + k)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|mut idx| {
                let mut p = vec![0.0; self.dim()];
                for axis in (0..self.dim()).rev() {
                    p[axis] = self.coordinate(axis, idx % self.counts[axis]);
                    idx /= self.counts[axis];
                }
                p
            })
            .collect()
    }

    /// Index of the lattice point nearest to `p` after clamping `p` to the box.
    /// Exact midpoints go to the lower index.
    pub fn nearest(&self, p: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|axis| {
                let clamped = p[axis].clamp(self.lower[axis], self.upper[axis]);
                let s = (clamped - self.lower[axis]) / self.step(axis);
                let k = (s - 0.5).ceil().max(0.0) as usize;
                k.min(self.counts[axis] - 1)
            })
            .collect();
        self.flat(&multi)
    }

    /// Indices of lattice points inside the closed box `[lo, hi]`.
    pub fn indices_in_box(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let eps = 1e-12;
        self.points()
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                p.iter().zip(lo).zip(hi).all(|((&v, &a), &b)| v >= a - eps && v <= b + eps)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// `x' Q x + r |u|^2` per stage and `x' Qf x` at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCosts {
    pub q: DMatrix<f64>,
    pub r: f64,
    pub qf: DMatrix<f64>,
}

impl QuadraticCosts {
    pub fn stage(&self, x: &[f64], u: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        xv.dot(&(&self.q * &xv)) + self.r * u.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        xv.dot(&(&self.qf * &xv))
    }
}

/// How the initial law is placed on the state lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// Dirac at the lattice point nearest to `x0`.
    Dirac { x0: Vec<f64> },
    /// Uniform over the lattice points inside the box.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteOcp {
    state_points: Vec<Vec<f64>>,
    input_points: Vec<Vec<f64>>,
    next: Vec<usize>,
    stage_cost: Vec<f64>,
    terminal_cost: Vec<f64>,
    horizon: usize,
    rho0: Vec<f64>,
}

impl FiniteOcp {
    /// `next`, `stage_cost` are row-major `S x A` tables.
    pub fn new(
        state_points: Vec<Vec<f64>>,
        input_points: Vec<Vec<f64>>,
        next: Vec<usize>,
        stage_cost: Vec<f64>,
        terminal_cost: Vec<f64>,
        horizon: usize,
        mut rho0: Vec<f64>,
    ) -> Result<Self> {
        let (s, a) = (state_points.len(), input_points.len());
        if s == 0 || a == 0 {
            return Err(Error::InvalidArgument("empty state or input set".into()));
        }
        check_dim("transition table", s * a, next.len())?;
        check_dim("stage cost table", s * a, stage_cost.len())?;
        check_dim("terminal cost table", s, terminal_cost.len())?;
        check_dim("initial law", s, rho0.len())?;
        if let Some(&bad) = next.iter().find(|&&j| j >= s) {
            return Err(Error::InvalidArgument(format!("successor index {bad} out of range")));
        }
        crate::measure::normalize(&mut rho0)?;
        Ok(Self {
            state_points,
            input_points,
            next,
            stage_cost,
            terminal_cost,
            horizon,
            rho0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.state_points.len()
    }
    pub fn n_inputs(&self) -> usize {
        self.input_points.len()
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn state_points(&self) -> &[Vec<f64>] {
        &self.state_points
    }
    pub fn input_points(&self) -> &[Vec<f64>] {
        &self.input_points
    }
    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }
    pub fn next(&self, x: usize, u: usize) -> usize {
        self.next[x * self.n_inputs() + u]
    }
    pub fn stage_cost(&self, x: usize, u: usize) -> f64 {
        self.stage_cost[x * self.n_inputs() + u]
    }
    pub fn terminal_cost(&self, x: usize) -> f64 {
        self.terminal_cost[x]
    }

    /// Same instance with another initial law.
    pub fn with_rho0(&self, rho0: Vec<f64>) -> Result<Self> {
        Self::new(
            self.state_points.clone(),
            self.input_points.clone(),
            self.next.clone(),
            self.stage_cost.clone(),
            self.terminal_cost.clone(),
            self.horizon,
            rho0,
        )
    }

    /// Random instance with costs in `[0, 1)` and a random initial law.
    pub fn random(rng: &mut SeededRng, states: usize, inputs: usize, horizon: usize) -> Result<Self> {
        let points = |n: usize| (0..n).map(|i| vec![i as f64]).collect::<Vec<_>>();
        let next = (0..states * inputs).map(|_| rng.below(states)).collect();
        let stage = (0..states * inputs).map(|_| rng.uniform()).collect();
        let terminal = (0..states).map(|_| rng.uniform()).collect();
        let rho0 = rng.simplex_point(states);
        Self::new(points(states), points(inputs), next, stage, terminal, horizon, rho0)
    }

    /// The instance as a deterministic system on index coordinates:
    /// state `[x as f64]`, input `[u as f64]`, no outputs.
    pub fn index_model(&self) -> IndexModel<'_> {
        IndexModel { ocp: self }
    }

    /// Total cost of a path of the [`IndexModel`].
    pub fn path_cost(&self, traj: &Trajectory) -> f64 {
        let idx = |v: &[f64]| v[0] as usize;
        let stages: f64 = (0..traj.horizon())
            .map(|t| self.stage_cost(idx(&traj.states()[t]), idx(&traj.inputs()[t])))
            .sum();
        stages + self.terminal_cost(idx(traj.states().last().unwrap()))
    }
}

pub struct IndexModel<'a> {
    ocp: &'a FiniteOcp,
}

impl Dynamics for IndexModel<'_> {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        0
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![self.ocp.next(x[0] as usize, u[0] as usize) as f64]
    }
    fn output(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

/// Tabulates a system on state and input lattices. Successors outside the
/// state box are clamped onto it before the nearest-point lookup.
pub fn discretize<S: Dynamics + ?Sized>(
    system: &S,
    x_grid: &Grid,
    u_grid: &Grid,
    costs: &QuadraticCosts,
    horizon: usize,
    law: &InitialLaw,
) -> Result<FiniteOcp> {
    check_dim("state grid dimension", system.state_dim(), x_grid.dim())?;
    check_dim("input grid dimension", system.input_dim(), u_grid.dim())?;
    let xs = x_grid.points();
    let us = u_grid.points();
    let mut next = Vec::with_capacity(xs.len() * us.len());
    let mut stage = Vec::with_capacity(xs.len() * us.len());
    for x in &xs {
        for u in &us {
            next.push(x_grid.nearest(&system.step(x, u)));
            stage.push(costs.stage(x, u));
        }
    }
    let terminal = xs.iter().map(|x| costs.terminal(x)).collect();
    let mut rho0 = vec![0.0; xs.len()];
    match law {
        InitialLaw::Dirac { x0 } => {
            check_dim("initial state", x_grid.dim(), x0.len())?;
            rho0[x_grid.nearest(x0)] = 1.0;
        }
        InitialLaw::UniformBox { lower, upper } => {
            let inside = x_grid.indices_in_box(lower, upper);
            if inside.is_empty() {
                return Err(Error::InvalidArgument("initial box contains no grid points".into()));
            }
            for &i in &inside {
                rho0[i] = 1.0 / inside.len() as f64;
            }
        }
    }
    FiniteOcp::new(xs, us, next, stage, terminal, horizon, rho0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables {
    /// `values[t][x]`, `t = 0..=T`.
    pub values: Vec<Vec<f64>>,
    /// Lowest-index minimizer, `greedy[t][x]`, `t = 0..T`.
    pub greedy: Vec<Vec<usize>>,
}

impl ValueTables {
    /// `sum_x rho0(x) V_0(x)`.
    pub fn integrated(&self, rho0: &[f64]) -> f64 {
        rho0.iter().zip(&self.values[0]).map(|(p, v)| p * v).sum()
    }
}

/// Backward recursion `V_T = phi`, `V_t(x) = min_u { l(x,u) + V_{t+1}(next(x,u)) }`.
pub fn bellman_solve(ocp: &FiniteOcp) -> ValueTables {
    let (s, a, horizon) = (ocp.n_states(), ocp.n_inputs(), ocp.horizon);
    let mut values = vec![Vec::new(); horizon + 1];
    let mut greedy = vec![Vec::new(); horizon];
    values[horizon] = ocp.terminal_cost.clone();
    for t in (0..horizon).rev() {
        let (mut vt, mut gt) = (vec![0.0; s], vec![0; s]);
        for x in 0..s {
            let mut best = (f64::INFINITY, 0);
            for u in 0..a {
                let q = ocp.stage_cost(x, u) + values[t + 1][ocp.next(x, u)];
                if q < best.0 {
                    best = (q, u);
                }
            }
            vt[x] = best.0;
            gt[x] = best.1;
        }
        values[t] = vt;
        greedy[t] = gt;
    }
    ValueTables { values, greedy }
}

/// Meaning of each LP column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpVar {
    Lambda { t: usize, x: usize, u: usize },
    TerminalRho { x: usize },
}

/// Occupation LP together with its column and row bookkeeping.
#[derive(Clone, Debug)]
pub struct OccupationLp {
    pub lp: StandardLp,
    pub vars: Vec<LpVar>,
    /// Row `(t, x)`: mass balance of state `x` at stage `t`.
    pub rows: Vec<(usize, usize)>,
}

/// Occupation LP over all states of every stage:
///
/// * `t = 0`: `sum_u lambda_0(x,u) = rho0(x)`,
/// * `0 < t < T`: `sum_u lambda_t(x,u) - sum_{next(x',u')=x} lambda_{t-1}(x',u') = 0`,
/// * `t = T`: `rho_T(x) - sum_{next(x',u')=x} lambda_{T-1}(x',u') = 0`,
///
/// minimizing `sum l lambda + sum phi rho_T`.
pub fn assemble_lp(ocp: &FiniteOcp) -> OccupationLp {
    let all: Vec<usize> = (0..ocp.n_states()).collect();
    assemble(ocp, &vec![all; ocp.horizon + 1])
}

/// The same LP restricted to states reachable from the support of `rho0`.
/// States outside the reachable set carry no mass in any feasible point, so
/// the optimal value is unchanged.
pub fn assemble_lp_reachable(ocp: &FiniteOcp) -> OccupationLp {
    let mut support: Vec<Vec<usize>> = Vec::with_capacity(ocp.horizon + 1);
    support.push((0..ocp.n_states()).filter(|&x| ocp.rho0[x] > 0.0).collect());
    for t in 0..ocp.horizon {
        let reach: BTreeSet<usize> = support[t]
            .iter()
            .flat_map(|&x| (0..ocp.n_inputs()).map(move |u| ocp.next(x, u)))
            .collect();
        support.push(reach.into_iter().collect());
    }
    assemble(ocp, &support)
}

fn assemble(ocp: &FiniteOcp, support: &[Vec<usize>]) -> OccupationLp {
    let horizon = ocp.horizon;
    let mut rows = Vec::new();
    let mut row_of: Vec<Vec<Option<usize>>> = vec![vec![None; ocp.n_states()]; horizon + 1];
    for (t, states) in support.iter().enumerate() {
        for &x in states {
            row_of[t][x] = Some(rows.len());
            rows.push((t, x));
        }
    }
    let rhs = rows.iter().map(|&(t, x)| if t == 0 { ocp.rho0[x] } else { 0.0 }).collect();
    let mut lp = StandardLp::new(rhs);
    let mut vars = Vec::new();
    for t in 0..horizon {
        for &x in &support[t] {
            for u in 0..ocp.n_inputs() {
                let mut entries = vec![(row_of[t][x].expect("own row"), 1.0)];
                if let Some(r) = row_of[t + 1][ocp.next(x, u)] {
                    entries.push((r, -1.0));
                }
                lp.add_column(ocp.stage_cost(x, u), entries).expect("rows in range");
                vars.push(LpVar::Lambda { t, x, u });
            }
        }
    }
    for &x in &support[horizon] {
        lp.add_column(ocp.terminal_cost[x], vec![(row_of[horizon][x].expect("own row"), 1.0)])
            .expect("rows in range");
        vars.push(LpVar::TerminalRho { x });
    }
    OccupationLp { lp, vars, rows }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    /// `lambda[t][x * A + u]`.
    pub lambda: Vec<Vec<f64>>,
    /// `rho[t][x]`, `t = 0..=T`.
    pub rho: Vec<Vec<f64>>,
    pub objective: f64,
    /// Row multipliers keyed like [`OccupationLp::rows`].
    pub duals: Vec<((usize, usize), f64)>,
    pub basis: Vec<usize>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn lambda_at(&self, ocp: &FiniteOcp, t: usize, x: usize, u: usize) -> f64 {
        self.lambda[t][x * ocp.n_inputs() + u]
    }

    /// Occupation tables as point distributions over index coordinates, the
    /// input format of [`crate::measure::reconstruct_markov`] on
    /// [`FiniteOcp::index_model`].
    pub fn as_index_marginals(&self, ocp: &FiniteOcp) -> Result<(DiscreteDistribution, Vec<DiscreteDistribution>)> {
        let a = ocp.n_inputs();
        let rho0 = DiscreteDistribution::from_pairs(
            ocp.rho0.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(x, &w)| (w, vec![x as f64])),
        )?;
        let lambdas = self
            .lambda
            .iter()
            .map(|table| {
                let total: f64 = table.iter().sum();
                DiscreteDistribution::from_pairs(
                    table
                        .iter()
                        .enumerate()
                        .filter(|(_, &w)| w > 0.0)
                        .map(|(k, &w)| (w / total, vec![(k / a) as f64, (k % a) as f64])),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((rho0, lambdas))
    }
}

/// Solves an assembled occupation LP and unpacks the occupation tables.
pub fn lp_solve(occ: &OccupationLp, ocp: &FiniteOcp) -> Result<LpSolution> {
    let result = lp::solve(&occ.lp)?;
    let (s, a, horizon) = (ocp.n_states(), ocp.n_inputs(), ocp.horizon);
    let mut lambda = vec![vec![0.0; s * a]; horizon];
    let mut rho = vec![vec![0.0; s]; horizon + 1];
    rho[0] = ocp.rho0.clone();
    for (var, &value) in occ.vars.iter().zip(&result.x) {
        match *var {
            LpVar::Lambda { t, x, u } => lambda[t][x * a + u] = value,
            LpVar::TerminalRho { x } => rho[horizon][x] = value,
        }
    }
    for t in 1..horizon {
        for (k, &v) in lambda[t].iter().enumerate() {
            rho[t][k / a] += v;
        }
    }
    Ok(LpSolution {
        lambda,
        rho,
        objective: result.objective,
        duals: occ.rows.iter().copied().zip(result.duals).collect(),
        basis: result.basis,
        iterations: result.iterations,
    })
}

/// Flow-constraint residuals of an LP solution (marginal, dynamics, mass).
pub fn flow_check(sol: &LpSolution, ocp: &FiniteOcp) -> (f64, f64, f64) {
    let (s, a) = (ocp.n_states(), ocp.n_inputs());
    let (mut marginal, mut dynamics, mut mass) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..ocp.horizon {
        let mut pushed = vec![0.0; s];
        for x in 0..s {
            let row: f64 = (0..a).map(|u| sol.lambda[t][x * a + u]).sum();
            marginal = marginal.max((row - sol.rho[t][x]).abs());
            for u in 0..a {
                pushed[ocp.next(x, u)] += sol.lambda[t][x * a + u];
            }
        }
        for x in 0..s {
            dynamics = dynamics.max((pushed[x] - sol.rho[t + 1][x]).abs());
        }
    }
    for rho in &sol.rho {
        mass = mass.max((rho.iter().sum::<f64>() - 1.0).abs());
    }
    (marginal, dynamics, mass)
}

/// Default relative tolerance for the duality gap.
pub const DUALITY_RTOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub pass: bool,
}

/// `|p* - sum_x rho0(x) V_0(x)|`, passing at `gap <= 1e-8 (1 + |p*|)`.
pub fn duality_report(sol: &LpSolution, vt: &ValueTables, ocp: &FiniteOcp) -> DualityReport {
    let dual = vt.integrated(&ocp.rho0);
    let gap = (sol.objective - dual).abs();
    let relative_gap = gap / (1.0 + sol.objective.abs());
    DualityReport {
        primal: sol.objective,
        dual,
        gap,
        relative_gap,
        pass: relative_gap <= DUALITY_RTOL,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyReport {
    /// Input index per visited state; `None` where the state carries no mass.
    pub policy: Vec<Vec<Option<usize>>>,
    /// Largest Bellman slack over the support of the occupation measure.
    pub max_slack: f64,
    pub checked: usize,
}

/// Complementary-slackness audit and greedy feedback on visited states.
///
/// Every `(t, x, u)` with `lambda_t(x,u) > tol` must satisfy
/// `l(x,u) + V_{t+1}(next(x,u)) - V_t(x) <= tol`.
pub fn extract_policy(sol: &LpSolution, vt: &ValueTables, ocp: &FiniteOcp, tol: f64) -> Result<PolicyReport> {
    let (s, a) = (ocp.n_states(), ocp.n_inputs());
    let mut max_slack = 0.0f64;
    let mut checked = 0;
    let mut policy = vec![vec![None; s]; ocp.horizon];
    for t in 0..ocp.horizon {
        for x in 0..s {
            for u in 0..a {
                if sol.lambda[t][x * a + u] <= tol {
                    continue;
                }
                let slack = ocp.stage_cost(x, u) + vt.values[t + 1][ocp.next(x, u)] - vt.values[t][x];
                checked += 1;
                max_slack = max_slack.max(slack);
                if slack > tol {
                    return Err(Error::SlacknessViolation { t, state: x, input: u, slack });
                }
            }
            if sol.rho[t][x] > tol {
                policy[t][x] = Some(vt.greedy[t][x]);
            }
        }
    }
    Ok(PolicyReport {
        policy,
        max_slack,
        checked,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionalValue {
    pub lp_value: f64,
    pub integrated_value: f64,
    /// `(state index, V_0)` over the support of `rho0`.
    pub point_values: Vec<(usize, f64)>,
    pub mean_state: Vec<f64>,
    /// `V_0` at the lattice point nearest to the mean initial state.
    pub value_at_mean: f64,
    /// `E[V_0(X_0)] - V_0(mean)`, signed.
    pub jensen_gap: f64,
}

/// LP value for a spread-out initial law next to its Bellman counterpart and
/// the value at the mean initial state.
pub fn distributional_value(ocp: &FiniteOcp, x_grid: &Grid) -> Result<DistributionalValue> {
    let vt = bellman_solve(ocp);
    let sol = lp_solve(&assemble_lp_reachable(ocp), ocp)?;
    let dim = ocp.state_points[0].len();
    let mut mean_state = vec![0.0; dim];
    let mut point_values = Vec::new();
    for (x, &w) in ocp.rho0.iter().enumerate() {
        if w > 0.0 {
            point_values.push((x, vt.values[0][x]));
            for (m, p) in mean_state.iter_mut().zip(&ocp.state_points[x]) {
                *m += w * p;
            }
        }
    }
    let integrated_value = vt.integrated(&ocp.rho0);
    let value_at_mean = vt.values[0][x_grid.nearest(&mean_state)];
    Ok(DistributionalValue {
        lp_value: sol.objective,
        integrated_value,
        point_values,
        mean_state,
        value_at_mean,
        jensen_gap: integrated_value - value_at_mean,
    })
}

/// Applies the greedy lattice feedback to the true dynamics from `x0`: at
/// each stage the state is snapped to the nearest lattice point only to look
/// up the input. Returns the continuous trajectory and its cost.
pub fn rollout<S: Dynamics + ?Sized>(
    system: &S,
    ocp: &FiniteOcp,
    vt: &ValueTables,
    x_grid: &Grid,
    costs: &QuadraticCosts,
    x0: &[f64],
) -> Result<(Trajectory, f64)> {
    let mut x = x0.to_vec();
    let mut inputs = Vec::with_capacity(ocp.horizon);
    for t in 0..ocp.horizon {
        let u = ocp.input_points[vt.greedy[t][x_grid.nearest(&x)]].clone();
        x = system.step(&x, &u);
        inputs.push(u);
    }
    let traj = simulate(system, x0, &inputs)?;
    let cost = cost_eval(&traj, &costs.q, costs.r, &costs.qf)?;
    Ok((traj, cost))
}

/// Mass conservation of the initial law of an instance.
pub fn rho0_is_normalized(ocp: &FiniteOcp) -> bool {
    (ocp.rho0.iter().sum::<f64>() - 1.0).abs() <= MASS_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{reconstruct_markov, PathMeasure};
    use crate::poly::Polynomial;
    use crate::system::catalog::planar_nonlinear;
    use crate::system::PolynomialSystem;

    fn brute_force_nearest(points: &[Vec<f64>], p: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in points.iter().enumerate() {
            let d: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Minimum over all deterministic Markov policies, by enumeration.
    fn policy_enumeration(ocp: &FiniteOcp) -> f64 {
        let (s, a, horizon) = (ocp.n_states(), ocp.n_inputs(), ocp.horizon());
        let slots = s * horizon;
        let mut choice = vec![0usize; slots];
        let mut best = f64::INFINITY;
        loop {
            let mut dist = ocp.rho0().to_vec();
            let mut cost = 0.0;
            for t in 0..horizon {
                let mut next = vec![0.0; s];
                for x in 0..s {
                    let u = choice[t * s + x];
                    cost += dist[x] * ocp.stage_cost(x, u);
                    next[ocp.next(x, u)] += dist[x];
                }
                dist = next;
            }
            cost += dist.iter().enumerate().map(|(x, p)| p * ocp.terminal_cost(x)).sum::<f64>();
            best = best.min(cost);
            let mut k = 0;
            loop {
                if k == slots {
                    return best;
                }
                choice[k] += 1;
                if choice[k] < a {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }

    fn scalar_system(f: Polynomial) -> PolynomialSystem {
        PolynomialSystem::new(1, 1, vec![f], vec![], None).unwrap()
    }

    fn costs(n: usize, r: f64) -> QuadraticCosts {
        QuadraticCosts {
            q: DMatrix::identity(n, n),
            r,
            qf: DMatrix::identity(n, n),
        }
    }

    #[test]
    fn grid_lattice_and_validation() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![2, 3]).unwrap();
        assert_eq!(
            g.points(),
            vec![
                vec![0.0, -1.0],
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, -1.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0]
            ]
        );
        assert!(Grid::new(vec![0.0], vec![0.0], vec![3]).is_err());
        assert!(Grid::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(Grid::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn nearest_point_matches_brute_force() {
        let g = Grid::new(vec![-1.5, -1.5], vec![1.5, 1.5], vec![41, 41]).unwrap();
        let pts = g.points();
        let mut rng = SeededRng::new(1);
        for _ in 0..2000 {
            let p = vec![rng.uniform_in(-1.5, 1.5), rng.uniform_in(-1.5, 1.5)];
            assert_eq!(g.nearest(&p), brute_force_nearest(&pts, &p));
        }
        // Ties go to the lower index; out-of-box points clamp.
        let line = Grid::new(vec![0.0], vec![1.0], vec![3]).unwrap();
        assert_eq!(line.nearest(&[0.25]), 0);
        assert_eq!(line.nearest(&[0.75]), 1);
        assert_eq!(line.nearest(&[7.0]), 2);
        assert_eq!(line.nearest(&[-7.0]), 0);
    }

    #[test]
    fn identity_and_input_copy_dynamics() {
        let xg = Grid::new(vec![-1.0], vec![1.0], vec![3]).unwrap();
        let ug = Grid::new(vec![-1.0], vec![1.0], vec![3]).unwrap();
        let law = InitialLaw::Dirac { x0: vec![0.0] };
        let ident = discretize(&scalar_system(Polynomial::var(2, 0)), &xg, &ug, &costs(1, 0.0), 1, &law).unwrap();
        for x in 0..3 {
            for u in 0..3 {
                assert_eq!(ident.next(x, u), x);
            }
        }
        let copy = discretize(&scalar_system(Polynomial::var(2, 1)), &xg, &ug, &costs(1, 0.0), 1, &law).unwrap();
        for x in 0..3 {
            for u in 0..3 {
                assert_eq!(copy.next(x, u), u);
            }
        }
    }

    #[test]
    fn discretized_nonlinear_instance() {
        let xg = Grid::uniform(2, -1.5, 1.5, 41).unwrap();
        let ug = Grid::uniform(1, -1.0, 1.0, 21).unwrap();
        let law = InitialLaw::Dirac { x0: vec![0.9, 0.4] };
        let ocp = discretize(&planar_nonlinear(), &xg, &ug, &costs(2, 0.05), 2, &law).unwrap();
        assert_eq!((ocp.n_states(), ocp.n_inputs()), (1681, 21));
        let start = ocp.rho0().iter().position(|&w| w == 1.0).unwrap();
        assert_eq!(start, brute_force_nearest(ocp.state_points(), &[0.9, 0.4]));
        let p = &ocp.state_points()[start];
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn initial_box_law() {
        let xg = Grid::uniform(2, -1.5, 1.5, 41).unwrap();
        let ug = Grid::uniform(1, -1.0, 1.0, 21).unwrap();
        let law = InitialLaw::UniformBox { lower: vec![0.7, 0.2], upper: vec![1.1, 0.6] };
        let ocp = discretize(&planar_nonlinear(), &xg, &ug, &costs(2, 0.05), 2, &law).unwrap();
        let support = ocp.rho0().iter().filter(|&&w| w > 0.0).count();
        assert_eq!(support, 5 * 6);
        assert!(rho0_is_normalized(&ocp));
        let empty = InitialLaw::UniformBox { lower: vec![0.71, 0.21], upper: vec![0.72, 0.22] };
        assert!(discretize(&planar_nonlinear(), &xg, &ug, &costs(2, 0.05), 2, &empty).is_err());
    }

    #[test]
    fn bellman_trivial_cases() {
        let mut rng = SeededRng::new(2);
        let base = FiniteOcp::random(&mut rng, 4, 3, 3).unwrap();
        let zero = FiniteOcp::new(
            base.state_points().to_vec(),
            base.input_points().to_vec(),
            base.next.clone(),
            vec![0.0; 12],
            vec![0.0; 4],
            3,
            base.rho0().to_vec(),
        )
        .unwrap();
        let vt = bellman_solve(&zero);
        assert!(vt.values.iter().flatten().all(|&v| v == 0.0));

        // T = 1, l = u^2 with inputs {-1, 0, 1}, phi = 0.
        let pts = vec![vec![0.0], vec![1.0]];
        let inputs = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let stage = (0..2).flat_map(|_| [1.0, 0.0, 1.0]).collect();
        let ocp = FiniteOcp::new(pts, inputs, vec![0; 6], stage, vec![0.0; 2], 1, vec![1.0, 0.0]).unwrap();
        let vt = bellman_solve(&ocp);
        assert_eq!(vt.values[0], vec![0.0, 0.0]);
        assert_eq!(vt.greedy[0], vec![1, 1]);
    }

    #[test]
    fn bellman_matches_enumeration_on_two_state_instance() {
        // 2 states, 2 inputs, T = 2: 16 deterministic Markov policies.
        let pts = vec![vec![0.0], vec![1.0]];
        let ocp = FiniteOcp::new(
            pts.clone(),
            pts,
            vec![1, 0, 0, 1],
            vec![0.3, 1.0, 0.2, 0.9],
            vec![2.0, 0.5],
            2,
            vec![1.0, 0.0],
        )
        .unwrap();
        let vt = bellman_solve(&ocp);
        assert!((vt.values[0][0] - policy_enumeration(&ocp)).abs() < 1e-15);
        let ocp1 = ocp.with_rho0(vec![0.0, 1.0]).unwrap();
        assert!((vt.values[0][1] - policy_enumeration(&ocp1)).abs() < 1e-15);
    }

    #[test]
    fn smallest_lp_has_a_unique_point() {
        let ocp = FiniteOcp::new(vec![vec![0.0]], vec![vec![0.0]], vec![0], vec![1.5], vec![2.0], 1, vec![1.0]).unwrap();
        let occ = assemble_lp(&ocp);
        assert_eq!((occ.lp.n_cols(), occ.lp.n_rows()), (2, 2));
        let sol = lp_solve(&occ, &ocp).unwrap();
        assert_eq!(sol.lambda[0], vec![1.0]);
        assert_eq!(sol.rho[1], vec![1.0]);
        assert_eq!(sol.objective, 3.5);
    }

    #[test]
    fn rhs_carries_unit_mass_in_the_first_block() {
        let mut rng = SeededRng::new(3);
        let ocp = FiniteOcp::random(&mut rng, 5, 3, 3).unwrap();
        let occ = assemble_lp(&ocp);
        let first: f64 = occ.rows.iter().zip(occ.lp.rhs()).filter(|((t, _), _)| *t == 0).map(|(_, b)| b).sum();
        assert!((first - 1.0).abs() < 1e-15);
        assert_eq!(occ.lp.rhs().iter().filter(|&&b| b != 0.0).count() <= 5, true);
        // Summing all columns over a stage block conserves mass.
        for j in 0..occ.lp.n_cols() {
            let total: f64 = occ.lp.column(j).iter().map(|(_, a)| a).sum();
            assert!(total == 0.0 || total == 1.0);
        }
    }

    #[test]
    fn any_fixed_policy_is_lp_feasible() {
        let mut rng = SeededRng::new(4);
        for _ in 0..20 {
            let ocp = FiniteOcp::random(&mut rng, 5, 3, 3).unwrap();
            let occ = assemble_lp(&ocp);
            let policy: Vec<Vec<usize>> = (0..3).map(|_| (0..5).map(|_| rng.below(3)).collect()).collect();
            // Occupation of the policy via the Markov lift on the index model.
            let model = ocp.index_model();
            let rho0 = DiscreteDistribution::from_pairs(
                ocp.rho0().iter().enumerate().map(|(x, &w)| (w, vec![x as f64])),
            )
            .unwrap();
            let mut rho = ocp.rho0().to_vec();
            let mut lambdas = Vec::new();
            for t in 0..3 {
                let mut next = vec![0.0; 5];
                let mut pairs = Vec::new();
                for x in 0..5 {
                    if rho[x] > 0.0 {
                        pairs.push((rho[x], vec![x as f64, policy[t][x] as f64]));
                        next[ocp.next(x, policy[t][x])] += rho[x];
                    }
                }
                lambdas.push(DiscreteDistribution::from_pairs(pairs).unwrap());
                rho = next;
            }
            let mu = reconstruct_markov(&rho0, &lambdas, &model).unwrap();
            let marg = crate::measure::occupation_marginals(&mu);
            let mut z = vec![0.0; occ.lp.n_cols()];
            for (j, var) in occ.vars.iter().enumerate() {
                z[j] = match *var {
                    LpVar::Lambda { t, x, u } => marg.lambda[t]
                        .atoms()
                        .iter()
                        .filter(|a| a.point == [x as f64, u as f64])
                        .map(|a| a.weight)
                        .sum(),
                    LpVar::TerminalRho { x } => marg.rho[3]
                        .atoms()
                        .iter()
                        .filter(|a| a.point == [x as f64])
                        .map(|a| a.weight)
                        .sum(),
                };
            }
            for (lhs, rhs) in occ.lp.apply(&z).iter().zip(occ.lp.rhs()) {
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_instances_duality_enumeration_and_slackness() {
        let mut rng = SeededRng::new(5);
        for _ in 0..60 {
            let (s, a, horizon) = (1 + rng.below(6), 1 + rng.below(3), 1 + rng.below(3));
            let ocp = FiniteOcp::random(&mut rng, s, a, horizon).unwrap();
            let vt = bellman_solve(&ocp);
            let sol = lp_solve(&assemble_lp(&ocp), &ocp).unwrap();
            let report = duality_report(&sol, &vt, &ocp);
            assert!(report.pass, "{report:?}");
            let (m, d, mass) = flow_check(&sol, &ocp);
            assert!(m <= 1e-9 && d <= 1e-9 && mass <= 1e-9);
            extract_policy(&sol, &vt, &ocp, 1e-8).unwrap();
            if (a as f64).powi((s * horizon) as i32) <= 1e5 {
                let oracle = policy_enumeration(&ocp);
                assert!((sol.objective - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
            }
            let pruned = lp_solve(&assemble_lp_reachable(&ocp), &ocp).unwrap();
            assert!((pruned.objective - sol.objective).abs() <= 1e-9 * (1.0 + sol.objective.abs()));
        }
    }

    #[test]
    fn lp_value_is_affine_in_the_initial_law() {
        let mut rng = SeededRng::new(6);
        for _ in 0..20 {
            let ocp = FiniteOcp::random(&mut rng, 6, 3, 3).unwrap();
            let other = ocp.with_rho0(rng.simplex_point(6)).unwrap();
            let alpha = rng.uniform();
            let mixed: Vec<f64> = ocp.rho0().iter().zip(other.rho0()).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect();
            let value = |o: &FiniteOcp| lp_solve(&assemble_lp(o), o).unwrap().objective;
            let lhs = value(&ocp.with_rho0(mixed).unwrap());
            let rhs = alpha * value(&ocp) + (1.0 - alpha) * value(&other);
            assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn zero_cost_instance() {
        let mut rng = SeededRng::new(7);
        let base = FiniteOcp::random(&mut rng, 4, 2, 2).unwrap();
        let ocp = FiniteOcp::new(
            base.state_points().to_vec(),
            base.input_points().to_vec(),
            base.next.clone(),
            vec![0.0; 8],
            vec![0.0; 4],
            2,
            base.rho0().to_vec(),
        )
        .unwrap();
        let vt = bellman_solve(&ocp);
        let sol = lp_solve(&assemble_lp(&ocp), &ocp).unwrap();
        let r = duality_report(&sol, &vt, &ocp);
        assert_eq!((r.primal, r.dual), (0.0, 0.0));
        // Every input passes the slackness audit when costs vanish.
        for t in 0..2 {
            for x in 0..4 {
                for u in 0..2 {
                    assert_eq!(ocp.stage_cost(x, u) + vt.values[t + 1][ocp.next(x, u)] - vt.values[t][x], 0.0);
                }
            }
        }
        extract_policy(&sol, &vt, &ocp, 1e-8).unwrap();
    }

    #[test]
    fn slackness_violation_is_reported() {
        let pts = vec![vec![0.0], vec![1.0]];
        let ocp = FiniteOcp::new(pts.clone(), pts, vec![0, 1, 0, 1], vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0], 1, vec![1.0, 0.0]).unwrap();
        let vt = bellman_solve(&ocp);
        let mut sol = lp_solve(&assemble_lp(&ocp), &ocp).unwrap();
        sol.lambda[0] = vec![0.0, 1.0, 0.0, 0.0];
        assert!(matches!(
            extract_policy(&sol, &vt, &ocp, 1e-8),
            Err(Error::SlacknessViolation { t: 0, state: 0, input: 1, .. })
        ));
    }

    #[test]
    fn strictly_convex_costs_give_a_unique_input_per_visited_state() {
        let xg = Grid::uniform(1, -1.0, 1.0, 11).unwrap();
        let ug = Grid::uniform(1, -1.0, 1.0, 11).unwrap();
        // x' = 0.5 x + u, cost x^2 + u^2
        let f = Polynomial::monomial(2, &[(0, 1)], 0.5).plus(Polynomial::var(2, 1));
        let ocp = discretize(&scalar_system(f), &xg, &ug, &costs(1, 1.0), 3, &InitialLaw::Dirac { x0: vec![0.8] }).unwrap();
        let vt = bellman_solve(&ocp);
        let sol = lp_solve(&assemble_lp_reachable(&ocp), &ocp).unwrap();
        let report = extract_policy(&sol, &vt, &ocp, 1e-8).unwrap();
        for t in 0..3 {
            for x in 0..ocp.n_states() {
                let used: Vec<usize> = (0..ocp.n_inputs()).filter(|&u| sol.lambda_at(&ocp, t, x, u) > 1e-8).collect();
                assert!(used.len() <= 1);
                if let Some(&u) = used.first() {
                    assert_eq!(report.policy[t][x], Some(u));
                }
            }
        }
    }

    #[test]
    fn markov_rollout_of_lp_solution_attains_the_objective() {
        let mut rng = SeededRng::new(8);
        for _ in 0..30 {
            let ocp = FiniteOcp::random(&mut rng, 5, 3, 3).unwrap();
            let sol = lp_solve(&assemble_lp(&ocp), &ocp).unwrap();
            let (rho0, lambdas) = sol.as_index_marginals(&ocp).unwrap();
            let mu: PathMeasure = reconstruct_markov(&rho0, &lambdas, &ocp.index_model()).unwrap();
            let cost = mu.expect(|p| ocp.path_cost(p));
            assert!((cost - sol.objective).abs() <= 1e-9 * (1.0 + sol.objective.abs()));
        }
    }

    #[test]
    fn affine_value_has_no_jensen_gap() {
        // x' = x, l = 0, phi(x) = x: V_0(x) = x is affine.
        let xg = Grid::uniform(1, 0.0, 1.0, 11).unwrap();
        let ug = Grid::uniform(1, -1.0, 1.0, 3).unwrap();
        let law = InitialLaw::UniformBox { lower: vec![0.2], upper: vec![0.6] };
        let ident = scalar_system(Polynomial::var(2, 0));
        let base = discretize(&ident, &xg, &ug, &costs(1, 0.0), 2, &law).unwrap();
        let terminal: Vec<f64> = base.state_points().iter().map(|p| p[0]).collect();
        let ocp = FiniteOcp::new(
            base.state_points().to_vec(),
            base.input_points().to_vec(),
            base.next.clone(),
            vec![0.0; base.n_states() * base.n_inputs()],
            terminal,
            2,
            base.rho0().to_vec(),
        )
        .unwrap();
        let dv = distributional_value(&ocp, &xg).unwrap();
        assert!((dv.lp_value - dv.integrated_value).abs() <= 1e-12);
        assert!(dv.jensen_gap.abs() <= 1e-12);
        assert_eq!(dv.point_values.len(), 5);
    }

    #[test]
    fn dirac_distributional_value_reduces_to_duality() {
        let xg = Grid::uniform(2, -1.5, 1.5, 13).unwrap();
        let ug = Grid::uniform(1, -1.0, 1.0, 5).unwrap();
        let law = InitialLaw::Dirac { x0: vec![0.9, 0.4] };
        let ocp = discretize(&planar_nonlinear(), &xg, &ug, &costs(2, 0.05), 2, &law).unwrap();
        let dv = distributional_value(&ocp, &xg).unwrap();
        assert!((dv.lp_value - dv.integrated_value).abs() <= 1e-8 * (1.0 + dv.lp_value.abs()));
        assert_eq!(dv.jensen_gap, 0.0);
    }
}
