//! Finite-support probability measures on trajectory space.
//!
//! A [`PathMeasure`] is a list of weighted trajectories. Membership in the
//! behavioral-measure set is graph support: every atom with positive weight
//! must be an admissible path of the system.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::poly::{monomial_value, monomials_up_to};
use crate::system::{graph_residual, Dynamics, Trajectory};

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-12;

/// Checks nonnegativity and unit mass, and rescales onto the simplex.
pub(crate) fn normalize(weights: &mut [f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::NotNormalized { total });
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(())
}

/// Sum that does not depend on the order of its terms.
///
/// Terms are sorted before accumulation, so two expectations over the same
/// multiset of weighted values agree bit for bit.
pub fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathAtom {
    #[serde(rename = "w")]
    pub weight: f64,
    pub traj: Trajectory,
}

/// Serialized as `{"T": horizon, "atoms": [{"w": .., "traj": ..}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathMeasureRaw", into = "PathMeasureRaw")]
pub struct PathMeasure {
    atoms: Vec<PathAtom>,
}

#[derive(Serialize, Deserialize)]
struct PathMeasureRaw {
    #[serde(rename = "T")]
    horizon: usize,
    atoms: Vec<PathAtom>,
}

impl TryFrom<PathMeasureRaw> for PathMeasure {
    type Error = Error;
    fn try_from(raw: PathMeasureRaw) -> Result<Self> {
        let mu = Self::new(raw.atoms)?;
        if mu.horizon() != raw.horizon {
            return Err(Error::InvalidArgument(format!(
                "declared T = {} but paths have horizon {}",
                raw.horizon,
                mu.horizon()
            )));
        }
        Ok(mu)
    }
}

impl From<PathMeasure> for PathMeasureRaw {
    fn from(mu: PathMeasure) -> Self {
        Self {
            horizon: mu.horizon(),
            atoms: mu.atoms,
        }
    }
}

impl PathMeasure {
    pub fn new(atoms: Vec<PathAtom>) -> Result<Self> {
        let mut weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
        normalize(&mut weights)?;
        let shape = atoms[0].traj.shape();
        for atom in &atoms {
            let other = atom.traj.shape();
            if other.0 != shape.0 || other.1 != shape.1 {
                return Err(Error::InvalidArgument(format!(
                    "trajectory shape {other:?} differs from {shape:?}"
                )));
            }
            if shape.0 > 0 && other != shape {
                return Err(Error::InvalidArgument(format!(
                    "trajectory shape {other:?} differs from {shape:?}"
                )));
            }
        }
        let atoms = atoms
            .into_iter()
            .zip(weights)
            .map(|(a, weight)| PathAtom { weight, ..a })
            .collect();
        Ok(Self { atoms })
    }

    pub fn dirac(traj: Trajectory) -> Self {
        Self {
            atoms: vec![PathAtom { weight: 1.0, traj }],
        }
    }

    /// Equal weights on the given paths.
    pub fn uniform(trajs: Vec<Trajectory>) -> Result<Self> {
        let w = 1.0 / trajs.len().max(1) as f64;
        Self::new(trajs.into_iter().map(|traj| PathAtom { weight: w, traj }).collect())
    }

    pub fn atoms(&self) -> &[PathAtom] {
        &self.atoms
    }

    pub fn horizon(&self) -> usize {
        self.atoms[0].traj.horizon()
    }

    /// `(T, n_x, n_u, n_y)` shared by all atoms.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.atoms[0].traj.shape()
    }

    /// `E[g(path)]` with an order-independent sum.
    pub fn expect(&self, g: impl Fn(&Trajectory) -> f64) -> f64 {
        order_free_sum(self.atoms.iter().map(|a| a.weight * g(&a.traj)).collect())
    }

    /// Law of `X_0`.
    pub fn initial_law(&self) -> DiscreteDistribution {
        DiscreteDistribution::merged(self.atoms.iter().map(|a| (a.weight, a.traj.states()[0].clone())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAtom {
    pub weight: f64,
    pub point: Vec<f64>,
}

/// Finite-support probability measure on `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    atoms: Vec<PointAtom>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<PointAtom>) -> Result<Self> {
        let mut weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
        normalize(&mut weights)?;
        let dim = atoms[0].point.len();
        for a in &atoms {
            check_dim("distribution point dimension", dim, a.point.len())?;
        }
        let atoms = atoms
            .into_iter()
            .zip(weights)
            .map(|(a, weight)| PointAtom { weight, ..a })
            .collect();
        Ok(Self { atoms })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(weight, point)| PointAtom { weight, point })
                .collect(),
        )
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        Self {
            atoms: vec![PointAtom { weight: 1.0, point }],
        }
    }

    /// Builds a distribution from unnormalized-in-order pairs, merging exactly
    /// equal points (first occurrence keeps its position). Masses are taken as
    /// given; the caller guarantees they sum to one.
    pub(crate) fn merged(pairs: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut atoms: Vec<PointAtom> = Vec::new();
        for (weight, point) in pairs {
            let key = point_key(&point);
            match index.get(&key) {
                Some(&i) => atoms[i].weight += weight,
                None => {
                    index.insert(key, atoms.len());
                    atoms.push(PointAtom { weight, point });
                }
            }
        }
        Self { atoms }
    }

    pub fn atoms(&self) -> &[PointAtom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].point.len()
    }

    pub fn expect(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        order_free_sum(self.atoms.iter().map(|a| a.weight * g(&a.point)).collect())
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.expect(|p| p[i]))
            .collect()
    }
}

/// Exact-equality key for a point; `-0.0` and `0.0` coincide.
fn point_key(point: &[f64]) -> Vec<u64> {
    point.iter().map(|&v| (v + 0.0).to_bits()).collect()
}

/// State marginals `rho_t` (t = 0..=T) and state-input marginals `lambda_t`
/// (t = 0..T) of a path measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationMarginals {
    pub rho: Vec<DiscreteDistribution>,
    pub lambda: Vec<DiscreteDistribution>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub behavioral: bool,
    pub worst_residual: f64,
}

fn check_measure_shape<S: Dynamics + ?Sized>(mu: &PathMeasure, system: &S) -> Result<()> {
    let (t, n_x, n_u, n_y) = mu.shape();
    check_dim("measure state dimension", system.state_dim(), n_x)?;
    if t > 0 {
        check_dim("measure input dimension", system.input_dim(), n_u)?;
        check_dim("measure output dimension", system.output_dim(), n_y)?;
    }
    Ok(())
}

/// Graph-support test: every atom's path residual is at most `tol`.
pub fn is_behavioral<S: Dynamics + ?Sized>(mu: &PathMeasure, system: &S, tol: f64) -> Result<Membership> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    check_measure_shape(mu, system)?;
    let mut worst = 0.0f64;
    for atom in &mu.atoms {
        worst = worst.max(graph_residual(system, &atom.traj)?);
    }
    Ok(Membership {
        behavioral: worst <= tol,
        worst_residual: worst,
    })
}

/// `E_mu[ sum_t |X_{t+1} - f(X_t,U_t)|^2 + |Y_t - h(X_t,U_t)|^2 ]`.
pub fn metric_residual<S: Dynamics + ?Sized>(mu: &PathMeasure, system: &S) -> Result<f64> {
    check_measure_shape(mu, system)?;
    let mut terms = Vec::with_capacity(mu.atoms.len());
    for atom in &mu.atoms {
        terms.push(atom.weight * graph_residual(system, &atom.traj)?);
    }
    Ok(order_free_sum(terms))
}

/// Largest `|E[L_t phi]|`, `|E[H_t psi]|` over monomial test functions of
/// total degree `1..=max_degree` and all stages.
pub fn weak_operator_residual<S: Dynamics + ?Sized>(
    mu: &PathMeasure,
    system: &S,
    max_degree: u32,
) -> Result<f64> {
    if max_degree == 0 {
        return Err(Error::InvalidArgument("max_degree must be at least 1".into()));
    }
    check_measure_shape(mu, system)?;
    let state_monos = monomials_up_to(system.state_dim(), max_degree);
    let output_monos = monomials_up_to(system.output_dim(), max_degree);
    let mut worst = 0.0f64;
    for t in 0..mu.horizon() {
        let predicted: Vec<(Vec<f64>, Vec<f64>)> = mu
            .atoms
            .iter()
            .map(|a| {
                let (x, u) = (&a.traj.states()[t], &a.traj.inputs()[t]);
                (system.step(x, u), system.output(x, u))
            })
            .collect();
        for exps in &state_monos {
            let actual = mu.expect(|p| monomial_value(exps, &p.states()[t + 1]));
            let pushed = order_free_sum(
                mu.atoms
                    .iter()
                    .zip(&predicted)
                    .map(|(a, (fx, _))| a.weight * monomial_value(exps, fx))
                    .collect(),
            );
            worst = worst.max((actual - pushed).abs());
        }
        for exps in &output_monos {
            let actual = mu.expect(|p| monomial_value(exps, &p.outputs()[t]));
            let pushed = order_free_sum(
                mu.atoms
                    .iter()
                    .zip(&predicted)
                    .map(|(a, (_, hx))| a.weight * monomial_value(exps, hx))
                    .collect(),
            );
            worst = worst.max((actual - pushed).abs());
        }
    }
    Ok(worst)
}

/// Discrete analogue of the "weak identities hold, graph support fails"
/// construction for `x' = u`, `y = 0`, `T = 1`: inputs on the midpoint grid
/// `(i - 1/2)/N` and `x_1` the reversed input, all with weight `1/N`.
///
/// `X_1` and `f(X_0, U_0) = U_0` have identical laws, yet `X_1 != U_0` on
/// every atom except possibly the middle one.
pub fn weak_vs_graph_counterexample(n: usize) -> Result<PathMeasure> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 2, got {n}")));
    }
    let grid = |i: usize| (i as f64 - 0.5) / n as f64;
    let trajs = (1..=n)
        .map(|i| {
            Trajectory::new(
                vec![vec![0.0], vec![grid(n + 1 - i)]],
                vec![vec![grid(i)]],
                vec![vec![0.0]],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    PathMeasure::uniform(trajs)
}

/// `lam * mu1 + (1 - lam) * mu2` as the union of atoms.
pub fn mixture(mu1: &PathMeasure, mu2: &PathMeasure, lam: f64) -> Result<PathMeasure> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidArgument(format!("mixture weight {lam} outside [0, 1]")));
    }
    if mu1.shape() != mu2.shape() {
        return Err(Error::InvalidArgument(format!(
            "cannot mix shapes {:?} and {:?}",
            mu1.shape(),
            mu2.shape()
        )));
    }
    let scaled = |mu: &PathMeasure, s: f64| {
        mu.atoms
            .iter()
            .map(move |a| PathAtom {
                weight: a.weight * s,
                traj: a.traj.clone(),
            })
            .collect::<Vec<_>>()
    };
    let mut atoms = scaled(mu1, lam);
    atoms.extend(scaled(mu2, 1.0 - lam));
    PathMeasure::new(atoms)
}

/// Conditional measures on an atom subset and its complement, with the
/// subset's mass: `mu = mass * mu_A + (1 - mass) * mu_{A^c}`.
pub fn decompose(mu: &PathMeasure, split: &[usize]) -> Result<(PathMeasure, PathMeasure, f64)> {
    let mut inside = vec![false; mu.atoms.len()];
    for &i in split {
        if i >= inside.len() {
            return Err(Error::InvalidArgument(format!("atom index {i} out of range")));
        }
        inside[i] = true;
    }
    let mass: f64 = mu.atoms.iter().zip(&inside).filter(|(_, &s)| s).map(|(a, _)| a.weight).sum();
    let rest = 1.0 - mass;
    if mass <= 0.0 || rest <= MASS_TOL {
        return Err(Error::InvalidArgument(format!(
            "split carries mass {mass}; both parts need positive mass"
        )));
    }
    let part = |want: bool, total: f64| {
        let atoms = mu
            .atoms
            .iter()
            .zip(&inside)
            .filter(|(_, &s)| s == want)
            .map(|(a, _)| PathAtom {
                weight: a.weight / total,
                traj: a.traj.clone(),
            })
            .collect::<Vec<_>>();
        PathMeasure::new(atoms)
    };
    Ok((part(true, mass)?, part(false, rest)?, mass))
}

pub fn occupation_marginals(mu: &PathMeasure) -> OccupationMarginals {
    let horizon = mu.horizon();
    let rho = (0..=horizon)
        .map(|t| DiscreteDistribution::merged(mu.atoms.iter().map(|a| (a.weight, a.traj.states()[t].clone()))))
        .collect();
    let lambda = (0..horizon)
        .map(|t| {
            DiscreteDistribution::merged(mu.atoms.iter().map(|a| {
                let point = a.traj.states()[t].iter().chain(&a.traj.inputs()[t]).copied().collect();
                (a.weight, point)
            }))
        })
        .collect();
    OccupationMarginals { rho, lambda }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlowResiduals {
    /// `(pi_X)_# lambda_t` against `rho_t`.
    pub marginal: f64,
    /// `f_# lambda_t` against `rho_{t+1}`.
    pub dynamics: f64,
    /// `(X_t, U_t, Y_t)_# mu` against `(id, h)_# lambda_t`; zero without a source measure.
    pub output: f64,
}

/// Flow-constraint residuals tested on monomials of degree `1..=max_degree`.
pub fn flow_residuals<S: Dynamics + ?Sized>(
    m: &OccupationMarginals,
    system: &S,
    max_degree: u32,
    source: Option<&PathMeasure>,
) -> Result<FlowResiduals> {
    let horizon = m.lambda.len();
    check_dim("number of state marginals", horizon + 1, m.rho.len())?;
    let (n_x, n_u, n_y) = (system.state_dim(), system.input_dim(), system.output_dim());
    for rho in &m.rho {
        check_dim("state marginal dimension", n_x, rho.dim())?;
    }
    for lam in &m.lambda {
        check_dim("state-input marginal dimension", n_x + n_u, lam.dim())?;
    }
    let state_monos = monomials_up_to(n_x, max_degree);
    let mut out = FlowResiduals::default();
    for t in 0..horizon {
        let lam = &m.lambda[t];
        for exps in &state_monos {
            let lam_x = lam.expect(|p| monomial_value(exps, &p[..n_x]));
            let rho_x = m.rho[t].expect(|p| monomial_value(exps, p));
            out.marginal = out.marginal.max((lam_x - rho_x).abs());
            let pushed = lam.expect(|p| monomial_value(exps, &system.step(&p[..n_x], &p[n_x..])));
            let next = m.rho[t + 1].expect(|p| monomial_value(exps, p));
            out.dynamics = out.dynamics.max((pushed - next).abs());
        }
    }
    if let Some(mu) = source {
        check_dim("source measure horizon", horizon, mu.horizon())?;
        let joint_monos = monomials_up_to(n_x + n_u + n_y, max_degree);
        for t in 0..horizon {
            for exps in &joint_monos {
                let direct = mu.expect(|p| {
                    let v: Vec<f64> = p.states()[t]
                        .iter()
                        .chain(&p.inputs()[t])
                        .chain(&p.outputs()[t])
                        .copied()
                        .collect();
                    monomial_value(exps, &v)
                });
                let lifted = m.lambda[t].expect(|p| {
                    let mut v = p.to_vec();
                    v.extend(system.output(&p[..n_x], &p[n_x..]));
                    monomial_value(exps, &v)
                });
                out.output = out.output.max((direct - lifted).abs());
            }
        }
    }
    Ok(out)
}

/// Tolerance used when matching support points and masses in
/// [`reconstruct_markov`].
pub const RECONSTRUCT_TOL: f64 = 1e-9;

fn find_point(points: &[Vec<f64>], x: &[f64], tol: f64) -> Option<usize> {
    points.iter().position(|p| {
        p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= tol
    })
}

/// Markov-policy lift of flow-consistent marginals.
///
/// Each `lambda_t` is disintegrated into a kernel `kappa_t(u | x)` against the
/// state law propagated from `rho0`, and all positive-probability paths of
/// `rho0(x_0) prod_t kappa_t(u_t | x_t) delta_{f(x_t,u_t)}(x_{t+1})` are enumerated.
pub fn reconstruct_markov<S: Dynamics + ?Sized>(
    rho0: &DiscreteDistribution,
    lambdas: &[DiscreteDistribution],
    system: &S,
) -> Result<PathMeasure> {
    let (n_x, n_u) = (system.state_dim(), system.input_dim());
    check_dim("initial law dimension", n_x, rho0.dim())?;
    for lam in lambdas {
        check_dim("state-input marginal dimension", n_x + n_u, lam.dim())?;
    }

    // kernels[t] = (support states of lambda_t, per state: list of (prob, u))
    let mut kernels: Vec<(Vec<Vec<f64>>, Vec<Vec<(f64, Vec<f64>)>>)> = Vec::with_capacity(lambdas.len());
    let mut rho = rho0.clone();
    for (t, lam) in lambdas.iter().enumerate() {
        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut mass: Vec<f64> = Vec::new();
        let mut choices: Vec<Vec<(f64, Vec<f64>)>> = Vec::new();
        for atom in lam.atoms() {
            if atom.weight <= 0.0 {
                continue;
            }
            let (x, u) = atom.point.split_at(n_x);
            let i = match states.iter().position(|s| s.as_slice() == x) {
                Some(i) => i,
                None => {
                    states.push(x.to_vec());
                    mass.push(0.0);
                    choices.push(Vec::new());
                    states.len() - 1
                }
            };
            mass[i] += atom.weight;
            choices[i].push((atom.weight, u.to_vec()));
        }
        // Marginal condition against the propagated state law.
        let mut matched = vec![0.0; states.len()];
        for atom in rho.atoms() {
            if atom.weight <= 0.0 {
                continue;
            }
            let Some(i) = find_point(&states, &atom.point, RECONSTRUCT_TOL) else {
                return Err(Error::FlowInfeasible(format!(
                    "state {:?} with mass {} at t={t} has no input distribution",
                    atom.point, atom.weight
                )));
            };
            matched[i] += atom.weight;
        }
        for (i, (&m, &want)) in mass.iter().zip(&matched).enumerate() {
            if (m - want).abs() > RECONSTRUCT_TOL {
                return Err(Error::FlowInfeasible(format!(
                    "state {:?} at t={t}: lambda mass {m}, rho mass {want}",
                    states[i]
                )));
            }
        }
        for (opts, &m) in choices.iter_mut().zip(&mass) {
            for (p, _) in opts.iter_mut() {
                *p /= m;
            }
        }
        rho = DiscreteDistribution::merged(lam.atoms().iter().filter(|a| a.weight > 0.0).map(|a| {
            let (x, u) = a.point.split_at(n_x);
            (a.weight, system.step(x, u))
        }));
        kernels.push((states, choices));
    }

    let mut paths: Vec<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = rho0
        .atoms()
        .iter()
        .filter(|a| a.weight > 0.0)
        .map(|a| (a.weight, vec![a.point.clone()], Vec::new(), Vec::new()))
        .collect();
    for (states, choices) in &kernels {
        let mut next_paths = Vec::new();
        for (w, xs, us, ys) in paths {
            let x = xs.last().unwrap();
            let i = find_point(states, x, RECONSTRUCT_TOL)
                .expect("every reachable state was matched above");
            for (p, u) in &choices[i] {
                let (mut xs, mut us, mut ys) = (xs.clone(), us.clone(), ys.clone());
                ys.push(system.output(x, u));
                xs.push(system.step(x, u));
                us.push(u.clone());
                next_paths.push((w * p, xs, us, ys));
            }
        }
        paths = next_paths;
    }
    let atoms = paths
        .into_iter()
        .map(|(weight, xs, us, ys)| Ok(PathAtom { weight, traj: Trajectory::new(xs, us, ys)? }))
        .collect::<Result<Vec<_>>>()?;
    PathMeasure::new(atoms)
}

/// `sum_{t<T} E[|X_t|^2 + |U_t|^2 + |Y_t|^2] + E[|X_T|^2]`.
pub fn psi_moment(mu: &PathMeasure) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    mu.expect(|p| {
        let stages: f64 = (0..p.horizon())
            .map(|t| sq(&p.states()[t]) + sq(&p.inputs()[t]) + sq(&p.outputs()[t]))
            .sum();
        stages + sq(p.states().last().unwrap())
    })
}
