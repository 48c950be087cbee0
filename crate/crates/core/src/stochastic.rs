//! Controlled Markov kernels on finite alphabets and kernel-consistency
//! residuals for path measures over state/input index sequences.
//!
//! Paths carry no outputs; on finite spaces the output map is plumbing that
//! the deterministic module already covers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::measure::{normalize, MASS_TOL};
use crate::rng::SeededRng;
use crate::system::{Dynamics, Trajectory};

fn validate_rows(table: &[Vec<Vec<Vec<f64>>>], width: usize, what: &str) -> Result<(usize, usize)> {
    let first = table
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{what} has no stages")))?;
    let n_states = first.len();
    let n_inner = first.first().map_or(0, Vec::len);
    if n_states == 0 || n_inner == 0 {
        return Err(Error::InvalidArgument(format!("{what} has an empty alphabet")));
    }
    for (t, stage) in table.iter().enumerate() {
        check_dim("kernel states per stage", n_states, stage.len())?;
        for (x, rows) in stage.iter().enumerate() {
            check_dim("kernel rows per state", n_inner, rows.len())?;
            for (k, row) in rows.iter().enumerate() {
                let expected = if width == 0 { n_states } else { width };
                check_dim("kernel row length", expected, row.len())?;
                if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "{what} row (t={t}, x={x}, {k}) has a negative or non-finite entry"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::NotNormalized { total });
                }
            }
        }
    }
    Ok((n_states, n_inner))
}

fn random_row(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    // Sparse rows make prefixes with distinct supports likely.
    let mut row: Vec<f64> = (0..n)
        .map(|_| if rng.uniform() < 0.3 { 0.0 } else { rng.uniform() + 1e-3 })
        .collect();
    if row.iter().all(|p| *p == 0.0) {
        row[rng.below(n)] = 1.0;
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

/// Transition probabilities `K_t(x' | x, u)` as `[t][x][u][x']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<Vec<f64>>>>", into = "Vec<Vec<Vec<Vec<f64>>>>")]
pub struct FiniteKernel {
    stages: Vec<Vec<Vec<Vec<f64>>>>,
    n_states: usize,
    n_inputs: usize,
}

impl FiniteKernel {
    pub fn new(stages: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        let (n_states, n_inputs) = validate_rows(&stages, 0, "kernel")?;
        Ok(Self {
            stages,
            n_states,
            n_inputs,
        })
    }

    /// Point-mass kernels `delta_{next[t][x][u]}`.
    pub fn deterministic(next: &[Vec<Vec<usize>>], n_states: usize) -> Result<Self> {
        let stages = next
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|&x1| {
                                if x1 >= n_states {
                                    return Err(Error::InvalidArgument(format!(
                                        "successor {x1} outside {n_states} states"
                                    )));
                                }
                                let mut p = vec![0.0; n_states];
                                p[x1] = 1.0;
                                Ok(p)
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }

    pub fn random(rng: &mut SeededRng, horizon: usize, n_states: usize, n_inputs: usize) -> Result<Self> {
        let stages = (0..horizon)
            .map(|_| {
                (0..n_states)
                    .map(|_| (0..n_inputs).map(|_| random_row(rng, n_states)).collect())
                    .collect()
            })
            .collect();
        Self::new(stages)
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn row(&self, t: usize, x: usize, u: usize) -> &[f64] {
        &self.stages[t][x][u]
    }

    pub fn stages(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.stages
    }
}

impl TryFrom<Vec<Vec<Vec<Vec<f64>>>>> for FiniteKernel {
    type Error = Error;
    fn try_from(stages: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        Self::new(stages)
    }
}

impl From<FiniteKernel> for Vec<Vec<Vec<Vec<f64>>>> {
    fn from(k: FiniteKernel) -> Self {
        k.stages
    }
}

/// Markov randomized policy `kappa_t(u | x)` as `[t][x][u]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct PolicyKernel {
    stages: Vec<Vec<Vec<f64>>>,
}

impl PolicyKernel {
    pub fn new(stages: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        // Reuse the kernel validation by viewing each state's row as a single input row.
        let wrapped: Vec<Vec<Vec<Vec<f64>>>> = stages
            .iter()
            .map(|s| s.iter().map(|row| vec![row.clone()]).collect())
            .collect();
        let width = stages.first().and_then(|s| s.first()).map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::InvalidArgument("policy has an empty input alphabet".into()));
        }
        validate_rows(&wrapped, width, "policy")?;
        Ok(Self { stages })
    }

    /// Deterministic policy `u = choice[t][x]`.
    pub fn deterministic(choice: &[Vec<usize>], n_inputs: usize) -> Result<Self> {
        let stages = choice
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|&u| {
                        if u >= n_inputs {
                            return Err(Error::InvalidArgument(format!("input {u} outside {n_inputs} inputs")));
                        }
                        let mut p = vec![0.0; n_inputs];
                        p[u] = 1.0;
                        Ok(p)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages)
    }

    pub fn random(rng: &mut SeededRng, horizon: usize, n_states: usize, n_inputs: usize) -> Result<Self> {
        let stages = (0..horizon)
            .map(|_| (0..n_states).map(|_| random_row(rng, n_inputs)).collect())
            .collect();
        Self::new(stages)
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
    pub fn n_states(&self) -> usize {
        self.stages[0].len()
    }
    pub fn n_inputs(&self) -> usize {
        self.stages[0][0].len()
    }
    pub fn row(&self, t: usize, x: usize) -> &[f64] {
        &self.stages[t][x]
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for PolicyKernel {
    type Error = Error;
    fn try_from(stages: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(stages)
    }
}

impl From<PolicyKernel> for Vec<Vec<Vec<f64>>> {
    fn from(k: PolicyKernel) -> Self {
        k.stages
    }
}

/// State indices `x_0..x_T` and input indices `u_0..u_{T-1}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FinitePath {
    pub states: Vec<usize>,
    pub inputs: Vec<usize>,
}

impl FinitePath {
    pub fn new(states: Vec<usize>, inputs: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("path needs x_0".into()));
        }
        check_dim("path inputs", states.len() - 1, inputs.len())?;
        Ok(Self { states, inputs })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// The path on index coordinates, with no outputs.
    pub fn to_trajectory(&self) -> Trajectory {
        let col = |v: &[usize]| v.iter().map(|&i| vec![i as f64]).collect::<Vec<_>>();
        Trajectory::new(col(&self.states), col(&self.inputs), vec![Vec::new(); self.horizon()])
            .expect("index path is well formed")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinitePathAtom {
    pub weight: f64,
    pub path: FinitePath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FinitePathAtom>", into = "Vec<FinitePathAtom>")]
pub struct FinitePathMeasure {
    atoms: Vec<FinitePathAtom>,
}

impl FinitePathMeasure {
    pub fn new(mut atoms: Vec<FinitePathAtom>) -> Result<Self> {
        let mut weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
        normalize(&mut weights)?;
        let horizon = atoms[0].path.horizon();
        for (a, w) in atoms.iter_mut().zip(weights) {
            check_dim("path horizon", horizon, a.path.horizon())?;
            check_dim("path states", horizon + 1, a.path.states.len())?;
            a.weight = w;
        }
        Ok(Self { atoms })
    }

    /// `n_atoms` uniformly drawn paths with random weights; unrelated to any
    /// kernel.
    pub fn random(
        rng: &mut SeededRng,
        horizon: usize,
        n_states: usize,
        n_inputs: usize,
        n_atoms: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_inputs == 0 {
            return Err(Error::InvalidArgument("empty alphabet".into()));
        }
        let weights = rng.simplex_point(n_atoms);
        let atoms = weights
            .into_iter()
            .map(|weight| FinitePathAtom {
                weight,
                path: FinitePath {
                    states: (0..=horizon).map(|_| rng.below(n_states)).collect(),
                    inputs: (0..horizon).map(|_| rng.below(n_inputs)).collect(),
                },
            })
            .collect();
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[FinitePathAtom] {
        &self.atoms
    }

    pub fn horizon(&self) -> usize {
        self.atoms[0].path.horizon()
    }

    /// Law of `X_0` over `n_states` indices.
    pub fn initial_law(&self, n_states: usize) -> Vec<f64> {
        let mut law = vec![0.0; n_states];
        for a in &self.atoms {
            if let Some(p) = law.get_mut(a.path.states[0]) {
                *p += a.weight;
            }
        }
        law
    }

    /// `lam * self + (1 - lam) * other`; identical paths are merged.
    pub fn mixture(&self, other: &Self, lam: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lam) {
            return Err(Error::InvalidArgument(format!("mixture weight {lam} outside [0, 1]")));
        }
        check_dim("mixture horizon", self.horizon(), other.horizon())?;
        let mut merged: BTreeMap<&FinitePath, f64> = BTreeMap::new();
        for (mu, s) in [(self, lam), (other, 1.0 - lam)] {
            for a in &mu.atoms {
                *merged.entry(&a.path).or_default() += s * a.weight;
            }
        }
        Self::new(
            merged
                .into_iter()
                .map(|(path, weight)| FinitePathAtom {
                    weight,
                    path: path.clone(),
                })
                .collect(),
        )
    }
}

impl TryFrom<Vec<FinitePathAtom>> for FinitePathMeasure {
    type Error = Error;
    fn try_from(atoms: Vec<FinitePathAtom>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<FinitePathMeasure> for Vec<FinitePathAtom> {
    fn from(mu: FinitePathMeasure) -> Self {
        mu.atoms
    }
}

fn check_alphabets(mu: &FinitePathMeasure, kernels: &FiniteKernel) -> Result<()> {
    check_dim("measure horizon vs kernels", kernels.horizon(), mu.horizon())?;
    for a in &mu.atoms {
        if let Some(&x) = a.path.states.iter().find(|&&x| x >= kernels.n_states) {
            return Err(Error::InvalidArgument(format!("state index {x} outside the kernel alphabet")));
        }
        if let Some(&u) = a.path.inputs.iter().find(|&&u| u >= kernels.n_inputs) {
            return Err(Error::InvalidArgument(format!("input index {u} outside the kernel alphabet")));
        }
    }
    Ok(())
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest TV distance between the conditional law of `X_{t+1}` given a
/// conditioning key and the kernel row at `(t, x_t, u_t)`.
fn conditional_residual<K: Ord>(
    mu: &FinitePathMeasure,
    kernels: &FiniteKernel,
    key: impl Fn(&FinitePath, usize) -> K,
) -> Result<f64> {
    check_alphabets(mu, kernels)?;
    let n = kernels.n_states;
    let mut worst = 0.0f64;
    for t in 0..mu.horizon() {
        // key -> (mass, next-state masses, (x_t, u_t))
        let mut groups: BTreeMap<K, (f64, Vec<f64>, (usize, usize))> = BTreeMap::new();
        for a in &mu.atoms {
            let p = &a.path;
            let entry = groups
                .entry(key(p, t))
                .or_insert_with(|| (0.0, vec![0.0; n], (p.states[t], p.inputs[t])));
            entry.0 += a.weight;
            entry.1[p.states[t + 1]] += a.weight;
        }
        for (mass, next, (x, u)) in groups.into_values() {
            if mass <= 0.0 {
                continue;
            }
            let cond: Vec<f64> = next.iter().map(|m| m / mass).collect();
            worst = worst.max(total_variation(&cond, kernels.row(t, x, u)));
        }
    }
    Ok(worst)
}

/// Max over `t` and positive-mass prefixes `(x_0..x_t, u_0..u_t)` of the TV
/// distance from `mu(X_{t+1} | prefix)` to `K_t(. | x_t, u_t)`. Zero exactly
/// for measures in the stochastic behavioral set.
pub fn history_kernel_residual(mu: &FinitePathMeasure, kernels: &FiniteKernel) -> Result<f64> {
    conditional_residual(mu, kernels, |p, t| {
        (p.states[..=t].to_vec(), p.inputs[..=t].to_vec())
    })
}

/// As [`history_kernel_residual`], conditioning only on `(x_t, u_t)`.
pub fn onestep_kernel_residual(mu: &FinitePathMeasure, kernels: &FiniteKernel) -> Result<f64> {
    conditional_residual(mu, kernels, |p, t| (p.states[t], p.inputs[t]))
}

/// `max_{t, x'} |P(X_{t+1} = x') - E[K_t(x' | X_t, U_t)]|`: only the
/// next-state marginal is compared.
pub fn marginal_kernel_residual(mu: &FinitePathMeasure, kernels: &FiniteKernel) -> Result<f64> {
    check_alphabets(mu, kernels)?;
    let n = kernels.n_states;
    let mut worst = 0.0f64;
    for t in 0..mu.horizon() {
        let mut observed = vec![0.0; n];
        let mut predicted = vec![0.0; n];
        for a in &mu.atoms {
            let p = &a.path;
            observed[p.states[t + 1]] += a.weight;
            for (acc, k) in predicted.iter_mut().zip(kernels.row(t, p.states[t], p.inputs[t])) {
                *acc += a.weight * k;
            }
        }
        for (o, q) in observed.iter().zip(&predicted) {
            worst = worst.max((o - q).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    /// All positive-probability paths with product weights.
    Exact,
    /// `n` independent paths with weight `1/n` each (repeats merged).
    MonteCarlo { seed: u64, n: usize },
}

fn draw(rng: &mut SeededRng, probs: &[f64]) -> usize {
    let target = rng.uniform();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}

/// Path measure generated by `X_0 ~ rho0`, `U_t ~ kappa_t(. | X_t)`,
/// `X_{t+1} ~ K_t(. | X_t, U_t)`.
pub fn sample_from_kernels(
    rho0: &[f64],
    kernels: &FiniteKernel,
    policy: &PolicyKernel,
    mode: SamplingMode,
) -> Result<FinitePathMeasure> {
    check_dim("initial law", kernels.n_states, rho0.len())?;
    check_dim("policy horizon", kernels.horizon(), policy.horizon())?;
    check_dim("policy states", kernels.n_states, policy.n_states())?;
    check_dim("policy inputs", kernels.n_inputs, policy.n_inputs())?;
    let mut rho = rho0.to_vec();
    normalize(&mut rho)?;
    let horizon = kernels.horizon();

    let atoms = match mode {
        SamplingMode::Exact => {
            let mut out = Vec::new();
            let mut stack: Vec<(f64, Vec<usize>, Vec<usize>)> = rho
                .iter()
                .enumerate()
                .rev()
                .filter(|(_, &p)| p > 0.0)
                .map(|(x, &p)| (p, vec![x], Vec::new()))
                .collect();
            while let Some((w, states, inputs)) = stack.pop() {
                let t = inputs.len();
                if t == horizon {
                    out.push(FinitePathAtom {
                        weight: w,
                        path: FinitePath { states, inputs },
                    });
                    continue;
                }
                let x = states[t];
                // Reverse push order keeps the output lexicographic.
                for (u, &pu) in policy.row(t, x).iter().enumerate().rev() {
                    if pu <= 0.0 {
                        continue;
                    }
                    for (x1, &px) in kernels.row(t, x, u).iter().enumerate().rev() {
                        if px <= 0.0 {
                            continue;
                        }
                        let mut s = states.clone();
                        s.push(x1);
                        let mut i = inputs.clone();
                        i.push(u);
                        stack.push((w * pu * px, s, i));
                    }
                }
            }
            out
        }
        SamplingMode::MonteCarlo { seed, n } => {
            if n == 0 {
                return Err(Error::InvalidArgument("monte-carlo sample size must be positive".into()));
            }
            let mut rng = SeededRng::new(seed);
            let mut counts: BTreeMap<FinitePath, usize> = BTreeMap::new();
            for _ in 0..n {
                let mut states = vec![draw(&mut rng, &rho)];
                let mut inputs = Vec::with_capacity(horizon);
                for t in 0..horizon {
                    let x = states[t];
                    let u = draw(&mut rng, policy.row(t, x));
                    inputs.push(u);
                    states.push(draw(&mut rng, kernels.row(t, x, u)));
                }
                *counts.entry(FinitePath { states, inputs }).or_default() += 1;
            }
            counts
                .into_iter()
                .map(|(path, c)| FinitePathAtom {
                    weight: c as f64 / n as f64,
                    path,
                })
                .collect()
        }
    };
    FinitePathMeasure::new(atoms)
}

/// Two states, one input, fair-coin kernels, horizon 2: `X_0`, `X_1`
/// independent fair bits and `X_2 = X_0`. Every one-step conditional is
/// fair, but given `(X_0, X_1)` the law of `X_2` is a point mass.
pub fn history_counterexample() -> (FinitePathMeasure, FiniteKernel) {
    let kernels = FiniteKernel::new(vec![vec![vec![vec![0.5, 0.5]]; 2]; 2]).expect("fair kernels");
    let atoms = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .into_iter()
        .map(|(x0, x1)| FinitePathAtom {
            weight: 0.25,
            path: FinitePath {
                states: vec![x0, x1, x0],
                inputs: vec![0, 0],
            },
        })
        .collect();
    (FinitePathMeasure::new(atoms).expect("uniform weights"), kernels)
}

/// A time-invariant successor table on index coordinates, as a deterministic
/// system with state `[x]`, input `[u]` and no outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    pub next: Vec<Vec<usize>>,
}

impl IndexMap {
    /// The same table at every stage of a horizon-`T` kernel.
    pub fn kernels(&self, horizon: usize) -> Result<FiniteKernel> {
        FiniteKernel::deterministic(&vec![self.next.clone(); horizon], self.next.len())
    }
}

impl Dynamics for IndexMap {
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
        vec![self.next[x[0] as usize][u[0] as usize] as f64]
    }
    fn output(&self, _x: &[f64], _u: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{is_behavioral, PathAtom, PathMeasure};

    fn random_setting(rng: &mut SeededRng) -> (Vec<f64>, FiniteKernel, PolicyKernel) {
        let t = 1 + rng.below(3);
        let s = 2 + rng.below(3);
        let a = 1 + rng.below(3);
        let kernels = FiniteKernel::random(rng, t, s, a).unwrap();
        let policy = PolicyKernel::random(rng, t, s, a).unwrap();
        (rng.simplex_point(s), kernels, policy)
    }

    fn random_measure(rng: &mut SeededRng, kernels: &FiniteKernel) -> FinitePathMeasure {
        let k = 1 + rng.below(6);
        FinitePathMeasure::random(rng, kernels.horizon(), kernels.n_states(), kernels.n_inputs(), k).unwrap()
    }

    #[test]
    fn counterexample_separates_history_from_onestep() {
        let (mu, k) = history_counterexample();
        assert_eq!(history_kernel_residual(&mu, &k).unwrap(), 0.5);
        assert_eq!(onestep_kernel_residual(&mu, &k).unwrap(), 0.0);
        assert_eq!(marginal_kernel_residual(&mu, &k).unwrap(), 0.0);
    }

    #[test]
    fn fair_coin_one_step() {
        let k = FiniteKernel::new(vec![vec![vec![vec![0.5, 0.5]]; 2]]).unwrap();
        let pol = PolicyKernel::deterministic(&[vec![0, 0]], 1).unwrap();
        let mu = sample_from_kernels(&[1.0, 0.0], &k, &pol, SamplingMode::Exact).unwrap();
        assert_eq!(mu.atoms().len(), 2);
        for a in mu.atoms() {
            assert_eq!(a.weight, 0.5);
        }
    }

    #[test]
    fn deterministic_sampling_gives_one_path() {
        let map = IndexMap {
            next: vec![vec![1, 2], vec![2, 0], vec![0, 1]],
        };
        let k = map.kernels(3).unwrap();
        let pol = PolicyKernel::deterministic(&[vec![0, 1, 0], vec![1, 1, 1], vec![0, 0, 0]], 2).unwrap();
        let mu = sample_from_kernels(&[0.0, 0.0, 1.0], &k, &pol, SamplingMode::Exact).unwrap();
        assert_eq!(mu.atoms().len(), 1);
        assert_eq!(mu.atoms()[0].weight, 1.0);
        assert_eq!(mu.atoms()[0].path.states, vec![2, 0, 2, 0]);
        assert_eq!(mu.atoms()[0].path.inputs, vec![0, 1, 0]);
    }

    #[test]
    fn shifted_marginal_is_detected() {
        // Kernel sends everything to state 0; move mass 0.3 of X_1 to state 1.
        let k = FiniteKernel::new(vec![vec![vec![vec![1.0, 0.0]]; 2]]).unwrap();
        let atom = |w, x1| FinitePathAtom {
            weight: w,
            path: FinitePath::new(vec![0, x1], vec![0]).unwrap(),
        };
        let mu = FinitePathMeasure::new(vec![atom(0.7, 0), atom(0.3, 1)]).unwrap();
        assert!((marginal_kernel_residual(&mu, &k).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_prefixes_are_ignored() {
        let k = FiniteKernel::new(vec![vec![vec![vec![1.0, 0.0]]; 2]]).unwrap();
        let atoms = vec![
            FinitePathAtom {
                weight: 1.0,
                path: FinitePath::new(vec![0, 0], vec![0]).unwrap(),
            },
            FinitePathAtom {
                weight: 0.0,
                path: FinitePath::new(vec![1, 1], vec![0]).unwrap(),
            },
        ];
        let mu = FinitePathMeasure::new(atoms).unwrap();
        assert_eq!(history_kernel_residual(&mu, &k).unwrap(), 0.0);
    }

    #[test]
    fn exact_sampling_is_consistent() {
        let mut rng = SeededRng::new(11);
        for _ in 0..50 {
            let (rho0, k, pol) = random_setting(&mut rng);
            let mu = sample_from_kernels(&rho0, &k, &pol, SamplingMode::Exact).unwrap();
            assert!(history_kernel_residual(&mu, &k).unwrap() < 1e-12);
            let law = mu.initial_law(k.n_states());
            for (a, b) in law.iter().zip(&rho0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_is_seeded_and_close() {
        let k = FiniteKernel::new(vec![vec![vec![vec![0.25, 0.75]]; 2]]).unwrap();
        let pol = PolicyKernel::deterministic(&[vec![0, 0]], 1).unwrap();
        let mode = SamplingMode::MonteCarlo { seed: 5, n: 20_000 };
        let a = sample_from_kernels(&[1.0, 0.0], &k, &pol, mode).unwrap();
        let b = sample_from_kernels(&[1.0, 0.0], &k, &pol, mode).unwrap();
        assert_eq!(a, b);
        assert!(history_kernel_residual(&a, &k).unwrap() < 0.02);
    }

    #[test]
    fn residual_implication_chain() {
        let mut rng = SeededRng::new(2024);
        let mut history_zero = 0;
        for case in 0..200 {
            let (rho0, k, pol) = random_setting(&mut rng);
            // Half kernel-sampled, half arbitrary measures.
            let mu = if case % 2 == 0 {
                sample_from_kernels(&rho0, &k, &pol, SamplingMode::Exact).unwrap()
            } else {
                random_measure(&mut rng, &k)
            };
            let h = history_kernel_residual(&mu, &k).unwrap();
            let o = onestep_kernel_residual(&mu, &k).unwrap();
            let m = marginal_kernel_residual(&mu, &k).unwrap();
            if h < 1e-12 {
                history_zero += 1;
                assert!(o < 1e-12, "case {case}: history {h}, one-step {o}");
            }
            if o < 1e-12 {
                assert!(m < 1e-12, "case {case}: one-step {o}, marginal {m}");
            }
        }
        assert!(history_zero >= 100);
    }

    #[test]
    fn mixtures_stay_consistent() {
        let mut rng = SeededRng::new(77);
        for _ in 0..200 {
            let (rho0, k, p1) = random_setting(&mut rng);
            let p2 = PolicyKernel::random(&mut rng, k.horizon(), k.n_states(), k.n_inputs()).unwrap();
            let mu1 = sample_from_kernels(&rho0, &k, &p1, SamplingMode::Exact).unwrap();
            let mu2 = sample_from_kernels(&rho0, &k, &p2, SamplingMode::Exact).unwrap();
            let mix = mu1.mixture(&mu2, rng.uniform()).unwrap();
            assert!(history_kernel_residual(&mix, &k).unwrap() < 1e-12);
        }
    }

    #[test]
    fn deterministic_kernels_match_graph_support() {
        let mut rng = SeededRng::new(3);
        for _ in 0..200 {
            let s = 2 + rng.below(3);
            let a = 1 + rng.below(2);
            let t = 1 + rng.below(3);
            let map = IndexMap {
                next: (0..s).map(|_| (0..a).map(|_| rng.below(s)).collect()).collect(),
            };
            let k = map.kernels(t).unwrap();
            let mu = random_measure(&mut rng, &k);
            let stochastic_ok = history_kernel_residual(&mu, &k).unwrap() == 0.0;
            let path_measure = PathMeasure::new(
                mu.atoms()
                    .iter()
                    .map(|a| PathAtom {
                        weight: a.weight,
                        traj: a.path.to_trajectory(),
                    })
                    .collect(),
            )
            .unwrap();
            let graph_ok = is_behavioral(&path_measure, &map, 1e-12).unwrap().behavioral;
            assert_eq!(stochastic_ok, graph_ok);
        }
    }

    #[test]
    fn kernel_rows_must_be_normalized() {
        assert!(FiniteKernel::new(vec![vec![vec![vec![0.5, 0.4]]]]).is_err());
        assert!(FiniteKernel::new(vec![vec![vec![vec![1.5, -0.5]]]]).is_err());
        assert!(FiniteKernel::deterministic(&[vec![vec![3]]], 2).is_err());
    }
}
