//! Deterministic discrete-time systems `x_{t+1} = f(x_t, u_t)`, `y_t = h(x_t, u_t)`,
//! their simulation and the pathwise graph residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::poly::Polynomial;

/// Common interface of the state-space models in this crate.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LtiRaw", into = "LtiRaw")]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::InvalidArgument(
                "LTI dimensions must be at least one".into(),
            ));
        }
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("C columns", n, c.ncols())?;
        check_dim("D rows", p, d.nrows())?;
        check_dim("D columns", m, d.ncols())?;
        Ok(Self { a, b, c, d })
    }

    /// Builds the system from row-major nested vectors.
    pub fn from_rows(
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        c: &[Vec<f64>],
        d: &[Vec<f64>],
    ) -> Result<Self> {
        Self::new(
            matrix_from_rows(a)?,
            matrix_from_rows(b)?,
            matrix_from_rows(c)?,
            matrix_from_rows(d)?,
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
}

impl Dynamics for LtiSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        (&self.a * x + &self.b * u).as_slice().to_vec()
    }
    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        (&self.c * x + &self.d * u).as_slice().to_vec()
    }
}

#[derive(Serialize, Deserialize)]
struct LtiRaw {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl TryFrom<LtiRaw> for LtiSystem {
    type Error = Error;
    fn try_from(raw: LtiRaw) -> Result<Self> {
        Self::from_rows(&raw.a, &raw.b, &raw.c, &raw.d)
    }
}

impl From<LtiSystem> for LtiRaw {
    fn from(sys: LtiSystem) -> Self {
        Self {
            a: matrix_rows(&sys.a),
            b: matrix_rows(&sys.b),
            c: matrix_rows(&sys.c),
            d: matrix_rows(&sys.d),
        }
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for row in rows {
        check_dim("matrix row length", ncols, row.len())?;
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Per-coordinate closed intervals. Metadata only: simulation never clips.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    #[serde(default)]
    pub x: Vec<(f64, f64)>,
    #[serde(default)]
    pub u: Vec<(f64, f64)>,
    #[serde(default)]
    pub y: Vec<(f64, f64)>,
}

/// `f` and `h` given coordinatewise as polynomials in the stacked `(x, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyRaw", into = "PolyRaw")]
pub struct PolynomialSystem {
    n_x: usize,
    n_u: usize,
    f: Vec<Polynomial>,
    h: Vec<Polynomial>,
    bounds: Option<BoxBounds>,
}

impl PolynomialSystem {
    pub fn new(
        n_x: usize,
        n_u: usize,
        f: Vec<Polynomial>,
        h: Vec<Polynomial>,
        bounds: Option<BoxBounds>,
    ) -> Result<Self> {
        check_dim("number of state polynomials", n_x, f.len())?;
        for p in f.iter().chain(&h) {
            p.validate(n_x + n_u)?;
        }
        if let Some(b) = &bounds {
            for (name, iv, n) in [("x", &b.x, n_x), ("u", &b.u, n_u), ("y", &b.y, h.len())] {
                if !iv.is_empty() && iv.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{name} bounds have {} intervals for {n} coordinates",
                        iv.len()
                    )));
                }
            }
        }
        Ok(Self {
            n_x,
            n_u,
            f,
            h,
            bounds,
        })
    }

    pub fn f(&self) -> &[Polynomial] {
        &self.f
    }
    pub fn h(&self) -> &[Polynomial] {
        &self.h
    }
    pub fn bounds(&self) -> Option<&BoxBounds> {
        self.bounds.as_ref()
    }

    fn stacked(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        x.iter().chain(u).copied().collect()
    }
}

impl Dynamics for PolynomialSystem {
    fn state_dim(&self) -> usize {
        self.n_x
    }
    fn input_dim(&self) -> usize {
        self.n_u
    }
    fn output_dim(&self) -> usize {
        self.h.len()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.stacked(x, u);
        self.f.iter().map(|p| p.eval(&v)).collect()
    }
    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let v = self.stacked(x, u);
        self.h.iter().map(|p| p.eval(&v)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct PolyRaw {
    n_x: usize,
    n_u: usize,
    f: Vec<Polynomial>,
    #[serde(default)]
    h: Vec<Polynomial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<BoxBounds>,
}

impl TryFrom<PolyRaw> for PolynomialSystem {
    type Error = Error;
    fn try_from(raw: PolyRaw) -> Result<Self> {
        Self::new(raw.n_x, raw.n_u, raw.f, raw.h, raw.bounds)
    }
}

impl From<PolynomialSystem> for PolyRaw {
    fn from(s: PolynomialSystem) -> Self {
        Self {
            n_x: s.n_x,
            n_u: s.n_u,
            f: s.f,
            h: s.h,
            bounds: s.bounds,
        }
    }
}

/// Tagged union used for system files (`"kind": "lti" | "poly"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum System {
    Lti(LtiSystem),
    Poly(PolynomialSystem),
}

impl System {
    fn inner(&self) -> &dyn Dynamics {
        match self {
            System::Lti(s) => s,
            System::Poly(s) => s,
        }
    }
}

impl Dynamics for System {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.inner().step(x, u)
    }
    fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.inner().output(x, u)
    }
}

/// One path `(x_{0:T}, u_{0:T-1}, y_{0:T-1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRaw", into = "TrajectoryRaw")]
pub struct Trajectory {
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRaw {
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl TryFrom<TrajectoryRaw> for Trajectory {
    type Error = Error;
    fn try_from(raw: TrajectoryRaw) -> Result<Self> {
        Self::new(raw.states, raw.inputs, raw.outputs)
    }
}

impl From<Trajectory> for TrajectoryRaw {
    fn from(t: Trajectory) -> Self {
        Self {
            states: t.states,
            inputs: t.inputs,
            outputs: t.outputs,
        }
    }
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs x_0".into()));
        }
        let horizon = states.len() - 1;
        check_dim("trajectory inputs", horizon, inputs.len())?;
        check_dim("trajectory outputs", horizon, outputs.len())?;
        for (seq, ctx) in [
            (&states, "state vector length"),
            (&inputs, "input vector length"),
            (&outputs, "output vector length"),
        ] {
            if let Some(first) = seq.first() {
                for v in seq.iter() {
                    check_dim(ctx, first.len(), v.len())?;
                }
            }
        }
        Ok(Self {
            states,
            inputs,
            outputs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }
    /// Input dimension; zero for `T = 0` paths, which carry no inputs.
    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, Vec::len)
    }
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }
    pub fn states_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.states
    }
    pub fn inputs_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.inputs
    }
    pub fn outputs_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.outputs
    }

    /// `(T, n_x, n_u, n_y)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (
            self.horizon(),
            self.state_dim(),
            self.input_dim(),
            self.output_dim(),
        )
    }
}

/// External signal `w_t = (u_t, y_t)` over a window, input block first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalTrajectory {
    windows: Vec<Vec<f64>>,
}

impl ExternalTrajectory {
    pub fn new(windows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = windows.first() {
            for w in &windows {
                check_dim("external sample length", first.len(), w.len())?;
            }
        }
        Ok(Self { windows })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
    pub fn windows(&self) -> &[Vec<f64>] {
        &self.windows
    }

    /// All samples stacked into one column vector `(w_0, ..., w_{L-1})`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.windows.iter().map(Vec::len).sum(),
            self.windows.iter().flatten().copied(),
        )
    }
}

pub fn simulate<S: Dynamics + ?Sized>(system: &S, x0: &[f64], u_seq: &[Vec<f64>]) -> Result<Trajectory> {
    check_dim("initial state", system.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    let mut outputs = Vec::with_capacity(u_seq.len());
    states.push(x0.to_vec());
    for u in u_seq {
        check_dim("input vector", system.input_dim(), u.len())?;
        let x = states.last().unwrap();
        outputs.push(system.output(x, u));
        let next = system.step(x, u);
        states.push(next);
    }
    Trajectory::new(states, u_seq.to_vec(), outputs)
}

fn quadratic_form(q: &DMatrix<f64>, x: &[f64]) -> f64 {
    let x = DVector::from_column_slice(x);
    x.dot(&(q * &x))
}

/// `sum_{t<T} (x_t' Q x_t + r |u_t|^2) + x_T' Qf x_T`.
pub fn cost_eval(traj: &Trajectory, q: &DMatrix<f64>, r: f64, qf: &DMatrix<f64>) -> Result<f64> {
    let n = traj.state_dim();
    for (m, ctx) in [(q, "stage weight"), (qf, "terminal weight")] {
        check_dim(ctx, n, m.nrows())?;
        check_dim(ctx, n, m.ncols())?;
    }
    let stage: f64 = traj
        .states
        .iter()
        .zip(&traj.inputs)
        .map(|(x, u)| quadratic_form(q, x) + r * u.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(stage + quadratic_form(qf, traj.states.last().unwrap()))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_shape<S: Dynamics + ?Sized>(system: &S, traj: &Trajectory) -> Result<()> {
    check_dim("trajectory state dimension", system.state_dim(), traj.state_dim())?;
    if traj.horizon() > 0 {
        check_dim("trajectory input dimension", system.input_dim(), traj.input_dim())?;
        check_dim("trajectory output dimension", system.output_dim(), traj.output_dim())?;
    }
    Ok(())
}

/// Pathwise mismatch per stage: `|x_{t+1} - f(x_t,u_t)|^2 + |y_t - h(x_t,u_t)|^2`.
pub fn stage_residuals<S: Dynamics + ?Sized>(system: &S, traj: &Trajectory) -> Result<Vec<f64>> {
    check_shape(system, traj)?;
    Ok((0..traj.horizon())
        .map(|t| {
            let (x, u) = (&traj.states[t], &traj.inputs[t]);
            squared_distance(&traj.states[t + 1], &system.step(x, u))
                + squared_distance(&traj.outputs[t], &system.output(x, u))
        })
        .collect())
}

/// Sum of [`stage_residuals`]; zero exactly on admissible paths.
pub fn graph_residual<S: Dynamics + ?Sized>(system: &S, traj: &Trajectory) -> Result<f64> {
    Ok(stage_residuals(system, traj)?.iter().sum())
}

pub fn external_projection(traj: &Trajectory) -> ExternalTrajectory {
    let windows = traj
        .inputs
        .iter()
        .zip(&traj.outputs)
        .map(|(u, y)| u.iter().chain(y).copied().collect())
        .collect();
    ExternalTrajectory { windows }
}

/// Largest amount by which any coordinate leaves its box; zero when inside
/// (or when the system carries no bounds).
pub fn bounds_violation(system: &PolynomialSystem, traj: &Trajectory) -> f64 {
    let Some(bounds) = system.bounds() else {
        return 0.0;
    };
    let excess = |v: &[f64], iv: &[(f64, f64)]| {
        v.iter()
            .zip(iv)
            .map(|(&z, &(lo, hi))| (lo - z).max(z - hi).max(0.0))
            .fold(0.0, f64::max)
    };
    let xs = traj.states.iter().map(|x| excess(x, &bounds.x));
    let us = traj.inputs.iter().map(|u| excess(u, &bounds.u));
    let ys = traj.outputs.iter().map(|y| excess(y, &bounds.y));
    xs.chain(us).chain(ys).fold(0.0, f64::max)
}

/// Systems used by the bundled experiments.
pub mod catalog {
    use super::*;
    use crate::poly::Term;

    /// Two-state SISO system used for the data-driven validation study.
    pub fn siso_validation() -> LtiSystem {
        LtiSystem::from_rows(
            &[vec![1.0, 0.2], vec![-0.1, 0.9]],
            &[vec![1.0], vec![0.5]],
            &[vec![1.0, 0.0]],
            &[vec![0.0]],
        )
        .expect("static dimensions")
    }

    /// `x1' = x1 + 0.4 x2 + 0.2 u`, `x2' = 0.8 x2 + u - 0.3 x1^2`, `|u| <= 1`.
    /// No outputs.
    pub fn planar_nonlinear() -> PolynomialSystem {
        let t = |exps: [u32; 3], coef: f64| Term {
            exps: exps.to_vec(),
            coef,
        };
        let f1 = Polynomial::new(3, vec![t([1, 0, 0], 1.0), t([0, 1, 0], 0.4), t([0, 0, 1], 0.2)]);
        let f2 = Polynomial::new(3, vec![t([0, 1, 0], 0.8), t([0, 0, 1], 1.0), t([2, 0, 0], -0.3)]);
        let bounds = BoxBounds {
            x: vec![],
            u: vec![(-1.0, 1.0)],
            y: vec![],
        };
        PolynomialSystem::new(2, 1, vec![f1.unwrap(), f2.unwrap()], vec![], Some(bounds))
            .expect("static dimensions")
    }

    /// Scalar `x' = x^2 + u` on the box `[-1, 1]^3`. No outputs.
    pub fn scalar_quadratic() -> PolynomialSystem {
        let f = Polynomial::monomial(2, &[(0, 2)], 1.0).plus(Polynomial::var(2, 1));
        let bounds = BoxBounds {
            x: vec![(-1.0, 1.0)],
            u: vec![(-1.0, 1.0)],
            y: vec![],
        };
        PolynomialSystem::new(1, 1, vec![f], vec![], Some(bounds)).expect("static dimensions")
    }

    /// Scalar `x' = u`, `y = 0`.
    pub fn input_copy() -> PolynomialSystem {
        PolynomialSystem::new(1, 1, vec![Polynomial::var(2, 1)], vec![Polynomial::zero()], None)
            .expect("static dimensions")
    }
}
