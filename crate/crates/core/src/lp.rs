//! Dense revised simplex for `min c^T z  s.t.  E z = b, z >= 0`.
//!
//! Columns are stored sparsely; the basis inverse is dense and refreshed from
//! an LU factorization every [`REFACTOR_EVERY`] pivots. Entering and leaving
//! variables follow Bland's rule, so the method terminates on degenerate
//! problems. Phase one starts from an all-artificial basis.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

pub const ITERATION_CAP: usize = 1_000_000;
pub const REFACTOR_EVERY: usize = 64;

const PIVOT_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-11;

/// Linear program in standard form with column-sparse constraints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StandardLp {
    rhs: Vec<f64>,
    cost: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl StandardLp {
    pub fn new(rhs: Vec<f64>) -> Self {
        Self {
            rhs,
            cost: Vec::new(),
            columns: Vec::new(),
        }
    }

    /// Dense constructor, mostly for tests and small problems.
    pub fn from_dense(e: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Result<Self> {
        check_dim("right-hand side", e.nrows(), b.len())?;
        check_dim("objective", e.ncols(), c.len())?;
        let mut lp = Self::new(b.to_vec());
        for j in 0..e.ncols() {
            let entries = (0..e.nrows()).filter(|&i| e[(i, j)] != 0.0).map(|i| (i, e[(i, j)])).collect();
            lp.add_column(c[j], entries)?;
        }
        Ok(lp)
    }

    /// Appends a variable and returns its index.
    pub fn add_column(&mut self, cost: f64, entries: Vec<(usize, f64)>) -> Result<usize> {
        if let Some(&(row, _)) = entries.iter().find(|(r, _)| *r >= self.rhs.len()) {
            return Err(Error::InvalidArgument(format!("row {row} out of range")));
        }
        self.cost.push(cost);
        self.columns.push(entries);
        Ok(self.columns.len() - 1)
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }
    pub fn cost(&self) -> &[f64] {
        &self.cost
    }
    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    /// `E z`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rhs.len()];
        for (col, &v) in self.columns.iter().zip(z) {
            for &(i, a) in col {
                out[i] += a * v;
            }
        }
        out
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.cost.iter().zip(z).map(|(c, v)| c * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers `y` with `c - E^T y >= 0` at optimality.
    pub duals: Vec<f64>,
    /// Basic variable per row; indices `>= n_cols` are leftover artificials
    /// on redundant rows.
    pub basis: Vec<usize>,
    pub iterations: usize,
}

struct Tableau<'a> {
    lp: &'a StandardLp,
    /// Row signs applied so that the working right-hand side is nonnegative.
    sign: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: DMatrix<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Tableau<'a> {
    fn new(lp: &'a StandardLp) -> Self {
        let m = lp.n_rows();
        let n = lp.n_cols();
        let sign: Vec<f64> = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        let xb = lp.rhs.iter().zip(&sign).map(|(b, s)| b * s).collect();
        let mut is_basic = vec![false; n + m];
        for flag in &mut is_basic[n..] {
            *flag = true;
        }
        Self {
            lp,
            sign,
            basis: (n..n + m).collect(),
            is_basic,
            binv: DMatrix::identity(m, m),
            xb,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn n(&self) -> usize {
        self.lp.n_cols()
    }

    /// Column `j` of the sign-adjusted constraint matrix (artificials are unit columns).
    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n() {
            self.lp.columns[j].iter().map(|&(i, a)| (i, a * self.sign[i])).collect()
        } else {
            vec![(j - self.n(), 1.0)]
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.binv.nrows();
        let mut out = vec![0.0; m];
        for (r, a) in self.column(j) {
            let col = self.binv.column(r);
            for (o, b) in out.iter_mut().zip(col.iter()) {
                *o += a * b;
            }
        }
        out
    }

    fn duals(&self, costs: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let cb: Vec<f64> = self.basis.iter().map(|&j| costs(j)).collect();
        (0..self.binv.ncols())
            .map(|k| self.binv.column(k).iter().zip(&cb).map(|(b, c)| b * c).sum())
            .collect()
    }

    fn reduced_cost(&self, j: usize, y: &[f64], costs: &dyn Fn(usize) -> f64) -> f64 {
        costs(j) - self.column(j).iter().map(|&(i, a)| y[i] * a).sum::<f64>()
    }

    fn pivot(&mut self, row: usize, entering: usize, d: &[f64]) {
        let m = self.binv.nrows();
        let p = d[row];
        let step = self.xb[row] / p;
        for i in 0..m {
            if i == row {
                self.xb[i] = step;
            } else {
                self.xb[i] -= d[i] * step;
                if self.xb[i].abs() < 1e-14 {
                    self.xb[i] = 0.0;
                }
            }
        }
        for k in 0..m {
            let mut col = self.binv.column_mut(k);
            let pivot_entry = col[row] / p;
            if pivot_entry == 0.0 {
                continue;
            }
            for i in 0..m {
                if i == row {
                    col[i] = pivot_entry;
                } else {
                    col[i] -= d[i] * pivot_entry;
                }
            }
        }
        self.is_basic[self.basis[row]] = false;
        self.is_basic[entering] = true;
        self.basis[row] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    /// Rebuilds `B^{-1}` and `x_B` from scratch.
    fn refactor(&mut self) {
        let m = self.binv.nrows();
        let mut b = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            for (i, a) in self.column(j) {
                b[(i, k)] = a;
            }
        }
        if let Some(inv) = b.lu().try_inverse() {
            self.binv = inv;
            let rhs: Vec<f64> = self.lp.rhs.iter().zip(&self.sign).map(|(b, s)| b * s).collect();
            self.xb = (0..m)
                .map(|i| {
                    let v: f64 = (0..m).map(|k| self.binv[(i, k)] * rhs[k]).sum();
                    if v.abs() < 1e-14 {
                        0.0
                    } else {
                        v
                    }
                })
                .collect();
        }
        self.since_refactor = 0;
    }

    /// Bland-rule simplex on the given costs. `allowed` filters entering candidates.
    fn run(&mut self, costs: &dyn Fn(usize) -> f64, allowed: &dyn Fn(usize) -> bool) -> Result<()> {
        loop {
            if self.iterations >= ITERATION_CAP {
                return Err(Error::IterationLimit(self.iterations));
            }
            let y = self.duals(costs);
            let total = self.n() + self.binv.nrows();
            let entering = (0..total).find(|&j| {
                !self.is_basic[j] && allowed(j) && self.reduced_cost(j, &y, costs) < -REDUCED_COST_TOL
            });
            let Some(entering) = entering else {
                return Ok(());
            };
            let d = self.ftran(entering);
            let mut leave: Option<(usize, f64)> = None;
            for (i, &di) in d.iter().enumerate() {
                if di > PIVOT_TOL {
                    let ratio = self.xb[i].max(0.0) / di;
                    let better = match leave {
                        None => true,
                        Some((r, best)) => {
                            ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Unbounded { column: entering });
            };
            self.pivot(row, entering, &d);
        }
    }
}

/// Solves the LP to optimality.
///
/// Errors with [`Error::Infeasible`] (naming the row with the largest
/// phase-one residual) or [`Error::Unbounded`].
pub fn solve(lp: &StandardLp) -> Result<LpResult> {
    let m = lp.n_rows();
    let n = lp.n_cols();
    let mut tab = Tableau::new(lp);

    // Phase one: minimize the sum of artificials.
    let phase_one = |j: usize| if j >= n { 1.0 } else { 0.0 };
    tab.run(&phase_one, &|j| j < n)?;
    tab.refactor();
    let scale = 1.0 + lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let worst = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| (i, tab.xb[i]))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, residual)) = worst {
        if residual > 1e-9 * scale {
            return Err(Error::Infeasible {
                row: tab.basis[i] - n,
                residual,
            });
        }
    }

    // Drive zero-level artificials out where a structural column can replace them.
    for row in 0..m {
        if tab.basis[row] < n {
            continue;
        }
        let replacement = (0..n).find_map(|j| {
            if tab.is_basic[j] {
                return None;
            }
            let d = tab.ftran(j);
            (d[row].abs() > PIVOT_TOL).then_some((j, d))
        });
        if let Some((j, d)) = replacement {
            tab.xb[row] = 0.0;
            tab.pivot(row, j, &d);
        }
    }

    let phase_two = |j: usize| if j < n { lp.cost[j] } else { 0.0 };
    tab.run(&phase_two, &|j| j < n)?;
    tab.refactor();

    let mut x = vec![0.0; n];
    for (i, &j) in tab.basis.iter().enumerate() {
        if j < n {
            x[j] = tab.xb[i].max(0.0);
        }
    }
    let duals = tab
        .duals(&phase_two)
        .iter()
        .zip(&tab.sign)
        .map(|(y, s)| y * s)
        .collect();
    Ok(LpResult {
        objective: lp.objective(&x),
        x,
        duals,
        basis: tab.basis,
        iterations: tab.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn dense(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    /// Enumerates all bases of a small standard-form LP (vertex oracle).
    fn vertex_oracle(e: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Option<f64> {
        let (m, n) = e.shape();
        let mut best: Option<f64> = None;
        let mut subset: Vec<usize> = (0..m).collect();
        loop {
            let bm = DMatrix::from_fn(m, m, |i, k| e[(i, subset[k])]);
            if bm.determinant().abs() > 1e-10 {
                let xb = bm.lu().solve(&nalgebra::DVector::from_column_slice(b)).unwrap();
                if xb.iter().all(|&v| v >= -1e-10) {
                    let val: f64 = subset.iter().zip(xb.iter()).map(|(&j, v)| c[j] * v).sum();
                    best = Some(best.map_or(val, |b: f64| b.min(val)));
                }
            }
            // next combination
            let mut i = m;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if subset[i] < n - m + i {
                    subset[i] += 1;
                    for k in i + 1..m {
                        subset[k] = subset[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn unique_feasible_point() {
        // x0 = 1, x1 - x0 = 0
        let e = dense(2, 2, &[1.0, 0.0, -1.0, 1.0]);
        let r = solve(&StandardLp::from_dense(&e, &[1.0, 0.0], &[3.0, 5.0]).unwrap()).unwrap();
        assert_eq!(r.x, vec![1.0, 1.0]);
        assert_eq!(r.objective, 8.0);
    }

    #[test]
    fn zero_objective() {
        let e = dense(1, 3, &[1.0, 1.0, 1.0]);
        let r = solve(&StandardLp::from_dense(&e, &[1.0], &[0.0; 3]).unwrap()).unwrap();
        assert_eq!(r.objective, 0.0);
        assert!((r.x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_problem_with_duals() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> min -3x - 5y with slacks.
        let e = dense(
            3,
            5,
            &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 3.0, 2.0, 0.0, 0.0, 1.0],
        );
        let c = [-3.0, -5.0, 0.0, 0.0, 0.0];
        let lp = StandardLp::from_dense(&e, &[4.0, 12.0, 18.0], &c).unwrap();
        let r = solve(&lp).unwrap();
        assert!((r.objective + 36.0).abs() < 1e-12);
        assert!((r.x[0] - 2.0).abs() < 1e-12 && (r.x[1] - 6.0).abs() < 1e-12);
        // Dual objective b^T y equals the primal optimum.
        let dual_obj: f64 = r.duals.iter().zip(lp.rhs()).map(|(y, b)| y * b).sum();
        assert!((dual_obj - r.objective).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_rows_are_handled() {
        // -x0 - x1 = -2, x0 <= 1 via slack
        let e = dense(2, 3, &[-1.0, -1.0, 0.0, 1.0, 0.0, 1.0]);
        let lp = StandardLp::from_dense(&e, &[-2.0, 1.0], &[2.0, 1.0, 0.0]).unwrap();
        let r = solve(&lp).unwrap();
        assert!((r.objective - 2.0).abs() < 1e-12);
        let dual_obj: f64 = r.duals.iter().zip(lp.rhs()).map(|(y, b)| y * b).sum();
        assert!((dual_obj - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        // x0 + x1 = 1 and x0 + x1 = 2
        let e = dense(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = solve(&StandardLp::from_dense(&e, &[1.0, 2.0], &[1.0, 1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn unbounded_problem_is_reported() {
        // x0 - x1 = 0, minimize -x0
        let e = dense(1, 2, &[1.0, -1.0]);
        let err = solve(&StandardLp::from_dense(&e, &[0.0], &[-1.0, 0.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Unbounded { .. }));
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let e = dense(3, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let r = solve(&StandardLp::from_dense(&e, &[1.0, 1.0, 0.25], &[1.0, 2.0, 0.5]).unwrap()).unwrap();
        assert!((r.objective - 0.625).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's cycling example in standard form.
        let e = dense(
            3,
            7,
            &[
                0.25, -8.0, -1.0, 9.0, 1.0, 0.0, 0.0, //
                0.5, -12.0, -0.5, 3.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0,
            ],
        );
        let c = [-0.75, 20.0, -0.5, 6.0, 0.0, 0.0, 0.0];
        let r = solve(&StandardLp::from_dense(&e, &[0.0, 0.0, 1.0], &c).unwrap()).unwrap();
        assert!((r.objective + 1.25).abs() < 1e-12);
    }

    #[test]
    fn random_problems_match_vertex_enumeration() {
        let mut rng = SeededRng::new(17);
        let mut solved = 0;
        for _ in 0..200 {
            let m = 1 + rng.below(3);
            let n = m + 1 + rng.below(4);
            let e = DMatrix::from_fn(m, n, |_, _| (rng.below(7) as f64) - 2.0);
            // Feasible by construction: b = E z0 with z0 >= 0.
            let z0: Vec<f64> = (0..n).map(|_| rng.below(3) as f64).collect();
            let b: Vec<f64> = (0..m).map(|i| (0..n).map(|j| e[(i, j)] * z0[j]).sum()).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.below(5) as f64).collect();
            let lp = StandardLp::from_dense(&e, &b, &c).unwrap();
            let r = solve(&lp).unwrap();
            let ez = lp.apply(&r.x);
            for (a, bb) in ez.iter().zip(&b) {
                assert!((a - bb).abs() < 1e-9);
            }
            if let Some(oracle) = vertex_oracle(&e, &b, &c) {
                assert!((r.objective - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()));
                solved += 1;
            }
            // Dual feasibility and strong duality.
            for j in 0..n {
                let red = c[j] - lp.column(j).iter().map(|&(i, a)| r.duals[i] * a).sum::<f64>();
                assert!(red >= -1e-9);
            }
            let dual_obj: f64 = r.duals.iter().zip(&b).map(|(y, bb)| y * bb).sum();
            assert!((dual_obj - r.objective).abs() <= 1e-9 * (1.0 + r.objective.abs()));
        }
        assert!(solved > 100);
    }
}
