//! Optimization over the data-driven behavior: the point (DeePC-style)
//! problem `min_g c(Hg)` and its distributional counterpart over a fixed
//! set of coefficient atoms with linear expectation constraints.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hankel::{HankelMatrix, RANK_RTOL};
use crate::lp::{self, StandardLp};

/// Tolerance for the symmetry and PSD checks on weight matrices.
pub const WEIGHT_TOL: f64 = 1e-10;

/// `c(w) = (w - w_ref)' W (w - w_ref)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPathCost {
    w_ref: DVector<f64>,
    weight: DMatrix<f64>,
    sqrt_weight: DMatrix<f64>,
}

impl QuadraticPathCost {
    /// `weight = None` means the identity.
    pub fn new(w_ref: DVector<f64>, weight: Option<DMatrix<f64>>) -> Result<Self> {
        let n = w_ref.len();
        let weight = weight.unwrap_or_else(|| DMatrix::identity(n, n));
        check_dim("weight rows", n, weight.nrows())?;
        check_dim("weight columns", n, weight.ncols())?;
        if weight.iter().any(|v| !v.is_finite()) || w_ref.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cost data must be finite".into()));
        }
        let scale = weight.amax().max(1.0);
        let asym = (&weight - weight.transpose()).amax();
        if asym > WEIGHT_TOL * scale {
            return Err(Error::InvalidArgument(format!("weight matrix is not symmetric (gap {asym:e})")));
        }
        let sym = (&weight + weight.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        if let Some(&low) = eig.eigenvalues.iter().find(|&&l| l < -WEIGHT_TOL * scale) {
            return Err(Error::InvalidArgument(format!("weight matrix has eigenvalue {low:e}")));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let sqrt_weight = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Ok(Self {
            w_ref,
            weight,
            sqrt_weight,
        })
    }

    pub fn w_ref(&self) -> &DVector<f64> {
        &self.w_ref
    }
    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn evaluate(&self, w: &DVector<f64>) -> f64 {
        let d = w - &self.w_ref;
        d.dot(&(&self.weight * &d))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Le,
    Eq,
}

/// `E[coeffs . w + offset] (<= | =) bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationConstraint {
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    pub bound: f64,
    pub sense: Sense,
}

impl ExpectationConstraint {
    pub fn phi(&self, w: &DVector<f64>) -> f64 {
        self.coeffs.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepcSolution {
    pub g: DVector<f64>,
    pub w: DVector<f64>,
    pub value: f64,
}

/// Minimum-norm minimizer of `c(Hg)` through the pseudoinverse of `W^{1/2} H`.
pub fn deepc_point(h: &HankelMatrix, cost: &QuadraticPathCost) -> Result<DeepcSolution> {
    check_dim("reference window length", h.nrows(), cost.w_ref.len())?;
    let a = &cost.sqrt_weight * h.matrix();
    let target = &cost.sqrt_weight * &cost.w_ref;
    let svd = a.svd(true, true);
    let top = svd.singular_values.max();
    let eps = if top > 0.0 { RANK_RTOL * top } else { f64::MIN_POSITIVE };
    let g = svd
        .solve(&target, eps)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let w = h.matrix() * &g;
    let value = cost.evaluate(&w);
    Ok(DeepcSolution { g, w, value })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionalSolution {
    pub weights: Vec<f64>,
    pub value: f64,
    /// Index of the cheapest atom (lowest index on ties).
    pub argmin_index: usize,
    pub atom_costs: Vec<f64>,
}

fn argmin(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in costs.iter().enumerate() {
        if *c < costs[best] {
            best = i;
        }
    }
    best
}

/// `min_p sum_i p_i c(H g_i)` over the simplex, subject to the expectation
/// constraints.
pub fn distributional_weights(
    h: &HankelMatrix,
    atoms: &[DVector<f64>],
    cost: &QuadraticPathCost,
    constraints: &[ExpectationConstraint],
) -> Result<DistributionalSolution> {
    distributional_weights_by(h, atoms, |w| cost.evaluate(w), constraints)
}

/// As [`distributional_weights`] with an arbitrary path cost, evaluated once
/// per atom.
pub fn distributional_weights_by(
    h: &HankelMatrix,
    atoms: &[DVector<f64>],
    cost: impl Fn(&DVector<f64>) -> f64,
    constraints: &[ExpectationConstraint],
) -> Result<DistributionalSolution> {
    if atoms.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let windows = atoms
        .iter()
        .map(|g| {
            check_dim("coefficient vector length", h.ncols(), g.len())?;
            Ok(h.matrix() * g)
        })
        .collect::<Result<Vec<_>>>()?;
    let atom_costs: Vec<f64> = windows.iter().map(&cost).collect();
    if let Some(c) = atom_costs.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!("atom cost {c} is not finite")));
    }
    let best = argmin(&atom_costs);

    if constraints.is_empty() {
        let mut weights = vec![0.0; atoms.len()];
        weights[best] = 1.0;
        return Ok(DistributionalSolution {
            weights,
            value: atom_costs[best],
            argmin_index: best,
            atom_costs,
        });
    }

    for c in constraints {
        check_dim("constraint coefficients", h.nrows(), c.coeffs.len())?;
        if c.coeffs.iter().chain([&c.offset, &c.bound]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("constraint data must be finite".into()));
        }
    }
    // Row 0: total mass; row 1 + j: constraint j.
    let mut rhs = vec![1.0];
    rhs.extend(constraints.iter().map(|c| c.bound));
    let mut problem = StandardLp::new(rhs);
    for (w, &c) in windows.iter().zip(&atom_costs) {
        let mut entries = vec![(0, 1.0)];
        entries.extend(
            constraints
                .iter()
                .enumerate()
                .map(|(j, con)| (1 + j, con.phi(w)))
                .filter(|(_, v)| *v != 0.0),
        );
        problem.add_column(c, entries)?;
    }
    for (j, con) in constraints.iter().enumerate() {
        if con.sense == Sense::Le {
            problem.add_column(0.0, vec![(1 + j, 1.0)])?;
        }
    }
    let sol = lp::solve(&problem)?;
    let weights = sol.x[..atoms.len()].to_vec();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|p| p / total).collect();
    let value = weights.iter().zip(&atom_costs).map(|(p, c)| p * c).sum();
    Ok(DistributionalSolution {
        weights,
        value,
        argmin_index: best,
        atom_costs,
    })
}
