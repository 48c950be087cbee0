//! Mixed moments `E[x_t^i u_t^j x_{t+1}^k]` of scalar systems and the
//! graph-ideal identities they satisfy under graph-supported measures.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::measure::{PathAtom, PathMeasure};
use crate::rng::SeededRng;
use crate::system::{simulate, Dynamics, PolynomialSystem};

/// Moment table keyed by `(i, j, k)`.
pub type MomentTable = BTreeMap<(u32, u32, u32), f64>;

fn require_scalar(n_x: usize, n_u: usize) -> Result<()> {
    if n_x == 1 && n_u == 1 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "mixed moments need a scalar state and input, got n_x={n_x}, n_u={n_u}"
        )))
    }
}

/// All `m_{i,j,k}` with `i + j + k <= max_total_degree`.
pub fn mixed_moments(mu: &PathMeasure, t: usize, max_total_degree: u32) -> Result<MomentTable> {
    let (horizon, n_x, n_u, _) = mu.shape();
    require_scalar(n_x, n_u)?;
    if t >= horizon {
        return Err(Error::InvalidArgument(format!("stage {t} outside horizon {horizon}")));
    }
    let mut table = MomentTable::new();
    for i in 0..=max_total_degree {
        for j in 0..=max_total_degree - i {
            for k in 0..=max_total_degree - i - j {
                let m = mu.expect(|p| {
                    let (x, u, xn) = (p.states()[t][0], p.inputs()[t][0], p.states()[t + 1][0]);
                    x.powi(i as i32) * u.powi(j as i32) * xn.powi(k as i32)
                });
                table.insert((i, j, k), m);
            }
        }
    }
    Ok(table)
}

/// Largest violation of the truncated graph-ideal equalities
/// `m_{i,j,k+1} - sum_terms c * m_{i+a,j+b,k} = 0` for `x' = f(x, u)`, over all
/// `i + j + k + deg f <= 2r`.
///
/// For `f = x^2 + u` the equalities read
/// `m_{i,j,k+1} - m_{i+2,j,k} - m_{i,j+1,k} = 0`, and `(0,0,0)` is the
/// degree-one identity `E[x'] = E[x^2] + E[u]`.
pub fn graph_ideal_residual(
    mu: &PathMeasure,
    system: &PolynomialSystem,
    t: usize,
    order: u32,
) -> Result<f64> {
    require_scalar(system.state_dim(), system.input_dim())?;
    if order == 0 {
        return Err(Error::InvalidArgument("relaxation order must be at least 1".into()));
    }
    let f = &system.f()[0];
    let deg = f.degree().max(1);
    let top = 2 * order;
    if deg > top {
        return Ok(0.0);
    }
    let table = mixed_moments(mu, t, top + deg)?;
    let mut worst = 0.0f64;
    let budget = top - deg;
    for i in 0..=budget {
        for j in 0..=budget - i {
            for k in 0..=budget - i - j {
                let mut r = table[&(i, j, k + 1)];
                for term in &f.terms {
                    r -= term.coef * table[&(i + term.exps[0], j + term.exps[1], k)];
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// The degree-one identity alone (`i = j = k = 0`).
pub fn moment_identity_residual(mu: &PathMeasure, system: &PolynomialSystem, t: usize) -> Result<f64> {
    require_scalar(system.state_dim(), system.input_dim())?;
    let f = &system.f()[0];
    let table = mixed_moments(mu, t, f.degree().max(1))?;
    let mut r = table[&(0, 0, 1)];
    for term in &f.terms {
        r -= term.coef * table[&(term.exps[0], term.exps[1], 0)];
    }
    Ok(r.abs())
}

/// Random one-step behavioral measure inside the system's box: `n_atoms`
/// states and inputs drawn uniformly from the box, rejecting pairs whose
/// successor leaves the state box, with random simplex weights.
pub fn sample_box_measure(system: &PolynomialSystem, rng: &mut SeededRng, n_atoms: usize) -> Result<PathMeasure> {
    require_scalar(system.state_dim(), system.input_dim())?;
    let bounds = system
        .bounds()
        .filter(|b| b.x.len() == 1 && b.u.len() == 1)
        .ok_or_else(|| Error::InvalidArgument("system needs state and input boxes".into()))?;
    let (xlo, xhi) = bounds.x[0];
    let (ulo, uhi) = bounds.u[0];
    let weights = rng.simplex_point(n_atoms);
    let mut atoms = Vec::with_capacity(n_atoms);
    for weight in weights {
        let traj = loop {
            let x = rng.uniform_in(xlo, xhi);
            let u = rng.uniform_in(ulo, uhi);
            let next = system.step(&[x], &[u])[0];
            if (xlo..=xhi).contains(&next) {
                break simulate(system, &[x], &[vec![u]])?;
            }
        };
        atoms.push(PathAtom { weight, traj });
    }
    PathMeasure::new(atoms)
}

/// Degree-one projection `(E[x u], E[x'])` of a one-step measure.
pub fn degree_one_projection(mu: &PathMeasure) -> Result<(f64, f64)> {
    let table = mixed_moments(mu, 0, 2)?;
    Ok((table[&(1, 1, 0)], table[&(0, 0, 1)]))
}

/// Projections of `n_samples` random box-constrained behavioral measures,
/// each with 1 to 4 atoms.
pub fn projection_cloud(system: &PolynomialSystem, n_samples: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut rng = SeededRng::new(seed);
    (0..n_samples)
        .map(|_| {
            let n_atoms = 1 + rng.below(4);
            degree_one_projection(&sample_box_measure(system, &mut rng, n_atoms)?)
        })
        .collect()
}
