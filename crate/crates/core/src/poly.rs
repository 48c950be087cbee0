//! Sparse multivariate polynomials over the stacked `(x, u)` variables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exps: Vec<u32>,
    pub coef: f64,
}

/// Polynomial as a list of monomial terms. Terms with equal exponents are
/// allowed and simply add up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(nvars: usize, terms: Vec<Term>) -> Result<Self> {
        let poly = Self { terms };
        poly.validate(nvars)?;
        Ok(poly)
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// The single variable with index `var` out of `nvars`.
    pub fn var(nvars: usize, var: usize) -> Self {
        Self::monomial(nvars, &[(var, 1)], 1.0)
    }

    /// `coef * prod(v_i^e_i)` from `(index, exponent)` pairs.
    pub fn monomial(nvars: usize, powers: &[(usize, u32)], coef: f64) -> Self {
        let mut exps = vec![0; nvars];
        for &(i, e) in powers {
            exps[i] += e;
        }
        Self {
            terms: vec![Term { exps, coef }],
        }
    }

    pub fn plus(mut self, other: Polynomial) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn validate(&self, nvars: usize) -> Result<()> {
        for term in &self.terms {
            if term.exps.len() != nvars {
                return Err(Error::DimensionMismatch {
                    context: "polynomial term exponents",
                    expected: nvars,
                    got: term.exps.len(),
                });
            }
            if !term.coef.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite polynomial coefficient {}",
                    term.coef
                )));
            }
        }
        Ok(())
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|t| t.coef != 0.0)
            .map(|t| t.exps.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * monomial_value(&t.exps, vars))
            .sum()
    }
}

/// `prod(vars[i]^exps[i])` by direct powering.
pub fn monomial_value(exps: &[u32], vars: &[f64]) -> f64 {
    exps.iter()
        .zip(vars)
        .filter(|(&e, _)| e > 0)
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

/// All exponent vectors over `nvars` variables with total degree in
/// `1..=max_degree`, in graded lexicographic order.
pub fn monomials_up_to(nvars: usize, max_degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for degree in 1..=max_degree {
        let mut current = vec![0u32; nvars];
        fill(&mut out, &mut current, 0, degree);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 >= current.len() {
        if let Some(last) = current.last_mut() {
            *last = remaining;
            out.push(current.clone());
            *current.last_mut().unwrap() = 0;
        }
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        fill(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}
