//! Block-Hankel matrices of external data and the Hankel factorization of
//! finite-support trajectory distributions.
//!
//! Rank, projector and pseudoinverse all come from one SVD truncated at
//! `RANK_RTOL * sigma_max`, so the three notions agree with each other.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::measure::{DiscreteDistribution, PathMeasure};
use crate::system::external_projection;

/// Relative singular-value threshold for numerical rank.
pub const RANK_RTOL: f64 = 1e-9;

/// Default relative residual below which a window counts as a behavior element.
pub const MEMBERSHIP_RTOL: f64 = 1e-9;

/// Distribution over stacked external windows `(w_0, ..., w_{L-1})`.
pub type ExternalMeasure = DiscreteDistribution;

/// Distribution over Hankel coefficient vectors `g`.
pub type CoefficientMeasure = DiscreteDistribution;

#[derive(Clone, Debug)]
pub struct HankelMatrix {
    depth: usize,
    sample_dim: usize,
    data: Vec<Vec<f64>>,
    matrix: DMatrix<f64>,
    singular_values: Vec<f64>,
    /// Left singular vectors, one column per singular value (descending).
    left: DMatrix<f64>,
    /// Right singular vectors, one column per singular value.
    right: DMatrix<f64>,
    rank: usize,
    pinv: DMatrix<f64>,
}

/// Singular values in descending order with matching factor columns.
fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    (values, left, right)
}

fn numerical_rank(values: &[f64], rtol: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > rtol * top).count()
}

/// Stacks consecutive windows of `data` as columns.
fn hankel_layout(data: &[Vec<f64>], depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    if data.len() < depth {
        return Err(Error::InvalidArgument(format!(
            "signal of length {} is shorter than the window length {depth}",
            data.len()
        )));
    }
    let dim = data[0].len();
    for w in data {
        check_dim("signal sample length", dim, w.len())?;
    }
    let cols = data.len() - depth + 1;
    Ok(DMatrix::from_fn(depth * dim, cols, |r, c| data[c + r / dim][r % dim]))
}

impl HankelMatrix {
    /// Depth-`depth` Hankel matrix of the sample sequence `data`.
    pub fn build(data: &[Vec<f64>], depth: usize) -> Result<Self> {
        Self::build_with_rtol(data, depth, RANK_RTOL)
    }

    /// As [`HankelMatrix::build`], truncating singular values at or below
    /// `rtol * sigma_max`.
    pub fn build_with_rtol(data: &[Vec<f64>], depth: usize, rtol: f64) -> Result<Self> {
        if !(rtol > 0.0 && rtol < 1.0) {
            return Err(Error::InvalidArgument(format!("rank tolerance {rtol} outside (0, 1)")));
        }
        let matrix = hankel_layout(data, depth)?;
        let (singular_values, left, right) = sorted_svd(&matrix);
        let rank = numerical_rank(&singular_values, rtol);
        let mut pinv = DMatrix::zeros(matrix.ncols(), matrix.nrows());
        for k in 0..rank {
            pinv += right.column(k) * left.column(k).transpose() / singular_values[k];
        }
        Ok(Self {
            depth,
            sample_dim: data[0].len(),
            data: data.to_vec(),
            matrix,
            singular_values,
            left,
            right,
            rank,
            pinv,
        })
    }

    /// Recovers the signal from a matrix with block-Hankel structure and
    /// rebuilds it. Fails unless every column is the previous one shifted by
    /// one sample.
    pub fn from_matrix(matrix: &DMatrix<f64>, depth: usize) -> Result<Self> {
        if depth == 0 || matrix.nrows() == 0 || matrix.ncols() == 0 || !matrix.nrows().is_multiple_of(depth) {
            return Err(Error::InvalidArgument(format!(
                "a {}x{} matrix is not a depth-{depth} Hankel matrix",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dim = matrix.nrows() / depth;
        let sample = |c: usize, k: usize| (0..dim).map(|i| matrix[(k * dim + i, c)]).collect::<Vec<f64>>();
        let mut data: Vec<Vec<f64>> = (0..depth).map(|k| sample(0, k)).collect();
        data.extend((1..matrix.ncols()).map(|c| sample(c, depth - 1)));
        let rebuilt = Self::build(&data, depth)?;
        if rebuilt.matrix != *matrix {
            return Err(Error::InvalidArgument("matrix does not have block-Hankel structure".into()));
        }
        Ok(rebuilt)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn sample_dim(&self) -> usize {
        self.sample_dim
    }
    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
    /// Full spectrum, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }
    pub fn left_factor(&self) -> &DMatrix<f64> {
        &self.left
    }
    pub fn right_factor(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// Orthonormal basis of `col H`.
    pub fn column_basis(&self) -> DMatrix<f64> {
        self.left.columns(0, self.rank).into_owned()
    }

    /// Orthonormal basis of the orthogonal complement of `col H`; its
    /// transpose is a kernel representation of the behavior.
    pub fn left_null_basis(&self) -> DMatrix<f64> {
        let rows = self.nrows();
        let full_left = if self.left.ncols() == rows {
            self.left.clone()
        } else {
            // Zero columns do not change the spectrum but make U square.
            let mut padded = DMatrix::zeros(rows, rows.max(self.ncols()));
            padded.columns_mut(0, self.ncols()).copy_from(&self.matrix);
            sorted_svd(&padded).1
        };
        full_left.columns(self.rank, rows - self.rank).into_owned()
    }

    /// Orthogonal projection `H H^+ w` onto `col H`.
    pub fn project(&self, w: &DVector<f64>) -> DVector<f64> {
        let basis = self.left.columns(0, self.rank);
        basis * (basis.transpose() * w)
    }

    /// `|w - H H^+ w| / max(1, |w|)`.
    pub fn relative_membership_residual(&self, w: &DVector<f64>) -> f64 {
        (w - self.project(w)).norm() / w.norm().max(1.0)
    }
}

pub fn build_hankel(data: &[Vec<f64>], depth: usize) -> Result<HankelMatrix> {
    HankelMatrix::build(data, depth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeReport {
    pub order: usize,
    pub required_rank: usize,
    pub achieved_rank: usize,
    pub singular_values: Vec<f64>,
    pub pass: bool,
}

/// Persistency of excitation of order `order`: the depth-`order` input
/// Hankel matrix has full row rank `order * n_u`.
pub fn check_pe(u_data: &[Vec<f64>], order: usize) -> Result<PeReport> {
    let matrix = hankel_layout(u_data, order)?;
    let (singular_values, _, _) = sorted_svd(&matrix);
    let achieved_rank = numerical_rank(&singular_values, RANK_RTOL);
    let required_rank = matrix.nrows();
    Ok(PeReport {
        order,
        required_rank,
        achieved_rank,
        singular_values,
        pass: achieved_rank == required_rank,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorRank {
    pub rank: usize,
    /// `L n_u + n_x`.
    pub expected: usize,
    /// `sigma_rank / sigma_{rank+1}`; infinite when there is no next value
    /// or it is exactly zero, and zero when the rank is zero.
    pub gap_ratio: f64,
    pub matches: bool,
}

/// Compares the numerical rank of `H` with the behavior dimension
/// `L n_u + n_x`. `n_u` is inferred as `sample_dim - n_y`.
pub fn behavior_rank(h: &HankelMatrix, n_u: usize, n_x: usize) -> BehaviorRank {
    let expected = h.depth * n_u + n_x;
    let s = &h.singular_values;
    let gap_ratio = match (h.rank, s.get(h.rank)) {
        (0, _) => 0.0,
        (r, Some(&next)) if next > 0.0 => s[r - 1] / next,
        _ => f64::INFINITY,
    };
    BehaviorRank {
        rank: h.rank,
        expected,
        gap_ratio,
        matches: h.rank == expected,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lift {
    pub g: DVector<f64>,
    /// `|H g - w|`.
    pub residual: f64,
}

impl Lift {
    pub fn relative_residual(&self, w: &DVector<f64>) -> f64 {
        self.residual / w.norm().max(f64::MIN_POSITIVE)
    }
}

/// Minimum-norm coefficient vector `g = H^+ w` and its fit residual.
pub fn pinv_lift(h: &HankelMatrix, w: &DVector<f64>) -> Result<Lift> {
    check_dim("stacked window length", h.nrows(), w.len())?;
    let g = &h.pinv * w;
    let residual = (&h.matrix * &g - w).norm();
    Ok(Lift { g, residual })
}

/// Stacked external windows of every atom of a state-space path measure.
pub fn external_measure(mu: &PathMeasure) -> Result<ExternalMeasure> {
    DiscreteDistribution::from_pairs(mu.atoms().iter().map(|a| {
        (a.weight, external_projection(&a.traj).stacked().as_slice().to_vec())
    }))
}

/// Canonical lift `nu = (H^+)_# mu`, atom by atom.
///
/// Every atom must satisfy `|H H^+ w - w| <= rel_tol * max(|w|, 1)`.
pub fn factorize_measure(h: &HankelMatrix, mu: &ExternalMeasure, rel_tol: f64) -> Result<CoefficientMeasure> {
    let mut pairs = Vec::with_capacity(mu.atoms().len());
    for (index, atom) in mu.atoms().iter().enumerate() {
        let w = DVector::from_column_slice(&atom.point);
        let lift = pinv_lift(h, &w)?;
        let residual = lift.residual / w.norm().max(1.0);
        if residual > rel_tol {
            return Err(Error::OffBehavior { index, residual });
        }
        pairs.push((atom.weight, lift.g.as_slice().to_vec()));
    }
    DiscreteDistribution::from_pairs(pairs)
}

/// `H_# nu`, atom by atom.
pub fn pushforward_measure(h: &HankelMatrix, nu: &CoefficientMeasure) -> Result<ExternalMeasure> {
    check_dim("coefficient vector length", h.ncols(), nu.dim())?;
    DiscreteDistribution::from_pairs(nu.atoms().iter().map(|a| {
        let g = DVector::from_column_slice(&a.point);
        (a.weight, (&h.matrix * g).as_slice().to_vec())
    }))
}

/// Projection residual of the mean window, relative to `max(1, |mean|)`.
pub fn mean_behavior_residual(mu: &ExternalMeasure, h: &HankelMatrix) -> Result<f64> {
    check_dim("stacked window length", h.nrows(), mu.dim())?;
    let mean = DVector::from_vec(mu.mean());
    Ok(h.relative_membership_residual(&mean))
}

/// Weighted covariance `sum_i p_i (z_i - zbar)(z_i - zbar)^T`.
pub fn weighted_covariance(mu: &DiscreteDistribution) -> DMatrix<f64> {
    let mean = DVector::from_vec(mu.mean());
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    for a in mu.atoms() {
        let c = DVector::from_column_slice(&a.point) - &mean;
        cov += a.weight * &c * c.transpose();
    }
    cov
}

/// `|Cov[w] - H Cov[g] H^T|_F / |Cov[w]|_F` with `g` the canonical lift.
/// Zero when both sides vanish (single-atom measures).
pub fn covariance_transfer_residual(mu: &ExternalMeasure, h: &HankelMatrix, rel_tol: f64) -> Result<f64> {
    let nu = factorize_measure(h, mu, rel_tol)?;
    let cov_w = weighted_covariance(mu);
    let cov_g = weighted_covariance(&nu);
    let transferred = &h.matrix * cov_g * h.matrix.transpose();
    let diff = (&cov_w - transferred).norm();
    let scale = cov_w.norm();
    if scale == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::system::catalog::siso_validation;
    use crate::system::{simulate, Dynamics, LtiSystem};

    fn scalar(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    fn external_data(sys: &LtiSystem, rng: &mut SeededRng, n: usize) -> Vec<Vec<f64>> {
        let u: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(sys.input_dim())).collect();
        let traj = simulate(sys, &rng.normal_vec(sys.state_dim()), &u).unwrap();
        external_projection(&traj).windows().to_vec()
    }

    fn fresh_window(sys: &LtiSystem, rng: &mut SeededRng, depth: usize) -> DVector<f64> {
        DVector::from_vec(external_data(sys, rng, depth).concat())
    }

    /// Rank oracle independent of the SVD: Gaussian elimination with full
    /// pivoting on a scaled copy.
    fn elimination_rank(m: &DMatrix<f64>, tol: f64) -> usize {
        let mut a = m.clone();
        let scale = a.amax().max(1e-300);
        let (rows, cols) = a.shape();
        let mut rank = 0;
        for _ in 0..rows.min(cols) {
            let mut best = (0.0, 0, 0);
            for r in rank..rows {
                for c in rank..cols {
                    if a[(r, c)].abs() > best.0 {
                        best = (a[(r, c)].abs(), r, c);
                    }
                }
            }
            if best.0 <= tol * scale {
                break;
            }
            a.swap_rows(rank, best.1);
            a.swap_columns(rank, best.2);
            for r in rank + 1..rows {
                let f = a[(r, rank)] / a[(rank, rank)];
                for c in rank..cols {
                    a[(r, c)] -= f * a[(rank, c)];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn layout_of_small_scalar_signal() {
        let h = build_hankel(&scalar(&[1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        let full = build_hankel(&scalar(&[1.0, 2.0, 3.0]), 3).unwrap();
        assert_eq!(full.ncols(), 1);
        assert_eq!(full.matrix().column(0).as_slice(), &[1.0, 2.0, 3.0]);
        assert!(build_hankel(&scalar(&[1.0, 2.0]), 3).is_err());
        assert!(build_hankel(&scalar(&[1.0, 2.0]), 0).is_err());
    }

    #[test]
    fn from_matrix_round_trip() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(41);
        let h = build_hankel(&external_data(&sys, &mut rng, 20), 4).unwrap();
        let back = HankelMatrix::from_matrix(h.matrix(), 4).unwrap();
        assert_eq!(back.data(), h.data());
        let mut broken = h.matrix().clone();
        broken[(2, 1)] += 1.0;
        assert!(HankelMatrix::from_matrix(&broken, 4).is_err());
        assert!(HankelMatrix::from_matrix(h.matrix(), 5).is_err());
    }

    #[test]
    fn validation_system_shape_and_rank() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(42);
        let data = external_data(&sys, &mut rng, 80);
        let h = build_hankel(&data, 6).unwrap();
        assert_eq!((h.nrows(), h.ncols()), (12, 75));
        let br = behavior_rank(&h, 1, 2);
        assert_eq!(br.rank, 8);
        assert!(br.matches);
        assert!(br.gap_ratio > 1e6);
        assert_eq!(elimination_rank(h.matrix(), 1e-9), 8);
    }

    #[test]
    fn depth_one_rank_is_below_behavior_formula() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(43);
        let h = build_hankel(&external_data(&sys, &mut rng, 80), 1).unwrap();
        let br = behavior_rank(&h, 1, 2);
        assert_eq!(br.expected, 3);
        assert_eq!(br.rank, elimination_rank(h.matrix(), 1e-9));
        assert_eq!(br.rank, 2);
        assert!(!br.matches);
    }

    #[test]
    fn zero_data_has_rank_zero() {
        let h = build_hankel(&vec![vec![0.0, 0.0]; 10], 3).unwrap();
        let br = behavior_rank(&h, 1, 2);
        assert_eq!(br.rank, 0);
        assert_eq!(br.gap_ratio, 0.0);
    }

    #[test]
    fn svd_and_pseudoinverse_identities() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(44);
        let h = build_hankel(&external_data(&sys, &mut rng, 80), 6).unwrap();
        let m = h.matrix();
        let k = h.singular_values().len();
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(h.singular_values()));
        let rebuilt = h.left_factor().columns(0, k) * sigma * h.right_factor().transpose();
        assert!((&rebuilt - m).norm() <= 1e-12 * m.norm());
        let p = h.pinv();
        let rel = |a: DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() / b.norm();
        assert!(rel(m * p * m, m) <= 1e-10);
        assert!(rel(p * m * p, p) <= 1e-10);
        assert!(rel((m * p).transpose(), &(m * p)) <= 1e-10);
        assert!(rel((p * m).transpose(), &(p * m)) <= 1e-10);
    }

    #[test]
    fn pe_constant_input_fails() {
        let r = check_pe(&scalar(&[2.0; 10]), 2).unwrap();
        assert_eq!(r.achieved_rank, 1);
        assert_eq!(r.required_rank, 2);
        assert!(!r.pass);
    }

    #[test]
    fn pe_periodic_input() {
        let u: Vec<f64> = (0..15).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let u = scalar(&u);
        assert!(check_pe(&u, 2).unwrap().pass);
        assert!(check_pe(&u, 3).unwrap().pass);
        let four = check_pe(&u, 4).unwrap();
        assert!(!four.pass);
        assert_eq!(four.achieved_rank, 3);
        assert_eq!(elimination_rank(&hankel_layout(&u, 4).unwrap(), 1e-9), 3);
        assert!(check_pe(&u[..2], 3).is_err());
    }

    #[test]
    fn pe_random_input() {
        let mut rng = SeededRng::new(45);
        let u: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.normal()]).collect();
        let r = check_pe(&u, 8).unwrap();
        assert!(r.pass);
        assert_eq!(elimination_rank(&hankel_layout(&u, 8).unwrap(), 1e-9), 8);
    }

    #[test]
    fn lifts_of_columns_and_fresh_windows() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(46);
        let h = build_hankel(&external_data(&sys, &mut rng, 80), 6).unwrap();
        let col0 = h.matrix().column(0).into_owned();
        let lift = pinv_lift(&h, &col0).unwrap();
        assert!(lift.residual <= 1e-12 * col0.norm());
        for _ in 0..50 {
            let w = fresh_window(&sys, &mut rng, 6);
            let lift = pinv_lift(&h, &w).unwrap();
            assert!(lift.relative_residual(&w) <= 1e-12);
            // g = H^+ w lies in the row space: V_r V_r^T g = g.
            let vr = h.right_factor().columns(0, h.rank());
            assert!((&vr * (vr.transpose() * &lift.g) - &lift.g).norm() <= 1e-10 * lift.g.norm());
        }
        assert!(pinv_lift(&h, &DVector::zeros(5)).is_err());
    }

    #[test]
    fn orthogonal_window_has_full_residual() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(47);
        let h = build_hankel(&external_data(&sys, &mut rng, 80), 6).unwrap();
        let null = h.left_null_basis();
        assert_eq!(null.ncols(), 4);
        assert!((h.matrix().transpose() * &null).norm() <= 1e-10 * h.matrix().norm());
        let w = &null * DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let lift = pinv_lift(&h, &w).unwrap();
        assert!((lift.residual - w.norm()).abs() <= 1e-10 * w.norm());
    }

    #[test]
    fn left_null_basis_of_tall_matrix() {
        let h = build_hankel(&scalar(&[1.0, 2.0, 4.0, 7.0]), 3).unwrap();
        assert_eq!(h.ncols(), 2);
        let null = h.left_null_basis();
        assert_eq!(null.ncols(), 1);
        assert!((h.matrix().transpose() * &null).norm() < 1e-12);
    }

    fn validation_setup(seed: u64) -> (LtiSystem, HankelMatrix, SeededRng) {
        let sys = siso_validation();
        let mut rng = SeededRng::new(seed);
        let h = build_hankel(&external_data(&sys, &mut rng, 80), 6).unwrap();
        (sys, h, rng)
    }

    fn window_measure(sys: &LtiSystem, rng: &mut SeededRng, n: usize) -> ExternalMeasure {
        let weights = rng.simplex_point(n);
        DiscreteDistribution::from_pairs(
            weights
                .into_iter()
                .map(|w| (w, fresh_window(sys, rng, 6).as_slice().to_vec())),
        )
        .unwrap()
    }

    #[test]
    fn factorization_round_trip() {
        let (sys, h, mut rng) = validation_setup(48);
        let col0 = h.matrix().column(0).as_slice().to_vec();
        let dirac = factorize_measure(&h, &DiscreteDistribution::dirac(col0.clone()), MEMBERSHIP_RTOL).unwrap();
        let g0 = &h.pinv * DVector::from_column_slice(&col0);
        assert_eq!(dirac.atoms()[0].point, g0.as_slice());

        let mu = window_measure(&sys, &mut rng, 200);
        let nu = factorize_measure(&h, &mu, MEMBERSHIP_RTOL).unwrap();
        assert_eq!(nu.atoms().len(), 200);
        let back = pushforward_measure(&h, &nu).unwrap();
        for (a, b) in back.atoms().iter().zip(mu.atoms()) {
            assert_eq!(a.weight, b.weight);
            let d: f64 = a.point.iter().zip(&b.point).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-9);
        }
    }

    #[test]
    fn factorization_rejects_off_behavior_atoms() {
        let (sys, h, mut rng) = validation_setup(49);
        let null = h.left_null_basis();
        let good = fresh_window(&sys, &mut rng, 6);
        let bad = &good + null.column(0);
        let mu = DiscreteDistribution::from_pairs([
            (0.5, good.as_slice().to_vec()),
            (0.5, bad.as_slice().to_vec()),
        ])
        .unwrap();
        assert!(matches!(
            factorize_measure(&h, &mu, MEMBERSHIP_RTOL),
            Err(Error::OffBehavior { index: 1, .. })
        ));
    }

    #[test]
    fn pushforward_of_basis_diracs() {
        let (_, h, mut rng) = validation_setup(50);
        let n = h.ncols();
        let zero = pushforward_measure(&h, &DiscreteDistribution::dirac(vec![0.0; n])).unwrap();
        assert!(zero.atoms()[0].point.iter().all(|&v| v == 0.0));
        for j in [0, 7, n - 1] {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let w = pushforward_measure(&h, &DiscreteDistribution::dirac(e)).unwrap();
            assert_eq!(w.atoms()[0].point, h.matrix().column(j).as_slice());
        }
        let nu = DiscreteDistribution::from_pairs(rng.simplex_point(10).into_iter().map(|w| (w, rng.normal_vec(n)))).unwrap();
        let mu = pushforward_measure(&h, &nu).unwrap();
        for a in mu.atoms() {
            let w = DVector::from_column_slice(&a.point);
            assert!(pinv_lift(&h, &w).unwrap().relative_residual(&w) <= 1e-9);
        }
        assert!(pushforward_measure(&h, &DiscreteDistribution::dirac(vec![0.0; 3])).is_err());
    }

    #[test]
    fn mean_transfer_and_lift_non_uniqueness() {
        let (_, h, mut rng) = validation_setup(51);
        let n = h.ncols();
        for _ in 0..20 {
            let nu = DiscreteDistribution::from_pairs(rng.simplex_point(5).into_iter().map(|w| (w, rng.normal_vec(n)))).unwrap();
            let mu = pushforward_measure(&h, &nu).unwrap();
            let mean_w = DVector::from_vec(mu.mean());
            let mapped = h.matrix() * DVector::from_vec(nu.mean());
            assert!((&mean_w - &mapped).norm() <= 1e-12 * (1.0 + mean_w.norm()));
            // The canonical lift differs from nu but has the same pushforward.
            let canon = factorize_measure(&h, &mu, MEMBERSHIP_RTOL).unwrap();
            let again = pushforward_measure(&h, &canon).unwrap();
            for ((a, b), (c, d)) in again.atoms().iter().zip(mu.atoms()).zip(canon.atoms().iter().zip(nu.atoms())) {
                let err: f64 = a.point.iter().zip(&b.point).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-9);
                let gap: f64 = c.point.iter().zip(&d.point).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(gap > 1e-6);
            }
        }
    }

    #[test]
    fn mean_residuals() {
        let (sys, h, mut rng) = validation_setup(52);
        let col = h.matrix().column(3).as_slice().to_vec();
        assert!(mean_behavior_residual(&DiscreteDistribution::dirac(col), &h).unwrap() <= 1e-12);
        let mu = window_measure(&sys, &mut rng, 25);
        assert!(mean_behavior_residual(&mu, &h).unwrap() <= 1e-9);
        let null = h.left_null_basis();
        let off = fresh_window(&sys, &mut rng, 6) + null.column(1) * 2.0;
        let expected = h.relative_membership_residual(&off);
        let got = mean_behavior_residual(&DiscreteDistribution::dirac(off.as_slice().to_vec()), &h).unwrap();
        assert!((got - expected).abs() <= 1e-15);
        assert!(got > 0.1);
    }

    #[test]
    fn covariance_transfer() {
        let (sys, h, mut rng) = validation_setup(53);
        let mu = window_measure(&sys, &mut rng, 200);
        assert!(covariance_transfer_residual(&mu, &h, MEMBERSHIP_RTOL).unwrap() <= 1e-9);
        let col: Vec<f64> = h.matrix().column(0).as_slice().to_vec();
        let neg: Vec<f64> = col.iter().map(|v| -v).collect();
        let sym = DiscreteDistribution::from_pairs([(0.5, col.clone()), (0.5, neg)]).unwrap();
        assert!(covariance_transfer_residual(&sym, &h, MEMBERSHIP_RTOL).unwrap() <= 1e-12);
        let dirac = DiscreteDistribution::dirac(col);
        assert_eq!(covariance_transfer_residual(&dirac, &h, MEMBERSHIP_RTOL).unwrap(), 0.0);
    }

    #[test]
    fn constant_input_breaks_the_representation() {
        let sys = siso_validation();
        let mut rng = SeededRng::new(54);
        let u = vec![vec![1.0]; 80];
        assert!(!check_pe(&u, 8).unwrap().pass);
        let traj = simulate(&sys, &rng.normal_vec(2), &u).unwrap();
        let h = build_hankel(external_projection(&traj).windows(), 6).unwrap();
        let br = behavior_rank(&h, 1, 2);
        assert!(br.rank < br.expected);
        let worst = (0..20)
            .map(|_| {
                let w = fresh_window(&sys, &mut rng, 6);
                pinv_lift(&h, &w).unwrap().relative_residual(&w)
            })
            .fold(0.0, f64::max);
        assert!(worst > 1e-3);
    }
}
