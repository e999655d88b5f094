//! Multi-outcome Gaussian regression model: data containers, likelihood, and
//! the divergences used by the contraction diagnostics.
//!
//! The sampling model is `y_i | x_i ~ N_q(B' x_i, Omega^{-1})` with i.i.d.
//! rows, so the joint log likelihood of the n x q response matrix `Y` given
//! the n x p design `X` is
//!
//! ```text
//! (n/2) log|Omega| - (1/2) tr[(Y - XB)'(Y - XB) Omega] - (nq/2) log(2 pi).
//! ```
//!
//! All divergences are reported per observation (divided by n), matching the
//! normalization in which the contraction rate `epsilon_n` is stated.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Absolute tolerance for symmetry checks on precision-sized matrices.
pub(crate) const SYMMETRY_TOL: f64 = 1e-12;

/// Relative tolerance for the design-column normalization check in
/// [`Dataset::new`]: each column norm must be within `1e-8 * sqrt(n)` of
/// `sqrt(n)`.
const COLUMN_NORM_RTOL: f64 = 1e-8;

const LN_2PI: f64 = 1.8378770664093453;

/// Log determinant of a symmetric positive definite matrix via Cholesky.
pub(crate) fn cholesky_log_det(m: &DMatrix<f64>, context: &str) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub(crate) fn cholesky_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(context.to_string()))?;
    Ok(chol.inverse())
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Errors unless `m` is square and entrywise symmetric within `tol`.
pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut max_asym = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > tol {
        return Err(Error::NotSymmetric {
            max_asymmetry: max_asym,
        });
    }
    Ok(())
}

/// Frobenius inner product `sum_ij a_ij b_ij`, i.e. `tr(A' B)`.
#[inline]
pub(crate) fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// A fixed design `X` (n x p) paired with responses `Y` (n x q).
///
/// Columns of `X` are expected to be scaled to norm `sqrt(n)`; the scaling is
/// what makes `epsilon_n` and the restricted eigenvalue comparable across
/// sample sizes. `p = 0` (no predictors, pure covariance estimation) is a
/// first-class configuration.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    columns_normalized: bool,
}

impl Dataset {
    /// Builds a dataset, enforcing the column normalization
    /// `| ||x_j|| - sqrt(n) | <= 1e-8 sqrt(n)` for every column.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::validate_dims(&x, &y)?;
        let n = x.nrows() as f64;
        let target = n.sqrt();
        for j in 0..x.ncols() {
            let norm = x.column(j).norm();
            if (norm - target).abs() > COLUMN_NORM_RTOL * target {
                return Err(Error::InvalidParam(format!(
                    "design column {j} has norm {norm:.6e}, expected sqrt(n) = {target:.6e}; \
                     rescale it or use Dataset::rescaled / Dataset::unnormalized"
                )));
            }
        }
        Ok(Self {
            x,
            y,
            columns_normalized: true,
        })
    }

    /// Builds a dataset after rescaling every design column to norm exactly
    /// `sqrt(n)`. A zero column cannot be rescaled and is an error.
    pub fn rescaled(mut x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::validate_dims(&x, &y)?;
        let target = (x.nrows() as f64).sqrt();
        for j in 0..x.ncols() {
            let norm = x.column(j).norm();
            if norm == 0.0 {
                return Err(Error::InvalidParam(format!(
                    "design column {j} is identically zero and cannot be rescaled"
                )));
            }
            x.column_mut(j).scale_mut(target / norm);
        }
        Ok(Self {
            x,
            y,
            columns_normalized: true,
        })
    }

    /// Accepts the design as-is, skipping the normalization check. The
    /// `columns_normalized` flag is recorded as `false` and surfaces in fit
    /// summaries so downstream consumers can see the rate diagnostics are not
    /// on the calibrated scale.
    pub fn unnormalized(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::validate_dims(&x, &y)?;
        Ok(Self {
            x,
            y,
            columns_normalized: false,
        })
    }

    fn validate_dims(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "responses must be non-empty, got {}x{}",
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn columns_normalized(&self) -> bool {
        self.columns_normalized
    }

    /// Residual matrix `Y - XB`.
    pub fn residuals(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        &self.y - &self.x * b
    }

    /// Residual covariance `(Y - XB)'(Y - XB) / n`, recomputed exactly.
    pub fn residual_covariance(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.residuals(b);
        let mut s = r.tr_mul(&r);
        s /= self.n() as f64;
        // Kill floating-point asymmetry so downstream symmetry checks hold.
        let st = s.transpose();
        (s + st) * 0.5
    }
}

/// A candidate parameter pair `(B, Omega)`.
///
/// `Omega` is symmetrized at construction; inputs with entrywise asymmetry
/// above `1e-12` are rejected. Positive definiteness is not enforced here
/// (divergences check it where they need it); estimates produced by the
/// solver additionally satisfy `min_eig(Omega) >= tau - 1e-10`.
#[derive(Debug, Clone)]
pub struct ModelEstimate {
    b: DMatrix<f64>,
    omega: DMatrix<f64>,
}

impl ModelEstimate {
    pub fn new(b: DMatrix<f64>, omega: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&omega, SYMMETRY_TOL)?;
        if b.ncols() != omega.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{} but Omega is {}x{}",
                b.nrows(),
                b.ncols(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        let omega_t = omega.transpose();
        let omega = (omega + omega_t) * 0.5;
        Ok(Self { b, omega })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn q(&self) -> usize {
        self.omega.nrows()
    }

    fn check_against(&self, data: &Dataset) -> Result<()> {
        if self.p() != data.p() || self.q() != data.q() {
            return Err(Error::DimensionMismatch(format!(
                "estimate is ({}x{}, {}x{}) but data needs p={}, q={}",
                self.b.nrows(),
                self.b.ncols(),
                self.omega.nrows(),
                self.omega.ncols(),
                data.p(),
                data.q()
            )));
        }
        Ok(())
    }
}

/// The generating parameters of a synthetic problem, with their supports and
/// the constants that bounded the generation.
///
/// Invariants checked at construction:
/// - nonzero entries of `B0` are exactly `support_b`, with magnitudes in
///   `[signal_floor, a1]`;
/// - `Omega0` is symmetric with eigenvalues inside `[1/b2, 1/b1]` (up to
///   1e-9) and its nonzero off-diagonals are exactly `support_omega`;
/// - support lists are sorted, deduplicated, in-range, and `support_omega`
///   holds pairs `(k, k')` with `k < k'`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub b0: DMatrix<f64>,
    pub omega0: DMatrix<f64>,
    pub support_b: Vec<(usize, usize)>,
    pub support_omega: Vec<(usize, usize)>,
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    pub signal_floor: f64,
}

impl GroundTruth {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b0: DMatrix<f64>,
        omega0: DMatrix<f64>,
        support_b: Vec<(usize, usize)>,
        support_omega: Vec<(usize, usize)>,
        a1: f64,
        b1: f64,
        b2: f64,
        signal_floor: f64,
    ) -> Result<Self> {
        if !(0.0 < b1 && b1 < b2) {
            return Err(Error::InvalidParam(format!(
                "need 0 < b1 < b2, got b1={b1}, b2={b2}"
            )));
        }
        if !(0.0 < signal_floor && signal_floor <= a1) {
            return Err(Error::InvalidParam(format!(
                "need 0 < signal_floor <= a1, got signal_floor={signal_floor}, a1={a1}"
            )));
        }
        check_symmetric(&omega0, 1e-10)?;
        if b0.ncols() != omega0.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "B0 is {}x{} but Omega0 is {}x{}",
                b0.nrows(),
                b0.ncols(),
                omega0.nrows(),
                omega0.ncols()
            )));
        }

        let mut sorted_b = support_b.clone();
        sorted_b.sort_unstable();
        sorted_b.dedup();
        if sorted_b.len() != support_b.len() {
            return Err(Error::InvalidParam(
                "support_b contains duplicate positions".into(),
            ));
        }
        for (j, k) in (0..b0.nrows()).flat_map(|j| (0..b0.ncols()).map(move |k| (j, k))) {
            let on_support = sorted_b.binary_search(&(j, k)).is_ok();
            let v = b0[(j, k)].abs();
            if on_support {
                if !(signal_floor - 1e-12..=a1 + 1e-12).contains(&v) {
                    return Err(Error::InvalidParam(format!(
                        "B0[{j},{k}] = {v:.6e} is on the support but outside [{signal_floor}, {a1}]"
                    )));
                }
            } else if v != 0.0 {
                return Err(Error::InvalidParam(format!(
                    "B0[{j},{k}] = {v:.6e} is nonzero but not listed in support_b"
                )));
            }
        }

        let q = omega0.nrows();
        let mut sorted_o = support_omega.clone();
        sorted_o.sort_unstable();
        sorted_o.dedup();
        if sorted_o.len() != support_omega.len() {
            return Err(Error::InvalidParam(
                "support_omega contains duplicate pairs".into(),
            ));
        }
        for &(k, l) in &sorted_o {
            if k >= l || l >= q {
                return Err(Error::InvalidParam(format!(
                    "support_omega pair ({k},{l}) is not an upper-triangular pair of a {q}x{q} matrix"
                )));
            }
        }
        for k in 0..q {
            for l in (k + 1)..q {
                let on_support = sorted_o.binary_search(&(k, l)).is_ok();
                if on_support && omega0[(k, l)] == 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "Omega0[{k},{l}] is zero but listed in support_omega"
                    )));
                }
                if !on_support && omega0[(k, l)] != 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "Omega0[{k},{l}] = {:.6e} is nonzero but not listed in support_omega",
                        omega0[(k, l)]
                    )));
                }
            }
        }

        let eigs = nalgebra::SymmetricEigen::new(omega0.clone()).eigenvalues;
        let lo = 1.0 / b2;
        let hi = 1.0 / b1;
        for &e in eigs.iter() {
            if e < lo - 1e-9 || e > hi + 1e-9 {
                return Err(Error::SpectrumFit(format!(
                    "Omega0 eigenvalue {e:.6e} outside [{lo:.6e}, {hi:.6e}]"
                )));
            }
        }

        Ok(Self {
            b0,
            omega0,
            support_b: sorted_b,
            support_omega: sorted_o,
            a1,
            b1,
            b2,
            signal_floor,
        })
    }

    pub fn p(&self) -> usize {
        self.b0.nrows()
    }

    pub fn q(&self) -> usize {
        self.omega0.nrows()
    }

    /// The truth viewed as a candidate estimate, for divergence computations.
    pub fn estimate(&self) -> ModelEstimate {
        ModelEstimate::new(self.b0.clone(), self.omega0.clone())
            .expect("ground truth always satisfies estimate invariants")
    }
}

/// Joint Gaussian log likelihood of the data under `est`, constant included:
/// `(n/2) log|Omega| - (1/2) tr[(Y-XB)'(Y-XB) Omega] - (nq/2) log(2 pi)`.
///
/// Errors if `Omega` is not positive definite or dimensions disagree.
pub fn log_likelihood(data: &Dataset, est: &ModelEstimate) -> Result<f64> {
    est.check_against(data)?;
    let n = data.n() as f64;
    let q = data.q() as f64;
    let log_det = cholesky_log_det(est.omega(), "Omega in log_likelihood")?;
    let r = data.residuals(est.b());
    let gram = r.tr_mul(&r);
    let quad = frobenius_inner(&gram, est.omega());
    Ok(0.5 * n * log_det - 0.5 * quad - 0.5 * n * q * LN_2PI)
}

/// Per-observation Kullback-Leibler divergence `KL(f_truth || f_est) / n`:
///
/// ```text
/// (1/2) [ log(|Omega0|/|Omega|) - q + tr(Omega0^{-1} Omega)
///         + (1/n) tr{(B0-B)' X'X (B0-B) Omega} ]
/// ```
///
/// Nonnegative, zero exactly at equality. Both precisions must be positive
/// definite.
pub fn kl_divergence_per_obs(
    data: &Dataset,
    truth: &ModelEstimate,
    est: &ModelEstimate,
) -> Result<f64> {
    truth.check_against(data)?;
    est.check_against(data)?;
    let n = data.n() as f64;
    let q = data.q() as f64;
    let log_det0 = cholesky_log_det(truth.omega(), "Omega0 in kl_divergence")?;
    let log_det1 = cholesky_log_det(est.omega(), "Omega in kl_divergence")?;
    let omega0_inv = cholesky_inverse(truth.omega(), "Omega0 in kl_divergence")?;
    let trace = frobenius_inner(&omega0_inv, est.omega());
    let delta = truth.b() - est.b();
    let xd = data.x() * &delta;
    let gram = xd.tr_mul(&xd);
    let mean_term = frobenius_inner(&gram, est.omega()) / n;
    Ok(0.5 * (log_det0 - log_det1 - q + trace + mean_term))
}

/// Per-observation variance of the log likelihood ratio under the truth:
///
/// ```text
/// (1/2) [ tr((Omega0^{-1} Omega)^2) - 2 tr(Omega0^{-1} Omega) + q ]
/// + (1/n) tr[(B-B0)' X'X (B-B0) Omega Omega0^{-1} Omega]
/// ```
pub fn kl_variance_per_obs(
    data: &Dataset,
    truth: &ModelEstimate,
    est: &ModelEstimate,
) -> Result<f64> {
    truth.check_against(data)?;
    est.check_against(data)?;
    let n = data.n() as f64;
    let q = data.q() as f64;
    let omega0_inv = cholesky_inverse(truth.omega(), "Omega0 in kl_variance")?;
    // Verify Omega is itself a valid precision before using it.
    cholesky_log_det(est.omega(), "Omega in kl_variance")?;
    let m = &omega0_inv * est.omega();
    let trace = m.trace();
    let trace_sq = frobenius_inner(&m.transpose(), &m);
    let delta = est.b() - truth.b();
    let xd = data.x() * &delta;
    let gram = xd.tr_mul(&xd);
    let sandwich = est.omega() * &omega0_inv * est.omega();
    let mean_term = frobenius_inner(&gram, &sandwich) / n;
    Ok(0.5 * (trace_sq - 2.0 * trace + q) + mean_term)
}

/// Per-observation negative log Hellinger affinity between the joint laws of
/// the data under `truth` and `est`:
///
/// ```text
/// (1/4) log|Omega| + (1/4) log|Omega0| + (1/2) log|(Omega^{-1}+Omega0^{-1})/2|
/// + (1/(8n)) tr[(B-B0)' X'X (B-B0) ((Omega^{-1}+Omega0^{-1})/2)^{-1}]
/// ```
///
/// Always in `[0, KL]`; zero exactly at equality.
pub fn log_affinity_per_obs(
    data: &Dataset,
    truth: &ModelEstimate,
    est: &ModelEstimate,
) -> Result<f64> {
    truth.check_against(data)?;
    est.check_against(data)?;
    let n = data.n() as f64;
    let log_det0 = cholesky_log_det(truth.omega(), "Omega0 in log_affinity")?;
    let log_det1 = cholesky_log_det(est.omega(), "Omega in log_affinity")?;
    let sigma0 = cholesky_inverse(truth.omega(), "Omega0 in log_affinity")?;
    let sigma1 = cholesky_inverse(est.omega(), "Omega in log_affinity")?;
    let avg = (&sigma0 + &sigma1) * 0.5;
    let log_det_avg = cholesky_log_det(&avg, "(Omega^{-1}+Omega0^{-1})/2 in log_affinity")?;
    let avg_inv = cholesky_inverse(&avg, "(Omega^{-1}+Omega0^{-1})/2 in log_affinity")?;
    let delta = est.b() - truth.b();
    let xd = data.x() * &delta;
    let gram = xd.tr_mul(&xd);
    let mean_term = frobenius_inner(&gram, &avg_inv) / (8.0 * n);
    Ok(0.25 * log_det1 + 0.25 * log_det0 + 0.5 * log_det_avg + mean_term)
}

/// Projects a symmetric matrix onto the cone `{min_eig >= tau}` by clamping
/// its spectrum: eigenvalues below `tau` are raised to exactly `tau`, the
/// eigenvectors are kept. Inputs already satisfying the floor are returned
/// unchanged. Non-symmetric input (entrywise asymmetry above
/// `1e-12 * (1 + max|entry|)`) is an error.
pub fn project_eigen_floor(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    let scale = 1.0 + m.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    check_symmetric(m, SYMMETRY_TOL * scale)?;
    let eigen = nalgebra::SymmetricEigen::new(m.clone());
    if eigen.eigenvalues.iter().all(|&e| e >= tau) {
        return Ok(m.clone());
    }
    let mut clamped = eigen.eigenvalues.clone();
    for e in clamped.iter_mut() {
        if *e < tau {
            *e = tau;
        }
    }
    let v = &eigen.eigenvectors;
    let recomposed = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    let rt = recomposed.transpose();
    Ok((recomposed + rt) * 0.5)
}
