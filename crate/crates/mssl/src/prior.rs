//! Spike-and-slab Laplace mixture priors, their induced selection
//! thresholds, and the sample-size-driven hyperparameter schedules.
//!
//! Every coefficient entry gets the two-point mixture density
//!
//! ```text
//! pi(x) = theta (r1/2) e^{-r1 |x|} + (1 - theta) (r0/2) e^{-r0 |x|},
//! ```
//!
//! with spike rate `r0` much larger than slab rate `r1` and slab probability
//! `theta`. The precision matrix takes the same mixture on off-diagonal
//! pairs `(k, k')` with `k < k'`, an `Exp(xi1)` prior on the diagonal, and a
//! hard restriction to `min_eig(Omega) > tau` whose normalization constant
//! is never evaluated.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::min_symmetric_eigenvalue;

/// Mixture parameters for one block of coefficients.
///
/// Invariants: `rate_spike > rate_slab > 0`, `0 < mix_weight < 1`, all
/// finite. `mix_weight` is the prior probability of the slab component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpikeSlabConfig", into = "SpikeSlabConfig")]
pub struct SpikeSlabParams {
    rate_spike: f64,
    rate_slab: f64,
    mix_weight: f64,
}

/// Plain serialization schema for [`SpikeSlabParams`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSlabConfig {
    pub rate_spike: f64,
    pub rate_slab: f64,
    pub mix_weight: f64,
}

impl TryFrom<SpikeSlabConfig> for SpikeSlabParams {
    type Error = Error;

    fn try_from(c: SpikeSlabConfig) -> Result<Self> {
        SpikeSlabParams::new(c.rate_spike, c.rate_slab, c.mix_weight)
    }
}

impl From<SpikeSlabParams> for SpikeSlabConfig {
    fn from(p: SpikeSlabParams) -> Self {
        Self {
            rate_spike: p.rate_spike,
            rate_slab: p.rate_slab,
            mix_weight: p.mix_weight,
        }
    }
}

impl SpikeSlabParams {
    pub fn new(rate_spike: f64, rate_slab: f64, mix_weight: f64) -> Result<Self> {
        if !(rate_spike.is_finite() && rate_slab.is_finite() && mix_weight.is_finite()) {
            return Err(Error::InvalidParam(
                "spike-and-slab parameters must be finite".into(),
            ));
        }
        if !(rate_slab > 0.0 && rate_spike > rate_slab) {
            return Err(Error::InvalidParam(format!(
                "need rate_spike > rate_slab > 0, got rate_spike={rate_spike}, rate_slab={rate_slab}"
            )));
        }
        if !(0.0 < mix_weight && mix_weight < 1.0) {
            return Err(Error::InvalidParam(format!(
                "need 0 < mix_weight < 1, got {mix_weight}"
            )));
        }
        Ok(Self {
            rate_spike,
            rate_slab,
            mix_weight,
        })
    }

    pub fn rate_spike(&self) -> f64 {
        self.rate_spike
    }

    pub fn rate_slab(&self) -> f64 {
        self.rate_slab
    }

    pub fn mix_weight(&self) -> f64 {
        self.mix_weight
    }

    /// Log of the mixture density at `x`, evaluated stably in log space.
    pub fn log_mixture(&self, x: f64) -> f64 {
        let a = self.mix_weight.ln() + (self.rate_slab / 2.0).ln() - self.rate_slab * x.abs();
        let b = (1.0 - self.mix_weight).ln() + (self.rate_spike / 2.0).ln()
            - self.rate_spike * x.abs();
        log_sum_exp(a, b)
    }
}

#[inline]
fn log_sum_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Posterior probability that an entry of magnitude `|x|` came from the slab:
/// `p*(x) = theta r1 e^{-r1|x|} / (theta r1 e^{-r1|x|} + (1-theta) r0 e^{-r0|x|})`.
///
/// Increasing in `|x|`, equals 1/2 exactly at the intersection threshold.
pub fn inclusion_probability(x: f64, params: &SpikeSlabParams) -> f64 {
    let t = (params.mix_weight * params.rate_slab).ln()
        - ((1.0 - params.mix_weight) * params.rate_spike).ln()
        + (params.rate_spike - params.rate_slab) * x.abs();
    sigmoid(t)
}

/// The mixture's self-adaptive penalty
/// `lambda*(x) = p*(x) r1 + (1 - p*(x)) r0`, the magnitude of the gradient of
/// the negative log mixture density away from 0. Lies in `[r1, r0]` and is
/// non-increasing in `|x|`.
pub fn adaptive_penalty(x: f64, params: &SpikeSlabParams) -> f64 {
    let p = inclusion_probability(x, params);
    p * params.rate_slab + (1.0 - p) * params.rate_spike
}

/// The threshold `delta` where the weighted spike and slab densities
/// intersect:
///
/// ```text
/// delta = log[ ((1-theta)/theta) (r0/r1) ] / (r0 - r1),
/// ```
///
/// clamped at 0 when the slab dominates everywhere (log argument below 1).
/// Entries above `delta` are slab-like; `p*(delta) = 1/2` whenever the
/// unclamped value is positive.
pub fn intersection_threshold(params: &SpikeSlabParams) -> f64 {
    let arg = ((1.0 - params.mix_weight) / params.mix_weight)
        * (params.rate_spike / params.rate_slab);
    (arg.ln() / (params.rate_spike - params.rate_slab)).max(0.0)
}

/// Log prior density of the coefficient matrix: the sum of the scalar log
/// mixture over all `p * q` entries. A matrix with zero rows contributes 0.
pub fn log_prior_b(b: &DMatrix<f64>, params: &SpikeSlabParams) -> f64 {
    b.iter().map(|&v| params.log_mixture(v)).sum()
}

/// Log prior density of the precision matrix, without the eigenvalue-floor
/// truncation and its (never evaluated) normalization constant:
///
/// ```text
/// sum_{k<k'} log pi(omega_{kk'}) + sum_k (log xi1 - xi1 omega_kk).
/// ```
///
/// `params.rate_slab` plays the role of `xi1` on the diagonal.
pub fn log_prior_omega_untruncated(omega: &DMatrix<f64>, params: &SpikeSlabParams) -> f64 {
    assert_eq!(
        omega.nrows(),
        omega.ncols(),
        "precision matrix must be square"
    );
    let q = omega.nrows();
    let xi1 = params.rate_slab;
    let mut total = 0.0;
    for k in 0..q {
        total += xi1.ln() - xi1 * omega[(k, k)];
        for l in (k + 1)..q {
            total += params.log_mixture(omega[(k, l)]);
        }
    }
    total
}

/// Log prior density of the precision matrix under the eigenvalue-floor
/// restriction, up to its unevaluated normalization constant: `-inf` when
/// `min_eig(omega) <= tau`, otherwise [`log_prior_omega_untruncated`].
pub fn log_prior_omega_truncated(
    omega: &DMatrix<f64>,
    params: &SpikeSlabParams,
    tau: f64,
) -> f64 {
    if omega.nrows() == 0 || min_symmetric_eigenvalue(omega) <= tau {
        return f64::NEG_INFINITY;
    }
    log_prior_omega_untruncated(omega, params)
}

/// What to count in [`effective_dimension`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Every entry of the matrix.
    AllEntries,
    /// Off-diagonal pairs `(k, k')` with `k < k'` of a square matrix.
    OffDiagonalPairs,
}

/// Number of entries with magnitude strictly above `delta`.
///
/// `OffDiagonalPairs` reads the upper triangle of a square (symmetric)
/// matrix, so each pair is counted once.
pub fn effective_dimension(m: &DMatrix<f64>, delta: f64, mode: CountMode) -> usize {
    match mode {
        CountMode::AllEntries => m.iter().filter(|v| v.abs() > delta).count(),
        CountMode::OffDiagonalPairs => {
            assert_eq!(
                m.nrows(),
                m.ncols(),
                "off-diagonal counting requires a square matrix"
            );
            let q = m.nrows();
            let mut count = 0;
            for k in 0..q {
                for l in (k + 1)..q {
                    if m[(k, l)].abs() > delta {
                        count += 1;
                    }
                }
            }
            count
        }
    }
}

/// Free constants of the theory-tuned hyperparameter schedules. The theory
/// fixes only orders of growth; the exponents and proportionality constants
/// here are exposed as knobs with every default equal to 1.
///
/// Schedules produced by [`theory_tuned_hyperparams`]:
///
/// ```text
/// theta = 1 / (1 + theta_scale (pq)^{2 + theta_exponent})
/// lambda0 = lambda0_scale max{n, pq}^{2 + lambda0_exponent}
/// lambda1 = lambda1_scale / n
/// eta = 1 / (1 + eta_scale Q^{2 + eta_exponent}),    Q = q(q-1)/2
/// xi0 = xi0_scale max{Q, n}^{4 + xi0_exponent}
/// xi1 = xi1_scale / max{Q, n}
/// ```
///
/// `lambda0_exponent` must exceed 1/2; all other exponents and every scale
/// must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningKnobs {
    pub theta_exponent: f64,
    pub lambda0_exponent: f64,
    pub eta_exponent: f64,
    pub xi0_exponent: f64,
    pub theta_scale: f64,
    pub lambda0_scale: f64,
    pub lambda1_scale: f64,
    pub eta_scale: f64,
    pub xi0_scale: f64,
    pub xi1_scale: f64,
}

impl Default for TuningKnobs {
    fn default() -> Self {
        Self {
            theta_exponent: 1.0,
            lambda0_exponent: 1.0,
            eta_exponent: 1.0,
            xi0_exponent: 1.0,
            theta_scale: 1.0,
            lambda0_scale: 1.0,
            lambda1_scale: 1.0,
            eta_scale: 1.0,
            xi0_scale: 1.0,
            xi1_scale: 1.0,
        }
    }
}

impl TuningKnobs {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("theta_exponent", self.theta_exponent),
            ("eta_exponent", self.eta_exponent),
            ("xi0_exponent", self.xi0_exponent),
            ("theta_scale", self.theta_scale),
            ("lambda0_scale", self.lambda0_scale),
            ("lambda1_scale", self.lambda1_scale),
            ("eta_scale", self.eta_scale),
            ("xi0_scale", self.xi0_scale),
            ("xi1_scale", self.xi1_scale),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "tuning knob {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.lambda0_exponent.is_finite() && self.lambda0_exponent > 0.5) {
            return Err(Error::InvalidParam(format!(
                "lambda0_exponent must exceed 1/2, got {}",
                self.lambda0_exponent
            )));
        }
        Ok(())
    }
}

/// The full prior specification used by the solver: mixture parameters for
/// `B`, mixture parameters for `Omega` (slab rate doubling as the diagonal
/// exponential rate), the eigenvalue floor `tau`, and the derived
/// intersection thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "HyperConfig", into = "HyperConfig")]
pub struct Hyperparameters {
    beta: SpikeSlabParams,
    omega: SpikeSlabParams,
    tau: f64,
    delta_beta: f64,
    delta_omega: f64,
}

/// Plain serialization schema for [`Hyperparameters`]; the thresholds are
/// derived quantities and re-computed on deserialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub beta: SpikeSlabConfig,
    pub omega: SpikeSlabConfig,
    pub tau: f64,
}

impl TryFrom<HyperConfig> for Hyperparameters {
    type Error = Error;

    fn try_from(c: HyperConfig) -> Result<Self> {
        Hyperparameters::new(c.beta.try_into()?, c.omega.try_into()?, c.tau)
    }
}

impl From<Hyperparameters> for HyperConfig {
    fn from(h: Hyperparameters) -> Self {
        Self {
            beta: h.beta.into(),
            omega: h.omega.into(),
            tau: h.tau,
        }
    }
}

impl Hyperparameters {
    pub fn new(beta: SpikeSlabParams, omega: SpikeSlabParams, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "tau must be finite and nonnegative, got {tau}"
            )));
        }
        Ok(Self {
            beta,
            omega,
            tau,
            delta_beta: intersection_threshold(&beta),
            delta_omega: intersection_threshold(&omega),
        })
    }

    pub fn beta(&self) -> &SpikeSlabParams {
        &self.beta
    }

    pub fn omega(&self) -> &SpikeSlabParams {
        &self.omega
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn delta_beta(&self) -> f64 {
        self.delta_beta
    }

    pub fn delta_omega(&self) -> f64 {
        self.delta_omega
    }

    /// Same slab rates and mixing weights, new spike rates; thresholds are
    /// re-derived. Used by the solver's ladder mode.
    pub fn with_spike_rates(&self, lambda0: f64, xi0: f64) -> Result<Self> {
        let beta = SpikeSlabParams::new(lambda0, self.beta.rate_slab, self.beta.mix_weight)?;
        let omega = SpikeSlabParams::new(xi0, self.omega.rate_slab, self.omega.mix_weight)?;
        Self::new(beta, omega, self.tau)
    }
}

/// Hyperparameters grown with the problem size according to the schedules on
/// [`TuningKnobs`].
///
/// `p = 0` has no coefficient entries: the `B` mixture is then filled with
/// the schedule evaluated at `pq = 1` (a placeholder that is never used by a
/// `p = 0` likelihood). `q = 1` leaves the off-diagonal mixing weight
/// undefined (`Q = 0`) and is an error; degenerate single-response fits must
/// supply explicit hyperparameters.
pub fn theory_tuned_hyperparams(
    n: usize,
    p: usize,
    q: usize,
    knobs: &TuningKnobs,
    tau: f64,
) -> Result<Hyperparameters> {
    knobs.validate()?;
    if n == 0 {
        return Err(Error::InvalidParam("need n >= 1".into()));
    }
    if q < 2 {
        return Err(Error::InvalidParam(
            "the off-diagonal schedule needs q >= 2 (q = 1 leaves the mixing weight undefined); \
             supply hyperparameters explicitly"
                .into(),
        ));
    }
    let nf = n as f64;
    let pq = ((p * q).max(1)) as f64;
    let theta = 1.0 / (1.0 + knobs.theta_scale * pq.powf(2.0 + knobs.theta_exponent));
    let lambda0 = knobs.lambda0_scale * nf.max(pq).powf(2.0 + knobs.lambda0_exponent);
    let lambda1 = knobs.lambda1_scale / nf;
    let beta = SpikeSlabParams::new(lambda0, lambda1, theta)?;

    let big_q = (q * (q - 1) / 2) as f64;
    let eta = 1.0 / (1.0 + knobs.eta_scale * big_q.powf(2.0 + knobs.eta_exponent));
    let mq = big_q.max(nf);
    let xi0 = knobs.xi0_scale * mq.powf(4.0 + knobs.xi0_exponent);
    let xi1 = knobs.xi1_scale / mq;
    let omega = SpikeSlabParams::new(xi0, xi1, eta)?;

    Hyperparameters::new(beta, omega, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(spike: f64, slab: f64, theta: f64) -> SpikeSlabParams {
        SpikeSlabParams::new(spike, slab, theta).unwrap()
    }

    #[test]
    fn schedule_matches_hand_values_medium() {
        let hp = theory_tuned_hyperparams(100, 10, 5, &TuningKnobs::default(), 1e-3).unwrap();
        assert_relative_eq!(hp.beta().mix_weight(), 1.0 / 125001.0, epsilon = 1e-16);
        assert_relative_eq!(hp.beta().mix_weight(), 7.99994e-6, max_relative = 1e-5);
        assert_relative_eq!(hp.beta().rate_spike(), 1.0e6, epsilon = 1e-6);
        assert_relative_eq!(hp.beta().rate_slab(), 0.01, epsilon = 1e-16);
        assert_relative_eq!(hp.omega().mix_weight(), 1.0 / 1001.0, epsilon = 1e-16);
        assert_relative_eq!(hp.omega().rate_spike(), 1.0e10, epsilon = 1e-2);
        assert_relative_eq!(hp.omega().rate_slab(), 0.01, epsilon = 1e-16);
    }

    #[test]
    fn schedule_matches_hand_values_tiny() {
        let hp = theory_tuned_hyperparams(4, 2, 2, &TuningKnobs::default(), 1e-3).unwrap();
        assert_relative_eq!(hp.beta().mix_weight(), 1.0 / 65.0, epsilon = 1e-16);
        assert_relative_eq!(hp.beta().rate_spike(), 64.0, epsilon = 1e-12);
        assert_relative_eq!(hp.beta().rate_slab(), 0.25, epsilon = 1e-16);
        assert_relative_eq!(hp.omega().mix_weight(), 0.5, epsilon = 1e-16);
        assert_relative_eq!(hp.omega().rate_spike(), 1024.0, epsilon = 1e-12);
        assert_relative_eq!(hp.omega().rate_slab(), 0.25, epsilon = 1e-16);
    }

    #[test]
    fn schedule_rejects_single_response() {
        assert!(theory_tuned_hyperparams(100, 10, 1, &TuningKnobs::default(), 1e-3).is_err());
    }

    #[test]
    fn schedule_spike_rates_grow_with_problem_size() {
        let knobs = TuningKnobs::default();
        let mut prev_lambda0 = 0.0;
        let mut prev_theta = 1.0;
        for &(n, p, q) in &[(50usize, 5usize, 2usize), (100, 10, 3), (400, 20, 4), (1600, 40, 6)] {
            let hp = theory_tuned_hyperparams(n, p, q, &knobs, 1e-3).unwrap();
            assert!(hp.beta().rate_spike() > prev_lambda0);
            assert!(hp.beta().mix_weight() < prev_theta);
            prev_lambda0 = hp.beta().rate_spike();
            prev_theta = hp.beta().mix_weight();
        }
    }

    #[test]
    fn log_prior_b_hand_value_and_additivity() {
        let pr = params(2.0, 1.0, 0.5);
        let single = DMatrix::from_row_slice(1, 1, &[0.0]);
        let lp = log_prior_b(&single, &pr);
        assert_relative_eq!(lp, 0.75f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(lp, -0.2876820724517809, epsilon = 1e-12);

        let b = DMatrix::from_row_slice(2, 2, &[0.1, -0.4, 0.0, 2.5]);
        let direct: f64 = b.iter().map(|&v| pr.log_mixture(v)).sum();
        assert_relative_eq!(log_prior_b(&b, &pr), direct, epsilon = 1e-14);

        // Sign symmetry.
        let neg = -&b;
        assert_relative_eq!(log_prior_b(&b, &pr), log_prior_b(&neg, &pr), epsilon = 1e-14);

        // Empty coefficient matrix contributes nothing.
        assert_eq!(log_prior_b(&DMatrix::zeros(0, 3), &pr), 0.0);
    }

    #[test]
    fn log_prior_omega_hand_value() {
        let pr = params(2.0, 1.0, 0.5);
        let omega = DMatrix::identity(2, 2);
        let lp = log_prior_omega_untruncated(&omega, &pr);
        assert_relative_eq!(lp, 0.75f64.ln() - 2.0, epsilon = 1e-12);
        assert_relative_eq!(lp, -2.2876820724517809, epsilon = 1e-12);
    }

    #[test]
    fn log_prior_omega_truncation_sentinel() {
        let pr = params(2.0, 1.0, 0.5);
        let tau = 0.5;
        let fine = DMatrix::identity(2, 2);
        assert!(log_prior_omega_truncated(&fine, &pr, tau).is_finite());
        let low = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.4]));
        assert_eq!(
            log_prior_omega_truncated(&low, &pr, tau),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_prior_omega_invariant_under_relabeling() {
        let pr = params(5.0, 0.5, 0.2);
        let omega = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, -0.1, 0.3, 1.5, 0.7, -0.1, 0.7, 1.8],
        );
        // Permute coordinates 0 -> 2 -> 1 -> 0.
        let perm = [2usize, 0, 1];
        let relabeled = DMatrix::from_fn(3, 3, |i, j| omega[(perm[i], perm[j])]);
        assert_relative_eq!(
            log_prior_omega_untruncated(&omega, &pr),
            log_prior_omega_untruncated(&relabeled, &pr),
            epsilon = 1e-12
        );
    }

    #[test]
    fn intersection_threshold_hand_values() {
        assert_relative_eq!(
            intersection_threshold(&params(2.0, 1.0, 0.5)),
            2.0f64.ln(),
            epsilon = 1e-14
        );
        // Log argument 1 up to rounding in the mixing-odds product.
        assert!(intersection_threshold(&params(2.0, 1.0, 2.0 / 3.0)).abs() <= 1e-15);
        // Theory-tuned tiny case: lambda0=64, lambda1=0.25, theta=1/65.
        let delta = intersection_threshold(&params(64.0, 0.25, 1.0 / 65.0));
        assert_relative_eq!(delta, (64.0f64 * 256.0).ln() / 63.75, epsilon = 1e-12);
        // Slab dominating everywhere clamps to zero.
        assert_eq!(intersection_threshold(&params(2.0, 1.0, 0.99)), 0.0);
    }

    #[test]
    fn inclusion_probability_hand_values() {
        let pr = params(2.0, 1.0, 0.5);
        assert_relative_eq!(inclusion_probability(0.0, &pr), 1.0 / 3.0, epsilon = 1e-14);
        let expected = 1.0 / (1.0 + 2.0 * (-10.0f64).exp());
        assert_relative_eq!(inclusion_probability(10.0, &pr), expected, epsilon = 1e-12);
        assert_relative_eq!(inclusion_probability(10.0, &pr), 0.999909, max_relative = 1e-5);
    }

    #[test]
    fn adaptive_penalty_hand_values() {
        let pr = params(2.0, 1.0, 0.5);
        assert_relative_eq!(adaptive_penalty(0.0, &pr), 5.0 / 3.0, epsilon = 1e-14);
        let delta = intersection_threshold(&pr);
        assert_relative_eq!(adaptive_penalty(delta, &pr), 1.5, epsilon = 1e-12);
        // Far in the tail the penalty collapses to the slab rate; compare to
        // the defining formula evaluated directly from the weights.
        let w1 = 0.5 * 1.0 * (-10.0f64).exp();
        let w0 = 0.5 * 2.0 * (-20.0f64).exp();
        let p_star = w1 / (w1 + w0);
        let expected = p_star * 1.0 + (1.0 - p_star) * 2.0;
        assert_relative_eq!(adaptive_penalty(10.0, &pr), expected, epsilon = 1e-12);
    }

    #[test]
    fn inclusion_probability_is_half_at_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut exercised = 0;
        for _ in 0..1000 {
            let slab = rng.random_range(0.01..2.0);
            let spike = slab * rng.random_range(1.5..2000.0);
            let theta = rng.random_range(0.001..0.999);
            let pr = params(spike, slab, theta);
            let raw = (((1.0 - theta) / theta) * (spike / slab)).ln() / (spike - slab);
            let delta = intersection_threshold(&pr);
            if raw > 0.0 {
                assert_relative_eq!(inclusion_probability(delta, &pr), 0.5, epsilon = 1e-12);
                exercised += 1;
            } else {
                assert_eq!(delta, 0.0);
            }
        }
        assert!(exercised > 800, "sampler barely exercised the main branch");
    }

    #[test]
    fn effective_dimension_counts() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 1.5, 0.05]);
        assert_eq!(effective_dimension(&m, 0.1, CountMode::AllEntries), 2);
        assert_eq!(effective_dimension(&m, 0.0, CountMode::AllEntries), 3);
        let omega = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.4, 0.0, 0.4, 1.0, 0.05, 0.0, 0.05, 1.0],
        );
        assert_eq!(
            effective_dimension(&omega, 0.1, CountMode::OffDiagonalPairs),
            1
        );
        assert_eq!(
            effective_dimension(&omega, 0.0, CountMode::OffDiagonalPairs),
            2
        );
    }

    #[test]
    fn effective_dimension_monotone_in_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0f64));
        let mut prev = usize::MAX;
        for i in 0..20 {
            let delta = i as f64 * 0.05;
            let d = effective_dimension(&m, delta, CountMode::AllEntries);
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn schedule_thresholds_vanish_relative_to_dimension() {
        // The product of the ambient dimension and the intersection
        // threshold must shrink as the schedules sharpen with n (the
        // "vanishing prior mass above the threshold" behavior the schedules
        // are designed for).
        let knobs = TuningKnobs::default();
        let mut prev_b = f64::INFINITY;
        let mut prev_o = f64::INFINITY;
        for &n in &[100usize, 1_000, 10_000, 100_000] {
            let p = n;
            let q = (n as f64).sqrt().ceil() as usize;
            let hp = theory_tuned_hyperparams(n, p, q, &knobs, 1e-3).unwrap();
            let pq = (p * q) as f64;
            let big_q = (q * (q - 1) / 2) as f64;
            let mass_b = pq * hp.delta_beta();
            let mass_o = big_q * hp.delta_omega();
            assert!(mass_b < prev_b, "pq * delta_beta not decreasing at n={n}");
            assert!(mass_o < prev_o, "Q * delta_omega not decreasing at n={n}");
            prev_b = mass_b;
            prev_o = mass_o;
        }
        assert!(prev_b < 1e-10);
        assert!(prev_o < 1e-10);
    }

    #[test]
    fn hyperparameters_serde_round_trip() {
        let hp = theory_tuned_hyperparams(100, 10, 4, &TuningKnobs::default(), 1e-3).unwrap();
        let json = serde_json::to_string(&hp).unwrap();
        let back: Hyperparameters = serde_json::from_str(&json).unwrap();
        assert_eq!(back.beta().rate_spike(), hp.beta().rate_spike());
        assert_eq!(back.delta_beta(), hp.delta_beta());
        assert_eq!(back.tau(), hp.tau());
    }

    #[test]
    fn knob_validation_rejects_shallow_spike_exponent() {
        let knobs = TuningKnobs {
            lambda0_exponent: 0.4,
            ..TuningKnobs::default()
        };
        assert!(theory_tuned_hyperparams(100, 10, 4, &knobs, 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn adaptive_penalty_bounded_and_monotone(
            slab in 0.01f64..5.0,
            ratio in 1.1f64..1e4,
            theta in 0.01f64..0.99,
            x in 0.0f64..50.0,
            step in 0.001f64..10.0,
        ) {
            let pr = params(slab * ratio, slab, theta);
            let here = adaptive_penalty(x, &pr);
            let further = adaptive_penalty(x + step, &pr);
            prop_assert!(here >= pr.rate_slab() - 1e-12);
            prop_assert!(here <= pr.rate_spike() + 1e-12);
            prop_assert!(further <= here + 1e-12);
        }

        #[test]
        fn inclusion_probability_monotone_in_magnitude(
            slab in 0.01f64..5.0,
            ratio in 1.1f64..1e4,
            theta in 0.01f64..0.99,
            x in 0.0f64..50.0,
            step in 0.001f64..10.0,
        ) {
            let pr = params(slab * ratio, slab, theta);
            prop_assert!(
                inclusion_probability(x + step, &pr) >= inclusion_probability(x, &pr) - 1e-12
            );
        }
    }
}
