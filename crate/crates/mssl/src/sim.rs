//! Synthetic-problem generation and the seeded, replicated contraction
//! experiments.
//!
//! All randomness flows from named 64-bit seeds through ChaCha8 streams;
//! cell seeds are `master XOR splitmix64-hash(n, replicate)`, so results do
//! not depend on execution order and replicate cells can run in parallel.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{contraction_record, restricted_eigenvalue, RestrictedEigenvalue};
use crate::model::{Dataset, GroundTruth};
use crate::prior::{theory_tuned_hyperparams, TuningKnobs};
use crate::report::{assemble, CellOutcome, ExperimentReport};
use crate::solver::{fit, geometric_ladder, SolverConfig};

/// Parameters of one synthetic problem family.
///
/// `b1, b2` bound the covariance spectrum (so `Omega0` eigenvalues lie in
/// `[1/b2, 1/b1]`), `a1` caps and `signal_floor` floors the nonzero `|B0|`
/// magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s0_b: usize,
    pub s0_omega: usize,
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    pub signal_floor: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 10,
            q: 3,
            s0_b: 5,
            s0_omega: 2,
            a1: 2.0,
            b1: 0.5,
            b2: 2.0,
            signal_floor: 0.5,
            seed: 11,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.q == 0 {
            return Err(Error::InvalidParam(format!(
                "need n >= 1 and q >= 1, got n={}, q={}",
                self.n, self.q
            )));
        }
        if self.s0_b > self.p * self.q {
            return Err(Error::InfeasibleSparsity(format!(
                "s0_b = {} exceeds the {} entries of a {}x{} coefficient matrix",
                self.s0_b,
                self.p * self.q,
                self.p,
                self.q
            )));
        }
        let max_pairs = self.q * (self.q - 1) / 2;
        if self.s0_omega > max_pairs {
            return Err(Error::InfeasibleSparsity(format!(
                "s0_omega = {} exceeds the {} off-diagonal pairs of a {}x{} precision matrix",
                self.s0_omega, max_pairs, self.q, self.q
            )));
        }
        if !(0.0 < self.b1 && self.b1 < self.b2 && self.b2.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "need 0 < b1 < b2, got b1={}, b2={}",
                self.b1, self.b2
            )));
        }
        if !(0.0 < self.signal_floor && self.signal_floor <= self.a1 && self.a1.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "need 0 < signal_floor <= a1, got signal_floor={}, a1={}",
                self.signal_floor, self.a1
            )));
        }
        Ok(())
    }
}

/// How per-cell spike-rate ladders are built before fitting.
///
/// `Geometric` derives each cell's ladder from its theory-tuned endpoint
/// (the default; cold single-shot solves at theory-scale spike rates leave
/// the off-diagonal support empty). `Explicit` uses the same fixed rungs for
/// every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadderPolicy {
    None,
    Geometric { factor: f64 },
    Explicit { rungs: Vec<(f64, f64)> },
}

impl Default for LadderPolicy {
    fn default() -> Self {
        LadderPolicy::Geometric { factor: 10.0 }
    }
}

/// Which estimators the experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonMode {
    MsslOnly,
    VsSeparateSsl,
    GraphicalOnly,
}

impl Default for ComparisonMode {
    fn default() -> Self {
        ComparisonMode::MsslOnly
    }
}

fn default_tau() -> f64 {
    1e-3
}

fn default_n_grid() -> Vec<usize> {
    vec![200, 400]
}

fn default_replicates() -> usize {
    3
}

/// A full experiment: the problem family, the sample-size grid, replicate
/// count, tuning, and solver settings. An empty JSON object deserializes to
/// the bundled default plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub base: GenConfig,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub knobs: TuningKnobs,
    pub solver: SolverConfig,
    pub ladder: LadderPolicy,
    pub comparison_mode: ComparisonMode,
    pub tau: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            base: GenConfig::default(),
            n_grid: default_n_grid(),
            replicates: default_replicates(),
            knobs: TuningKnobs::default(),
            solver: SolverConfig::default(),
            ladder: LadderPolicy::default(),
            comparison_mode: ComparisonMode::default(),
            tau: default_tau(),
        }
    }
}

/// The bundled default plan: a small seeded grid that exercises the whole
/// pipeline in seconds.
pub fn default_plan() -> ExperimentPlan {
    ExperimentPlan::default()
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.knobs.validate()?;
        self.solver.validate()?;
        if self.solver.ladder.is_some() {
            return Err(Error::InvalidParam(
                "set the plan-level ladder policy instead of solver.ladder; per-cell rungs \
                 depend on each n's tuned rates"
                    .into(),
            ));
        }
        if self.n_grid.is_empty() {
            return Err(Error::InvalidParam("n_grid must not be empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParam(format!(
                "n_grid must be strictly increasing, got {:?}",
                self.n_grid
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParam("replicates must be >= 1".into()));
        }
        if self.base.q < 2 {
            return Err(Error::InvalidParam(
                "experiments need q >= 2 (the tuned off-diagonal schedule is undefined below \
                 that)"
                    .into(),
            ));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "tau must be nonnegative and finite, got {}",
                self.tau
            )));
        }
        if let LadderPolicy::Geometric { factor } = self.ladder {
            if !(factor.is_finite() && factor > 1.0) {
                return Err(Error::InvalidParam(format!(
                    "geometric ladder factor must exceed 1, got {factor}"
                )));
            }
        }
        match self.comparison_mode {
            ComparisonMode::GraphicalOnly if self.base.p != 0 => Err(Error::InvalidParam(
                "graphical-only mode requires p = 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// SplitMix64 mixing step, the documented hash behind all derived seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the (n, replicate) cell: `master XOR splitmix64(n, replicate)`.
pub fn cell_seed(master: u64, n: usize, replicate: usize) -> u64 {
    master ^ splitmix64(splitmix64(n as u64).wrapping_add(replicate as u64))
}

fn stream_seed(cell: u64, stream: u64) -> u64 {
    splitmix64(cell.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Standard normal design with every column rescaled to Euclidean norm
/// exactly `sqrt(n)`; an all-zero column (probability zero) is resampled.
pub fn generate_design(n: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParam("generate_design requires n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, p);
    let target = (n as f64).sqrt();
    for j in 0..p {
        loop {
            for i in 0..n {
                x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
            let norm = x.column(j).norm();
            if norm > 0.0 {
                let scale = target / norm;
                for i in 0..n {
                    x[(i, j)] *= scale;
                }
                break;
            }
        }
    }
    Ok(x)
}

/// Sparse truth satisfying the generator bounds: `B0` has exactly `s0_b`
/// nonzeros with magnitudes uniform on `[signal_floor, a1]` and random
/// signs; `Omega0 = alpha I + gamma M` where `M` is a sparse symmetric
/// `{-1, 0, +1}` matrix on `s0_omega` uniformly chosen off-diagonal pairs
/// and the affine map places the spectrum exactly inside `[1/b2, 1/b1]`.
pub fn generate_truth(config: &GenConfig) -> Result<GroundTruth> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (p, q) = (config.p, config.q);

    let mut b0 = DMatrix::zeros(p, q);
    let mut support_b = sample_without_replacement(p * q, config.s0_b, &mut rng)
        .into_iter()
        .map(|idx| (idx / q, idx % q))
        .collect::<Vec<_>>();
    support_b.sort_unstable();
    for &(j, k) in &support_b {
        let magnitude = rng.random_range(config.signal_floor..=config.a1);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        b0[(j, k)] = sign * magnitude;
    }

    let lo = 1.0 / config.b2;
    let hi = 1.0 / config.b1;
    let all_pairs: Vec<(usize, usize)> = (0..q)
        .flat_map(|k| ((k + 1)..q).map(move |l| (k, l)))
        .collect();
    let mut support_omega: Vec<(usize, usize)> =
        sample_without_replacement(all_pairs.len(), config.s0_omega, &mut rng)
            .into_iter()
            .map(|i| all_pairs[i])
            .collect();
    support_omega.sort_unstable();

    let omega0 = if support_omega.is_empty() {
        DMatrix::<f64>::identity(q, q) * (0.5 * (lo + hi))
    } else {
        let mut m = DMatrix::zeros(q, q);
        for &(k, l) in &support_omega {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            m[(k, l)] = sign;
            m[(l, k)] = sign;
        }
        let eigs = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues;
        let (mut e_min, mut e_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &e in eigs.iter() {
            e_min = e_min.min(e);
            e_max = e_max.max(e);
        }
        let spread = e_max - e_min;
        let gamma = (hi - lo) / spread;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::SpectrumFit(format!(
                "cannot place {} off-diagonal pairs inside eigenvalue band [{lo:.4}, {hi:.4}]; \
                 widen the b1/b2 gap",
                support_omega.len()
            )));
        }
        let alpha = lo - gamma * e_min;
        let mut omega0 = m * gamma;
        for k in 0..q {
            omega0[(k, k)] += alpha;
        }
        omega0
    };

    GroundTruth::new(
        b0,
        omega0,
        support_b,
        support_omega,
        config.a1,
        config.b1,
        config.b2,
        config.signal_floor,
    )
}

fn sample_without_replacement(total: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = rng.random_range(i..total);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

/// Gaussian responses: row `i` has mean `B0' x_i` and covariance
/// `Omega0^{-1}`, generated through the symmetric inverse square root of
/// `Omega0`.
pub fn sample_responses(x: &DMatrix<f64>, truth: &GroundTruth, seed: u64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let q = truth.q();
    if x.ncols() != truth.p() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but B0 has {} rows",
            x.ncols(),
            truth.p()
        )));
    }
    let eig = nalgebra::SymmetricEigen::new(truth.omega0.clone());
    let mut inv_sqrt = DMatrix::zeros(q, q);
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        if e <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "Omega0 eigenvalue {e:.6e} in sample_responses"
            )));
        }
        let u = eig.eigenvectors.column(i);
        inv_sqrt += u * u.transpose() / e.sqrt();
    }
    let inv_sqrt = (&inv_sqrt + inv_sqrt.transpose()) * 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DMatrix::zeros(n, q);
    for i in 0..n {
        for k in 0..q {
            z[(i, k)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x * &truth.b0 + z * inv_sqrt)
}

/// One seeded instance (design, truth, responses) drawn from `config`,
/// with the three generator streams derived from `config.seed`.
pub fn generate_instance(config: &GenConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let x = generate_design(config.n, config.p, stream_seed(config.seed, 0))?;
    let mut truth_config = config.clone();
    truth_config.seed = stream_seed(config.seed, 1);
    let truth = generate_truth(&truth_config)?;
    let y = sample_responses(&x, &truth, stream_seed(config.seed, 2))?;
    #[cfg(debug_assertions)]
    {
        debug_assert!(truth.b0.iter().all(|&v| {
            v == 0.0 || (config.signal_floor..=config.a1).contains(&v.abs())
        }));
        if config.q > 0 {
            let eigs = truth.omega0.clone().symmetric_eigenvalues();
            debug_assert!(eigs
                .iter()
                .all(|&e| e >= 1.0 / config.b2 - 1e-8 && e <= 1.0 / config.b1 + 1e-8));
        }
    }
    Ok((Dataset::new(x, y)?, truth))
}

fn run_cell(plan: &ExperimentPlan, n: usize, replicate: usize, diagonal: bool) -> Result<crate::metrics::ContractionRecord> {
    let cell = cell_seed(plan.base.seed, n, replicate);
    let mut config = plan.base.clone();
    config.n = n;
    config.seed = cell;
    let (data, truth) = generate_instance(&config)?;

    let hp = theory_tuned_hyperparams(n, config.p, config.q, &plan.knobs, plan.tau)?;
    let mut solver = plan.solver.clone();
    solver.ladder = match &plan.ladder {
        LadderPolicy::None => None,
        LadderPolicy::Geometric { factor } => Some(geometric_ladder(&hp, *factor)?),
        LadderPolicy::Explicit { rungs } => Some(rungs.clone()),
    };
    solver.diagonal_omega = diagonal || solver.diagonal_omega;
    let fit_result = fit(&data, &hp, &solver)?;
    log::debug!(
        "cell n={n} replicate={replicate} diagonal={diagonal}: {} outer iterations, converged={}",
        fit_result.n_outer_iters,
        fit_result.converged
    );

    let phi = if config.p == 0 {
        RestrictedEigenvalue {
            value: 1.0,
            exact: true,
        }
    } else {
        let s_star = config.q.max(config.s0_omega).max(config.s0_b);
        let s = (config.s0_b + s_star).clamp(1, config.p);
        restricted_eigenvalue(data.x(), s)?
    };
    contraction_record(&data, &truth, &fit_result, &hp, phi)
}

fn run_methods(plan: &ExperimentPlan, methods: &[(&str, bool)]) -> Result<ExperimentReport> {
    plan.validate()?;
    let mut cells: Vec<(String, usize, usize, bool)> = Vec::new();
    for &(label, diagonal) in methods {
        for &n in &plan.n_grid {
            for replicate in 0..plan.replicates {
                cells.push((label.to_string(), n, replicate, diagonal));
            }
        }
    }
    let outcomes: Vec<CellOutcome> = cells
        .into_par_iter()
        .map(|(label, n, replicate, diagonal)| {
            let outcome = run_cell(plan, n, replicate, diagonal).map_err(|e| e.to_string());
            (label, n, replicate, outcome)
        })
        .collect();
    let report = assemble(plan.clone(), outcomes);
    log::info!(
        "experiment finished: {} cells, {} failures",
        report.cells.len(),
        report.failures.len()
    );
    Ok(report)
}

/// Runs the full grid of (n, replicate) cells for the plan's single
/// estimator and assembles the report. Cell failures are recorded in the
/// report, not raised.
pub fn run_contraction_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    run_contraction_with_label(plan, "mssl")
}

fn run_contraction_with_label(plan: &ExperimentPlan, label: &str) -> Result<ExperimentReport> {
    run_methods(plan, &[(label, false)])
}

/// Fits every cell twice, once with the full estimator and once with
/// `Omega` constrained diagonal (independent per-response fits), and
/// reports both method rows.
pub fn run_comparison_separate_ssl(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    run_methods(plan, &[("mssl", false), ("separate-ssl", true)])
}

/// Dispatches on the plan's comparison mode.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    match plan.comparison_mode {
        ComparisonMode::MsslOnly => run_contraction_experiment(plan),
        ComparisonMode::GraphicalOnly => run_contraction_with_label(plan, "graphical"),
        ComparisonMode::VsSeparateSsl => run_comparison_separate_ssl(plan),
    }
}
