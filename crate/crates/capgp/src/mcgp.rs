//! The joint model over all cells: prior assembly, deviance and its gradient,
//! maximum-likelihood fitting, the predictive posterior, and persistence.
//!
//! All cells' observations are stacked (cell-major, cycles ascending within a
//! cell) into one vector `Y` with gram matrix `K` built from the closed-form
//! cross-covariance. Fitting minimizes the deviance
//!
//! ```text
//! D = Y' K^-1 Y + log det K + T log(2 pi)
//! ```
//!
//! so that `-D/2` is exactly the joint log-likelihood. The gradient used is
//! the standard marginal-likelihood form
//! `dD/dp = trace(K^-1 dK/dp) - (K^-1 Y)' dK/dp (K^-1 Y)`,
//! which the test suite pins against central finite differences.
//!
//! Prediction targets the noise-free capacity process: cross-covariance rows
//! between query points and training data never carry the noise term, and
//! neither does the query-query prior block. Use
//! [`mcgp_predict_with_observation_noise`] for observation-level intervals.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{
    mcgp_cross_cov_grad_into, CrossCovTable, KernelError, McgpHyperParams,
};
use crate::numerics::{cholesky, CholFactor, NumericsError, SymMatrix};
use crate::optimizer::{multi_start, InitRanges, OptimizerConfig, OptimizerError};

/// Format tag written into persisted model documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum McgpError {
    Kernel(KernelError),
    Numerics(NumericsError),
    Optimizer(OptimizerError),
    DimensionMismatch { expected: usize, got: usize },
    UnknownCell { cell: String },
    InvalidTrainingSet(String),
    Persistence(String),
    Io(std::io::Error),
}

impl fmt::Display for McgpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Kernel(e) => write!(f, "kernel error: {e}"),
            Self::Numerics(e) => write!(f, "numerics error: {e}"),
            Self::Optimizer(e) => write!(f, "optimizer error: {e}"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::UnknownCell { cell } => write!(f, "cell {cell:?} is not in the training set"),
            Self::InvalidTrainingSet(msg) => write!(f, "invalid training set: {msg}"),
            Self::Persistence(msg) => write!(f, "model file error: {msg}"),
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for McgpError {}

impl From<KernelError> for McgpError {
    fn from(e: KernelError) -> Self {
        Self::Kernel(e)
    }
}

impl From<NumericsError> for McgpError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

impl From<OptimizerError> for McgpError {
    fn from(e: OptimizerError) -> Self {
        Self::Optimizer(e)
    }
}

impl From<std::io::Error> for McgpError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// One cell's training observations.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObservations {
    pub id: String,
    pub cycles: Vec<f64>,
    pub capacities: Vec<f64>,
}

/// Ordered training observations for all cells. Observations are stacked
/// cell-major; within a cell, cycles are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    cells: Vec<CellObservations>,
    /// Flattened (cell index, cycle) per global observation index.
    points: Vec<(usize, f64)>,
}

impl TrainingSet {
    pub fn new(cells: Vec<CellObservations>) -> Result<Self, McgpError> {
        if cells.is_empty() {
            return Err(McgpError::InvalidTrainingSet("no cells".into()));
        }
        let mut seen = BTreeSet::new();
        for cell in &cells {
            if !seen.insert(cell.id.clone()) {
                return Err(McgpError::InvalidTrainingSet(format!(
                    "duplicate cell id {:?}",
                    cell.id
                )));
            }
            if cell.cycles.len() != cell.capacities.len() {
                return Err(McgpError::InvalidTrainingSet(format!(
                    "cell {:?}: {} cycles vs {} capacities",
                    cell.id,
                    cell.cycles.len(),
                    cell.capacities.len()
                )));
            }
            if cell.cycles.is_empty() {
                return Err(McgpError::InvalidTrainingSet(format!(
                    "cell {:?} has no observations",
                    cell.id
                )));
            }
            if cell.cycles.windows(2).any(|w| w[0] >= w[1]) {
                return Err(McgpError::InvalidTrainingSet(format!(
                    "cell {:?}: cycles must be strictly increasing",
                    cell.id
                )));
            }
            if cell
                .cycles
                .iter()
                .chain(cell.capacities.iter())
                .any(|v| !v.is_finite())
            {
                return Err(McgpError::InvalidTrainingSet(format!(
                    "cell {:?}: non-finite values",
                    cell.id
                )));
            }
        }
        let points = cells
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.cycles.iter().map(move |&t| (i, t)))
            .collect();
        Ok(Self { cells, points })
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Total observation count T.
    pub fn total_count(&self) -> usize {
        self.points.len()
    }

    pub fn cells(&self) -> &[CellObservations] {
        &self.cells
    }

    pub fn cell_index(&self, id: &str) -> Option<usize> {
        self.cells.iter().position(|c| c.id == id)
    }

    /// Stacked capacity vector Y in observation order.
    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.total_count(),
            self.cells.iter().flat_map(|c| c.capacities.iter().copied()),
        )
    }

    fn y_stddev(&self) -> f64 {
        let y = self.y_vector();
        let mean = y.mean();
        let n = y.len().max(2) as f64;
        (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    fn y_rms(&self) -> f64 {
        let y = self.y_vector();
        (y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64).sqrt()
    }

    fn cell_mean(&self, i: usize) -> f64 {
        let caps = &self.cells[i].capacities;
        caps.iter().sum::<f64>() / caps.len() as f64
    }

    fn cell_stddev(&self, i: usize) -> f64 {
        let caps = &self.cells[i].capacities;
        let mean = self.cell_mean(i);
        let n = caps.len().max(2) as f64;
        (caps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    /// Pooled noise-scale estimate from first differences (differencing
    /// removes the smooth trend; var(diff) is about twice the noise variance
    /// plus leftover signal, so this leans high, which is a safe start).
    fn noise_scale_estimate(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for cell in &self.cells {
            for pair in cell.capacities.windows(2) {
                let d = pair[1] - pair[0];
                total += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return 1e-3;
        }
        (total / (2.0 * count as f64)).sqrt().max(1e-6)
    }

    fn cycle_span(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, t) in &self.points {
            lo = lo.min(*t);
            hi = hi.max(*t);
        }
        (hi - lo).max(1.0)
    }
}

/// Assembles the T x T joint prior covariance over all training observations,
/// ordered cell-major then by cycle. The noise term lands exactly on the
/// diagonal (an observation is only "the same" as itself).
pub fn assemble_gram(
    hyper: &McgpHyperParams,
    train: &TrainingSet,
) -> Result<SymMatrix, McgpError> {
    if hyper.cell_count() != train.cell_count() {
        return Err(McgpError::DimensionMismatch {
            expected: train.cell_count(),
            got: hyper.cell_count(),
        });
    }
    let table = CrossCovTable::new(hyper);
    let pts = &train.points;
    Ok(SymMatrix::from_fn(train.total_count(), |a, b| {
        let (i, t) = pts[a];
        let (j, t2) = pts[b];
        table.eval(i, t, j, t2, a == b)
    }))
}

fn deviance_parts(
    hyper: &McgpHyperParams,
    train: &TrainingSet,
) -> Result<(CholFactor, DVector<f64>, f64), McgpError> {
    let gram = assemble_gram(hyper, train)?;
    let factor = cholesky(&gram)?;
    let y = train.y_vector();
    let alpha = factor.solve(&y)?;
    let t = train.total_count() as f64;
    let deviance = y.dot(&alpha) + factor.logdet() + t * (2.0 * std::f64::consts::PI).ln();
    Ok((factor, alpha, deviance))
}

/// Deviance of the training data under the hyperparameters:
/// `Y' K^-1 Y + log det K + T log(2 pi)`, so `-deviance/2` is the exact joint
/// log-likelihood.
pub fn deviance(hyper: &McgpHyperParams, train: &TrainingSet) -> Result<f64, McgpError> {
    deviance_parts(hyper, train).map(|(_, _, d)| d)
}

/// Gradient of [`deviance`] with respect to the hyperparameter vector in the
/// [`McgpHyperParams::to_vector`] layout.
pub fn deviance_grad(
    hyper: &McgpHyperParams,
    train: &TrainingSet,
) -> Result<Vec<f64>, McgpError> {
    let (factor, alpha, _) = deviance_parts(hyper, train)?;
    Ok(deviance_grad_from_parts(hyper, train, &factor, &alpha))
}

fn deviance_grad_from_parts(
    hyper: &McgpHyperParams,
    train: &TrainingSet,
    factor: &CholFactor,
    alpha: &DVector<f64>,
) -> Vec<f64> {
    // dD/dp = sum_ab (K^-1 - alpha alpha')_ab * dK_ab/dp, using symmetry of
    // both factors to visit each off-diagonal pair once.
    let k_inv = factor.inverse();
    let n_params = McgpHyperParams::param_count(hyper.cell_count(), hyper.latent_count());
    let mut grad = vec![0.0; n_params];
    let mut entry_grad = vec![0.0; n_params];
    let pts = &train.points;
    for a in 0..pts.len() {
        let (i, t) = pts[a];
        for b in a..pts.len() {
            let (j, t2) = pts[b];
            let w = k_inv[(a, b)] - alpha[a] * alpha[b];
            let weight = if a == b { w } else { 2.0 * w };
            mcgp_cross_cov_grad_into(hyper, i, t, j, t2, a == b, &mut entry_grad);
            for (g, e) in grad.iter_mut().zip(&entry_grad) {
                *g += weight * e;
            }
        }
    }
    grad
}

/// Convergence bookkeeping for a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_deviance: f64,
    pub final_loglik: f64,
    /// Accepted iterations of the winning restart.
    pub iterations: usize,
    /// Restarts that finished with a finite objective.
    pub restarts_used: usize,
    /// Jitter added to the training gram matrix at the optimum.
    pub jitter_used: f64,
}

/// A fitted joint model: hyperparameters, training data, and the cached
/// factorization used for prediction. Immutable once built.
#[derive(Debug)]
pub struct McgpModel {
    hyper: McgpHyperParams,
    train: TrainingSet,
    factor: CholFactor,
    alpha: DVector<f64>,
    fit_report: FitReport,
}

/// Posterior over the (noise-free) capacity of one cell at the query cycles.
#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    /// Target cell id; empty for single-cell baseline models without one.
    pub cell: String,
    pub cycles: Vec<f64>,
    /// Posterior mean (Ah).
    pub mean: Vec<f64>,
    /// Full posterior covariance (Ah^2), diagonal clamped at zero.
    pub covariance: SymMatrix,
    /// sqrt of the covariance diagonal.
    pub stddev: Vec<f64>,
    /// Number of diagonal entries clamped up to zero.
    pub clamped: usize,
}

impl PredictiveDistribution {
    pub fn with_cell(mut self, id: &str) -> Self {
        self.cell = id.to_string();
        self
    }

    /// Builds the posterior from a mean vector and a raw covariance matrix,
    /// clamping slightly negative diagonal entries (floating-point artifacts
    /// of the Schur complement) at zero.
    pub(crate) fn from_mean_cov(
        cell: String,
        cycles: Vec<f64>,
        mean: Vec<f64>,
        raw_cov: DMatrix<f64>,
    ) -> Self {
        let n = mean.len();
        let mut clamped = 0;
        let covariance = SymMatrix::from_fn(n, |a, b| {
            if a == b {
                let v = raw_cov[(a, a)];
                if v < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    v
                }
            } else {
                // Exact symmetry regardless of assembly order.
                0.5 * (raw_cov[(a, b)] + raw_cov[(b, a)])
            }
        });
        let stddev = (0..n).map(|a| covariance.get(a, a).sqrt()).collect();
        Self {
            cell,
            cycles,
            mean,
            covariance,
            stddev,
            clamped,
        }
    }
}

impl McgpModel {
    /// Builds a model directly from known hyperparameters (no fitting):
    /// assembles and factorizes the joint prior and caches `K^-1 Y`.
    pub fn from_hyper(
        hyper: McgpHyperParams,
        train: TrainingSet,
    ) -> Result<Self, McgpError> {
        let (factor, alpha, dev) = deviance_parts(&hyper, &train)?;
        let fit_report = FitReport {
            final_deviance: dev,
            final_loglik: -dev / 2.0,
            iterations: 0,
            restarts_used: 0,
            jitter_used: factor.jitter_used(),
        };
        Ok(Self {
            hyper,
            train,
            factor,
            alpha,
            fit_report,
        })
    }

    pub fn hyper(&self) -> &McgpHyperParams {
        &self.hyper
    }

    pub fn train(&self) -> &TrainingSet {
        &self.train
    }

    pub fn fit_report(&self) -> &FitReport {
        &self.fit_report
    }

    pub fn latent_count(&self) -> usize {
        self.hyper.latent_count()
    }
}

/// Default multi-start initialization for the hyperparameter vector: widths
/// bracket the cycle span, then amplitude magnitudes are matched to the
/// target prior variance given those widths (the zero-mean prior has to
/// budget for the full scale of the raw capacities).
fn sample_initial_vector(
    ranges: &InitRanges,
    m: usize,
    r_latent: usize,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mr = m * r_latent;
    let log_smoother: Vec<f64> = (0..mr)
        .map(|_| rng.random_range(ranges.log_smoother_width.0..ranges.log_smoother_width.1))
        .collect();
    let log_latent: Vec<f64> = (0..r_latent)
        .map(|_| rng.random_range(ranges.log_latent_width.0..ranges.log_latent_width.1))
        .collect();
    let mut amplitudes = Vec::with_capacity(mr);
    for i in 0..m {
        for r in 0..r_latent {
            let w = log_smoother[i * r_latent + r].exp();
            let q = log_latent[r].exp();
            let v = 2.0 * w * w + q * q;
            // S^2 / sqrt(2 pi v) per latent should reach about
            // signal_variance / R at zero lag.
            let scale = (ranges.signal_variance / r_latent as f64
                * (std::f64::consts::TAU * v).sqrt())
            .sqrt();
            amplitudes.push(rng.random_range(-2.0 * scale..2.0 * scale));
        }
    }
    let mut v = amplitudes;
    v.extend(log_smoother);
    v.extend(log_latent);
    v.push(rng.random_range(ranges.log_noise.0..ranges.log_noise.1));
    DVector::from_vec(v)
}

/// Deterministic data-derived starting points. One latent starts diffuse
/// (far beyond the span) with amplitudes matching each cell's mean level;
/// the others start at sub-span scales with amplitudes matching each cell's
/// observed spread, which is its fade depth. Variants vary the sub-span
/// width. With the prior being zero-mean over raw capacities, these land in
/// the level-plus-shared-trend region that maximum likelihood favors but
/// random starts rarely reach directly.
fn structured_start(train: &TrainingSet, r_latent: usize, variant: usize) -> DVector<f64> {
    let m = train.cell_count();
    let span = train.cycle_span();
    let medium_width = match variant {
        0 => span / 8.0,
        1 => span / 30.0,
        _ => span / 3.0,
    };
    let smoother_width = span / 20.0;
    let diffuse = r_latent - 1; // by gauge freedom the position is arbitrary

    let mut latent_widths = vec![medium_width; r_latent];
    if r_latent > 1 {
        latent_widths[diffuse] = 4.0 * span;
    }
    let mut amplitudes = vec![0.0; m * r_latent];
    for i in 0..m {
        for r in 0..r_latent {
            let q = latent_widths[r];
            let v = 2.0 * smoother_width * smoother_width + q * q;
            let quarter_root = (std::f64::consts::TAU * v).powf(0.25);
            // S_i S_j / sqrt(2 pi v) should reproduce mean_i * mean_j for the
            // diffuse latent (level structure) and spread_i * spread_j for
            // the trend latents.
            let target = if r_latent > 1 && r == diffuse {
                train.cell_mean(i).abs().max(1e-6)
            } else {
                let share = (r_latent - usize::from(r_latent > 1)) as f64;
                train.cell_stddev(i).max(1e-6) / share.max(1.0).sqrt()
            };
            // S_i = target_i * (2 pi v)^(1/4) gives S_i S_j / sqrt(2 pi v)
            // = target_i * target_j.
            amplitudes[i * r_latent + r] = target * quarter_root;
        }
    }

    let mut v = amplitudes;
    v.extend((0..m * r_latent).map(|_| smoother_width.ln()));
    v.extend(latent_widths.iter().map(|w| w.ln()));
    v.push(train.noise_scale_estimate().ln());
    DVector::from_vec(v)
}

/// Fits the joint model by multi-start deviance minimization.
pub fn mcgp_fit(
    train: &TrainingSet,
    r_latent: usize,
    restarts: usize,
    seed: u64,
) -> Result<McgpModel, McgpError> {
    mcgp_fit_with(
        train,
        r_latent,
        &OptimizerConfig::with_restarts_and_seed(restarts, seed),
    )
}

/// [`mcgp_fit`] with full optimizer control.
pub fn mcgp_fit_with(
    train: &TrainingSet,
    r_latent: usize,
    cfg: &OptimizerConfig,
) -> Result<McgpModel, McgpError> {
    assert!(r_latent >= 1, "at least one latent function is required");
    let m = train.cell_count();
    let ranges = cfg.init_ranges.clone().unwrap_or_else(|| {
        InitRanges::from_data(train.y_rms(), train.y_stddev(), train.cycle_span())
    });

    // The line search evaluates the objective at a point and, on acceptance,
    // immediately asks for the gradient there; cache the factorization.
    type Cached = (DVector<f64>, CholFactor, DVector<f64>);
    let cache: RefCell<Option<Cached>> = RefCell::new(None);

    let objective = |x: &DVector<f64>| -> f64 {
        let Ok(hyper) = McgpHyperParams::from_vector(m, r_latent, x.as_slice()) else {
            return f64::INFINITY;
        };
        match deviance_parts(&hyper, train) {
            Ok((factor, alpha, dev)) => {
                *cache.borrow_mut() = Some((x.clone(), factor, alpha));
                dev
            }
            Err(_) => f64::INFINITY,
        }
    };
    let gradient = |x: &DVector<f64>| -> DVector<f64> {
        let Ok(hyper) = McgpHyperParams::from_vector(m, r_latent, x.as_slice()) else {
            return DVector::from_element(x.len(), f64::NAN);
        };
        if let Some((cached_x, factor, alpha)) = cache.borrow().as_ref() {
            if cached_x == x {
                return DVector::from_vec(deviance_grad_from_parts(
                    &hyper, train, factor, alpha,
                ));
            }
        }
        match deviance_parts(&hyper, train) {
            Ok((factor, alpha, _)) => {
                DVector::from_vec(deviance_grad_from_parts(&hyper, train, &factor, &alpha))
            }
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    };
    // The first three restarts are deterministic data-derived structured
    // starts; the rest sample the init ranges.
    let sampler = |restart: usize, rng: &mut ChaCha8Rng| {
        if restart < 3 {
            structured_start(train, r_latent, restart)
        } else {
            sample_initial_vector(&ranges, m, r_latent, rng)
        }
    };

    let outcome = multi_start(objective, gradient, sampler, cfg)?;
    let hyper = McgpHyperParams::from_vector(m, r_latent, outcome.x.as_slice())?;
    let (factor, alpha, dev) = deviance_parts(&hyper, train)?;
    let fit_report = FitReport {
        final_deviance: dev,
        final_loglik: -dev / 2.0,
        iterations: outcome.trace.iterations(),
        restarts_used: outcome.converged_restarts,
        jitter_used: factor.jitter_used(),
    };
    Ok(McgpModel {
        hyper,
        train: train.clone(),
        factor,
        alpha,
        fit_report,
    })
}

fn predict_raw(
    model: &McgpModel,
    cell: &str,
    query_cycles: &[f64],
    observation_noise: bool,
) -> Result<PredictiveDistribution, McgpError> {
    let Some(j) = model.train.cell_index(cell) else {
        return Err(McgpError::UnknownCell { cell: cell.into() });
    };
    let table = CrossCovTable::new(&model.hyper);
    let t_total = model.train.total_count();
    let nq = query_cycles.len();
    let pts = &model.train.points;

    // Cross-covariance between query points (noise-free: a forecast is never
    // "the same observation" as a training measurement).
    let k_star = DMatrix::<f64>::from_fn(nq, t_total, |q, b| {
        let (i, t_train) = pts[b];
        table.eval(j, query_cycles[q], i, t_train, false)
    });
    let mean_vec = &k_star * &model.alpha;

    let mut k_qq = DMatrix::<f64>::from_fn(nq, nq, |a, b| {
        table.eval(j, query_cycles[a], j, query_cycles[b], false)
    });
    if observation_noise {
        let eps = model.hyper.noise();
        for a in 0..nq {
            k_qq[(a, a)] += eps * eps;
        }
    }
    let v = model.factor.solve_matrix(&k_star.transpose())?;
    let raw_cov = k_qq - &k_star * v;

    Ok(PredictiveDistribution::from_mean_cov(
        cell.to_string(),
        query_cycles.to_vec(),
        mean_vec.iter().copied().collect(),
        raw_cov,
    ))
}

/// Predictive posterior of the noise-free capacity of `cell` at the query
/// cycles, conditioned on every cell's training data.
pub fn mcgp_predict(
    model: &McgpModel,
    cell: &str,
    query_cycles: &[f64],
) -> Result<PredictiveDistribution, McgpError> {
    predict_raw(model, cell, query_cycles, false)
}

/// Like [`mcgp_predict`] but adds the noise variance on the query diagonal,
/// widening the intervals to cover individual observations.
pub fn mcgp_predict_with_observation_noise(
    model: &McgpModel,
    cell: &str,
    query_cycles: &[f64],
) -> Result<PredictiveDistribution, McgpError> {
    predict_raw(model, cell, query_cycles, true)
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Serialize, Deserialize)]
struct CellDocument {
    id: String,
    cycles: Vec<f64>,
    capacities_ah: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    cell_count: usize,
    latent_count: usize,
    /// Layout: amplitudes row-major m x R, log smoother widths m x R,
    /// log latent widths R, log noise.
    hyperparameter_vector: Vec<f64>,
    training_digest: String,
    fit_report: FitReport,
    cells: Vec<CellDocument>,
}

/// FNV-1a 64 over the exact bit patterns of the training data. A consistency
/// check against accidental edits, not a cryptographic signature.
fn training_digest(train: &TrainingSet) -> String {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    let mut eat = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    };
    for cell in train.cells() {
        for b in cell.id.as_bytes() {
            eat(*b);
        }
        eat(0);
        for (t, y) in cell.cycles.iter().zip(&cell.capacities) {
            for b in t.to_bits().to_le_bytes() {
                eat(b);
            }
            for b in y.to_bits().to_le_bytes() {
                eat(b);
            }
        }
    }
    format!("fnv1a64:{hash:016x}")
}

impl McgpModel {
    /// Renders the model as a self-describing text document. `header_lines`
    /// are prepended as `#` comments (tool version, flag echo). The rendering
    /// is canonical: save -> load -> save reproduces identical bytes.
    pub fn to_document_string(&self, header_lines: &[String]) -> String {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            cell_count: self.train.cell_count(),
            latent_count: self.hyper.latent_count(),
            hyperparameter_vector: self.hyper.to_vector(),
            training_digest: training_digest(&self.train),
            fit_report: self.fit_report.clone(),
            cells: self
                .train
                .cells()
                .iter()
                .map(|c| CellDocument {
                    id: c.id.clone(),
                    cycles: c.cycles.clone(),
                    capacities_ah: c.capacities.clone(),
                })
                .collect(),
        };
        let mut out = String::new();
        for line in header_lines {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&toml::to_string(&doc).expect("model document serializes"));
        out
    }

    /// Parses a persisted model document, verifies the training-data digest,
    /// and rebuilds the factorization. The stored deviance must match the
    /// recomputed one; a mismatch means the file was edited inconsistently.
    pub fn from_document_str(text: &str) -> Result<Self, McgpError> {
        let doc: ModelDocument =
            toml::from_str(text).map_err(|e| McgpError::Persistence(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(McgpError::Persistence(format!(
                "unsupported format version {}",
                doc.format_version
            )));
        }
        let cells = doc
            .cells
            .into_iter()
            .map(|c| CellObservations {
                id: c.id,
                cycles: c.cycles,
                capacities: c.capacities_ah,
            })
            .collect();
        let train = TrainingSet::new(cells)?;
        if train.cell_count() != doc.cell_count {
            return Err(McgpError::Persistence(format!(
                "cell_count says {} but {} cells are present",
                doc.cell_count,
                train.cell_count()
            )));
        }
        let digest = training_digest(&train);
        if digest != doc.training_digest {
            return Err(McgpError::Persistence(format!(
                "training data digest mismatch: file says {}, data hashes to {digest}",
                doc.training_digest
            )));
        }
        let hyper = McgpHyperParams::from_vector(
            doc.cell_count,
            doc.latent_count,
            &doc.hyperparameter_vector,
        )?;
        let (factor, alpha, dev) = deviance_parts(&hyper, &train)?;
        let stored = &doc.fit_report;
        if (dev - stored.final_deviance).abs() > 1e-6 * stored.final_deviance.abs().max(1.0) {
            return Err(McgpError::Persistence(format!(
                "stored deviance {} does not match recomputed {dev}",
                stored.final_deviance
            )));
        }
        Ok(Self {
            hyper,
            train,
            factor,
            alpha,
            fit_report: doc.fit_report,
        })
    }

    pub fn save(&self, path: &Path, header_lines: &[String]) -> Result<(), McgpError> {
        std::fs::write(path, self.to_document_string(header_lines))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, McgpError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_document_str(&text)
    }
}
