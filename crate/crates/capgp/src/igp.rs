//! Per-cell independent GP baseline.
//!
//! One GP per cell, scaled Gaussian kernel over cycle number with a noise
//! term, and an optional linear basis in cycle fitted first by ordinary least
//! squares. Interpolates well; extrapolation reverts to the basis once the
//! query leaves the data by a few length-scales, which is exactly the failure
//! mode the joint model exists to fix.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::kernels::{igp_kernel, igp_kernel_grad_time_only, IgpKernelParams, KernelError};
use crate::mcgp::PredictiveDistribution;
use crate::numerics::{cholesky, CholFactor, NumericsError, SymMatrix};
use crate::optimizer::{multi_start, OptimizerConfig, OptimizerError};

#[derive(Debug)]
pub enum IgpError {
    /// Fewer than three observations.
    TooFewPoints { got: usize },
    DuplicateCycle { cycle: f64 },
    /// Every optimizer restart diverged.
    OptimizerFailed(OptimizerError),
    Kernel(KernelError),
    Numerics(NumericsError),
    NonFiniteInput,
}

impl fmt::Display for IgpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewPoints { got } => {
                write!(f, "need at least 3 observations, got {got}")
            }
            Self::DuplicateCycle { cycle } => write!(f, "duplicate cycle {cycle}"),
            Self::OptimizerFailed(e) => write!(f, "fit failed: {e}"),
            Self::Kernel(e) => write!(f, "kernel error: {e}"),
            Self::Numerics(e) => write!(f, "numerics error: {e}"),
            Self::NonFiniteInput => write!(f, "non-finite cycle or capacity"),
        }
    }
}

impl std::error::Error for IgpError {}

impl From<KernelError> for IgpError {
    fn from(e: KernelError) -> Self {
        Self::Kernel(e)
    }
}

impl From<NumericsError> for IgpError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

/// Which basis to fit before the kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Zero,
    Linear,
}

/// Fitted basis function in cycle number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Zero,
    Linear { intercept: f64, slope: f64 },
}

impl Basis {
    pub fn eval(&self, cycle: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Linear { intercept, slope } => intercept + slope * cycle,
        }
    }
}

/// Convergence bookkeeping for a fitted baseline model.
#[derive(Debug, Clone)]
pub struct IgpFitReport {
    pub final_loglik: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Log-likelihood at each restart's initial point (-inf when unusable).
    pub initial_logliks: Vec<f64>,
}

/// A fitted single-cell GP: kernel parameters, basis, training data, and the
/// cached factorization. Immutable once built.
#[derive(Debug)]
pub struct IgpModel {
    params: IgpKernelParams,
    basis: Basis,
    train_cycles: Vec<f64>,
    train_caps: Vec<f64>,
    factor: CholFactor,
    /// K^-1 (y - b) cached for prediction.
    residuals_solved: DVector<f64>,
    fit_report: Option<IgpFitReport>,
}

fn sort_observations(cycles: &[f64], caps: &[f64]) -> Result<(Vec<f64>, Vec<f64>), IgpError> {
    if cycles.len() != caps.len() || cycles.len() < 3 {
        return Err(IgpError::TooFewPoints {
            got: cycles.len().min(caps.len()),
        });
    }
    if cycles.iter().chain(caps.iter()).any(|v| !v.is_finite()) {
        return Err(IgpError::NonFiniteInput);
    }
    let mut order: Vec<usize> = (0..cycles.len()).collect();
    order.sort_by(|&a, &b| cycles[a].total_cmp(&cycles[b]));
    let sorted_cycles: Vec<f64> = order.iter().map(|&k| cycles[k]).collect();
    if let Some(w) = sorted_cycles.windows(2).find(|w| w[0] == w[1]) {
        return Err(IgpError::DuplicateCycle { cycle: w[0] });
    }
    let sorted_caps = order.iter().map(|&k| caps[k]).collect();
    Ok((sorted_cycles, sorted_caps))
}

/// Ordinary least squares for the linear basis.
fn fit_basis(kind: BasisKind, cycles: &[f64], caps: &[f64]) -> Basis {
    match kind {
        BasisKind::Zero => Basis::Zero,
        BasisKind::Linear => {
            let n = cycles.len() as f64;
            let mean_t = cycles.iter().sum::<f64>() / n;
            let mean_y = caps.iter().sum::<f64>() / n;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for (t, y) in cycles.iter().zip(caps) {
                sxx += (t - mean_t) * (t - mean_t);
                sxy += (t - mean_t) * (y - mean_y);
            }
            let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            Basis::Linear {
                intercept: mean_y - slope * mean_t,
                slope,
            }
        }
    }
}

fn residual_gram(params: &IgpKernelParams, cycles: &[f64]) -> Result<SymMatrix, IgpError> {
    let n = cycles.len();
    let mut failed = None;
    let gram = SymMatrix::from_fn(n, |a, b| {
        match igp_kernel(params, cycles[a], &[], cycles[b], &[], a == b) {
            Ok(v) => v,
            Err(e) => {
                failed = Some(e);
                f64::NAN
            }
        }
    });
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(gram),
    }
}

fn negative_twice_loglik(
    params: &IgpKernelParams,
    cycles: &[f64],
    residuals: &DVector<f64>,
) -> Result<(CholFactor, DVector<f64>, f64), IgpError> {
    let gram = residual_gram(params, cycles)?;
    let factor = cholesky(&gram)?;
    let solved = factor.solve(residuals)?;
    let n = cycles.len() as f64;
    let objective =
        residuals.dot(&solved) + factor.logdet() + n * (2.0 * std::f64::consts::PI).ln();
    Ok((factor, solved, objective))
}

impl IgpModel {
    /// Builds a model directly from known parameters (no fitting).
    /// Observations are sorted by cycle; duplicates are rejected.
    pub fn with_params(
        params: IgpKernelParams,
        basis: Basis,
        cycles: &[f64],
        caps: &[f64],
    ) -> Result<Self, IgpError> {
        let (train_cycles, train_caps) = sort_observations(cycles, caps)?;
        let residuals = DVector::from_iterator(
            train_caps.len(),
            train_cycles
                .iter()
                .zip(&train_caps)
                .map(|(t, y)| y - basis.eval(*t)),
        );
        let (factor, residuals_solved, _) =
            negative_twice_loglik(&params, &train_cycles, &residuals)?;
        Ok(Self {
            params,
            basis,
            train_cycles,
            train_caps,
            factor,
            residuals_solved,
            fit_report: None,
        })
    }

    pub fn params(&self) -> &IgpKernelParams {
        &self.params
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn train_cycles(&self) -> &[f64] {
        &self.train_cycles
    }

    pub fn fit_report(&self) -> Option<&IgpFitReport> {
        self.fit_report.as_ref()
    }

    /// Joint log-likelihood of the training residuals at the stored
    /// parameters.
    pub fn log_likelihood(&self) -> f64 {
        let residuals = DVector::from_iterator(
            self.train_caps.len(),
            self.train_cycles
                .iter()
                .zip(&self.train_caps)
                .map(|(t, y)| y - self.basis.eval(*t)),
        );
        let n = self.train_caps.len() as f64;
        -0.5 * (residuals.dot(&self.residuals_solved)
            + self.factor.logdet()
            + n * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Fits the baseline GP: basis first by least squares, then kernel
/// hyperparameters by multi-start maximum likelihood on the residuals.
pub fn igp_fit(
    cycles: &[f64],
    caps: &[f64],
    basis_kind: BasisKind,
    restarts: usize,
    seed: u64,
) -> Result<IgpModel, IgpError> {
    igp_fit_with(
        cycles,
        caps,
        basis_kind,
        &OptimizerConfig::with_restarts_and_seed(restarts, seed),
    )
}

/// [`igp_fit`] with full optimizer control.
pub fn igp_fit_with(
    cycles: &[f64],
    caps: &[f64],
    basis_kind: BasisKind,
    cfg: &OptimizerConfig,
) -> Result<IgpModel, IgpError> {
    let (train_cycles, train_caps) = sort_observations(cycles, caps)?;
    let basis = fit_basis(basis_kind, &train_cycles, &train_caps);
    let residuals = DVector::from_iterator(
        train_caps.len(),
        train_cycles
            .iter()
            .zip(&train_caps)
            .map(|(t, y)| y - basis.eval(*t)),
    );

    let spread = {
        let mean = residuals.mean();
        let n = residuals.len() as f64;
        (residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0))
            .sqrt()
            .max(1e-8)
    };
    let span = (train_cycles[train_cycles.len() - 1] - train_cycles[0]).max(2.0);

    let objective = |x: &DVector<f64>| -> f64 {
        let Ok(params) = IgpKernelParams::from_log_vector(0, x.as_slice()) else {
            return f64::INFINITY;
        };
        match negative_twice_loglik(&params, &train_cycles, &residuals) {
            Ok((_, _, objective)) => objective,
            Err(_) => f64::INFINITY,
        }
    };
    let gradient = |x: &DVector<f64>| -> DVector<f64> {
        let Ok(params) = IgpKernelParams::from_log_vector(0, x.as_slice()) else {
            return DVector::from_element(x.len(), f64::NAN);
        };
        let Ok((factor, solved, _)) = negative_twice_loglik(&params, &train_cycles, &residuals)
        else {
            return DVector::from_element(x.len(), f64::NAN);
        };
        let k_inv = factor.inverse();
        let mut grad = [0.0; 3];
        let mut entry = [0.0; 3];
        for a in 0..train_cycles.len() {
            for b in a..train_cycles.len() {
                let w = k_inv[(a, b)] - solved[a] * solved[b];
                let weight = if a == b { w } else { 2.0 * w };
                igp_kernel_grad_time_only(
                    &params,
                    train_cycles[a],
                    train_cycles[b],
                    a == b,
                    &mut entry,
                );
                for (g, e) in grad.iter_mut().zip(&entry) {
                    *g += weight * e;
                }
            }
        }
        DVector::from_row_slice(&grad)
    };
    let sampler = |_: usize, rng: &mut ChaCha8Rng| {
        DVector::from_vec(vec![
            rng.random_range((0.05 * spread).ln()..(5.0 * spread).ln()),
            rng.random_range((span / 100.0).ln()..span.ln()),
            rng.random_range((0.001 * spread).ln()..(0.5 * spread).ln()),
        ])
    };

    let outcome = multi_start(objective, gradient, sampler, cfg)
        .map_err(IgpError::OptimizerFailed)?;
    let params = IgpKernelParams::from_log_vector(0, outcome.x.as_slice())?;
    let (factor, residuals_solved, final_objective) =
        negative_twice_loglik(&params, &train_cycles, &residuals)?;
    let fit_report = IgpFitReport {
        final_loglik: -final_objective / 2.0,
        iterations: outcome.trace.iterations(),
        restarts_used: outcome.converged_restarts,
        initial_logliks: outcome
            .initial_objectives
            .iter()
            .map(|d| -d / 2.0)
            .collect(),
    };
    Ok(IgpModel {
        params,
        basis,
        train_cycles,
        train_caps,
        factor,
        residuals_solved,
        fit_report: Some(fit_report),
    })
}

/// Predictive posterior of the noise-free capacity at the query cycles:
/// basis value plus the GP posterior over residuals.
pub fn igp_predict(model: &IgpModel, query_cycles: &[f64]) -> PredictiveDistribution {
    let n = model.train_cycles.len();
    let nq = query_cycles.len();
    let kernel = |t: f64, t2: f64, same: bool| {
        igp_kernel(&model.params, t, &[], t2, &[], same).expect("no covariates")
    };
    let k_star = DMatrix::<f64>::from_fn(nq, n, |q, b| {
        kernel(query_cycles[q], model.train_cycles[b], false)
    });
    let mean: Vec<f64> = (&k_star * &model.residuals_solved)
        .iter()
        .zip(query_cycles)
        .map(|(gp, t)| gp + model.basis.eval(*t))
        .collect();
    let k_qq = DMatrix::<f64>::from_fn(nq, nq, |a, b| {
        kernel(query_cycles[a], query_cycles[b], false)
    });
    let v = model
        .factor
        .solve_matrix(&k_star.transpose())
        .expect("factor dimension matches training data");
    let raw_cov = k_qq - &k_star * v;
    PredictiveDistribution::from_mean_cov(String::new(), query_cycles.to_vec(), mean, raw_cov)
}
