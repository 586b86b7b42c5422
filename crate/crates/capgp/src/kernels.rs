//! Covariance functions.
//!
//! Two families live here. The single-output scaled Gaussian kernel with a
//! white-noise term drives the per-cell baseline GP. The multi-cell model is
//! built from Gaussian convolution pieces: a per-(cell, latent) smoother with
//! amplitude `s` and width `w`, and a unit-mass Gaussian kernel of width `q`
//! for each latent process. Chaining two smoothers через a latent kernel is a
//! double convolution of Gaussians, which collapses to a single Gaussian in
//! the cycle lag:
//!
//! ```text
//! cov[y_i(t), y_j(t')] = noise^2 * [same obs]
//!     + sum_r s_ir * s_jr * exp(-(t-t')^2 / (2 v)) / sqrt(2 pi v),
//!   v = w_ir^2 + w_jr^2 + q_r^2
//! ```
//!
//! The closed form is validated against `numerics::quad_double_integral`
//! applied to the literal double integral; see the acceptance suite.
//!
//! Strictly positive hyperparameters (widths, noise) are stored and optimized
//! as logarithms; smoother amplitudes stay unconstrained (negating a whole
//! latent column never changes any covariance, and that gauge freedom is
//! accepted rather than removed).

use std::f64::consts::TAU;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelError {
    DimensionMismatch { expected: usize, got: usize },
    IndexOutOfRange { index: usize, len: usize },
    InvalidParameter(String),
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, got } => {
                write!(f, "covariate length {got} does not match {expected} length-scales")
            }
            Self::IndexOutOfRange { index, len } => {
                write!(f, "cell index {index} out of range for {len} cells")
            }
            Self::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl std::error::Error for KernelError {}

fn require_positive(value: f64, name: &str) -> Result<f64, KernelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value.ln())
    } else {
        Err(KernelError::InvalidParameter(format!(
            "{name} must be strictly positive and finite, got {value}"
        )))
    }
}

/// Hyperparameters of the scaled Gaussian kernel with noise: signal amplitude,
/// cycle length-scale, optional per-covariate length-scales, noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct IgpKernelParams {
    log_theta_f: f64,
    log_theta_l: f64,
    log_theta_x: Vec<f64>,
    log_theta_eps: f64,
}

impl IgpKernelParams {
    pub fn new(
        theta_f: f64,
        theta_l: f64,
        theta_x: &[f64],
        theta_eps: f64,
    ) -> Result<Self, KernelError> {
        Ok(Self {
            log_theta_f: require_positive(theta_f, "theta_F")?,
            log_theta_l: require_positive(theta_l, "theta_L")?,
            log_theta_x: theta_x
                .iter()
                .map(|&x| require_positive(x, "theta_x"))
                .collect::<Result<_, _>>()?,
            log_theta_eps: require_positive(theta_eps, "theta_eps")?,
        })
    }

    pub fn theta_f(&self) -> f64 {
        self.log_theta_f.exp()
    }

    pub fn theta_l(&self) -> f64 {
        self.log_theta_l.exp()
    }

    pub fn theta_x(&self) -> Vec<f64> {
        self.log_theta_x.iter().map(|l| l.exp()).collect()
    }

    pub fn theta_eps(&self) -> f64 {
        self.log_theta_eps.exp()
    }

    pub fn covariate_count(&self) -> usize {
        self.log_theta_x.len()
    }

    /// Log-space layout: `[log theta_F, log theta_L, log theta_x.., log theta_eps]`.
    pub fn to_log_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + self.log_theta_x.len());
        v.push(self.log_theta_f);
        v.push(self.log_theta_l);
        v.extend_from_slice(&self.log_theta_x);
        v.push(self.log_theta_eps);
        v
    }

    pub fn from_log_vector(n_covariates: usize, v: &[f64]) -> Result<Self, KernelError> {
        let expected = 3 + n_covariates;
        if v.len() != expected {
            return Err(KernelError::DimensionMismatch {
                expected,
                got: v.len(),
            });
        }
        Ok(Self {
            log_theta_f: v[0],
            log_theta_l: v[1],
            log_theta_x: v[2..2 + n_covariates].to_vec(),
            log_theta_eps: v[2 + n_covariates],
        })
    }
}

/// Scaled Gaussian kernel with a Kronecker-delta noise term. With no
/// covariates the sum term vanishes and the kernel depends on cycle lag only.
pub fn igp_kernel(
    p: &IgpKernelParams,
    t: f64,
    x_t: &[f64],
    t2: f64,
    x_t2: &[f64],
    same_observation: bool,
) -> Result<f64, KernelError> {
    if x_t.len() != p.log_theta_x.len() || x_t2.len() != p.log_theta_x.len() {
        return Err(KernelError::DimensionMismatch {
            expected: p.log_theta_x.len(),
            got: x_t.len().max(x_t2.len()),
        });
    }
    let theta_l = p.theta_l();
    let mut exponent = -0.5 * ((t - t2) / theta_l).powi(2);
    for (j, log_lx) in p.log_theta_x.iter().enumerate() {
        let lx = log_lx.exp();
        exponent -= 0.5 * ((x_t[j] - x_t2[j]) / lx).powi(2);
    }
    let theta_f = p.theta_f();
    let mut k = theta_f * theta_f * exponent.exp();
    if same_observation {
        let eps = p.theta_eps();
        k += eps * eps;
    }
    Ok(k)
}

/// Gradient of [`igp_kernel`] in the log-space layout of
/// [`IgpKernelParams::to_log_vector`]. Covariate-free variant (the shipped
/// scenarios use cycle-only inputs).
pub(crate) fn igp_kernel_grad_time_only(
    p: &IgpKernelParams,
    t: f64,
    t2: f64,
    same_observation: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(p.log_theta_x.len(), 0);
    debug_assert_eq!(out.len(), 3);
    let theta_l = p.theta_l();
    let theta_f = p.theta_f();
    let z = (t - t2) / theta_l;
    let signal = theta_f * theta_f * (-0.5 * z * z).exp();
    out[0] = 2.0 * signal;
    out[1] = signal * z * z;
    out[2] = if same_observation {
        let eps = p.theta_eps();
        2.0 * eps * eps
    } else {
        0.0
    };
}

/// Full hyperparameter set of the convolved multi-cell model for `m` cells and
/// `r_latent` latent processes.
#[derive(Debug, Clone, PartialEq)]
pub struct McgpHyperParams {
    m: usize,
    r_latent: usize,
    /// Smoother amplitudes, row-major `m x R`, unconstrained sign.
    amplitude: Vec<f64>,
    /// Log smoother widths, row-major `m x R`.
    log_smoother_width: Vec<f64>,
    /// Log latent kernel widths, length `R`.
    log_latent_width: Vec<f64>,
    log_noise: f64,
}

impl McgpHyperParams {
    /// Builds from raw values; widths and noise must be strictly positive.
    /// `amplitudes` and `smoother_widths` are row-major `m x R`.
    pub fn new(
        m: usize,
        r_latent: usize,
        amplitudes: &[f64],
        smoother_widths: &[f64],
        latent_widths: &[f64],
        noise: f64,
    ) -> Result<Self, KernelError> {
        if m == 0 || r_latent == 0 {
            return Err(KernelError::InvalidParameter(
                "cell count and latent count must be at least 1".into(),
            ));
        }
        if amplitudes.len() != m * r_latent {
            return Err(KernelError::DimensionMismatch {
                expected: m * r_latent,
                got: amplitudes.len(),
            });
        }
        if smoother_widths.len() != m * r_latent {
            return Err(KernelError::DimensionMismatch {
                expected: m * r_latent,
                got: smoother_widths.len(),
            });
        }
        if latent_widths.len() != r_latent {
            return Err(KernelError::DimensionMismatch {
                expected: r_latent,
                got: latent_widths.len(),
            });
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(KernelError::InvalidParameter("non-finite amplitude".into()));
        }
        Ok(Self {
            m,
            r_latent,
            amplitude: amplitudes.to_vec(),
            log_smoother_width: smoother_widths
                .iter()
                .map(|&w| require_positive(w, "smoother width"))
                .collect::<Result<_, _>>()?,
            log_latent_width: latent_widths
                .iter()
                .map(|&w| require_positive(w, "latent width"))
                .collect::<Result<_, _>>()?,
            log_noise: require_positive(noise, "noise")?,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.m
    }

    pub fn latent_count(&self) -> usize {
        self.r_latent
    }

    pub fn amplitude(&self, i: usize, r: usize) -> f64 {
        self.amplitude[i * self.r_latent + r]
    }

    pub fn smoother_width(&self, i: usize, r: usize) -> f64 {
        self.log_smoother_width[i * self.r_latent + r].exp()
    }

    pub fn latent_width(&self, r: usize) -> f64 {
        self.log_latent_width[r].exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    /// Number of entries in [`Self::to_vector`].
    pub fn param_count(m: usize, r_latent: usize) -> usize {
        2 * m * r_latent + r_latent + 1
    }

    /// Optimizer/persistence layout, fixed: amplitudes row-major `m x R`
    /// (raw), then log smoother widths row-major `m x R`, then log latent
    /// widths (`R`), then log noise.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::param_count(self.m, self.r_latent));
        v.extend_from_slice(&self.amplitude);
        v.extend_from_slice(&self.log_smoother_width);
        v.extend_from_slice(&self.log_latent_width);
        v.push(self.log_noise);
        v
    }

    /// Inverse of [`Self::to_vector`].
    pub fn from_vector(m: usize, r_latent: usize, v: &[f64]) -> Result<Self, KernelError> {
        let expected = Self::param_count(m, r_latent);
        if v.len() != expected {
            return Err(KernelError::DimensionMismatch {
                expected,
                got: v.len(),
            });
        }
        let mr = m * r_latent;
        Ok(Self {
            m,
            r_latent,
            amplitude: v[..mr].to_vec(),
            log_smoother_width: v[mr..2 * mr].to_vec(),
            log_latent_width: v[2 * mr..2 * mr + r_latent].to_vec(),
            log_noise: v[expected - 1],
        })
    }

    fn check_cell(&self, i: usize) -> Result<(), KernelError> {
        if i < self.m {
            Ok(())
        } else {
            Err(KernelError::IndexOutOfRange {
                index: i,
                len: self.m,
            })
        }
    }
}

/// Index of an amplitude entry in the hyperparameter vector layout.
pub(crate) fn amplitude_index(r_latent: usize, i: usize, r: usize) -> usize {
    i * r_latent + r
}

/// Index of a log smoother width in the hyperparameter vector layout.
pub(crate) fn smoother_width_index(m: usize, r_latent: usize, i: usize, r: usize) -> usize {
    m * r_latent + i * r_latent + r
}

/// Index of a log latent width in the hyperparameter vector layout.
pub(crate) fn latent_width_index(m: usize, r_latent: usize, r: usize) -> usize {
    2 * m * r_latent + r
}

/// Index of the log noise scale in the hyperparameter vector layout.
pub(crate) fn noise_index(m: usize, r_latent: usize) -> usize {
    2 * m * r_latent + r_latent
}

/// Gaussian smoothing kernel linking a cell to a latent process:
/// `amplitude / sqrt(2 pi width^2) * exp(-lag^2 / (2 width^2))`.
pub fn smoother(amplitude: f64, width: f64, lag: f64) -> f64 {
    debug_assert!(width > 0.0);
    amplitude / (TAU * width * width).sqrt() * (-0.5 * (lag / width).powi(2)).exp()
}

/// Unit-mass Gaussian covariance of a latent process at the given lag.
pub fn latent_kernel(width: f64, lag: f64) -> f64 {
    smoother(1.0, width, lag)
}

fn cross_cov_unchecked(
    p: &McgpHyperParams,
    i: usize,
    t: f64,
    j: usize,
    t2: f64,
    same_observation: bool,
) -> f64 {
    let d = t - t2;
    let mut total = 0.0;
    for r in 0..p.r_latent {
        let wi = p.smoother_width(i, r);
        let wj = p.smoother_width(j, r);
        let q = p.latent_width(r);
        let v = wi * wi + wj * wj + q * q;
        total += p.amplitude(i, r) * p.amplitude(j, r) * (-d * d / (2.0 * v)).exp()
            / (TAU * v).sqrt();
    }
    if same_observation {
        let eps = p.noise();
        total += eps * eps;
    }
    total
}

/// Closed-form cross-covariance between cell `i` at cycle `t` and cell `j` at
/// cycle `t2`. `same_observation` marks the two arguments as the same physical
/// measurement (same cell, cycle, and measurement index); only then does the
/// noise variance enter.
pub fn mcgp_cross_cov(
    p: &McgpHyperParams,
    i: usize,
    t: f64,
    j: usize,
    t2: f64,
    same_observation: bool,
) -> Result<f64, KernelError> {
    p.check_cell(i)?;
    p.check_cell(j)?;
    Ok(cross_cov_unchecked(p, i, t, j, t2, same_observation))
}

pub(crate) fn mcgp_cross_cov_grad_into(
    p: &McgpHyperParams,
    i: usize,
    t: f64,
    j: usize,
    t2: f64,
    same_observation: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), McgpHyperParams::param_count(p.m, p.r_latent));
    out.fill(0.0);
    let d = t - t2;
    for r in 0..p.r_latent {
        let si = p.amplitude(i, r);
        let sj = p.amplitude(j, r);
        let wi = p.smoother_width(i, r);
        let wj = p.smoother_width(j, r);
        let q = p.latent_width(r);
        let v = wi * wi + wj * wj + q * q;
        let phi = (-d * d / (2.0 * v)).exp() / (TAU * v).sqrt();
        // d phi / d v
        let dphi_dv = phi * (d * d - v) / (2.0 * v * v);

        out[amplitude_index(p.r_latent, i, r)] += sj * phi;
        out[amplitude_index(p.r_latent, j, r)] += si * phi;

        // Widths are optimized as logs: d/d(log w) = w * d/dw, and
        // dv/dw = 2w, so each occurrence contributes 2 w^2 * dphi_dv.
        let coeff = si * sj * dphi_dv;
        out[smoother_width_index(p.m, p.r_latent, i, r)] += coeff * 2.0 * wi * wi;
        out[smoother_width_index(p.m, p.r_latent, j, r)] += coeff * 2.0 * wj * wj;
        out[latent_width_index(p.m, p.r_latent, r)] += coeff * 2.0 * q * q;
    }
    if same_observation {
        let eps = p.noise();
        out[noise_index(p.m, p.r_latent)] = 2.0 * eps * eps;
    }
}

/// Gradient of [`mcgp_cross_cov`] with respect to the hyperparameter vector in
/// the [`McgpHyperParams::to_vector`] layout: raw space for amplitudes,
/// log space for widths and noise.
pub fn mcgp_cross_cov_grad(
    p: &McgpHyperParams,
    i: usize,
    t: f64,
    j: usize,
    t2: f64,
    same_observation: bool,
) -> Result<Vec<f64>, KernelError> {
    p.check_cell(i)?;
    p.check_cell(j)?;
    let mut out = vec![0.0; McgpHyperParams::param_count(p.m, p.r_latent)];
    mcgp_cross_cov_grad_into(p, i, t, j, t2, same_observation, &mut out);
    Ok(out)
}

/// Precomputed per-(cell pair, latent) coefficients for fast gram assembly:
/// entry = sum_r coeff * exp(-d^2 * half_inv_v) (+ noise^2 on same obs).
pub(crate) struct CrossCovTable {
    m: usize,
    r_latent: usize,
    coeff: Vec<f64>,
    half_inv_v: Vec<f64>,
    noise_var: f64,
}

impl CrossCovTable {
    pub fn new(p: &McgpHyperParams) -> Self {
        let m = p.m;
        let r_latent = p.r_latent;
        let mut coeff = vec![0.0; m * m * r_latent];
        let mut half_inv_v = vec![0.0; m * m * r_latent];
        for i in 0..m {
            for j in 0..m {
                for r in 0..r_latent {
                    let wi = p.smoother_width(i, r);
                    let wj = p.smoother_width(j, r);
                    let q = p.latent_width(r);
                    let v = wi * wi + wj * wj + q * q;
                    let idx = (i * m + j) * r_latent + r;
                    coeff[idx] = p.amplitude(i, r) * p.amplitude(j, r) / (TAU * v).sqrt();
                    half_inv_v[idx] = 0.5 / v;
                }
            }
        }
        let eps = p.noise();
        Self {
            m,
            r_latent,
            coeff,
            half_inv_v,
            noise_var: eps * eps,
        }
    }

    pub fn eval(&self, i: usize, t: f64, j: usize, t2: f64, same_observation: bool) -> f64 {
        let d = t - t2;
        let base = (i * self.m + j) * self.r_latent;
        let mut total = 0.0;
        for r in 0..self.r_latent {
            total += self.coeff[base + r] * (-d * d * self.half_inv_v[base + r]).exp();
        }
        if same_observation {
            total += self.noise_var;
        }
        total
    }
}
