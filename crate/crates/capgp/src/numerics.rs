//! Dense symmetric linear algebra and quadrature used by every other module.
//!
//! Covariance matrices here are small (a few hundred rows), so everything is
//! dense `f64` backed by nalgebra. This module owns the positive-definiteness
//! policy: a factorization that fails outright is retried with escalating
//! diagonal jitter before being reported as `NotPositiveDefinite`.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Multiples of `mean(diag)` tried, in order, when the plain factorization fails.
const JITTER_LADDER: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Factorization failed at every jitter level.
    NotPositiveDefinite { dim: usize, max_jitter: f64 },
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotPositiveDefinite { dim, max_jitter } => write!(
                f,
                "{dim}x{dim} matrix is not positive definite (jitter up to {max_jitter:e} tried)"
            ),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for NumericsError {}

/// Dense symmetric matrix. Symmetry holds exactly as stored: constructors
/// evaluate one triangle and mirror it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds an `n`-dimensional matrix from `f(a, b)`, evaluated only for
    /// `a <= b` and mirrored.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(n: usize, mut f: F) -> Self {
        assert!(n >= 1, "SymMatrix requires n >= 1");
        let mut data = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = f(a, b);
                data[(a, b)] = v;
                data[(b, a)] = v;
            }
        }
        Self { data }
    }

    /// Wraps an existing matrix; the matrix must already be exactly symmetric.
    pub fn from_dmatrix(data: DMatrix<f64>) -> Result<Self, NumericsError> {
        if data.nrows() != data.ncols() {
            return Err(NumericsError::DimensionMismatch {
                expected: data.nrows(),
                got: data.ncols(),
            });
        }
        assert!(data.nrows() >= 1, "SymMatrix requires n >= 1");
        for a in 0..data.nrows() {
            for b in (a + 1)..data.ncols() {
                assert!(
                    data[(a, b)] == data[(b, a)],
                    "matrix is not exactly symmetric at ({a}, {b})"
                );
            }
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[(a, b)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.data.diagonal().mean()
    }
}

/// Cholesky factor of `M + jitter_used * I`, with the log-determinant of the
/// jittered matrix.
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
    jitter_used: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor L with L * L^T = M + jitter_used * I.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// log det(M + jitter_used * I), i.e. 2 * sum(log diag(L)).
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Solves (M + jitter_used * I) x = rhs.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
        if rhs.len() != self.dim() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        Ok(self.chol.solve(rhs))
    }

    /// Solves against each column of `rhs`.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
        if rhs.nrows() != self.dim() {
            return Err(NumericsError::DimensionMismatch {
                expected: self.dim(),
                got: rhs.nrows(),
            });
        }
        Ok(self.chol.solve(rhs))
    }

    /// Dense inverse of the factored matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

impl fmt::Debug for CholFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CholFactor")
            .field("dim", &self.dim())
            .field("logdet", &self.logdet)
            .field("jitter_used", &self.jitter_used)
            .finish()
    }
}

/// Factorizes a symmetric matrix, escalating through the jitter ladder
/// (multiples of the mean diagonal) if the plain factorization fails.
pub fn cholesky(m: &SymMatrix) -> Result<CholFactor, NumericsError> {
    let scale = m.mean_diagonal();
    let mut jitters = vec![0.0];
    if scale.is_finite() && scale > 0.0 {
        jitters.extend(JITTER_LADDER.iter().map(|j| j * scale));
    }
    for &jitter in &jitters {
        let mut work = m.data.clone();
        if jitter > 0.0 {
            for k in 0..work.nrows() {
                work[(k, k)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(work) {
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            if !logdet.is_finite() {
                continue;
            }
            return Ok(CholFactor {
                chol,
                logdet,
                jitter_used: jitter,
            });
        }
    }
    Err(NumericsError::NotPositiveDefinite {
        dim: m.dim(),
        max_jitter: jitters.last().copied().unwrap_or(0.0),
    })
}

/// Solves the factored system for `rhs`; see [`CholFactor::solve`].
pub fn solve(f: &CholFactor, rhs: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    f.solve(rhs)
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots are symmetric; compute the lower half and mirror.
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and P'_n(x) via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[n - 1 - i] = x.abs();
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Tensor-product Gauss-Legendre estimate of the double integral of `f` over
/// the square window `center ± half_width` in each argument.
///
/// The caller chooses the window; for Gaussian-type integrands a half-width of
/// at least 8 kernel widths puts the truncation error far below 1e-10 relative.
pub fn quad_double_integral<F: Fn(f64, f64) -> f64>(
    f: F,
    center: (f64, f64),
    half_width: f64,
    n_nodes: usize,
) -> f64 {
    assert!(n_nodes >= 64, "use at least 64 nodes per axis");
    assert!(half_width > 0.0);
    let (nodes, weights) = gauss_legendre(n_nodes);
    let xs: Vec<f64> = nodes.iter().map(|t| center.0 + half_width * t).collect();
    let ys: Vec<f64> = nodes.iter().map(|t| center.1 + half_width * t).collect();
    let mut total = 0.0;
    for (a, &x) in xs.iter().enumerate() {
        let mut row = 0.0;
        for (b, &y) in ys.iter().enumerate() {
            row += weights[b] * f(x, y);
        }
        total += weights[a] * row;
    }
    total * half_width * half_width
}
