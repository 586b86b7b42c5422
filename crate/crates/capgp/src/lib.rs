//! Joint Gaussian-process modeling of battery-cell capacity fade.
//!
//! A fleet of Li-ion cells cycled together shares degradation structure. This
//! crate models every cell's capacity trajectory jointly: each trajectory is a
//! sum of shared latent Gaussian processes convolved with per-cell Gaussian
//! smoothers plus white measurement noise. Conditioning on all cells at once
//! transfers trend information across cells, which is what makes long-range
//! capacity forecasts workable where a single-cell GP falls back to its basis.
//!
//! The pieces:
//!
//! * [`numerics`] — dense symmetric factorization with a jitter policy, and
//!   the Gauss-Legendre double integral used as the oracle for the closed-form
//!   cross-covariance.
//! * [`kernels`] — the scaled Gaussian kernel with noise, the convolution
//!   smoother/latent kernels, the closed-form cross-covariance and its
//!   hyperparameter gradient.
//! * [`igp`] — the per-cell independent GP baseline with an optional linear
//!   basis.
//! * [`mcgp`] — the joint model: gram assembly, deviance and gradient,
//!   fitting, prediction, persistence.
//! * [`optimizer`] — multi-start limited-memory quasi-Newton minimizer over
//!   the log-space hyperparameter vector.
//! * [`data`] — capacity CSV ingestion, downsampling, train/held-out splits.
//! * [`bench`] — scenario runner and MAE/MSE reporting for model comparison.

pub mod bench;
pub mod data;
pub mod igp;
pub mod kernels;
pub mod mcgp;
pub mod numerics;
pub mod optimizer;

pub use bench::{run_scenario, BenchReport, ModelKind};
pub use data::{build_scenario, load_csv, CapacitySeries, Scenario};
pub use igp::{igp_fit, igp_predict, BasisKind, IgpModel};
pub use kernels::{IgpKernelParams, McgpHyperParams};
pub use mcgp::{
    mcgp_fit, mcgp_predict, McgpModel, PredictiveDistribution, TrainingSet,
};
pub use optimizer::OptimizerConfig;
