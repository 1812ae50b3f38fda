//! Bayesian optimization of expensive black-box functions with Gaussian
//! process surrogates.
//!
//! The crate is layered bottom-up:
//!
//! * [`mvn`]: Cholesky factorization, triangular solves, and conditioning of
//!   multivariate normals;
//! * [`kernels`]: squared-exponential and Matérn covariances, constant and
//!   polynomial-trend mean functions;
//! * [`gp`]: exact and noisy posterior inference;
//! * [`hyperfit`]: empirical-Bayes hyperparameters from the profiled
//!   marginal likelihood;
//! * [`diagnostics`]: leave-one-out credible-interval checks;
//! * [`acquisition`]: expected improvement, knowledge gradient, and their
//!   maximization;
//! * [`campaign`]: persistent ask/tell campaigns, plus (with the `server`
//!   feature) the HTTP service used by the dashboard.

pub mod acquisition;
pub mod campaign;
pub mod diagnostics;
pub mod error;
pub mod gp;
pub mod hyperfit;
pub mod kernels;
pub mod mvn;
pub mod optim;
pub mod sequence;
pub mod special;

pub use error::{Error, Result};
pub use gp::{GpPosterior, JointPrediction, TrainingSet};
pub use kernels::{KernelFamily, KernelSpec, MeanSpec};
