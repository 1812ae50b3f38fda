//! Gaussian-process posterior inference.
//!
//! [`GpPosterior::fit`] factors `Σ₀(X, X) + λ²I = L Lᵀ` once and caches
//! `δ = Lᵀ \ (L \ (y − μ₀(X)))`; every query afterwards costs one kernel row
//! and one triangular solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, MeanSpec};
use crate::mvn::{cholesky, symmetrize, CholeskyFactor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Negative variances above `-NEGATIVE_VARIANCE_TOL · α` are rounding noise.
const NEGATIVE_VARIANCE_TOL: f64 = 1e-6;

/// Observed design points and responses, with homoscedastic noise variance λ².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    noise_variance: f64,
}

impl TrainingSet {
    /// Builds a training set. With `noise_variance == 0`, repeated design
    /// points carry no new information and all but the first are dropped.
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidTrainingSet("no observations".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidTrainingSet(format!(
                "noise variance must be finite and nonnegative, got {noise_variance}"
            )));
        }
        let d = xs[0].len();
        if d == 0 {
            return Err(Error::InvalidTrainingSet("zero-dimensional points".into()));
        }
        for x in &xs {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTrainingSet(format!("non-finite point {x:?}")));
            }
        }
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrainingSet("non-finite response".into()));
        }

        if noise_variance > 0.0 {
            return Ok(Self {
                xs,
                ys,
                noise_variance,
            });
        }
        let mut kept_x: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
        let mut kept_y = Vec::with_capacity(ys.len());
        for (x, y) in xs.into_iter().zip(ys) {
            if kept_x.iter().any(|k| k == &x) {
                log::warn!("dropping repeated noise-free observation at {x:?}");
                continue;
            }
            kept_x.push(x);
            kept_y.push(y);
        }
        Ok(Self {
            xs: kept_x,
            ys: kept_y,
            noise_variance,
        })
    }

    pub fn noise_free(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        Self::new(xs, ys, 0.0)
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }
}

/// Joint posterior over k query points.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Fitted posterior; immutable and safe to query from many threads.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    training: TrainingSet,
    kernel: KernelSpec,
    mean: MeanSpec,
    chol: CholeskyFactor,
    delta: DVector<f64>,
    residuals: DVector<f64>,
}

impl GpPosterior {
    pub fn fit(training: TrainingSet, kernel: KernelSpec, mean: MeanSpec) -> Result<Self> {
        kernel.validate()?;
        let d = training.dim();
        if kernel.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: kernel.dim(),
            });
        }
        if let Some(md) = mean.dim() {
            if md != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: md,
                });
            }
        }
        let n = training.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            gram[(i, i)] = kernel.amplitude + training.noise_variance;
            for j in 0..i {
                let v = kernel.eval_unchecked(&training.xs[i], &training.xs[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let chol = cholesky(&gram)?;
        let residuals = DVector::from_fn(n, |i, _| {
            training.ys[i] - mean.eval_unchecked(&training.xs[i])
        });
        let delta = chol.solve(&residuals)?;
        Ok(Self {
            training,
            kernel,
            mean,
            chol,
            delta,
            residuals,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn mean_spec(&self) -> &MeanSpec {
        &self.mean
    }

    pub fn noise_variance(&self) -> f64 {
        self.training.noise_variance
    }

    pub fn cholesky(&self) -> &CholeskyFactor {
        &self.chol
    }

    /// Solve vector δ with `(Σ₀ + λ²I) δ = y − μ₀(X)`.
    pub fn solve_vector(&self) -> &DVector<f64> {
        &self.delta
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `Σ₀(X, x)` for one query point.
    pub(crate) fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.training.len(),
            self.training
                .xs
                .iter()
                .map(|xi| self.kernel.eval_unchecked(xi, x)),
        )
    }

    /// `L \ Σ₀(X, x)`, the whitened cross-covariance column.
    pub(crate) fn whitened(&self, cross: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_lower(cross)
            .expect("cross-covariance length matches training size")
    }

    pub(crate) fn mean_from_cross(&self, x: &[f64], cross: &DVector<f64>) -> f64 {
        self.mean.eval_unchecked(x) + cross.dot(&self.delta)
    }

    pub(crate) fn clamp_variance(&self, variance: f64) -> Result<f64> {
        if variance >= 0.0 {
            Ok(variance)
        } else if variance >= -NEGATIVE_VARIANCE_TOL * self.kernel.amplitude {
            log::trace!("clamping posterior variance {variance:e} to 0");
            Ok(0.0)
        } else {
            Err(Error::NegativeVariance { variance })
        }
    }

    /// Posterior mean only.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let cross = self.cross_covariance(x);
        Ok(self.mean_from_cross(x, &cross))
    }

    /// Posterior mean `μ_n(x*)` and variance `σ²_n(x*)`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let cross = self.cross_covariance(x);
        let mean = self.mean_from_cross(x, &cross);
        let v = self.whitened(&cross);
        let variance = self.clamp_variance(self.kernel.amplitude - v.dot(&v))?;
        Ok((mean, variance))
    }

    /// Joint posterior mean vector and covariance matrix at `x_stars`.
    pub fn predict_joint<P: AsRef<[f64]>>(&self, x_stars: &[P]) -> Result<JointPrediction> {
        for x in x_stars {
            self.check_point(x.as_ref())?;
        }
        let k = x_stars.len();
        let n = self.training.len();
        let mut cross = DMatrix::zeros(n, k);
        let mut mean = DVector::zeros(k);
        for (j, x) in x_stars.iter().enumerate() {
            let c = self.cross_covariance(x.as_ref());
            mean[j] = self.mean_from_cross(x.as_ref(), &c);
            cross.set_column(j, &c);
        }
        let whitened = self.chol.solve_lower_matrix(&cross)?;
        let prior = DMatrix::from_fn(k, k, |i, j| {
            self.kernel
                .eval_unchecked(x_stars[i].as_ref(), x_stars[j].as_ref())
        });
        let mut covariance = prior - whitened.transpose() * &whitened;
        symmetrize(&mut covariance);
        for i in 0..k {
            covariance[(i, i)] = self.clamp_variance(covariance[(i, i)])?;
        }
        Ok(JointPrediction { mean, covariance })
    }

    /// `log p(y | X) = −½ (y − μ₀)ᵀ δ − Σ log L_ii − (n/2) log 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.training.len() as f64;
        -0.5 * self.residuals.dot(&self.delta) - 0.5 * self.chol.log_det() - 0.5 * n * LN_2PI
    }
}
