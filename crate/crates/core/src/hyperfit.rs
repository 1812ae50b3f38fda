//! Empirical-Bayes hyperparameter estimation.
//!
//! With `σ² = α + λ²` and `g = α/σ²` the noisy Gram matrix factors as
//! `σ² R`, where `R` has unit diagonal and off-diagonal entries
//! `g · corr(xᵢ, xⱼ)`. The constant mean and `σ²` then have closed-form
//! maximizers (`μ̂`, `σ̂²`), leaving the reduced objective
//!
//! ```text
//! −log( (1/n) |R|^{1/n} (y − μ̂)ᵀ R⁻¹ (y − μ̂) )
//! ```
//!
//! to be maximized numerically over the correlation parameters and `g`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec, MeanSpec, Monomial};
use crate::mvn::{cholesky, CholeskyFactor};
use crate::optim::{bfgs_ascent, BfgsOptions};
use crate::sequence::ShiftedHalton;

pub const LOG_BETA_BOUNDS: (f64, f64) = (-10.0, 10.0);
pub const LOGIT_G_BOUNDS: (f64, f64) = (-12.0, 12.0);
const TREND_BOUND: f64 = 1e6;
/// `g` used when noise is excluded from the model.
pub const NOISE_FREE_G: f64 = 1.0 - 1e-9;
const MIN_SIGMA2: f64 = 1e-300;

/// Unit-diagonal correlation-form matrix `R`.
pub fn correlation_matrix<P: AsRef<[f64]>>(
    family: KernelFamily,
    betas: &[f64],
    g: f64,
    xs: &[P],
) -> Result<DMatrix<f64>> {
    let corr = KernelSpec::new(family, 1.0, betas.to_vec())?;
    let n = xs.len();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        let xi = xs[i].as_ref();
        if xi.len() != betas.len() {
            return Err(Error::DimensionMismatch {
                expected: betas.len(),
                found: xi.len(),
            });
        }
        for j in 0..i {
            let v = g * corr.correlation_unchecked(xi, xs[j].as_ref());
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

fn profile_mu(factor: &CholeskyFactor, ys: &DVector<f64>) -> Result<f64> {
    let ones = DVector::from_element(ys.len(), 1.0);
    let r_inv_y = factor.solve(ys)?;
    let r_inv_1 = factor.solve(&ones)?;
    Ok(r_inv_y.sum() / r_inv_1.sum())
}

fn profile_sigma2(factor: &CholeskyFactor, ys: &DVector<f64>, mu: f64) -> Result<f64> {
    let resid = ys.map(|y| y - mu);
    let w = factor.solve_lower(&resid)?;
    let s2 = w.dot(&w) / ys.len() as f64;
    if s2 < MIN_SIGMA2 {
        return Err(Error::DegenerateResiduals);
    }
    Ok(s2)
}

/// Maximizer of the marginal likelihood over the constant mean:
/// `Σᵢ (R⁻¹y)ᵢ / Σᵢⱼ R⁻¹ᵢⱼ`.
pub fn mu_hat(r: &DMatrix<f64>, ys: &[f64]) -> Result<f64> {
    let factor = cholesky(r)?;
    profile_mu(&factor, &DVector::from_column_slice(ys))
}

/// Maximizer over σ²: `(1/n) (y − μ)ᵀ R⁻¹ (y − μ)`.
pub fn sigma2_hat(r: &DMatrix<f64>, ys: &[f64], mu: f64) -> Result<f64> {
    let factor = cholesky(r)?;
    profile_sigma2(&factor, &DVector::from_column_slice(ys), mu)
}

/// Profiled quantities at one `(betas, g)`.
#[derive(Debug, Clone)]
pub struct ProfiledState {
    pub g: f64,
    pub betas: Vec<f64>,
    pub r: DMatrix<f64>,
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub reduced_lml: f64,
}

/// Profiles out `μ` and `σ²` for the given correlation parameters. Any
/// trend must already be subtracted from `ys`.
pub fn profile<P: AsRef<[f64]>>(
    family: KernelFamily,
    betas: &[f64],
    g: f64,
    xs: &[P],
    ys: &[f64],
) -> Result<ProfiledState> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let r = correlation_matrix(family, betas, g, xs)?;
    let factor = cholesky(&r)?;
    let y = DVector::from_column_slice(ys);
    let mu = profile_mu(&factor, &y)?;
    let s2 = profile_sigma2(&factor, &y, mu)?;
    let n = ys.len() as f64;
    // −log((1/n)|R|^{1/n} (y−μ̂)ᵀR⁻¹(y−μ̂)) = −(log|R|/n + log σ̂²)
    let reduced = -(factor.log_det() / n + s2.ln());
    Ok(ProfiledState {
        g,
        betas: betas.to_vec(),
        r,
        mu_hat: mu,
        sigma2_hat: s2,
        reduced_lml: reduced,
    })
}

/// Reduced (profiled) log marginal likelihood, up to an additive constant.
pub fn reduced_lml<P: AsRef<[f64]>>(
    family: KernelFamily,
    betas: &[f64],
    g: f64,
    xs: &[P],
    ys: &[f64],
) -> Result<f64> {
    Ok(profile(family, betas, g, xs, ys)?.reduced_lml)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of multistart initial points.
    pub starts: usize,
    /// Seed for the start design.
    pub seed: u64,
    /// Pin `g` near 1 so that the fitted model is (numerically) noise free.
    pub noise_free: bool,
    /// Trend basis; coefficients are optimized alongside the kernel.
    pub trend: Vec<Monomial>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0,
            noise_free: false,
            trend: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kernel: KernelSpec,
    pub mean: MeanSpec,
    pub noise_variance: f64,
    pub g: f64,
    pub sigma2: f64,
    pub reduced_lml: f64,
    /// Accepted iterates `(search vector, objective)` of the winning start.
    pub optimizer_trace: Vec<(Vec<f64>, f64)>,
    /// Objective at every multistart initial point, in start order.
    pub start_values: Vec<f64>,
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn logit(g: f64) -> f64 {
    (g / (1.0 - g)).ln()
}

/// Layout of the unconstrained search vector `(log β, [logit g], γ)`.
struct SearchSpace {
    d: usize,
    noise_free: bool,
    j: usize,
}

impl SearchSpace {
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![LOG_BETA_BOUNDS.0; self.d];
        let mut hi = vec![LOG_BETA_BOUNDS.1; self.d];
        if !self.noise_free {
            lo.push(LOGIT_G_BOUNDS.0);
            hi.push(LOGIT_G_BOUNDS.1);
        }
        lo.extend(std::iter::repeat_n(-TREND_BOUND, self.j));
        hi.extend(std::iter::repeat_n(TREND_BOUND, self.j));
        (lo, hi)
    }

    fn decode<'a>(&self, theta: &'a [f64]) -> (Vec<f64>, f64, &'a [f64]) {
        let betas = theta[..self.d].iter().map(|v| v.exp()).collect();
        let (g, rest) = if self.noise_free {
            (NOISE_FREE_G, &theta[self.d..])
        } else {
            (logistic(theta[self.d]), &theta[self.d + 1..])
        };
        (betas, g, rest)
    }
}

fn detrended(ys: &[f64], xs: &[Vec<f64>], basis: &[Monomial], gammas: &[f64]) -> Vec<f64> {
    ys.iter()
        .zip(xs)
        .map(|(y, x)| {
            y - basis
                .iter()
                .zip(gammas)
                .map(|(psi, g)| g * psi.eval(x))
                .sum::<f64>()
        })
        .collect()
}

/// Fits hyperparameters with the default options and `starts` multistart
/// points.
pub fn fit_hyperparameters(
    xs: &[Vec<f64>],
    ys: &[f64],
    family: KernelFamily,
    starts: usize,
) -> Result<FitResult> {
    fit_hyperparameters_with(
        xs,
        ys,
        family,
        &FitOptions {
            starts,
            ..FitOptions::default()
        },
    )
}

pub fn fit_hyperparameters_with(
    xs: &[Vec<f64>],
    ys: &[f64],
    family: KernelFamily,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = ys.len();
    if xs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: n,
        });
    }
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, found: n });
    }
    if opts.starts == 0 {
        return Err(Error::InvalidConfig("at least one optimizer start is required".into()));
    }
    if opts.trend.is_empty() && ys.iter().all(|y| *y == ys[0]) {
        return Err(Error::DegenerateResiduals);
    }
    let d = xs[0].len();
    let space = SearchSpace {
        d,
        noise_free: opts.noise_free,
        j: opts.trend.len(),
    };
    let (lo, hi) = space.bounds();

    let objective = |theta: &[f64]| -> f64 {
        let (betas, g, gammas) = space.decode(theta);
        let target = detrended(ys, xs, &opts.trend, gammas);
        reduced_lml(family, &betas, g, xs, &target).unwrap_or(f64::NEG_INFINITY)
    };

    let halton = ShiftedHalton::new(d + usize::from(!opts.noise_free), opts.seed);
    let start_points: Vec<Vec<f64>> = (0..opts.starts as u64)
        .map(|i| {
            let mut p = halton.box_point(i, &lo[..halton.dim()], &hi[..halton.dim()]);
            p.extend(std::iter::repeat_n(0.0, space.j));
            p
        })
        .collect();

    let bfgs = BfgsOptions {
        max_iter: 150,
        grad_tol: 1e-7,
        value_tol: 1e-13,
        max_step: 3.0,
        fd_step: 1e-6,
    };
    let runs: Vec<_> = start_points
        .par_iter()
        .map(|x0| bfgs_ascent(&objective, x0, &lo, &hi, &bfgs))
        .collect();

    let start_values: Vec<f64> = runs.iter().map(|r| r.trace[0].1).collect();
    let mut best: Option<usize> = None;
    for (i, run) in runs.iter().enumerate() {
        if !run.value.is_finite() {
            continue;
        }
        if best.is_none_or(|b| run.value > runs[b].value) {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        // surface degenerate data rather than a generic failure
        let (betas, g, gammas) = space.decode(&start_points[0]);
        let target = detrended(ys, xs, &opts.trend, gammas);
        profile(family, &betas, g, xs, &target)?;
        return Err(Error::AllStartsFailed);
    };

    let run = &runs[best];
    let (betas, g, gammas) = space.decode(&run.x);
    let target = detrended(ys, xs, &opts.trend, gammas);
    let state = profile(family, &betas, g, xs, &target)?;
    let alpha = g * state.sigma2_hat;
    let noise_variance = (1.0 - g) * state.sigma2_hat;
    let kernel = KernelSpec::new(family, alpha, betas)?;
    let mean = MeanSpec::with_trend(state.mu_hat, opts.trend.clone(), gammas.to_vec())?;
    Ok(FitResult {
        kernel,
        mean,
        noise_variance,
        g,
        sigma2: state.sigma2_hat,
        reduced_lml: state.reduced_lml,
        optimizer_trace: run.trace.clone(),
        start_values,
    })
}
