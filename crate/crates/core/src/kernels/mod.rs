//! Covariance kernels and prior mean functions.
//!
//! The two kernel families parameterize their per-dimension `betas`
//! differently:
//!
//! * squared exponential: `α exp(−Σ βᵢ (xᵢ − x'ᵢ)²)`, with `βᵢ` an inverse
//!   squared length scale;
//! * Matérn: `α 2^{1−ν}/Γ(ν) (√(2ν) r)^ν K_ν(√(2ν) r)` with
//!   `r = √Σ((xᵢ − x'ᵢ)/βᵢ)²`, i.e. `βᵢ` is a length scale.
//!
//! No conversion between the two is applied.

mod bessel;

pub use bessel::ln_bessel_k;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    SquaredExponential,
    Matern { nu: f64 },
}

impl KernelFamily {
    pub fn matern(nu: f64) -> Self {
        KernelFamily::Matern { nu }
    }

    pub fn label(&self) -> String {
        match self {
            KernelFamily::SquaredExponential => "squared_exponential".into(),
            KernelFamily::Matern { nu } => format!("matern({nu})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Prior variance α of f.
    pub amplitude: f64,
    pub betas: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, amplitude: f64, betas: Vec<f64>) -> Result<Self> {
        let spec = Self {
            family,
            amplitude,
            betas,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(amplitude: f64, betas: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, amplitude, betas)
    }

    pub fn matern(amplitude: f64, length_scales: Vec<f64>, nu: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern { nu }, amplitude, length_scales)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if self.betas.is_empty() {
            return Err(Error::InvalidKernel("no dimensions".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidKernel(format!("beta must be positive, got {b}")));
        }
        if let KernelFamily::Matern { nu } = self.family {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::InvalidKernel(format!("nu must be positive, got {nu}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.betas.len()
    }

    /// Kernel divided by the amplitude; 1 at zero distance.
    pub(crate) fn correlation_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                let s: f64 = x
                    .iter()
                    .zip(x2)
                    .zip(&self.betas)
                    .map(|((a, b), beta)| beta * (a - b) * (a - b))
                    .sum();
                (-s).exp()
            }
            KernelFamily::Matern { nu } => {
                let r2: f64 = x
                    .iter()
                    .zip(x2)
                    .zip(&self.betas)
                    .map(|((a, b), ell)| {
                        let t = (a - b) / ell;
                        t * t
                    })
                    .sum();
                matern_correlation(nu, r2.sqrt())
            }
        }
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        self.amplitude * self.correlation_unchecked(x, x2)
    }
}

fn check_point(spec: &KernelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Prior covariance `Σ₀(x, x2)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_point(spec, x)?;
    check_point(spec, x2)?;
    Ok(spec.eval_unchecked(x, x2))
}

/// Matrix with entries `Σ₀(xs[i], xs2[j])`.
pub fn kernel_matrix<P: AsRef<[f64]>>(spec: &KernelSpec, xs: &[P], xs2: &[P]) -> Result<DMatrix<f64>> {
    for p in xs.iter().chain(xs2) {
        check_point(spec, p.as_ref())?;
    }
    Ok(DMatrix::from_fn(xs.len(), xs2.len(), |i, j| {
        spec.eval_unchecked(xs[i].as_ref(), xs2[j].as_ref())
    }))
}

/// Symmetric Gram matrix of one point set.
pub fn gram_matrix<P: AsRef<[f64]>>(spec: &KernelSpec, xs: &[P]) -> Result<DMatrix<f64>> {
    for p in xs {
        check_point(spec, p.as_ref())?;
    }
    let n = xs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = spec.amplitude;
        for j in 0..i {
            let v = spec.eval_unchecked(xs[i].as_ref(), xs[j].as_ref());
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Matérn kernel at scaled distance `r`, using `spec.amplitude` and ν.
/// A squared-exponential spec is evaluated as its `ν → ∞` limit.
pub fn matern_eval(spec: &KernelSpec, r: f64) -> f64 {
    match spec.family {
        KernelFamily::Matern { nu } => spec.amplitude * matern_correlation(nu, r),
        KernelFamily::SquaredExponential => spec.amplitude * (-0.5 * r * r).exp(),
    }
}

/// `2^{1−ν}/Γ(ν) (√(2ν) r)^ν K_ν(√(2ν) r)`, equal to 1 at r = 0.
pub fn matern_correlation(nu: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return (-r).exp();
    }
    if nu == 1.5 {
        let s = 3f64.sqrt() * r;
        return (1.0 + s) * (-s).exp();
    }
    if nu == 2.5 {
        let s = 5f64.sqrt() * r;
        return (1.0 + s + s * s / 3.0) * (-s).exp();
    }
    let z = (2.0 * nu).sqrt() * r;
    let log_value = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln()
        + ln_bessel_k(nu, z);
    log_value.exp().min(1.0)
}

/// Monomial `Π x_i^{e_i}` used as a trend basis function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial {
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(e, v)| v.powi(*e as i32))
            .product()
    }
}

/// All monomials up to `order`: linear terms, then squares, then
/// cross products `x_i x_j` (i < j) in lexicographic order.
pub fn polynomial_basis(d: usize, order: usize) -> Result<Vec<Monomial>> {
    if !(1..=2).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let unit = |i: usize, e: u32| {
        let mut exponents = vec![0; d];
        exponents[i] = e;
        Monomial { exponents }
    };
    let mut basis: Vec<Monomial> = (0..d).map(|i| unit(i, 1)).collect();
    if order == 2 {
        basis.extend((0..d).map(|i| unit(i, 2)));
        for i in 0..d {
            for j in (i + 1)..d {
                let mut exponents = vec![0; d];
                exponents[i] = 1;
                exponents[j] = 1;
                basis.push(Monomial { exponents });
            }
        }
    }
    Ok(basis)
}

/// Prior mean `μ + Σ γ_j Ψ_j(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanSpec {
    pub constant: f64,
    #[serde(default)]
    pub basis: Vec<Monomial>,
    #[serde(default)]
    pub coefficients: Vec<f64>,
}

impl MeanSpec {
    pub fn constant(mu: f64) -> Self {
        Self {
            constant: mu,
            basis: Vec::new(),
            coefficients: Vec::new(),
        }
    }

    pub fn with_trend(mu: f64, basis: Vec<Monomial>, coefficients: Vec<f64>) -> Result<Self> {
        if basis.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: coefficients.len(),
            });
        }
        Ok(Self {
            constant: mu,
            basis,
            coefficients,
        })
    }

    /// Input dimension required by the basis, if any.
    pub fn dim(&self) -> Option<usize> {
        self.basis.first().map(|m| m.exponents.len())
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .basis
                .iter()
                .zip(&self.coefficients)
                .map(|(psi, gamma)| gamma * psi.eval(x))
                .sum::<f64>()
    }
}

pub fn mean_eval(spec: &MeanSpec, x: &[f64]) -> Result<f64> {
    if spec.basis.len() != spec.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.basis.len(),
            found: spec.coefficients.len(),
        });
    }
    if let Some(d) = spec.dim() {
        if d != x.len() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
    }
    Ok(spec.eval_unchecked(x))
}
