//! Standard normal density and distribution function.

use libm::erfc;

pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density φ(z).
pub fn norm_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function Φ(z).
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `f(z) = φ(z) + zΦ(z)`, i.e. `E[(Z + z)⁺]` for standard normal Z.
pub fn normal_loss(z: f64) -> f64 {
    (norm_pdf(z) + z * norm_cdf(z)).max(0.0)
}
