//! Logarithm of the modified Bessel function of the second kind, `ln K_ν(x)`.
//!
//! Orders below [`LARGE_ORDER`] use Temme's series (x ≤ 2) or Steed's
//! continued fraction (x > 2) at the fractional order `μ = ν − round(ν)`,
//! followed by forward recurrence, which is stable for `K`. Larger orders
//! use the uniform (Debye) asymptotic expansion. Everything is carried in
//! log space since `K_ν(x)` overflows quickly for large ν and small x.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const TEMME_MAX_X: f64 = 2.0;
pub(crate) const LARGE_ORDER: f64 = 50.0;

/// Odd Taylor coefficients (z¹, z³, …, z¹³) of `1/Γ(1 + z)`.
const RECIP_GAMMA_ODD: [f64; 7] = [
    EULER_GAMMA,
    -0.042_002_635_034_095_2,
    -0.042_197_734_555_544_3,
    0.007_218_943_246_663_0,
    -0.000_215_241_674_114_9,
    -0.000_020_134_854_780_7,
    0.000_001_133_027_232_0,
];

/// `(1/Γ(1−μ) − 1/Γ(1+μ)) / (2μ)` for |μ| ≤ 1/2.
fn temme_gam1(mu: f64) -> f64 {
    if mu.abs() < 0.1 {
        let mu2 = mu * mu;
        let mut pow = 1.0;
        let mut acc = 0.0;
        for c in RECIP_GAMMA_ODD {
            acc += c * pow;
            pow *= mu2;
        }
        -acc
    } else {
        (1.0 / gamma(1.0 - mu) - 1.0 / gamma(1.0 + mu)) / (2.0 * mu)
    }
}

/// `ln K_ν(x)` for `x > 0`. `K_{−ν} = K_ν`, so the sign of ν is ignored.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_bessel_k needs x > 0, got {x}");
    let nu = nu.abs();
    if nu >= LARGE_ORDER {
        ln_bessel_k_uniform(nu, x)
    } else {
        ln_bessel_k_recurrence(nu, x)
    }
}

pub(crate) fn ln_bessel_k_recurrence(nu: f64, x: f64) -> f64 {
    let steps = (nu + 0.5).floor() as usize;
    let mu = nu - steps as f64;
    let mu2 = mu * mu;
    let two_over_x = 2.0 / x;

    // (log K_μ, K_{μ+1}/K_μ)
    let (mut log_scale, ratio) = if x <= TEMME_MAX_X {
        let half_x = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -half_x.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let gam1 = temme_gam1(mu);
        let recip_plus = 1.0 / gamma(1.0 + mu);
        let recip_minus = 1.0 / gamma(1.0 - mu);
        let gam2 = 0.5 * (recip_minus + recip_plus);

        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let exp_e = e.exp();
        let mut p = 0.5 * exp_e / recip_plus;
        let mut q = 0.5 / (exp_e * recip_minus);
        let mut c = 1.0;
        let quarter_x2 = half_x * half_x;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= quarter_x2 / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln(), sum1 * two_over_x / sum)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        let h = a1 * h;
        let log_k = 0.5 * (PI / (2.0 * x)).ln() - x - s.ln();
        (log_k, (mu + x + 0.5 - h) / x)
    };

    let mut k_mu = 1.0;
    let mut k_next = ratio;
    for i in 1..=steps {
        let k_new = (mu + i as f64) * two_over_x * k_next + k_mu;
        k_mu = k_next;
        k_next = k_new;
        if k_next > 1e200 {
            log_scale += k_mu.ln();
            k_next /= k_mu;
            k_mu = 1.0;
        }
    }
    log_scale + k_mu.ln()
}

/// Uniform asymptotic expansion of `K_ν(νz)` in powers of 1/ν.
pub(crate) fn ln_bessel_k_uniform(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let t2 = t * t;
    let u1 = t * (3.0 - 5.0 * t2) / 24.0;
    let u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2 * t2) / 1152.0;
    let u3 = t * t2
        * (30375.0 - 369_603.0 * t2 + 765_765.0 * t2 * t2 - 425_425.0 * t2 * t2 * t2)
        / 414_720.0;
    let t4 = t2 * t2;
    let u4 = t4
        * (4_465_125.0 - 94_121_676.0 * t2 + 349_922_430.0 * t4
            - 446_185_740.0 * t4 * t2
            + 185_910_725.0 * t4 * t4)
        / 39_813_120.0;
    let inv = 1.0 / nu;
    let series = 1.0 - u1 * inv + u2 * inv * inv - u3 * inv.powi(3) + u4 * inv.powi(4);
    0.5 * (PI / (2.0 * nu)).ln() - nu * eta - 0.5 * root.ln() + series.ln()
}
