//! Box-constrained local ascent with finite-difference gradients.
//!
//! Objectives may return `NaN` or `-inf` where they are undefined (for
//! example a failed factorization); such points are never accepted.

/// Result of one local ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// `(iterate, objective)` after every accepted step, starting point first.
    pub trace: Vec<(Vec<f64>, f64)>,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Central differences with step `h_rel · max(1, |x_i|)`.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h_rel: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = h_rel * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            let g = (up - down) / (2.0 * h);
            if g.is_finite() {
                g
            } else {
                0.0
            }
        })
        .collect()
}

/// Zeroes gradient components that push against an active bound.
fn project_gradient(g: &mut [f64], x: &[f64], lo: &[f64], hi: &[f64]) {
    for i in 0..g.len() {
        if (x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0) {
            g[i] = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub value_tol: f64,
    pub max_step: f64,
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-8,
            value_tol: 1e-12,
            max_step: 2.0,
            fd_step: 1e-6,
        }
    }
}

/// Projected quasi-Newton (BFGS) ascent inside `[lo, hi]`.
pub fn bfgs_ascent<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BfgsOptions,
) -> Ascent {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let mut fx = score(f(&x));
    let mut trace = vec![(x.clone(), fx)];
    if !fx.is_finite() {
        return Ascent {
            x,
            value: fx,
            iterations: 0,
            trace,
        };
    }
    // inverse Hessian approximation of −f
    let identity = |n: usize| {
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    };
    let mut h_inv = identity(n);
    let mut g = central_gradient(f, &x, opts.fd_step);
    project_gradient(&mut g, &x, lo, hi);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= opts.grad_tol {
            break;
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| h_inv[i][j] * g[j]).sum())
            .collect();
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope > 0.0) {
            h_inv = identity(n);
            dir = g.clone();
        }
        let dnorm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut t = if dnorm > opts.max_step {
            opts.max_step / dnorm
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            clamp_into(&mut cand, lo, hi);
            let fc = score(f(&cand));
            let gain: f64 = cand
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((c, a), gi)| (c - a) * gi)
                .sum();
            if fc.is_finite() && fc >= fx + 1e-4 * gain.max(0.0) && fc >= fx {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let mut g_new = central_gradient(f, &x_new, opts.fd_step);
        project_gradient(&mut g_new, &x_new, lo, hi);

        // BFGS update for minimizing −f: y = −(g_new − g)
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h_inv[i][j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }

        let improvement = f_new - fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push((x.clone(), fx));
        if improvement <= opts.value_tol * fx.abs().max(1.0) {
            break;
        }
    }
    Ascent {
        x,
        value: fx,
        iterations,
        trace,
    }
}

/// Projected gradient ascent with step halving, in coordinates scaled to
/// the box widths.
pub fn projected_gradient_ascent<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
) -> Ascent {
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(f64::MIN_POSITIVE)).collect();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let mut fx = score(f(&x));
    let mut trace = vec![(x.clone(), fx)];
    let mut step = 0.05;
    let mut iterations = 0;
    let fd = |x: &[f64]| -> Vec<f64> {
        // unit-box coordinates, so the step is relative to the box
        let to_unit = |u: &[f64]| -> Vec<f64> {
            u.iter().zip(lo).zip(&width).map(|((v, l), w)| l + v * w).collect()
        };
        let unit: Vec<f64> = x.iter().zip(lo).zip(&width).map(|((v, l), w)| (v - l) / w).collect();
        central_gradient(&|u: &[f64]| f(&to_unit(u)), &unit, 1e-7)
    };
    while iterations < max_iter && fx.is_finite() {
        iterations += 1;
        let mut g = fd(&x);
        project_gradient(&mut g, &x, lo, hi);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gnorm > 0.0) {
            break;
        }
        let mut moved = false;
        while step > 1e-12 {
            let mut cand: Vec<f64> = x
                .iter()
                .zip(&g)
                .zip(&width)
                .map(|((v, gi), w)| v + step * gi / gnorm * w)
                .collect();
            clamp_into(&mut cand, lo, hi);
            let fc = score(f(&cand));
            if fc > fx {
                x = cand;
                fx = fc;
                trace.push((x.clone(), fx));
                step *= 2.0;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ascent {
        x,
        value: fx,
        iterations,
        trace,
    }
}
