//! Multivariate normal conditioning and the dense linear algebra behind it.
//!
//! Everything here works on small dense matrices (a few hundred rows at
//! most). Conditioning is always done by factor-and-solve; the explicit
//! block inverse is kept only so tests can check conditioning against it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter levels tried in turn when a pivot is non-positive.
const JITTER_LEVELS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Diagonal shift that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `log |L Lᵀ| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `L x = rhs`.
    pub fn solve_lower(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        solve_triangular(self, rhs, false)
    }

    /// Solves `(L Lᵀ) x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let half = solve_triangular(self, rhs, false)?;
        solve_triangular(self, &half, true)
    }

    /// Solves `L X = rhs` column by column.
    pub fn solve_lower_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), rhs.nrows())?;
        let mut out = rhs.clone();
        for mut col in out.column_iter_mut() {
            forward_substitute(&self.lower, col.as_mut_slice());
        }
        Ok(out)
    }

    /// Solves `(L Lᵀ) X = rhs` column by column.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = self.solve_lower_matrix(rhs)?;
        for mut col in out.column_iter_mut() {
            backward_substitute_transposed(&self.lower, col.as_mut_slice());
        }
        Ok(out)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Plain Cholesky–Banachiewicz. Returns the first failing pivot on error.
fn factor_once(matrix: &DMatrix<f64>, shift: f64) -> std::result::Result<DMatrix<f64>, usize> {
    let n = matrix.nrows();
    let mut lower = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = matrix[(i, j)];
            if i == j {
                sum += shift;
            }
            for k in 0..j {
                sum -= lower[(i, k)] * lower[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(i);
                }
                lower[(i, i)] = sum.sqrt();
            } else {
                lower[(i, j)] = sum / lower[(j, j)];
            }
        }
    }
    Ok(lower)
}

/// Cholesky factorization with the escalating diagonal jitter policy.
///
/// A non-positive pivot restarts the factorization with
/// `10⁻¹⁰·mean(diag)` added to the diagonal, escalating by ×10 up to
/// `10⁻⁶·mean(diag)`.
pub fn cholesky(matrix: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = matrix.nrows();
    check_dim(n, matrix.ncols())?;
    if n == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut pivot = match factor_once(matrix, 0.0) {
        Ok(lower) => return Ok(CholeskyFactor { lower, jitter: 0.0 }),
        Err(pivot) => pivot,
    };
    let mean_diag = matrix.diagonal().mean();
    if !(mean_diag > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot });
    }
    for level in JITTER_LEVELS {
        let jitter = level * mean_diag;
        match factor_once(matrix, jitter) {
            Ok(lower) => {
                log::debug!("cholesky needed jitter {jitter:e} (n = {n})");
                return Ok(CholeskyFactor { lower, jitter });
            }
            Err(p) => pivot = p,
        }
    }
    Err(Error::NotPositiveDefinite { pivot })
}

fn forward_substitute(lower: &DMatrix<f64>, x: &mut [f64]) {
    let n = lower.nrows();
    for i in 0..n {
        let mut sum = x[i];
        for k in 0..i {
            sum -= lower[(i, k)] * x[k];
        }
        x[i] = sum / lower[(i, i)];
    }
}

fn backward_substitute_transposed(lower: &DMatrix<f64>, x: &mut [f64]) {
    let n = lower.nrows();
    for i in (0..n).rev() {
        let mut sum = x[i];
        for k in (i + 1)..n {
            sum -= lower[(k, i)] * x[k];
        }
        x[i] = sum / lower[(i, i)];
    }
}

/// Solves `L x = rhs`, or `Lᵀ x = rhs` when `transposed` is set.
pub fn solve_triangular(
    factor: &CholeskyFactor,
    rhs: &DVector<f64>,
    transposed: bool,
) -> Result<DVector<f64>> {
    check_dim(factor.dim(), rhs.len())?;
    let mut x = rhs.clone();
    if transposed {
        backward_substitute_transposed(&factor.lower, x.as_mut_slice());
    } else {
        forward_substitute(&factor.lower, x.as_mut_slice());
    }
    Ok(x)
}

/// A multivariate normal distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnDistribution {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl MvnDistribution {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        check_dim(k, covariance.nrows())?;
        check_dim(k, covariance.ncols())?;
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..k {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidKernel(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mean, covariance })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Conditions `joint` on the components at `observed_indices` taking
/// `observed_values`.
///
/// The result is the distribution of the remaining components, listed in
/// their original (ascending) order.
pub fn condition(
    joint: &MvnDistribution,
    observed_indices: &[usize],
    observed_values: &DVector<f64>,
) -> Result<MvnDistribution> {
    let k = joint.dim();
    check_dim(observed_indices.len(), observed_values.len())?;
    let mut is_observed = vec![false; k];
    for &i in observed_indices {
        if i >= k || is_observed[i] {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: i,
            });
        }
        is_observed[i] = true;
    }
    if observed_indices.is_empty() {
        return Ok(joint.clone());
    }
    let rest: Vec<usize> = (0..k).filter(|&i| !is_observed[i]).collect();
    let obs = observed_indices;

    let sigma11 = DMatrix::from_fn(obs.len(), obs.len(), |i, j| {
        joint.covariance[(obs[i], obs[j])]
    });
    let sigma12 = DMatrix::from_fn(obs.len(), rest.len(), |i, j| {
        joint.covariance[(obs[i], rest[j])]
    });
    let sigma22 = DMatrix::from_fn(rest.len(), rest.len(), |i, j| {
        joint.covariance[(rest[i], rest[j])]
    });
    let innovation = DVector::from_fn(obs.len(), |i, _| {
        observed_values[i] - joint.mean[obs[i]]
    });

    let factor = cholesky(&sigma11)?;
    // Σ21 Σ11⁻¹ (u − μ1) = (L⁻¹Σ12)ᵀ (L⁻¹(u − μ1))
    let whitened_cross = factor.solve_lower_matrix(&sigma12)?;
    let whitened_innovation = factor.solve_lower(&innovation)?;

    let mean = DVector::from_fn(rest.len(), |i, _| {
        joint.mean[rest[i]] + whitened_cross.column(i).dot(&whitened_innovation)
    });
    let mut covariance = sigma22 - whitened_cross.transpose() * &whitened_cross;
    symmetrize(&mut covariance);
    Ok(MvnDistribution { mean, covariance })
}

/// Replaces `m` with `(m + mᵀ)/2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Inverse of the block matrix `[[A, B], [C, D]]` through the two Schur
/// complements `A − B D⁻¹ C` and `D − C A⁻¹ B`.
pub fn block_inverse(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let q = d.nrows();
    check_dim(p, a.ncols())?;
    check_dim(q, d.ncols())?;
    check_dim(p, b.nrows())?;
    check_dim(q, b.ncols())?;
    check_dim(q, c.nrows())?;
    check_dim(p, c.ncols())?;

    let a_inv = a.clone().try_inverse().ok_or(Error::SingularBlock)?;
    let d_inv = d.clone().try_inverse().ok_or(Error::SingularBlock)?;
    let schur_a = (a - b * &d_inv * c)
        .try_inverse()
        .ok_or(Error::SingularBlock)?;
    let schur_d = (d - c * &a_inv * b)
        .try_inverse()
        .ok_or(Error::SingularBlock)?;

    let mut out = DMatrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(&schur_a);
    out.view_mut((0, p), (p, q))
        .copy_from(&(-(&schur_a * b * &d_inv)));
    out.view_mut((p, 0), (q, p))
        .copy_from(&(-(&schur_d * c * &a_inv)));
    out.view_mut((p, p), (q, q)).copy_from(&schur_d);
    Ok(out)
}
