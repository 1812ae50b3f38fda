//! Value-of-information acquisition functions and their maximization.
//!
//! * Expected improvement `E[(f(x) − f*ₙ)⁺]` in closed form, valid for
//!   noise-free posteriors.
//! * Knowledge gradient `E[μ*ₙ₊₁ − μ*ₙ | xₙ₊₁ = x]`, reduced to
//!   `h(a, b) = E[maxᵢ(aᵢ + bᵢZ)] − maxᵢ aᵢ` over the candidate set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpPosterior;
use crate::optim::projected_gradient_ascent;
use crate::sequence::ShiftedHalton;
use crate::special::{norm_cdf, norm_pdf, normal_loss};

/// Largest candidate set accepted for full-set knowledge gradient.
pub const MAX_CANDIDATES: usize = 10_000;
pub const PROBE_POINTS: u64 = 1024;
pub const ASCENT_STARTS: usize = 32;
pub const ASCENT_MAX_ITER: usize = 200;
const SIGMA_FLOOR: f64 = 1e-12;

/// Closed-form expected improvement of `Normal(mu_n, sigma_n²)` over `f_star`.
pub fn expected_improvement(mu_n: f64, sigma_n: f64, f_star: f64) -> f64 {
    let delta = mu_n - f_star;
    if sigma_n < SIGMA_FLOOR {
        return delta.max(0.0);
    }
    let z = delta / sigma_n;
    (delta * norm_cdf(z) + sigma_n * norm_pdf(z)).max(0.0)
}

fn best_observed(post: &GpPosterior) -> f64 {
    post.training()
        .ys()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// EI at `x` with `f*ₙ` the best observed response. Refuses noisy posteriors.
pub fn ei_over_posterior(post: &GpPosterior, x: &[f64]) -> Result<f64> {
    if post.noise_variance() > 0.0 {
        return Err(Error::NoisyPosterior(post.noise_variance()));
    }
    ei_plugin(post, x)
}

/// EI with the best observed response plugged in for `f*ₙ`, whatever the
/// noise level.
pub fn ei_plugin(post: &GpPosterior, x: &[f64]) -> Result<f64> {
    let (mu, var) = post.predict(x)?;
    Ok(expected_improvement(mu, var.sqrt(), best_observed(post)))
}

/// Lines `aᵢ + bᵢ z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEnsemble {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl LinearEnsemble {
    pub fn new(intercepts: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if intercepts.len() != slopes.len() {
            return Err(Error::DimensionMismatch {
                expected: intercepts.len(),
                found: slopes.len(),
            });
        }
        if intercepts.iter().chain(&slopes).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite line coefficient".into()));
        }
        Ok(Self { intercepts, slopes })
    }
}

/// `h(a, b) = E[maxᵢ(aᵢ + bᵢZ)] − maxᵢ aᵢ` for standard normal Z.
///
/// Lines are sorted by slope; among equal slopes only the largest intercept
/// matters. The upper envelope is then built by a hull scan, and with
/// breakpoints `cᵢ` between consecutive envelope lines
/// `h = Σ (bᵢ₊₁ − bᵢ) f(−|cᵢ|)`, `f(z) = φ(z) + zΦ(z)`.
pub fn expected_max_linear(ensemble: &LinearEnsemble) -> f64 {
    expected_max_linear_raw(&ensemble.intercepts, &ensemble.slopes)
}

pub(crate) fn expected_max_linear_raw(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    if k <= 1 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| b[i].total_cmp(&b[j]).then(a[j].total_cmp(&a[i])));

    // (line index, breakpoint where it starts to dominate)
    let mut hull: Vec<(usize, f64)> = Vec::with_capacity(k);
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && b[order[pos - 1]] == b[i] {
            continue;
        }
        loop {
            let Some(&(j, start)) = hull.last() else {
                hull.push((i, f64::NEG_INFINITY));
                break;
            };
            let c = (a[j] - a[i]) / (b[i] - b[j]);
            if c <= start {
                hull.pop();
            } else {
                hull.push((i, c));
                break;
            }
        }
    }
    hull.windows(2)
        .map(|w| {
            let (lo, _) = w[0];
            let (hi, c) = w[1];
            (b[hi] - b[lo]) * normal_loss(-c.abs())
        })
        .sum::<f64>()
        .max(0.0)
}

/// `σ̃(x, xₙ₊₁) = Σₙ(x, xₙ₊₁) / √(Σₙ(xₙ₊₁, xₙ₊₁) + λ²)`, the standard
/// deviation of the one-step change in `μₙ(x)` from sampling `xₙ₊₁`.
pub fn sigma_tilde(post: &GpPosterior, x: &[f64], x_next: &[f64]) -> Result<f64> {
    let joint = post.predict_joint(&[x, x_next])?;
    let scale = joint.covariance[(1, 1)] + post.noise_variance();
    if scale <= 0.0 {
        return Ok(0.0);
    }
    Ok(joint.covariance[(0, 1)] / scale.sqrt())
}

/// Posterior means and whitened cross-covariances of a fixed point set.
#[derive(Debug, Clone)]
struct CandidateCache {
    points: Vec<Vec<f64>>,
    means: Vec<f64>,
    whitened: DMatrix<f64>,
}

impl CandidateCache {
    fn new(post: &GpPosterior, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = post.training().len();
        let mut cross = DMatrix::zeros(n, points.len());
        let mut means = Vec::with_capacity(points.len());
        for (j, p) in points.iter().enumerate() {
            if p.len() != post.dim() {
                return Err(Error::DimensionMismatch {
                    expected: post.dim(),
                    found: p.len(),
                });
            }
            let c = post.cross_covariance(p);
            means.push(post.mean_from_cross(p, &c));
            cross.set_column(j, &c);
        }
        let whitened = post.cholesky().solve_lower_matrix(&cross)?;
        Ok(Self {
            points,
            means,
            whitened,
        })
    }

    fn max_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σₙ(p_j, x)` for every cached point.
    fn posterior_cov_with(&self, post: &GpPosterior, x: &[f64], vx: &DVector<f64>) -> Vec<f64> {
        self.points
            .iter()
            .enumerate()
            .map(|(j, p)| post.kernel().eval_unchecked(p, x) - self.whitened.column(j).dot(vx))
            .collect()
    }
}

/// Mean and predictive quantities of the proposed sample point.
struct ProposalStats {
    mean: f64,
    variance: f64,
    whitened: DVector<f64>,
}

fn proposal_stats(post: &GpPosterior, x: &[f64]) -> Result<ProposalStats> {
    if x.len() != post.dim() {
        return Err(Error::DimensionMismatch {
            expected: post.dim(),
            found: x.len(),
        });
    }
    let cross = post.cross_covariance(x);
    let mean = post.mean_from_cross(x, &cross);
    let whitened = post.whitened(&cross);
    let variance = post.clamp_variance(post.kernel().amplitude - whitened.dot(&whitened))?;
    Ok(ProposalStats {
        mean,
        variance,
        whitened,
    })
}

/// KG factor from cached candidate sets. `extra_next` / `extra_now` add the
/// proposal itself to `A_{n+1}` / `A_n`.
fn kg_from_caches(
    post: &GpPosterior,
    x: &[f64],
    a_now: &CandidateCache,
    a_next: &CandidateCache,
    extra_now: bool,
    extra_next: bool,
) -> Result<f64> {
    let stats = proposal_stats(post, x)?;
    let scale = stats.variance + post.noise_variance();
    let inv_sd = if scale > 0.0 { 1.0 / scale.sqrt() } else { 0.0 };

    let mut intercepts = a_next.means.clone();
    let mut slopes: Vec<f64> = a_next
        .posterior_cov_with(post, x, &stats.whitened)
        .into_iter()
        .map(|c| c * inv_sd)
        .collect();
    if extra_next {
        intercepts.push(stats.mean);
        slopes.push(stats.variance * inv_sd);
    }
    let mut mu_star = a_now.max_mean();
    if extra_now {
        mu_star = mu_star.max(stats.mean);
    }
    if !mu_star.is_finite() {
        return Err(Error::EmptyCandidateSet);
    }
    let max_next = intercepts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(expected_max_linear_raw(&intercepts, &slopes) + (max_next - mu_star))
}

/// KG factor of sampling `x_next`, for explicit candidate sets `A_n` and
/// `A_{n+1}` (the latter fixed given `x_next`).
pub fn knowledge_gradient(
    post: &GpPosterior,
    x_next: &[f64],
    a_n: &[Vec<f64>],
    a_next: &[Vec<f64>],
) -> Result<f64> {
    if a_n.is_empty() || a_next.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let now = CandidateCache::new(post, a_n.to_vec())?;
    let next = CandidateCache::new(post, a_next.to_vec())?;
    kg_from_caches(post, x_next, &now, &next, false, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Ei,
    Kg,
    Akg,
}

impl Policy {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Ei => "ei",
            Policy::Kg => "kg",
            Policy::Akg => "akg",
        }
    }
}

/// Defines `A_n` and `A_{n+1}` for the KG policy.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateStrategy {
    /// `A_n = A_{n+1}` = the given points.
    FullGrid(Vec<Vec<f64>>),
    /// `A_n` = sampled points, `A_{n+1}` = sampled points plus the proposal.
    SampledHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub policy: Policy,
    pub candidates: CandidateStrategy,
    /// Allow EI on noisy posteriors by plugging in the best observed value.
    pub ei_plugin_fstar: bool,
}

impl Acquisition {
    pub fn ei() -> Self {
        Self {
            policy: Policy::Ei,
            candidates: CandidateStrategy::SampledHistory,
            ei_plugin_fstar: false,
        }
    }

    pub fn kg(candidates: CandidateStrategy) -> Self {
        Self {
            policy: Policy::Kg,
            candidates,
            ei_plugin_fstar: false,
        }
    }

    pub fn akg() -> Self {
        Self {
            policy: Policy::Akg,
            candidates: CandidateStrategy::SampledHistory,
            ei_plugin_fstar: false,
        }
    }
}

enum EvalKind {
    Ei { f_star: f64 },
    Kg {
        now: CandidateCache,
        next: Option<CandidateCache>,
        extra_now: bool,
        extra_next: bool,
    },
}

/// An acquisition function bound to one posterior, with the per-posterior
/// work done up front.
pub struct AcquisitionEvaluator<'a> {
    post: &'a GpPosterior,
    kind: EvalKind,
}

impl<'a> AcquisitionEvaluator<'a> {
    pub fn new(post: &'a GpPosterior, acquisition: &Acquisition) -> Result<Self> {
        let history = || CandidateCache::new(post, post.training().xs().to_vec());
        let kind = match (&acquisition.policy, &acquisition.candidates) {
            (Policy::Ei, _) => {
                if post.noise_variance() > 0.0 && !acquisition.ei_plugin_fstar {
                    return Err(Error::NoisyPosterior(post.noise_variance()));
                }
                EvalKind::Ei {
                    f_star: best_observed(post),
                }
            }
            (Policy::Kg, CandidateStrategy::FullGrid(points)) => {
                if points.is_empty() {
                    return Err(Error::EmptyCandidateSet);
                }
                if points.len() > MAX_CANDIDATES {
                    return Err(Error::CandidateSetTooLarge(points.len()));
                }
                EvalKind::Kg {
                    now: CandidateCache::new(post, points.clone())?,
                    next: None,
                    extra_now: false,
                    extra_next: false,
                }
            }
            (Policy::Kg, CandidateStrategy::SampledHistory) => EvalKind::Kg {
                now: history()?,
                next: None,
                extra_now: false,
                extra_next: true,
            },
            (Policy::Akg, _) => EvalKind::Kg {
                now: history()?,
                next: None,
                extra_now: true,
                extra_next: true,
            },
        };
        Ok(Self { post, kind })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match &self.kind {
            EvalKind::Ei { f_star } => {
                let (mu, var) = self.post.predict(x)?;
                Ok(expected_improvement(mu, var.sqrt(), *f_star))
            }
            EvalKind::Kg {
                now,
                next,
                extra_now,
                extra_next,
            } => kg_from_caches(
                self.post,
                x,
                now,
                next.as_ref().unwrap_or(now),
                *extra_now,
                *extra_next,
            ),
        }
    }
}

/// Search domain for the next sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Finite { points: Vec<Vec<f64>> },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lo, .. } => lo.len(),
            Domain::Finite { points } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidConfig("box bounds must be nonempty and equal length".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::InvalidConfig("box requires lo < hi in every dimension".into()));
                }
            }
            Domain::Finite { points } => {
                let d = self.dim();
                if points.is_empty() || d == 0 {
                    return Err(Error::InvalidConfig("finite domain is empty".into()));
                }
                if points.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
                    return Err(Error::InvalidConfig("finite domain points must share one dimension".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Box { lo, hi } => {
                x.len() == lo.len()
                    && x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
            }
            Domain::Finite { points } => points.iter().any(|p| p.as_slice() == x),
        }
    }

    /// Tensor grid with `⌊cap^{1/d}⌋` points per dimension (box), or the
    /// points themselves (finite).
    pub fn candidate_grid(&self, cap: usize) -> Vec<Vec<f64>> {
        match self {
            Domain::Finite { points } => points.clone(),
            Domain::Box { lo, hi } => {
                let d = lo.len();
                let mut per_dim = (cap as f64).powf(1.0 / d as f64).floor() as usize;
                while per_dim.pow(d as u32) > cap {
                    per_dim -= 1;
                }
                while (per_dim + 1).checked_pow(d as u32).is_some_and(|c| c <= cap) {
                    per_dim += 1;
                }
                let per_dim = per_dim.max(2);
                let axis = |i: usize, k: usize| lo[i] + (hi[i] - lo[i]) * k as f64 / (per_dim - 1) as f64;
                let total = per_dim.pow(d as u32);
                (0..total)
                    .map(|mut idx| {
                        (0..d)
                            .map(|i| {
                                let k = idx % per_dim;
                                idx /= per_dim;
                                axis(i, k)
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

fn score(v: Result<f64>) -> f64 {
    match v {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// Maximizes the acquisition over `domain`.
///
/// Finite domains are enumerated (lowest index wins ties). Box domains are
/// probed at 1024 shifted-Halton points drawn with `seed`; the 32 best
/// probes start projected gradient ascents and the best end point wins,
/// ties going to the better-ranked start.
pub fn maximize_acquisition(
    post: &GpPosterior,
    acquisition: &Acquisition,
    domain: &Domain,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    domain.validate()?;
    if domain.dim() != post.dim() {
        return Err(Error::DimensionMismatch {
            expected: post.dim(),
            found: domain.dim(),
        });
    }
    let evaluator = AcquisitionEvaluator::new(post, acquisition)?;
    let argmax = |values: &[f64]| -> usize {
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = i;
            }
        }
        best
    };
    match domain {
        Domain::Finite { points } => {
            let values: Vec<f64> = points.par_iter().map(|p| score(evaluator.eval(p))).collect();
            let best = argmax(&values);
            Ok((points[best].clone(), values[best]))
        }
        Domain::Box { lo, hi } => {
            let halton = ShiftedHalton::new(lo.len(), seed);
            let probes: Vec<Vec<f64>> = (0..PROBE_POINTS).map(|i| halton.box_point(i, lo, hi)).collect();
            let values: Vec<f64> = probes.par_iter().map(|p| score(evaluator.eval(p))).collect();
            let mut ranked: Vec<usize> = (0..probes.len()).collect();
            ranked.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
            ranked.truncate(ASCENT_STARTS);

            let objective = |x: &[f64]| score(evaluator.eval(x));
            let ends: Vec<(Vec<f64>, f64)> = ranked
                .par_iter()
                .map(|&i| {
                    let run = projected_gradient_ascent(&objective, &probes[i], lo, hi, ASCENT_MAX_ITER);
                    if run.value >= values[i] {
                        (run.x, run.value)
                    } else {
                        (probes[i].clone(), values[i])
                    }
                })
                .collect();
            let best = argmax(&ends.iter().map(|e| e.1).collect::<Vec<_>>());
            Ok(ends[best].clone())
        }
    }
}
