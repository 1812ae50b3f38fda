//! Leave-one-out credible-interval checks.
//!
//! Each fold holds out every replicate of one design site, predicts the site
//! from the rest, and asks whether `μ₋ᵢ(xᵢ) ± 2√(σ²₋ᵢ(xᵢ) + λ²/m)` covers the
//! held-out mean response. Roughly 95% of intervals should cover for a
//! well-specified model.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpPosterior, TrainingSet};
use crate::hyperfit::{fit_hyperparameters_with, FitOptions};
use crate::kernels::{KernelFamily, KernelSpec, MeanSpec};

/// Interval half-width in posterior standard deviations for LOO checks.
pub const LOO_INTERVAL_FACTOR: f64 = 2.0;
/// Interval half-width in posterior standard deviations for plotted bands.
pub const PREDICTION_INTERVAL_FACTOR: f64 = 1.96;
/// Above this many observations per-fold refitting is off by default.
pub const REFIT_DEFAULT_MAX_N: usize = 100;

pub const CSV_HEADER: &str = "actual,predicted,halfwidth,covered";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRecord {
    /// Held-out response, averaged over replicates.
    pub actual: f64,
    pub predicted_mean: f64,
    pub halfwidth: f64,
    pub covered: bool,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub records: Vec<LooRecord>,
    pub coverage: f64,
    pub refit_per_fold: bool,
}

impl DiagnosticReport {
    fn from_records(records: Vec<LooRecord>, refit_per_fold: bool) -> Self {
        let coverage = coverage_of(records.iter().map(|r| r.covered));
        Self {
            records,
            coverage,
            refit_per_fold,
        }
    }
}

fn coverage_of(flags: impl ExactSizeIterator<Item = bool>) -> f64 {
    let n = flags.len();
    if n == 0 {
        return 0.0;
    }
    flags.filter(|c| *c).count() as f64 / n as f64
}

/// Observations grouped by exactly equal design point, in first-seen order.
#[derive(Debug, Clone)]
struct Sites {
    points: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
}

fn canonical(x: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 denote the same site
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

fn group_sites(xs: &[Vec<f64>]) -> Sites {
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut sites = Sites {
        points: Vec::new(),
        members: Vec::new(),
    };
    for (i, x) in xs.iter().enumerate() {
        let key = canonical(x);
        match keys.iter().position(|k| *k == key) {
            Some(s) => sites.members[s].push(i),
            None => {
                keys.push(key);
                sites.points.push(x.clone());
                sites.members.push(vec![i]);
            }
        }
    }
    sites
}

fn fold_data(training: &TrainingSet, held_out: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    training
        .xs()
        .iter()
        .zip(training.ys())
        .enumerate()
        .filter(|(i, _)| !held_out.contains(i))
        .map(|(_, (x, y))| (x.clone(), *y))
        .unzip()
}

fn predict_fold(
    training: &TrainingSet,
    sites: &Sites,
    site: usize,
    kernel: &KernelSpec,
    mean: &MeanSpec,
    noise_variance: f64,
) -> Result<LooRecord> {
    let members = &sites.members[site];
    let (xs, ys) = fold_data(training, members);
    let post = GpPosterior::fit(
        TrainingSet::new(xs, ys, noise_variance)?,
        kernel.clone(),
        mean.clone(),
    )?;
    let (predicted_mean, variance) = post.predict(&sites.points[site])?;
    let m = members.len();
    let actual = members.iter().map(|&i| training.ys()[i]).sum::<f64>() / m as f64;
    let halfwidth = LOO_INTERVAL_FACTOR * (variance + noise_variance / m as f64).sqrt();
    Ok(LooRecord {
        actual,
        predicted_mean,
        halfwidth,
        covered: (actual - predicted_mean).abs() <= halfwidth,
        replicates: m,
    })
}

fn require_sites(sites: &Sites, needed: usize) -> Result<()> {
    let found = sites.points.len();
    if found < needed {
        return Err(Error::TooFewPoints { needed, found });
    }
    Ok(())
}

/// LOO diagnostics with fixed hyperparameters. The noise variance of
/// `training` is the λ² of every fold.
pub fn loo_with_model(training: &TrainingSet, kernel: &KernelSpec, mean: &MeanSpec) -> Result<DiagnosticReport> {
    let sites = group_sites(training.xs());
    require_sites(&sites, 3)?;
    let lambda2 = training.noise_variance();
    let records = (0..sites.points.len())
        .into_par_iter()
        .map(|s| predict_fold(training, &sites, s, kernel, mean, lambda2))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticReport::from_records(records, false))
}

fn fitted_model(xs: &[Vec<f64>], ys: &[f64], family: KernelFamily, noise_free: bool, opts: &FitOptions) -> Result<(KernelSpec, MeanSpec, f64)> {
    let opts = FitOptions {
        noise_free,
        ..opts.clone()
    };
    let fit = fit_hyperparameters_with(xs, ys, family, &opts)?;
    let lambda2 = if noise_free { 0.0 } else { fit.noise_variance };
    Ok((fit.kernel, fit.mean, lambda2))
}

/// The default for `refit_per_fold` given the number of observations.
pub fn default_refit_per_fold(n: usize) -> bool {
    n <= REFIT_DEFAULT_MAX_N
}

/// LOO diagnostics with empirical-Bayes hyperparameters.
///
/// A training set with λ² = 0 is treated as noise free; otherwise λ² is
/// estimated along with the kernel. Without `refit_per_fold` the
/// hyperparameters are estimated once from all data; with it they are
/// re-estimated on each fold, which needs at least 3 remaining observations.
pub fn loo_diagnose(
    training: &TrainingSet,
    family: KernelFamily,
    refit_per_fold: bool,
    opts: &FitOptions,
) -> Result<DiagnosticReport> {
    let sites = group_sites(training.xs());
    require_sites(&sites, 3)?;
    let noise_free = training.noise_variance() == 0.0;

    if !refit_per_fold {
        let (kernel, mean, lambda2) = fitted_model(training.xs(), training.ys(), family, noise_free, opts)?;
        let fitted = TrainingSet::new(training.xs().to_vec(), training.ys().to_vec(), lambda2)?;
        return loo_with_model(&fitted, &kernel, &mean);
    }

    let records = (0..sites.points.len())
        .into_par_iter()
        .map(|s| {
            let (xs, ys) = fold_data(training, &sites.members[s]);
            let (kernel, mean, lambda2) = fitted_model(&xs, &ys, family, noise_free, opts)?;
            predict_fold(training, &sites, s, &kernel, &mean, lambda2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticReport::from_records(records, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub actual: f64,
    pub predicted: f64,
    pub halfwidth: f64,
    pub covered: bool,
}

pub fn report_to_table(report: &DiagnosticReport) -> Vec<TableRow> {
    report
        .records
        .iter()
        .map(|r| TableRow {
            actual: r.actual,
            predicted: r.predicted_mean,
            halfwidth: r.halfwidth,
            covered: r.covered,
        })
        .collect()
}

pub fn table_coverage(rows: &[TableRow]) -> f64 {
    coverage_of(rows.iter().map(|r| r.covered))
}

/// Writes rows as CSV. Floats use the shortest representation that parses
/// back to the same value.
pub fn write_csv<W: Write>(rows: &[TableRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.actual, r.predicted, r.halfwidth, r.covered)?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<TableRow>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected CSV header {header:?}")));
    }
    let bad = |line: &str| Error::InvalidConfig(format!("malformed CSV row {line:?}"));
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [a, p, h, c] = fields.as_slice() else {
            return Err(bad(&line));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&line));
        rows.push(TableRow {
            actual: num(a)?,
            predicted: num(p)?,
            halfwidth: num(h)?,
            covered: c.parse().map_err(|_| bad(&line))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gram_matrix;
    use crate::mvn::cholesky;
    use nalgebra::DVector;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn se(alpha: f64, beta: f64) -> KernelSpec {
        KernelSpec::squared_exponential(alpha, vec![beta]).unwrap()
    }

    fn prior_sample(rng: &mut SmallRng, n: usize, kernel: &KernelSpec, noise: f64) -> TrainingSet {
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let mut k = gram_matrix(kernel, &xs).unwrap();
        for i in 0..n {
            k[(i, i)] += noise;
        }
        let l = cholesky(&k).unwrap();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = l.lower() * z;
        TrainingSet::new(xs, y.iter().copied().collect(), noise).unwrap()
    }

    #[test]
    fn constant_function_is_always_covered() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let ts = TrainingSet::noise_free(xs, vec![2.5; 8]).unwrap();
        let report = loo_with_model(&ts, &se(1.0, 4.0), &MeanSpec::constant(2.5)).unwrap();
        assert_eq!(report.coverage, 1.0);
        assert!(report.records.iter().all(|r| r.covered && r.halfwidth > 0.0));
    }

    #[test]
    fn replicated_site_uses_averaged_noise() {
        let mut xs = vec![vec![0.0], vec![0.3], vec![0.6], vec![0.9]];
        let mut ys = vec![0.1, 0.5, -0.2, 0.3];
        for y in [0.4, 0.45, 0.55] {
            xs.push(vec![0.3]);
            ys.push(y);
        }
        let lambda2 = 0.04;
        let ts = TrainingSet::new(xs.clone(), ys.clone(), lambda2).unwrap();
        let kernel = se(1.0, 3.0);
        let mean = MeanSpec::constant(0.0);
        let report = loo_with_model(&ts, &kernel, &mean).unwrap();
        assert_eq!(report.records.len(), 4);
        let rec = &report.records[1];
        assert_eq!(rec.replicates, 4);
        assert!((rec.actual - (0.5 + 0.4 + 0.45 + 0.55) / 4.0).abs() < 1e-15);

        let rest = TrainingSet::new(
            vec![vec![0.0], vec![0.6], vec![0.9]],
            vec![0.1, -0.2, 0.3],
            lambda2,
        )
        .unwrap();
        let post = GpPosterior::fit(rest, kernel, mean).unwrap();
        let (mu, var) = post.predict(&[0.3]).unwrap();
        assert_eq!(rec.predicted_mean, mu);
        assert!((rec.halfwidth - 2.0 * (var + lambda2 / 4.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn noise_free_fold_variance_is_positive() {
        let mut rng = SmallRng::seed_from_u64(1);
        let kernel = se(1.0, 10.0);
        let ts = prior_sample(&mut rng, 12, &kernel, 0.0);
        let report = loo_with_model(&ts, &kernel, &MeanSpec::constant(0.0)).unwrap();
        assert!(report.records.iter().all(|r| r.halfwidth > 0.0));
        assert!(report.records.iter().all(|r| r.replicates == 1));
    }

    #[test]
    fn fold_independence() {
        let mut rng = SmallRng::seed_from_u64(2);
        let kernel = se(1.0, 5.0);
        let ts = prior_sample(&mut rng, 10, &kernel, 0.01);
        let mean = MeanSpec::constant(0.0);
        let report = loo_with_model(&ts, &kernel, &mean).unwrap();
        let sites = group_sites(ts.xs());
        let alone = predict_fold(&ts, &sites, 6, &kernel, &mean, 0.01).unwrap();
        assert_eq!(report.records[6], alone);
    }

    #[test]
    fn prior_draws_have_nominal_coverage() {
        let kernel = se(1.0, 20.0);
        let mean = MeanSpec::constant(0.0);
        let mut rng = SmallRng::seed_from_u64(11);
        let mut total = 0.0;
        let reps = 40;
        for _ in 0..reps {
            let ts = prior_sample(&mut rng, 30, &kernel, 1e-4);
            let c = loo_with_model(&ts, &kernel, &mean).unwrap().coverage;
            assert!((0.8..=1.0).contains(&c), "coverage {c}");
            total += c;
        }
        let mean_cov = total / reps as f64;
        assert!((0.92..=0.98).contains(&mean_cov), "mean coverage {mean_cov}");
    }

    #[test]
    fn too_few_sites() {
        let ts = TrainingSet::new(
            vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]],
            vec![1.0, 1.1, 2.0, 2.1],
            0.1,
        )
        .unwrap();
        assert_eq!(
            loo_with_model(&ts, &se(1.0, 1.0), &MeanSpec::constant(0.0)),
            Err(Error::TooFewPoints { needed: 3, found: 2 })
        );
        assert!(matches!(
            loo_diagnose(&ts, KernelFamily::SquaredExponential, false, &FitOptions::default()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn negative_zero_is_the_same_site() {
        let sites = group_sites(&[vec![0.0], vec![-0.0], vec![1.0]]);
        assert_eq!(sites.members, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn fitted_diagnostics_run_both_ways() {
        let mut rng = SmallRng::seed_from_u64(4);
        let ts = prior_sample(&mut rng, 15, &se(1.0, 8.0), 0.0);
        let opts = FitOptions {
            starts: 4,
            ..FitOptions::default()
        };
        let once = loo_diagnose(&ts, KernelFamily::SquaredExponential, false, &opts).unwrap();
        let refit = loo_diagnose(&ts, KernelFamily::SquaredExponential, true, &opts).unwrap();
        assert!(!once.refit_per_fold && refit.refit_per_fold);
        assert_eq!(once.records.len(), 15);
        assert_eq!(refit.records.len(), 15);
        assert!(default_refit_per_fold(100) && !default_refit_per_fold(101));
    }

    #[test]
    fn table_and_csv_round_trip() {
        let report = DiagnosticReport::from_records(
            vec![
                LooRecord {
                    actual: 0.1 + 0.2,
                    predicted_mean: -1.234_567_890_123_456_7e-7,
                    halfwidth: 2.0 / 3.0,
                    covered: false,
                    replicates: 1,
                },
                LooRecord {
                    actual: 1e300,
                    predicted_mean: 1e300,
                    halfwidth: 1e-300,
                    covered: true,
                    replicates: 2,
                },
            ],
            false,
        );
        let rows = report_to_table(&report);
        assert_eq!(rows.len(), 2);
        assert_eq!(table_coverage(&rows), report.coverage);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("actual,predicted,halfwidth,covered\n"));
        let back = read_csv(text.as_bytes()).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            for (u, v) in [(a.actual, b.actual), (a.predicted, b.predicted), (a.halfwidth, b.halfwidth)] {
                assert!((u - v).abs() <= 1e-15 * u.abs());
            }
            assert_eq!(a.covered, b.covered);
        }
        assert!(read_csv("a,b\n".as_bytes()).is_err());
    }
}
