//! Ask/tell campaigns.
//!
//! A campaign is the history of observations for one optimization run plus
//! everything derived from it: hyperparameters, the posterior, and the next
//! suggestion. Derived state is a pure function of the history and the
//! configured seed, so replaying the event log reproduces it exactly.

mod store;

#[cfg(feature = "server")]
pub mod server;

use serde::{Deserialize, Serialize};

use crate::acquisition::{
    maximize_acquisition, Acquisition, AcquisitionEvaluator, CandidateStrategy, Domain, Policy, MAX_CANDIDATES,
};
use crate::diagnostics::{default_refit_per_fold, loo_diagnose, DiagnosticReport, PREDICTION_INTERVAL_FACTOR};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, TrainingSet};
use crate::hyperfit::{fit_hyperparameters_with, FitOptions};
use crate::kernels::{KernelFamily, KernelSpec, MeanSpec};
use crate::sequence::ShiftedHalton;

pub use store::{load_campaign, read_events, CampaignStore, EVENTS_FILE, SNAPSHOT_FILE};

/// Multistart count used for hyperparameter fits inside campaigns.
pub const CAMPAIGN_FIT_STARTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    NoiseFree,
    Homoscedastic,
}

fn default_refit_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub dimension: usize,
    pub domain: Domain,
    pub kernel: KernelFamily,
    pub noise: NoiseMode,
    pub policy: Policy,
    #[serde(default = "default_refit_every")]
    pub refit_every: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Number of space-filling points asked before the model takes over;
    /// defaults to `2·dimension`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_design_size: Option<usize>,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dimension == 0 {
            return invalid("dimension must be at least 1".into());
        }
        self.domain.validate()?;
        if self.domain.dim() != self.dimension {
            return invalid(format!(
                "domain has dimension {} but the campaign declares {}",
                self.domain.dim(),
                self.dimension
            ));
        }
        KernelSpec::new(self.kernel, 1.0, vec![1.0; self.dimension])
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.policy == Policy::Ei && self.noise != NoiseMode::NoiseFree {
            return invalid("expected improvement requires noise-free observations".into());
        }
        if self.refit_every == 0 {
            return invalid("refit_every must be at least 1".into());
        }
        if self.seed_design_size == Some(0) {
            return invalid("seed_design_size must be at least 1".into());
        }
        if let (Policy::Kg, Domain::Finite { points }) = (self.policy, &self.domain) {
            if points.len() > MAX_CANDIDATES {
                return Err(Error::CandidateSetTooLarge(points.len()));
            }
        }
        Ok(())
    }

    pub fn seed_design_size(&self) -> usize {
        self.seed_design_size.unwrap_or(2 * self.dimension)
    }

    /// Observations needed before suggestions come from the model.
    pub fn model_threshold(&self) -> usize {
        self.seed_design_size().max(2)
    }

    pub fn noise_free(&self) -> bool {
        self.noise == NoiseMode::NoiseFree
    }

    pub fn acquisition(&self) -> Acquisition {
        match self.policy {
            Policy::Ei => Acquisition::ei(),
            Policy::Kg => Acquisition::kg(CandidateStrategy::FullGrid(self.domain.candidate_grid(MAX_CANDIDATES))),
            Policy::Akg => Acquisition::akg(),
        }
    }

    /// Axis-aligned bounding box of the domain.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.domain {
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Finite { points } => {
                let d = self.dimension;
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for p in points {
                    for i in 0..d {
                        lo[i] = lo[i].min(p[i]);
                        hi[i] = hi[i].max(p[i]);
                    }
                }
                (lo, hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Empirical-Bayes fit.
    Fitted,
    /// Heuristic hyperparameters, used before a fit is possible or when it
    /// fails.
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedModel {
    pub kernel: KernelSpec,
    pub mean: MeanSpec,
    /// λ² used by the posterior; exactly 0 in noise-free campaigns.
    pub noise_variance: f64,
    /// Number of leading observations the hyperparameters were fitted on.
    pub n_fit: usize,
    pub source: ModelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_lml: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPoint {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Revision of the state the suggestion was computed from.
    pub revision: u64,
    pub x_next: Vec<f64>,
    pub acquisition_value: f64,
    /// `ei`, `kg`, `akg`, or `seed` for the space-filling start.
    pub policy: String,
    pub posterior_at_x: Option<PosteriorPoint>,
    pub incumbent: Option<Incumbent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub acquisition: f64,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub revision: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    Created { id: String, config: CampaignConfig },
    Observed { observation: Observation },
    /// Audit record of a served suggestion; derived state, so it does not
    /// bump the revision.
    Suggested { suggestion: Suggestion },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignState {
    pub id: String,
    pub config: CampaignConfig,
    pub history: Vec<Observation>,
    pub model: Option<FittedModel>,
    pub pending: Option<Suggestion>,
    pub revision: u64,
}

/// Size of the history prefix the model should be fitted on: heuristic
/// hyperparameters at n = 2, a first fit at n = 3, refits whenever n is a
/// multiple of `refit_every`.
pub fn model_fit_size(n: usize, refit_every: usize) -> Option<usize> {
    match n {
        0 | 1 => None,
        2 => Some(2),
        _ => {
            let m = n - n % refit_every.max(1);
            Some(m.max(3))
        }
    }
}

impl CampaignState {
    pub fn create(id: impl Into<String>, config: CampaignConfig) -> Result<(Self, Event)> {
        config.validate()?;
        let id = id.into();
        let state = Self {
            id: id.clone(),
            config: config.clone(),
            history: Vec::new(),
            model: None,
            pending: None,
            revision: 0,
        };
        let event = Event {
            revision: 0,
            payload: EventPayload::Created { id, config },
        };
        Ok((state, event))
    }

    pub fn n(&self) -> usize {
        self.history.len()
    }

    pub fn xs(&self) -> Vec<Vec<f64>> {
        self.history.iter().map(|o| o.x.clone()).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.history.iter().map(|o| o.y).collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.config.dimension,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || !self.config.domain.contains(x) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        Ok(())
    }

    /// Appends an observation and refreshes the model. Returns the log event.
    pub fn tell(&mut self, observation: Observation) -> Result<Event> {
        self.tell_inner(observation, true)
    }

    fn tell_inner(&mut self, observation: Observation, refresh: bool) -> Result<Event> {
        self.check_point(&observation.x)?;
        if !observation.y.is_finite() {
            return Err(Error::InvalidTrainingSet(format!("non-finite response {}", observation.y)));
        }
        if self.config.noise_free() && self.history.iter().any(|o| o.x == observation.x) {
            return Err(Error::DuplicateNoiseFreePoint(observation.x));
        }
        self.history.push(observation.clone());
        self.revision += 1;
        self.pending = None;
        if refresh {
            self.refresh_model();
        }
        Ok(Event {
            revision: self.revision,
            payload: EventPayload::Observed { observation },
        })
    }

    /// Whether the cached model matches what the history calls for.
    pub fn model_is_current(&self) -> bool {
        let want = model_fit_size(self.n(), self.config.refit_every);
        self.model.as_ref().map(|m| m.n_fit) == want
    }

    /// Recomputes the model if the history calls for a different fit.
    pub fn refresh_model(&mut self) {
        if !self.model_is_current() {
            self.model = model_fit_size(self.n(), self.config.refit_every).map(|m| self.fit_prefix(m));
        }
    }

    fn fit_prefix(&self, m: usize) -> FittedModel {
        let xs: Vec<Vec<f64>> = self.history[..m].iter().map(|o| o.x.clone()).collect();
        let ys: Vec<f64> = self.history[..m].iter().map(|o| o.y).collect();
        if m >= 3 {
            let opts = FitOptions {
                starts: CAMPAIGN_FIT_STARTS,
                seed: self.config.rng_seed,
                noise_free: self.config.noise_free(),
                trend: Vec::new(),
            };
            match fit_hyperparameters_with(&xs, &ys, self.config.kernel, &opts) {
                Ok(fit) => {
                    return FittedModel {
                        kernel: fit.kernel,
                        mean: fit.mean,
                        noise_variance: if self.config.noise_free() { 0.0 } else { fit.noise_variance },
                        n_fit: m,
                        source: ModelSource::Fitted,
                        reduced_lml: Some(fit.reduced_lml),
                    }
                }
                Err(err) => log::warn!("campaign {}: hyperparameter fit failed ({err}); using defaults", self.id),
            }
        }
        self.default_model(&ys, m)
    }

    fn default_model(&self, ys: &[f64], m: usize) -> FittedModel {
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let alpha = if var > 0.0 { var } else { 1.0 };
        let (lo, hi) = self.config.bounds();
        let betas = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| {
                let width = if h > l { h - l } else { 1.0 };
                let length = width / 4.0;
                match self.config.kernel {
                    KernelFamily::SquaredExponential => 1.0 / (2.0 * length * length),
                    KernelFamily::Matern { .. } => length,
                }
            })
            .collect();
        FittedModel {
            kernel: KernelSpec::new(self.config.kernel, alpha, betas).expect("validated kernel family"),
            mean: MeanSpec::constant(mean),
            noise_variance: if self.config.noise_free() { 0.0 } else { 0.01 * alpha },
            n_fit: m,
            source: ModelSource::Default,
            reduced_lml: None,
        }
    }

    pub fn posterior(&self) -> Result<GpPosterior> {
        let model = self.model.as_ref().filter(|_| self.model_is_current()).ok_or_else(|| {
            Error::NoModelYet(format!("{} observation(s); a model needs at least 2", self.n()))
        })?;
        let training = TrainingSet::new(self.xs(), self.ys(), model.noise_variance)?;
        GpPosterior::fit(training, model.kernel.clone(), model.mean.clone())
    }

    /// Seed for the acquisition search at the current history length.
    pub fn ask_seed(&self) -> u64 {
        self.config.rng_seed ^ (self.n() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    fn seed_point(&self) -> Vec<f64> {
        let k = self.n() as u64;
        let halton = ShiftedHalton::new(self.config.dimension, self.config.rng_seed);
        match &self.config.domain {
            Domain::Box { lo, hi } => halton.box_point(k, lo, hi),
            Domain::Finite { points } => {
                let count = points.len();
                let start = ((halton.unit_point(k)[0] * count as f64) as usize).min(count - 1);
                (0..count)
                    .map(|off| &points[(start + off) % count])
                    .find(|p| !self.config.noise_free() || !self.history.iter().any(|o| &o.x == *p))
                    .unwrap_or(&points[start])
                    .clone()
            }
        }
    }

    /// Best implementable point: the best observation for EI, the best
    /// posterior mean over `A_n` for KG and AKG.
    pub fn incumbent(&self, post: &GpPosterior) -> Result<Option<Incumbent>> {
        if self.history.is_empty() {
            return Ok(None);
        }
        let candidates: Vec<Vec<f64>> = match self.config.policy {
            Policy::Ei => {
                let mut best = &self.history[0];
                for o in &self.history[1..] {
                    if o.y > best.y {
                        best = o;
                    }
                }
                return Ok(Some(Incumbent {
                    x: best.x.clone(),
                    value: best.y,
                }));
            }
            Policy::Kg => self.config.domain.candidate_grid(MAX_CANDIDATES),
            Policy::Akg => self.xs(),
        };
        let mut best: Option<Incumbent> = None;
        for c in candidates {
            let value = post.predict_mean(&c)?;
            if best.as_ref().is_none_or(|b| value > b.value) {
                best = Some(Incumbent { x: c, value });
            }
        }
        Ok(best)
    }

    /// The suggestion for the current state, without touching the state.
    pub fn compute_suggestion(&self) -> Result<Suggestion> {
        if self.n() < self.config.model_threshold() {
            return Ok(Suggestion {
                revision: self.revision,
                x_next: self.seed_point(),
                acquisition_value: 0.0,
                policy: "seed".into(),
                posterior_at_x: None,
                incumbent: None,
            });
        }
        let post = self.posterior()?;
        let acquisition = self.config.acquisition();
        let (x_next, acquisition_value) =
            maximize_acquisition(&post, &acquisition, &self.config.domain, self.ask_seed())?;
        let (mean, variance) = post.predict(&x_next)?;
        Ok(Suggestion {
            revision: self.revision,
            x_next,
            acquisition_value,
            policy: self.config.policy.label().into(),
            posterior_at_x: Some(PosteriorPoint { mean, variance }),
            incumbent: self.incumbent(&post)?,
        })
    }

    /// Returns the pending suggestion, computing and recording it first if
    /// needed. The event is `Some` only when a new suggestion was computed.
    pub fn ask(&mut self) -> Result<(Suggestion, Option<Event>)> {
        if let Some(pending) = self.pending.as_ref().filter(|p| p.revision == self.revision) {
            return Ok((pending.clone(), None));
        }
        let suggestion = self.compute_suggestion()?;
        self.pending = Some(suggestion.clone());
        let event = Event {
            revision: self.revision,
            payload: EventPayload::Suggested {
                suggestion: suggestion.clone(),
            },
        };
        Ok((suggestion, Some(event)))
    }

    /// Posterior slice along `axis` with the other coordinates fixed at
    /// `slice` (default: the center of the domain's bounding box).
    pub fn posterior_curve(&self, axis: usize, slice: Option<&[f64]>, resolution: usize) -> Result<Vec<CurveRow>> {
        let d = self.config.dimension;
        if axis >= d {
            return Err(Error::InvalidConfig(format!("axis {axis} out of range for dimension {d}")));
        }
        if resolution < 2 {
            return Err(Error::InvalidConfig("resolution must be at least 2".into()));
        }
        let (lo, hi) = self.config.bounds();
        let mut point: Vec<f64> = match slice {
            Some(s) if s.len() != d => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.len(),
                })
            }
            Some(s) => s.to_vec(),
            None => lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        };
        let post = self.posterior()?;
        let evaluator = AcquisitionEvaluator::new(&post, &self.config.acquisition())?;
        (0..resolution)
            .map(|k| {
                let t = if k + 1 == resolution {
                    hi[axis]
                } else {
                    lo[axis] + (hi[axis] - lo[axis]) * k as f64 / (resolution - 1) as f64
                };
                point[axis] = t;
                let (mean, variance) = post.predict(&point)?;
                let half = PREDICTION_INTERVAL_FACTOR * variance.sqrt();
                Ok(CurveRow {
                    x: t,
                    mean,
                    lower: mean - half,
                    upper: mean + half,
                    acquisition: evaluator.eval(&point)?,
                })
            })
            .collect()
    }

    /// Leave-one-out diagnostics of the campaign's model family.
    pub fn diagnose(&self, refit_per_fold: Option<bool>) -> Result<DiagnosticReport> {
        let model = self
            .model
            .as_ref()
            .filter(|_| self.model_is_current())
            .ok_or_else(|| Error::NoModelYet("diagnostics need a fitted model".into()))?;
        let training = TrainingSet::new(self.xs(), self.ys(), model.noise_variance)?;
        let refit = refit_per_fold.unwrap_or_else(|| default_refit_per_fold(self.n()));
        let opts = FitOptions {
            starts: CAMPAIGN_FIT_STARTS,
            seed: self.config.rng_seed,
            ..FitOptions::default()
        };
        loo_diagnose(&training, self.config.kernel, refit, &opts)
    }

    /// Rebuilds a campaign from its event log, recomputing every model.
    pub fn replay(events: &[Event]) -> Result<Self> {
        let mut state = Self::replay_history(events)?;
        state.refresh_model();
        Ok(state)
    }

    /// Rebuilds history, revision and pending suggestion without fitting.
    pub(crate) fn replay_history(events: &[Event]) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptStateFile {
            path: EVENTS_FILE.into(),
            reason,
        };
        let (first, rest) = events.split_first().ok_or_else(|| corrupt("empty event log".into()))?;
        let EventPayload::Created { id, config } = &first.payload else {
            return Err(corrupt("log does not start with a creation event".into()));
        };
        let (mut state, _) = Self::create(id.clone(), config.clone())?;
        for event in rest {
            match &event.payload {
                EventPayload::Created { .. } => return Err(corrupt("duplicate creation event".into())),
                EventPayload::Observed { observation } => {
                    state.tell_inner(observation.clone(), false)?;
                    if state.revision != event.revision {
                        return Err(corrupt(format!(
                            "observation recorded at revision {} replays to {}",
                            event.revision, state.revision
                        )));
                    }
                }
                EventPayload::Suggested { suggestion } => {
                    if event.revision != state.revision {
                        return Err(corrupt(format!(
                            "suggestion recorded at revision {} but state is at {}",
                            event.revision, state.revision
                        )));
                    }
                    state.pending = Some(suggestion.clone());
                }
            }
        }
        Ok(state)
    }
}
