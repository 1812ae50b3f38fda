use thiserror::Error;

/// Errors raised by the numerical core and the campaign layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (pivot {pivot} stayed non-positive after maximum jitter)")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular block in block-matrix inverse")]
    SingularBlock,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("unsupported polynomial basis order {0} (supported: 1, 2)")]
    UnsupportedOrder(usize),

    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),

    #[error("posterior variance {variance:e} is negative beyond the clamping threshold")]
    NegativeVariance { variance: f64 },

    #[error("residuals are degenerate (constant data); the variance estimate vanishes")]
    DegenerateResiduals,

    #[error("every hyperparameter optimization start failed")]
    AllStartsFailed,

    #[error("need at least {needed} distinct sites, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("expected improvement requires a noise-free posterior (noise variance {0:e})")]
    NoisyPosterior(f64),

    #[error("candidate set is empty")]
    EmptyCandidateSet,

    #[error("candidate set has {0} points, more than the supported 10000")]
    CandidateSetTooLarge(usize),

    #[error("invalid campaign configuration: {0}")]
    InvalidConfig(String),

    #[error("point {0:?} lies outside the design domain")]
    OutOfDomain(Vec<f64>),

    #[error("point {0:?} was already observed in a noise-free campaign")]
    DuplicateNoiseFreePoint(Vec<f64>),

    #[error("no fitted model yet: {0}")]
    NoModelYet(String),

    #[error("campaign {0} not found")]
    CampaignNotFound(String),

    #[error("revision mismatch: expected {expected}, current {current}")]
    RevisionMismatch { expected: u64, current: u64 },

    #[error("corrupt state file {path}: {reason}")]
    CorruptStateFile { path: String, reason: String },

    #[error("port {0} is already in use")]
    PortInUse(u16),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Numerical failures, as opposed to invalid input or I/O trouble.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::SingularBlock
                | Error::NegativeVariance { .. }
                | Error::DegenerateResiduals
                | Error::AllStartsFailed
        )
    }

    /// Failures of the environment (files, sockets) rather than of the
    /// request or the numerics.
    pub fn is_environment(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::CorruptStateFile { .. } | Error::PortInUse(_)
        )
    }

    /// Process exit code for the CLI: 3 numerical failure, 1 environment
    /// failure, 2 anything the caller got wrong.
    pub fn exit_code(&self) -> u8 {
        if self.is_numerical() {
            3
        } else if self.is_environment() {
            1
        } else {
            2
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::SingularBlock => "singular_block",
            Error::InvalidKernel(_) => "invalid_kernel",
            Error::UnsupportedOrder(_) => "unsupported_order",
            Error::InvalidTrainingSet(_) => "invalid_training_set",
            Error::NegativeVariance { .. } => "negative_variance",
            Error::DegenerateResiduals => "degenerate_residuals",
            Error::AllStartsFailed => "all_starts_failed",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::NoisyPosterior(_) => "noisy_posterior",
            Error::EmptyCandidateSet => "empty_candidate_set",
            Error::CandidateSetTooLarge(_) => "candidate_set_too_large",
            Error::InvalidConfig(_) => "invalid_config",
            Error::OutOfDomain(_) => "out_of_domain",
            Error::DuplicateNoiseFreePoint(_) => "duplicate_noise_free_point",
            Error::NoModelYet(_) => "no_model_yet",
            Error::CampaignNotFound(_) => "campaign_not_found",
            Error::RevisionMismatch { .. } => "revision_mismatch",
            Error::CorruptStateFile { .. } => "corrupt_state_file",
            Error::PortInUse(_) => "port_in_use",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
