use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One rejected row from study or IPD ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source file (header is line 1).
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader { expected: String, found: String },

    #[error("empty arm: n_t and n_c must both be at least 1")]
    EmptyArm,

    #[error("responder count exceeds arm size ({r} > {n})")]
    CountExceedsArm { r: u64, n: u64 },

    #[error("within-study covariance for study `{study_id}` is not positive definite")]
    NotPositiveDefinite { study_id: String },

    #[error("non-identifiable: no {endpoint} events in one arm")]
    NonIdentifiable { endpoint: String },

    #[error("Newton iteration diverged after {iterations} steps; trace: {trace:?}")]
    NewtonDiverged {
        iterations: usize,
        /// (iteration, beta, gradient norm) per step.
        trace: Vec<(usize, f64, f64)>,
    },

    #[error("{missing} missing {field} values among patients required for the fit")]
    IncompleteIpd { field: String, missing: usize },

    #[error("{failed} of {total} bootstrap resamples failed (threshold 5%)")]
    TooManyFailedResamples { failed: usize, total: usize },

    #[error("fewer than 2 successful bootstrap resamples")]
    TooFewResamples,

    #[error("outcome never observed: {outcome}")]
    OutcomeNeverObserved { outcome: String },

    #[error("model requires at least 3 usable studies, found {found}")]
    TooFewStudies { found: usize },

    #[error("duplicate study_id `{study_id}`")]
    DuplicateStudyId { study_id: String },

    #[error("non-finite value in accepted state at iteration {iteration} of chain {chain}: {param}")]
    NonFiniteState {
        chain: usize,
        iteration: usize,
        param: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pair {surrogate:?} -> {final_outcome:?} is not modeled directly; {hint}")]
    PairNotModeled {
        surrogate: crate::data_model::OutcomeKind,
        final_outcome: crate::data_model::OutcomeKind,
        hint: String,
    },

    #[error("study `{study_id}` is missing the target outcome required for cross-validation")]
    TargetMissing { study_id: String },

    #[error("leave-one-out refit failed for study `{study_id}`: {source}")]
    RefitFailed {
        study_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("mismatched study sets; only in first: {only_left:?}, only in second: {only_right:?}")]
    MismatchedStudySets {
        only_left: Vec<String>,
        only_right: Vec<String>,
    },

    #[error("simulation could not assemble a positive-definite within-study covariance after {retries} retries")]
    SimulationInfeasible { retries: usize },

    #[error("chain directory is missing `{file}`")]
    MissingChainFile { file: String },

    #[error("{0}")]
    Ingest(String),
}
