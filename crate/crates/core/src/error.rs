//! Crate-wide error type.
//!
//! Every fallible operation in the engine returns [`Result`]. Variants are
//! grouped loosely by subsystem; the CLI maps all of them to exit code 1,
//! reserving exit code 2 for data conditions (contract halts, SLO breaches)
//! that are reported through ordinary return values, not errors.

/// Unified error type for the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input document could not be parsed at all (bad JSON, bad CSV, ...).
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    /// Document parsed but violates the schema of its kind (contract files,
    /// templates, pipeline specs, ...).
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    /// An append-only store rejected a write that would rewrite history.
    #[error("version conflict: {0}")]
    VersionConflict(String),
    /// A named object does not exist.
    #[error("not found: {0}")]
    NotFound(String),
    /// Filesystem-level failure.
    #[error("storage failure: {0}")]
    Storage(String),
    /// Caller passed an argument that is structurally valid but unusable.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A record destined for a versioned table lacks a key field.
    #[error("missing key field: {0}")]
    MissingKeyField(String),
    /// A batch load timestamp does not advance past existing versions.
    #[error("non-monotonic load timestamp: {0}")]
    NonMonotonicLoadTimestamp(String),
    /// A referenced field is not known to the table/dataset in question.
    #[error("unknown field: {0}")]
    UnknownField(String),
    /// A versioning or tiering policy is self-contradictory.
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    /// Source id registered twice.
    #[error("duplicate source: {0}")]
    DuplicateSource(String),
    /// Source id not registered.
    #[error("unknown source: {0}")]
    UnknownSource(String),
    /// Raw payload does not parse under the registered format.
    #[error("unparseable payload: {0}")]
    UnparseablePayload(String),
    /// Raw segment id does not exist.
    #[error("unknown segment: {0}")]
    UnknownSegment(String),
    /// A transformation plan failed static checks.
    #[error("plan error at step {step}: {reason}")]
    PlanError { step: usize, reason: String },
    /// A pinned input cannot be resolved for execution.
    #[error("unresolvable pin: {0}")]
    UnresolvablePin(String),
    /// A transformation failed while executing.
    #[error("execution error: {0}")]
    ExecutionError(String),
    /// Replay or digest-checked read produced different bytes than recorded.
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),
    /// Expression text could not be parsed.
    #[error("parse error at byte {position}: expected {expected}")]
    ParseError { position: usize, expected: String },
    /// Metric id/version registered twice.
    #[error("duplicate metric: {0}")]
    DuplicateMetric(String),
    /// An observation timestamp lies in the future of the reference clock.
    #[error("clock skew: {0}")]
    ClockSkew(String),
    /// A pipeline spec references an object that does not exist.
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    /// Benchmark fixture configuration is unusable.
    #[error("fixture error: {0}")]
    FixtureError(String),
    /// Another writer holds the lock and the wait timed out.
    #[error("lock busy: {0}")]
    LockBusy(String),
}

impl Error {
    /// Wrap an I/O error with a short context string.
    pub fn storage(context: &str, err: std::io::Error) -> Self {
        Error::Storage(format!("{context}: {err}"))
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Storage(err.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
