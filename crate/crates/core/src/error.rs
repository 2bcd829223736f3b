use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the engine. `code()` gives a stable
/// `module.kind` identifier used by the CLI's one-line error output.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: invalid parameter: {msg}")]
    Parameter { module: &'static str, msg: String },

    #[error("{module}: shape mismatch: expected {expected}, got {got}")]
    Shape {
        module: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("diffusion: alpha_bar is zero at t={t}")]
    Singularity { t: usize },

    #[error("diffusion: alpha_bar is one at t={t} > 0, posterior variance undefined")]
    DivisionDomain { t: usize },

    #[error("diffusion: zero-variance transition has no density")]
    DegenerateDensity,

    #[error("{module}: non-finite value at step {step}")]
    Divergence { module: &'static str, step: usize },

    #[error("sampler: non-finite latent at step {step} of candidate {candidate}")]
    NumericBlowup { step: usize, candidate: usize },

    #[error("denoiser: {0}")]
    AdapterState(String),

    #[error("sampler: empty history for the target category")]
    MissingHistory,

    #[error("experts: cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("experts: external scorer: {0}")]
    Scorer(String),

    #[error("datakit: dangling reference to '{id}' in {record}")]
    Integrity { record: String, id: String },

    #[error("{module}: schema error: {msg}")]
    Schema { module: &'static str, msg: String },

    #[error("{module}: empty input")]
    EmptyInput { module: &'static str },

    #[error("io: {what} has version {found}, expected {expected}")]
    Version {
        what: String,
        found: u32,
        expected: u32,
    },

    #[error("io: {0} is corrupted (checksum mismatch)")]
    Corrupt(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io: json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("cli: config: {0}")]
    Config(String),

    #[error("cli: mismatched config hashes: {0} vs {1}")]
    ConfigMismatch(String, String),
}

impl Error {
    pub fn param(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Parameter {
            module,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> String {
        match self {
            Error::Parameter { module, .. } => format!("{module}.parameter"),
            Error::Shape { module, .. } => format!("{module}.shape"),
            Error::Singularity { .. } => "diffusion.singularity".into(),
            Error::DivisionDomain { .. } => "diffusion.domain".into(),
            Error::DegenerateDensity => "diffusion.degenerate".into(),
            Error::Divergence { module, .. } => format!("{module}.divergence"),
            Error::NumericBlowup { .. } => "sampler.blowup".into(),
            Error::AdapterState(_) => "denoiser.state".into(),
            Error::MissingHistory => "sampler.missing_history".into(),
            Error::UndefinedSimilarity => "experts.similarity".into(),
            Error::Scorer(_) => "experts.scorer".into(),
            Error::Integrity { .. } => "datakit.integrity".into(),
            Error::Schema { module, .. } => format!("{module}.schema"),
            Error::EmptyInput { module } => format!("{module}.empty"),
            Error::Version { .. } => "io.version".into(),
            Error::Corrupt(_) => "io.corrupt".into(),
            Error::Io { .. } => "io.io".into(),
            Error::Json(_) => "io.json".into(),
            Error::Config(_) => "cli.config".into(),
            Error::ConfigMismatch(..) => "cli.config_mismatch".into(),
        }
    }
}

pub(crate) fn check_dim(module: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            module,
            expected,
            got,
        })
    }
}
