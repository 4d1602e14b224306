use std::path::PathBuf;

/// Errors raised anywhere in the harness.
///
/// Variants are grouped by the stage that produces them so the runner can
/// attribute per-image failures to a pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("wire format: {0}")]
    WireFormat(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("meta-prompt field `{0}` must not be empty")]
    Spec(&'static str),

    #[error("prompt generation failed after {attempts} attempt(s): {last}")]
    PromptGeneration { attempts: u32, last: String },

    #[error("prompt record {path}: {reason}")]
    PromptFormat { path: PathBuf, reason: String },

    #[error("generation via `{backend}`: {reason}")]
    Generation { backend: String, reason: String },

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("protocol violation from `{service}`: {reason}")]
    Protocol { service: String, reason: String },

    #[error("inference via `{service}`: {reason}")]
    Inference { service: String, reason: String },

    #[error("fusion: {0}")]
    Fusion(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("image: {0}")]
    Image(String),

    #[error("run failed: {failed} of {total} image(s) failed (threshold {threshold:.2}%)")]
    RunFailed {
        failed: usize,
        total: usize,
        threshold: f64,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn protocol(service: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Protocol {
            service: service.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn generation(backend: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Generation {
            backend: backend.into(),
            reason: reason.into(),
        }
    }
}
