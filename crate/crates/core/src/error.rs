use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio format: {0}")]
    AudioFormat(String),

    #[error("bad magic in clip container {0}")]
    BadMagic(PathBuf),

    #[error("truncated clip container {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing artifact {what}; produce it with `synthvsr {producer}`")]
    MissingArtifact { what: String, producer: &'static str },

    #[error("numerical guard: {0}")]
    Numerical(String),

    #[error("synthetic generation failed for {failed} of {total} clips (limit {limit:.3})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: f64,
    },

    #[error("image decoding error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::AudioFormat(_) | Error::BadMagic(_) | Error::Truncated { .. } => "format",
            Error::Invalid(_) | Error::Shape(_) => "input",
            Error::Config(_) => "config",
            Error::Manifest(_) => "manifest",
            Error::Tokenizer(_) => "tokenizer",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Numerical(_) => "numerical",
            Error::TooManyFailures { .. } => "generation",
            Error::Image(_) => "format",
            Error::Json(_) => "format",
            Error::Tensor(_) => "tensor",
        }
    }

    /// Process exit code associated with the error category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "io" => 3,
            "format" | "manifest" => 4,
            "config" => 5,
            "missing-artifact" => 6,
            "checkpoint" => 7,
            "generation" => 8,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
