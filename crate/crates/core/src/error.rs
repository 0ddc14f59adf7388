use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length mismatch in {what}: expected {expected} bytes, found {found}")]
    Length {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("non-finite loss {value} at batch {batch} (epoch {epoch})")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("checkpoint format version {found} cannot be read by this reader (supports version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checkpoint has no tensor named `{0}`")]
    MissingTensor(String),

    #[error("stage `{stage}` failed: {source}; last completed checkpoint: {}", last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Stage {
        stage: String,
        last_checkpoint: Option<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Process exit code: 1 usage, 2 data/format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 1,
            Error::Format(_)
            | Error::Length { .. }
            | Error::State(_)
            | Error::Checksum { .. }
            | Error::Version { .. }
            | Error::MissingTensor(_)
            | Error::Io { .. }
            | Error::Image(_) => 2,
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
