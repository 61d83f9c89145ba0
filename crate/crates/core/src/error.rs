use std::io;

use thiserror::Error;

/// Every failure the library reports. Variants map onto the CLI exit codes
/// via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error(
        "insufficient free weights in layer {layer} for task `{task}`: budget {budget}, free {free}"
    )]
    Capacity {
        layer: usize,
        task: String,
        budget: usize,
        free: usize,
    },

    #[error("disjointness violation in layer {layer}: {detail}")]
    Disjointness { layer: usize, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("unsupported format version {0}")]
    Version(u8),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable, machine-parsable identifier printed on stderr by the CLI.
    pub fn id(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Shape(_) => "shape",
            Error::Bounds(_) => "bounds",
            Error::Vocabulary { .. } => "vocabulary",
            Error::UnknownTask(_) => "unknown-task",
            Error::State(_) => "state",
            Error::Capacity { .. } => "capacity",
            Error::Disjointness { .. } => "disjointness",
            Error::Input(_) => "input",
            Error::Format { .. } => "format",
            Error::Checksum { .. } => "checksum",
            Error::Version(_) => "version",
            Error::Config { .. } => "config",
            Error::Verification(_) => "verification",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code used by the `rsn2` binary.
    ///
    /// | code | meaning |
    /// |------|---------|
    /// | 1 | internal error (shape, state, disjointness) |
    /// | 2 | configuration error |
    /// | 3 | capacity error |
    /// | 4 | data, artifact or i/o error |
    /// | 5 | unknown task |
    /// | 6 | verification failed |
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } => 2,
            Error::Capacity { .. } => 3,
            Error::Input(_)
            | Error::Format { .. }
            | Error::Checksum { .. }
            | Error::Version(_)
            | Error::Vocabulary { .. }
            | Error::Io { .. } => 4,
            Error::UnknownTask(_) => 5,
            Error::Verification(_) => 6,
            Error::Dimension { .. }
            | Error::Shape(_)
            | Error::Bounds(_)
            | Error::State(_)
            | Error::Disjointness { .. } => 1,
        }
    }
}
