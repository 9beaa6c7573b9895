use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] matchtu::Error),
}

impl CliError {
    /// 2 input, 3 data validity, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        use matchtu::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Parse { .. } | E::InvalidInput(_) | E::DimensionMismatch { .. } | E::SizeAboveCap { .. } => 2,
                E::NegativeEntry { .. }
                | E::ZeroCell { .. }
                | E::DuplicateCell { .. }
                | E::RankDeficient { .. }
                | E::Singular(_)
                | E::EmptyQuadruples => 3,
                E::NonConvergence { .. } | E::StepSize { .. } | E::NonFinite(_) => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
