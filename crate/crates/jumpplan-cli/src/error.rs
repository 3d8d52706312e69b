use thiserror::Error;

pub const INFEASIBLE: u8 = 2;
pub const UNREACHABLE: u8 = 3;
pub const USAGE: u8 = 64;
pub const BAD_INPUT: u8 = 65;
pub const IO: u8 = 74;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// The target or pose cannot be posed as a problem at all.
    #[error("{0}")]
    Unreachable(String),
    #[error("{0}")]
    Infeasible(String),
    /// An input file is malformed.
    #[error("{0}")]
    BadInput(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => USAGE,
            Self::Unreachable(_) => UNREACHABLE,
            Self::Infeasible(_) => INFEASIBLE,
            Self::BadInput(_) => BAD_INPUT,
            Self::Io { .. } => IO,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<reloc::RelocError> for CliError {
    fn from(e: reloc::RelocError) -> Self {
        use reloc::RelocError as R;
        match e {
            R::Degenerate(_) => Self::Unreachable(e.to_string()),
            R::InvalidConfig(_) => Self::Usage(e.to_string()),
            R::Io(source) => Self::Io { path: "input".into(), source },
            _ => Self::BadInput(e.to_string()),
        }
    }
}

impl From<jumpplan::premotion::PremotionError> for CliError {
    fn from(e: jumpplan::premotion::PremotionError) -> Self {
        match e {
            jumpplan::premotion::PremotionError::Io(source) => Self::Io { path: "library".into(), source },
            other => Self::BadInput(other.to_string()),
        }
    }
}
