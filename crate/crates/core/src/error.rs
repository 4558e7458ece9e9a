use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("dimension mismatch{}: expected {expected}, found {found} ({what})", at_line(*.line))]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
        line: Option<usize>,
    },

    #[error("label {field}={value} outside {{0,1}} at line {line}")]
    Label {
        field: &'static str,
        value: i64,
        line: usize,
    },

    #[error("z-consistency violated at line {line}: y={y}, z_ep={z_ep}, z_ip={z_ip}")]
    ZConsistency {
        line: usize,
        y: u8,
        z_ep: u8,
        z_ip: u8,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model has not been projected (or was modified after projection); refusing to explain")]
    Unprojected,
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            found,
            line: None,
        }
    }

    /// Process exit code for the command line: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 4,
            Error::Io { .. }
            | Error::Malformed { .. }
            | Error::Dimension { .. }
            | Error::Label { .. }
            | Error::ZConsistency { .. }
            | Error::Data(_)
            | Error::Unprojected => 3,
        }
    }
}
