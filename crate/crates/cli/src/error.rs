use std::fmt;

/// One variant per exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Proposer(String),
    Search(String),
    Io(String),
    Refused(String),
    Check(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Proposer(_) => 5,
            CliError::Search(_) => 6,
            CliError::Io(_) => 7,
            CliError::Refused(_) => 8,
            CliError::Check(_) => 9,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Data(m) => ("data", m),
            CliError::Proposer(m) => ("proposer", m),
            CliError::Search(m) => ("search", m),
            CliError::Io(m) => ("io", m),
            CliError::Refused(m) => ("refused", m),
            CliError::Check(m) => ("check failed", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for CliError {}
