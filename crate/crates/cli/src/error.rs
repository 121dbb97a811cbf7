use fci_core::FciError;

/// Exit status: 2 usage or configuration, 3 data, 4 numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] FciError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(e) if e.is_data() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(FciError::Data("x".into())).exit_code(), 3);
        let singular = FciError::Singular {
            context: "x",
            condition: 1e20,
        };
        assert_eq!(CliError::from(singular).exit_code(), 4);
        assert_eq!(CliError::from(FciError::InvalidArgument("x".into())).exit_code(), 2);
        let dated = FciError::NonConvergence {
            iterations: 1,
            residual: 1.0,
        };
        assert_eq!(CliError::from(dated).exit_code(), 4);
    }
}
