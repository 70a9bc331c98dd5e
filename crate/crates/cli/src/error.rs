use std::fmt;

use tiegrid::cascade::CascadeError;
use tiegrid::case_io::CaseError;
use tiegrid::control::ControlError;
use tiegrid::dynamics::DynamicsError;
use tiegrid::harness::HarnessError;
use tiegrid::network::NetworkError;
use tiegrid::partition::PartitionError;

/// Error with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments: exit 2.
    Usage(String),
    /// Unreadable, invalid or inconsistent input data, or unwritable output: exit 3.
    Data(String),
    /// A solver failed or reported infeasibility: exit 4.
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
            Self::Solver(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        Self::Solver(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::InvalidInput(_) | DynamicsError::Network(_) => Self::Data(e.to_string()),
            _ => Self::Solver(e.to_string()),
        }
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::NoInitialFailure | CascadeError::ZeroStages => Self::Usage(e.to_string()),
            CascadeError::NotInService(_) | CascadeError::Network(_) => Self::Data(e.to_string()),
            _ => Self::Solver(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Self::Usage(e.to_string()),
            HarnessError::OpfInfeasible(_) | HarnessError::Qp(_) | HarnessError::Control(_) => {
                Self::Solver(e.to_string())
            }
            HarnessError::Dynamics(d) => d.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Data(e.to_string())
    }
}
