use std::fmt;

use deepwarp::dataset::DatasetError;
use deepwarp::net::NetError;
use deepwarp::warper::WarpError;

/// A failed command, classified by exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Io(_) | NetError::Truncated => Failure::Io(e.to_string()),
            NetError::NonFiniteLoss { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) | DatasetError::Truncated { .. } | DatasetError::BadMagic(_) | DatasetError::BadVersion(_) => Failure::Io(e.to_string()),
            DatasetError::NonFinite(_) | DatasetError::Registration(_) | DatasetError::Dynamics(_) | DatasetError::Factor(_) => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<WarpError> for Failure {
    fn from(e: WarpError) -> Self {
        match e {
            WarpError::FeatureOrder(_) | WarpError::NoAnchors | WarpError::MissingNetwork(_) | WarpError::Mesh(_) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}
