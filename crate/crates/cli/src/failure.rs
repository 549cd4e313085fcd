//! Command failures and their exit codes.

use std::fmt;

/// Bad arguments or configuration.
pub const EXIT_USAGE: u8 = 1;
/// Unreadable, malformed or missing input data.
pub const EXIT_DATA: u8 = 2;
/// A computed result violated a checked invariant.
pub const EXIT_INVARIANT: u8 = 3;

/// An error paired with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::usage_from(anyhow::anyhow!("{msg}"))
    }

    pub fn usage_from(error: anyhow::Error) -> Self {
        Self {
            code: EXIT_USAGE,
            error,
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn invariant(msg: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INVARIANT,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Classifies by the innermost library or I/O error in the chain:
/// configuration errors are usage errors, data and I/O errors are data
/// errors, and anything else is an invariant violation.
impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error
            .chain()
            .find_map(|e| {
                if let Some(b) = e.downcast_ref::<blxam::Error>() {
                    Some(match b {
                        blxam::Error::Config(_) | blxam::Error::InfeasibleSeparation { .. } => {
                            EXIT_USAGE
                        }
                        b if b.is_data_error() => EXIT_DATA,
                        blxam::Error::Invalid(_) => EXIT_DATA,
                        _ => EXIT_INVARIANT,
                    })
                } else if e.is::<std::io::Error>() {
                    Some(EXIT_DATA)
                } else {
                    None
                }
            })
            .unwrap_or(EXIT_INVARIANT);
        Self { code, error }
    }
}

impl From<blxam::Error> for Failure {
    fn from(e: blxam::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}
