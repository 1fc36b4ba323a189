use thiserror::Error;

use crate::types::VehicleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NumericFault(&'static str),

    #[error("query t={query:.6}s is past the estimate horizon ending at {end:.6}s")]
    HorizonExhausted { query: f64, end: f64 },

    #[error("query t={query:.6}s is not after the estimate anchor {anchor:.6}s")]
    BeforeAnchor { query: f64, anchor: f64 },

    #[error("vehicle {0} has neither a previous estimate nor any beacon from its target")]
    ColdStart(VehicleId),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("numeric fault at step {step} (vehicle {vehicle}): {source}")]
    Aborted {
        step: u64,
        vehicle: VehicleId,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for faults raised by non-finite arithmetic, including engine aborts.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericFault(_) | Error::Aborted { .. })
    }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericFault(what))
    }
}
