use thiserror::Error;

/// Errors raised by model construction, simulation, estimation and testing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("nonstationary model: {0}")]
    NonstationaryModel(String),

    #[error("scale not positive at step {index}: sigma = {value}")]
    ScaleNotPositive { index: usize, value: f64 },

    #[error("singular least-squares design (reciprocal condition {rcond:e})")]
    SingularDesign { rcond: f64 },

    #[error("central-sequence gradient {gradient:e} below floor {floor:e} for component {component}")]
    GradientTooSmall {
        component: usize,
        gradient: f64,
        floor: f64,
    },

    #[error("tau^2 is negative ({0:e}); expectations are inconsistent")]
    NegativeTau2(f64),

    #[error("tau^2 must be positive for the test, got {0:e}")]
    NonpositiveTau2(f64),

    #[error("scale shift beta = {value} at step {index} is not positive")]
    InvalidScaleShift { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that come from a bad configuration rather than a
    /// runtime event along a simulated path.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::NonstationaryModel(_) | Error::Dimension { .. } | Error::InvalidArgument(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
