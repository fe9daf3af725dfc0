use thiserror::Error;

use crate::model::AssumptionA1;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    #[error("could not parse parameters: {0}")]
    ParamParse(String),

    #[error("assumption (A1) violated: {0}")]
    AssumptionA1(AssumptionA1),

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("inadmissible state (x = {x}, h = {h}): wealth must be at least {floor}")]
    Inadmissible { x: f64, h: f64, floor: f64 },

    #[error("root bracket failure in {op}: {detail}")]
    Bracket { op: &'static str, detail: String },

    #[error("no convergence in {op} after {iterations} iterations")]
    NoConvergence { op: &'static str, iterations: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn bracket(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Bracket {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by the configuration rather than by the state
    /// or by numerics.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::ParamParse(_)
                | Error::AssumptionA1(_)
                | Error::InvalidConfig(_)
        )
    }

    pub fn is_inadmissible(&self) -> bool {
        matches!(self, Error::Inadmissible { .. })
    }
}
