use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weights do not form a probability vector (total mass {total})")]
    NotNormalized { total: f64 },

    #[error("measure has no atoms")]
    EmptyMeasure,

    #[error("flow constraints violated: {0}")]
    FlowInfeasible(String),

    #[error("atom {index} is off the behavior (relative residual {residual:e})")]
    OffBehavior { index: usize, residual: f64 },

    #[error("linear program is infeasible (phase-one residual {residual:e} on row {row})")]
    Infeasible { row: usize, residual: f64 },

    #[error("linear program is unbounded (entering column {column})")]
    Unbounded { column: usize },

    #[error("simplex stopped after {0} iterations")]
    IterationLimit(usize),

    #[error("complementary slackness violated at t={t}, state {state}, input {input}: slack {slack:e}")]
    SlacknessViolation {
        t: usize,
        state: usize,
        input: usize,
        slack: f64,
    },
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
