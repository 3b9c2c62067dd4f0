use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("point (nu={nu}, x={x}) lies outside the computational domain")]
    OutOfDomain { nu: f64, x: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("active-set iteration did not converge at time step {step}")]
    ActiveSetDivergence { step: usize },

    #[error("reduced complementarity solver did not converge at time step {step}")]
    ReducedNewton { step: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("binomial tree: {0}")]
    Tree(String),

    #[error("empty quote set: {0}")]
    EmptyQuoteSet(String),

    #[error("pricing failed for quote {id}: {source}")]
    Quote { id: usize, source: Box<Error> },

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("basis container: {0}")]
    Container(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
