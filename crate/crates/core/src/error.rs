use thiserror::Error;

/// Everything that can go wrong inside the numerical pipeline.
///
/// The variants double as the "failed invariant" names reported by the CLI,
/// so they stay coarse on purpose.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("singular kernel evaluation at |x| = {0:e}")]
    SingularEvaluation(f64),

    #[error("conjugate gradients did not converge: {iterations} iterations, relative residual {residual:e} (target {tol:e})")]
    CgNotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("monte carlo weight blow-up in {term}: weight {weight:e} vs running mean {mean:e}")]
    UnboundedWeight {
        term: String,
        weight: f64,
        mean: f64,
    },

    #[error("gamma tail bound {tail:e} exceeds 10% of gamma {gamma:e}; retry with a larger Z")]
    GammaTail { tail: f64, gamma: f64 },

    #[error("born bracket inverted: B2 = {b2:e} exceeds B1 = {b1:e} beyond the error {err:e}; lambda is too large for the two-term bracket, use the grid oracle")]
    BracketInverted { b1: f64, b2: f64, err: f64 },

    #[error("memory budget exceeded: need {need} bytes, budget {budget}")]
    MemoryBudget { need: u64, budget: u64 },

    #[error("at lambda = {lambda}: {source}")]
    Rung {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
