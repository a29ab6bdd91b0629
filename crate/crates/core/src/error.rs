use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid market model: {0}")]
    InvalidModel(String),
    #[error("perturbation size {eps} is not admissible (eps0 = {eps0})")]
    Admissibility { eps: f64, eps0: f64 },
    #[error("(dx, eps) = ({dx}, {eps}) lies outside the admissibility ball of radius {delta}")]
    OutsideBall { dx: f64, eps: f64, delta: f64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported utility: {0}")]
    UnsupportedUtility(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no optimizer: one-step arbitrage at node {node}")]
    Arbitrage { node: usize },
    #[error("martingale is not representable at node {node} (residual {residual:e})")]
    Representation { node: usize, residual: f64 },
    #[error("risk-tolerance wealth process does not exist (distance to attainable span {certificate:e})")]
    NotReplicable { certificate: f64 },
    #[error("selection budget exhausted (best n = {best_n})")]
    BudgetExhausted { best_n: usize },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
