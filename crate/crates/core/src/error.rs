use thiserror::Error;

/// Errors raised across the crate. Variant names follow the operation
/// contracts they come from.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // marked_tree
    #[error("node {0} has no parent in the record set")]
    MissingParent(String),
    #[error("children of node {node} are not numbered 1..={out_degree}")]
    ContiguityViolation { node: String, out_degree: u32 },
    #[error("node {0} sits at the horizon but carries a mark")]
    MarkedLeafAtHorizon(String),
    #[error("node {0} lies deeper than the tree height")]
    BeyondHorizon(String),
    #[error("node {0} appears twice")]
    DuplicateNode(String),
    #[error("horizon {requested} exceeds tree height {height}")]
    HorizonExceedsTree { requested: usize, height: usize },
    #[error("malformed tree record: {0}")]
    Parse(String),

    // laws
    #[error("not a probability distribution: {0}")]
    NotAProbability(String),
    #[error("offspring law is degenerate: p(0)+p(1) = {0} (must be < 1)")]
    Degenerate(f64),
    #[error("no out-degree can carry a mark (p(k)q(k) = 0 for every k)")]
    NoMarkPossible,
    #[error("operation needs a finite-support law")]
    UnsupportedInfiniteSupport,
    #[error("derivative order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    // moments
    #[error("offspring mean {0} is not subcritical")]
    NotSubcritical(f64),
    #[error("wrong criticality: {0}")]
    WrongCriticality(String),

    // penalty
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("masses do not add up to M_n: {0}")]
    InconsistentMasses(String),
    #[error("type-vector enumeration would exceed the cap of {cap} vectors")]
    TooManyTypeVectors { cap: usize },
    #[error("tilted law is not normalizable: {0}")]
    NotNormalizable(String),

    // sampler / oracle
    #[error("node budget of {0} exceeded")]
    NodeBudgetExceeded(usize),
    #[error("state space exceeds the cap of {0} trees")]
    StateSpaceTooLarge(usize),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
