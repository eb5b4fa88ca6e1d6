use thiserror::Error;

/// Every failure names the module and the invariant that broke.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("params: constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("params: integer budget of {budget} bits exceeded ({needed} bits needed); lower the stage count")]
    Overflow { needed: u64, budget: u64 },
    #[error("lattice: stage {0} is empty (window of H or primes is empty)")]
    EmptyStage(usize),
    #[error("lattice: no child survives the intersection at stage {0}")]
    EmptyIntersection(usize),
    #[error("lattice: fewer than 2 intervals")]
    Degenerate,
    #[error("measure: parent {parent} at stage {stage} has no child")]
    EmptyParent { stage: usize, parent: usize },
    #[error("measure: point lies outside the support")]
    PointOutsideSupport,
    #[error("spectrum: error budget {err:e} exceeds tolerance {tol:e}")]
    BudgetExceeded { err: f64, tol: f64 },
    #[error("spectrum: mass escaped the window [1/2, 3/2]: G(0) = {0}")]
    MassEscaped(f64),
    #[error("spectrum: only {0} nonempty dyadic shells, need 4")]
    InsufficientShells(usize),
    #[error("spectrum: prime window is empty")]
    EmptyWindow,
    #[error("restriction: exponent {0} is not positive")]
    ExponentNonpositive(f64),
    #[error("restriction: prime {0} is outside the window")]
    PrimeOutsideWindow(u64),
    #[error("cache: corrupt entry: {0}")]
    CorruptCache(String),
    #[error("{module}: instance too large: {what}")]
    TooLarge { module: &'static str, what: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn too_large(module: &'static str, what: impl Into<String>) -> LabError {
    LabError::TooLarge { module, what: what.into() }
}
