use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state is in the {found} representation, expected {expected}")]
    Representation { expected: &'static str, found: &'static str },

    #[error("states live on different grids or have different component counts")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("non-unitary input: {0}")]
    NonUnitary(String),

    #[error("velocity floor {v_min} exceeds the maximum grid speed {v_max}; every spectral point is critical")]
    AllCritical { v_min: f64, v_max: f64 },

    #[error("guard band violated: mass {mass:.3e} outside the guard region exceeds {limit:.3e}")]
    GuardBand { mass: f64, limit: f64 },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no convergence within horizon {horizon}; final increment {last_increment:.3e}")]
    NonConvergence { horizon: usize, last_increment: f64 },

    #[error("fidelity failure: {0}")]
    Fidelity(String),

    #[error("branch ambiguity: {0}")]
    Branch(String),

    #[error("unsupported model for this operation: {0}")]
    Unsupported(String),

    #[error("singular point: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
