use thiserror::Error;

/// Errors raised by model handling, spectral analysis and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver failed to converge on a matrix of Frobenius norm {norm:.3e}")]
    Convergence { norm: f64 },

    #[error("eigenpair residual {residual:.3e} exceeds bound {bound:.3e}")]
    EigenResidual { residual: f64, bound: f64 },

    #[error("right-hand side has trace {trace:.3e}; a traceless matrix is required")]
    TraceContract { trace: f64 },

    #[error("restricted map is rank deficient: smallest singular value {sigma_min:.3e}")]
    RankDeficient { sigma_min: f64 },

    #[error("linear solve residual {residual:.3e} exceeds bound {bound:.3e}")]
    SolveResidual { residual: f64, bound: f64 },

    #[error("matrix is not Hermitian: deviation {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("model document: {0}")]
    Parse(String),

    #[error("model schema: {0}")]
    Schema(String),

    #[error("stochasticity violated: residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    Validation { residual: f64, tolerance: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unknown builtin model `{name}`; valid names: {valid}")]
    UnknownBuiltin { name: String, valid: String },

    #[error("map is not completely positive: Choi matrix has eigenvalue {min_eigenvalue:.3e}")]
    NotCompletelyPositive { min_eigenvalue: f64 },

    #[error("Perron eigenvector has negative part {min_eigenvalue:.3e} after Hermitian projection")]
    Positivity { min_eigenvalue: f64 },

    #[error("indeterminate spectral verdict: gap {gap:.3e} at the tolerance boundary; review with exact arithmetic")]
    Indeterminate { gap: f64 },

    #[error("irreducibility methods disagree: closure says {algebraic}, invariant state says {spectral}")]
    MethodDisagreement { algebraic: bool, spectral: bool },

    #[error("peripheral spectrum does not form a root-of-unity pattern: {0}")]
    SpectralPattern(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("outside supported scope: {0}")]
    Scope(String),

    #[error("eigenvalue 1 has multiplicity {multiplicity}; the invariant state is not unique (use the C^2 parameter path with an initial state)")]
    Multiplicity { multiplicity: usize },

    #[error("u-window too small: maximizer for x = {x:?} sits on the window edge with growing objective; enlarge the window")]
    Window { x: Vec<f64> },

    #[error("oracle cap exceeded: {0}")]
    CapExceeded(String),

    #[error("step probabilities sum to {sum:.12}, drift beyond tolerance")]
    NumericalDrift { sum: f64 },

    #[error("degenerate trajectory: {0}")]
    Degeneracy(String),

    #[error("cannot standardize samples: {0}")]
    Standardization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
