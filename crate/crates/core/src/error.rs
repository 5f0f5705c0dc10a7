use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("displacement amplitude |alpha|^2 = {amp_sq:.4} exceeds the support guard; need dim >= {required_dim}")]
    AmplitudeTooLarge { amp_sq: f64, required_dim: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state has vanishing trace")]
    DegenerateState,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("operation unsupported in collective basis: {0}")]
    UnsupportedBasis(String),

    #[error("vanishing postselection branch (probability {probability:.3e}){}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    VanishingBranch {
        probability: f64,
        iteration: Option<usize>,
    },

    #[error("integrator failed to converge: residual {residual:.3e} after {steps} steps")]
    ConvergenceFailure { residual: f64, steps: usize },

    #[error("positivity violated (min eigenvalue {min_eigenvalue:.3e}); reduce the integration step")]
    StepSize { min_eigenvalue: f64 },

    #[error("linear algebra backend error: {0}")]
    Linalg(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
