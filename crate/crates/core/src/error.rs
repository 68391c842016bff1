use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid mesh input: {0}")]
    InvalidMesh(String),
    #[error("hierarchy too large: finest level has {dofs} interior DOFs, cap is {cap}")]
    MemoryCap { dofs: usize, cap: usize },
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mass matrix not SPD (pivot {pivot} at column {column})")]
    NotSpd { column: usize, pivot: f64 },
    #[error("requested {requested} eigenpairs but the problem has dimension {dimension}")]
    TooManyEigenpairs { requested: usize, dimension: usize },
    #[error("dense problem of dimension {dimension} exceeds the dense cap {cap}")]
    DenseCap { dimension: usize, cap: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("CG did not reach relative residual {rel_tol:e} in {iterations} iterations (reached {achieved:e})")]
    NoConvergence {
        iterations: usize,
        rel_tol: f64,
        achieved: f64,
    },
    #[error("augmented space degenerate: correction vector is numerically inside the coarse space (pivot {pivot:e}, threshold {threshold:e})")]
    DegenerateAugmentedSpace { pivot: f64, threshold: f64 },
    #[error("dense eigensolver failed to converge")]
    EigenNoConvergence,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
