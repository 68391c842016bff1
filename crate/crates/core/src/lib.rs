//! Eigenwise parallel augmented subspace eigensolver for P1 finite
//! elements on nested simplicial meshes.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix it
//! to `f64`.

pub mod assembly;
pub mod augmented;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod multigrid;
pub mod scalar;

pub use driver::{solve, ProblemKind, SolverConfig};
pub use error::{Error, Result};
pub use multigrid::MgConfig;
pub use scalar::Scalar;

pub type Mesh = mesh::Mesh<f64>;
pub type MeshHierarchy = mesh::MeshHierarchy<f64>;
pub type BoxDomain = mesh::BoxDomain<f64>;
pub type CsrMatrix = linalg::CsrMatrix<f64>;
pub type DenseMatrix = linalg::DenseMatrix<f64>;
pub type DenseEigenResult = linalg::DenseEigenResult<f64>;
pub type LevelOperators = assembly::LevelOperators<f64>;
pub type ProblemCoefficients = assembly::ProblemCoefficients<f64>;
pub type EigenPairState = augmented::EigenPairState<f64>;
pub type Setup = driver::Setup<f64>;
pub type RunReport = driver::RunReport<f64>;
pub type EigenPairReport = driver::EigenPairReport<f64>;
