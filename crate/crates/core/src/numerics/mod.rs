//! Special functions, dense complex linear algebra and angular quadrature.

mod bessel;
mod linalg;
mod quadrature;

pub use bessel::bessel_j0;
pub use linalg::{
    frobenius, min_hermitian_eigenvalue, min_symmetric_eigenvalue, norm_inf, solve, ComplexMatrix,
    LuFactors, DEFAULT_RCOND_THRESHOLD,
};
pub use quadrature::{build_quadrature, gauss_legendre, PasSupport, QuadratureGrid, Resolution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("non-finite argument {0}")]
    NonFinite(f64),
    #[error("matrix is singular to working precision (rcond ~ {rcond:.3e})")]
    Singular { rcond: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown scattering support `{0}`")]
    UnknownSupport(String),
    #[error("invalid quadrature resolution: {0}")]
    Resolution(String),
}
