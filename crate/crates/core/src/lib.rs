//! Covariance-matrix reconstruction of two-mode Gaussian states from
//! quadrature statistics collected with a single homodyne detector.
//!
//! The detector sees one vertically polarized mode at a time. A removable
//! quarter-wave plate and a polarization rotator select one of the modes
//!
//! ```text
//! a, b, c = (a+b)/√2, d = (a-b)/√2, e = (ia+b)/√2, f = (ia-b)/√2
//! ```
//!
//! and fourteen quadratures of the first five are enough to recover the
//! full 4×4 covariance matrix σ = V − M.
//!
//! Units follow `[q, p] = i`, so the vacuum covariance is `½·I`.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod measurement;
pub mod optics;
pub mod reconstruction;
pub mod symplectic;
pub mod verify;

pub use error::{Error, Result};
pub use gaussian::{CovarianceMatrix, MeanVector, TwoModeGaussianState};
pub use optics::{ModeLabel, QuadraturePhase, QuadratureVector, Setting};

/// Real 4×4 matrix in the (q_a, p_a, q_b, p_b) ordering.
pub type Mat4 = nalgebra::Matrix4<f64>;
/// Real 4-vector in the (q_a, p_a, q_b, p_b) ordering.
pub type Vec4 = nalgebra::Vector4<f64>;

/// Default tolerance of the physicality test on symplectic eigenvalues.
pub const PHYSICALITY_TOL: f64 = 1e-9;
