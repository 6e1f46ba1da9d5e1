//! Purity, PPT spectrum, logarithmic negativity and EPR variance of a
//! two-mode covariance matrix.
//!
//! Logarithms are natural, so a two-mode squeezed vacuum has `E_N = 2r`.
//! Inputs may be statistically unphysical estimates; values are computed as
//! defined and the physicality flag is reported alongside.

use serde::Serialize;

use crate::gaussian::is_physical;
use crate::symplectic::symplectic_eigenvalues;
use crate::{Error, Mat4, Result, Vec4, PHYSICALITY_TOL};

/// `Tr ρ² = 1 / (4 √det σ)`.
pub fn purity(sigma: &Mat4) -> Result<f64> {
    let det = sigma.determinant();
    if !det.is_finite() {
        return Err(Error::NonFinite("covariance matrix"));
    }
    if det <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(1.0 / (4.0 * det.sqrt()))
}

/// Partial transposition on mode b: `p_b → −p_b`.
pub fn partial_transpose(sigma: &Mat4) -> Mat4 {
    let flip = Mat4::from_diagonal(&Vec4::new(1.0, 1.0, 1.0, -1.0));
    flip * sigma * flip
}

/// Smallest symplectic eigenvalue of the partial transpose; below ½ certifies
/// entanglement of a Gaussian state.
pub fn ppt_min_symplectic_eig(sigma: &Mat4) -> Result<f64> {
    Ok(symplectic_eigenvalues(&partial_transpose(sigma))?[0])
}

/// `E_N = max(0, −ln 2ν̃₋)`.
pub fn log_negativity(sigma: &Mat4) -> Result<f64> {
    Ok(log_negativity_from_ppt(ppt_min_symplectic_eig(sigma)?))
}

fn log_negativity_from_ppt(nu: f64) -> f64 {
    (-(2.0 * nu).ln()).max(0.0)
}

/// `Var(q_a − q_b) + Var(p_a + p_b)`; 2 for vacuum, below 2 signals
/// nonclassical correlations.
pub fn epr_variance(sigma: &Mat4) -> f64 {
    sigma[(0, 0)] + sigma[(2, 2)] - 2.0 * sigma[(0, 2)] + sigma[(1, 1)] + sigma[(3, 3)]
        + 2.0 * sigma[(1, 3)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateDiagnostics {
    pub purity: f64,
    pub min_ppt_symplectic_eig: f64,
    pub log_negativity: f64,
    pub epr_variance: f64,
    pub physical: bool,
}

pub fn diagnose(sigma: &Mat4) -> Result<StateDiagnostics> {
    let nu = ppt_min_symplectic_eig(sigma)?;
    Ok(StateDiagnostics {
        purity: purity(sigma)?,
        min_ppt_symplectic_eig: nu,
        log_negativity: log_negativity_from_ppt(nu),
        epr_variance: epr_variance(sigma),
        physical: is_physical(sigma, PHYSICALITY_TOL),
    })
}
