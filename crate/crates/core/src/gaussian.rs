//! Two-mode Gaussian states: mean vector, covariance matrix and the
//! characteristic function they determine.

use nalgebra::Cholesky;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::optics::QuadratureVector;
use crate::symplectic::{self, symplectic_eigenvalues};
use crate::{Error, Mat4, Result, Vec4, PHYSICALITY_TOL};

/// First moments `(⟨q_a⟩, ⟨p_a⟩, ⟨q_b⟩, ⟨p_b⟩)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanVector(Vec4);

impl MeanVector {
    pub fn new(entries: [f64; 4]) -> Result<Self> {
        if entries.iter().all(|x| x.is_finite()) {
            Ok(Self(Vec4::from(entries)))
        } else {
            Err(Error::NonFinite("mean vector"))
        }
    }

    pub fn zero() -> Self {
        Self(Vec4::zeros())
    }

    pub fn as_vector(&self) -> &Vec4 {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }
}

/// Symmetric 4×4 covariance matrix, vacuum = ½·I.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceMatrix(Mat4);

impl CovarianceMatrix {
    /// Accepts a matrix that is symmetric up to rounding and stores the
    /// exactly symmetrized version.
    pub fn new(m: Mat4) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("covariance matrix"));
        }
        let asym = (m - m.transpose()).amax();
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "covariance matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: Mat4) -> Self {
        let mut s = m;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Self(s)
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(Mat4::from_fn(|i, j| rows[i][j]))
    }

    pub fn vacuum() -> Self {
        Self(Mat4::identity() * 0.5)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)]))
    }

    pub fn symplectic_eigenvalues(&self) -> Result<[f64; 2]> {
        symplectic_eigenvalues(&self.0)
    }

    /// Uncertainty-principle check `σ + (i/2)Ω ≥ 0`, i.e. `σ > 0` and
    /// `ν_min ≥ ½ − tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        is_physical(&self.0, tol)
    }
}

/// Physicality test on a raw matrix; singular or indefinite input is unphysical.
pub fn is_physical(sigma: &Mat4, tol: f64) -> bool {
    if Cholesky::new(*sigma).is_none() {
        return false;
    }
    match symplectic_eigenvalues(sigma) {
        Ok(nu) => nu[0] >= 0.5 - tol,
        Err(_) => false,
    }
}

/// A two-mode Gaussian state, validated physical at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeGaussianState {
    mean: MeanVector,
    cov: CovarianceMatrix,
}

impl TwoModeGaussianState {
    pub fn new(mean: MeanVector, cov: CovarianceMatrix) -> Result<Self> {
        Self::with_tolerance(mean, cov, PHYSICALITY_TOL)
    }

    pub fn with_tolerance(mean: MeanVector, cov: CovarianceMatrix, tol: f64) -> Result<Self> {
        if !cov.is_physical(tol) {
            let min_eig = cov
                .symplectic_eigenvalues()
                .map(|nu| nu[0])
                .unwrap_or(f64::NAN);
            return Err(Error::Unphysical { min_eig });
        }
        Ok(Self { mean, cov })
    }

    pub fn vacuum() -> Self {
        Self {
            mean: MeanVector::zero(),
            cov: CovarianceMatrix::vacuum(),
        }
    }

    /// Two-mode squeezed vacuum, `σ = ½[[cosh2r·I, sinh2r·Z], [sinh2r·Z, cosh2r·I]]`
    /// with `Z = diag(1, −1)`.
    pub fn two_mode_squeezed(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::NonFinite("squeezing parameter"));
        }
        let c = 0.5 * (2.0 * r).cosh();
        let s = 0.5 * (2.0 * r).sinh();
        let cov = CovarianceMatrix::from_rows([
            [c, 0.0, s, 0.0],
            [0.0, c, 0.0, -s],
            [s, 0.0, c, 0.0],
            [0.0, -s, 0.0, c],
        ])?;
        Ok(Self {
            mean: MeanVector::zero(),
            cov,
        })
    }

    /// A random physical state: means uniform in `[-2, 2]⁴`, covariance a
    /// thermal spectrum in `[½, 2]` conjugated by a random symplectic matrix.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mean: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..=2.0));
        let nu1 = rng.random_range(0.5..2.0);
        let nu2 = rng.random_range(0.5..2.0);
        let s = symplectic::random_symplectic(rng);
        let d = Mat4::from_diagonal(&Vec4::new(nu1, nu1, nu2, nu2));
        Self {
            mean: MeanVector(Vec4::from(mean)),
            cov: CovarianceMatrix::symmetrized(s * d * s.transpose()),
        }
    }

    pub fn mean(&self) -> &MeanVector {
        &self.mean
    }

    pub fn cov(&self) -> &CovarianceMatrix {
        &self.cov
    }

    /// Shifts the first moments; the covariance is untouched.
    pub fn displace(&self, d: &MeanVector) -> Self {
        Self {
            mean: MeanVector(self.mean.0 + d.0),
            cov: self.cov,
        }
    }

    /// Adds `diag(n̄_a, n̄_a, n̄_b, n̄_b)` to the covariance.
    pub fn add_thermal_noise(&self, nbar_a: f64, nbar_b: f64) -> Result<Self> {
        for n in [nbar_a, nbar_b] {
            if !n.is_finite() {
                return Err(Error::NonFinite("mean photon number"));
            }
            if n < 0.0 {
                return Err(Error::NegativePhotonNumber(n));
            }
        }
        let noise = Mat4::from_diagonal(&Vec4::new(nbar_a, nbar_a, nbar_b, nbar_b));
        Ok(Self {
            mean: self.mean,
            cov: CovarianceMatrix(self.cov.0 + noise),
        })
    }

    /// `χ(λ) = exp{−½ λᵀσλ − i λᵀX}`.
    pub fn char_function(&self, lambda: &Vec4) -> Complex64 {
        let quad = lambda.dot(&(self.cov.0 * lambda));
        let lin = lambda.dot(&self.mean.0);
        Complex64::new(-0.5 * quad, -lin).exp()
    }

    /// Mean `v·X` and variance `vᵀσv` of the quadrature `v·(q_a, p_a, q_b, p_b)`.
    pub fn quadrature_moments(&self, v: &QuadratureVector) -> (f64, f64) {
        let v = v.as_vector();
        (v.dot(&self.mean.0), v.dot(&(self.cov.0 * v)))
    }
}

/// On-disk state: `{"mean": [4], "cov": [[4]; 4]}`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub mean: [f64; 4],
    pub cov: [[f64; 4]; 4],
}

impl From<&TwoModeGaussianState> for StateFile {
    fn from(s: &TwoModeGaussianState) -> Self {
        Self {
            mean: s.mean.to_array(),
            cov: s.cov.to_rows(),
        }
    }
}

impl TryFrom<StateFile> for TwoModeGaussianState {
    type Error = Error;

    fn try_from(f: StateFile) -> Result<Self> {
        Self::new(MeanVector::new(f.mean)?, CovarianceMatrix::from_rows(f.cov)?)
    }
}
