//! Symplectic structure of two-mode phase space.
//!
//! All matrices act on the ordering (q_a, p_a, q_b, p_b). A Gaussian unitary
//! with symplectic matrix `S` maps a covariance matrix `σ → S σ Sᵀ` and
//! preserves `Ω = ω ⊕ ω`, `ω = [[0, 1], [-1, 0]]`.

use nalgebra::{Cholesky, SymmetricEigen};
use rand::Rng;

use crate::{Error, Mat4, Result};

/// The two-mode symplectic form.
pub fn omega() -> Mat4 {
    let mut o = Mat4::zeros();
    o[(0, 1)] = 1.0;
    o[(1, 0)] = -1.0;
    o[(2, 3)] = 1.0;
    o[(3, 2)] = -1.0;
    o
}

/// Returns true when `s Ω sᵀ = Ω` entrywise within `tol`.
pub fn is_symplectic(s: &Mat4, tol: f64) -> bool {
    let o = omega();
    (s * o * s.transpose() - o).amax() <= tol
}

fn check_finite(m: &Mat4) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("covariance matrix"))
    }
}

/// Symplectic eigenvalues `(ν₁, ν₂)`, ascending: the moduli of the
/// eigenvalue pairs `±ν` of `iΩσ`.
///
/// Positive-definite input goes through the Cholesky factor `σ = L Lᵀ`:
/// `Ωσ` is similar to the antisymmetric `K = Lᵀ Ω L`, and `KᵀK` is symmetric
/// with eigenvalues `ν²`, each twice. Indefinite (but nonsingular) input falls
/// back to the general eigenvalues of `Ωσ`.
pub fn symplectic_eigenvalues(sigma: &Mat4) -> Result<[f64; 2]> {
    check_finite(sigma)?;
    let scale = sigma.amax();
    if scale == 0.0 {
        return Err(Error::Singular);
    }
    let spectrum = SymmetricEigen::new(*sigma).eigenvalues;
    if spectrum.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min) <= 1e-14 * scale {
        return Err(Error::Singular);
    }

    if let Some(chol) = Cholesky::new(*sigma) {
        let l = chol.l();
        let k = l.transpose() * omega() * l;
        let ktk = k.transpose() * k;
        let ktk = (ktk + ktk.transpose()) * 0.5;
        let mut sq: Vec<f64> = SymmetricEigen::new(ktk).eigenvalues.iter().map(|x| x.max(0.0)).collect();
        sq.sort_by(f64::total_cmp);
        let nu_max = (0.5 * (sq[2] + sq[3])).sqrt();
        // ν₁ν₂ = √det σ = ∏ Lᵢᵢ; avoids cancellation in the small eigenvalue.
        let nu_min = l.diagonal().product() / nu_max;
        return Ok([nu_min.min(nu_max), nu_max.max(nu_min)]);
    }
    let mut moduli: Vec<f64> = (omega() * sigma)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(f64::total_cmp);
    Ok([
        0.5 * (moduli[0] + moduli[1]),
        0.5 * (moduli[2] + moduli[3]),
    ])
}

/// Williamson normal form `σ = Sᵀ diag(ν₁, ν₁, ν₂, ν₂) S` with `S` symplectic.
#[derive(Debug, Clone)]
pub struct Williamson {
    /// Symplectic eigenvalues, ascending.
    pub nu: [f64; 2],
    pub s: Mat4,
}

impl Williamson {
    pub fn diagonal(&self) -> Mat4 {
        Mat4::from_diagonal(&crate::Vec4::new(
            self.nu[0], self.nu[0], self.nu[1], self.nu[1],
        ))
    }

    /// Rebuilds `Sᵀ D S` for a replacement spectrum.
    pub fn recompose(&self, nu: [f64; 2]) -> Mat4 {
        let d = Mat4::from_diagonal(&crate::Vec4::new(nu[0], nu[0], nu[1], nu[1]));
        let out = self.s.transpose() * d * self.s;
        (out + out.transpose()) * 0.5
    }
}

/// Williamson decomposition of a positive-definite covariance matrix.
///
/// With `A = σ^{-1/2} Ω σ^{-1/2}` (antisymmetric, eigenvalues `±i/ν`), an
/// orthogonal `O = [u₁ w₁ u₂ w₂]` with `w = -ν A u` brings `A` to canonical
/// block form; then `T = σ^{-1/2} O D^{1/2}` satisfies `Tᵀ σ T = D` and
/// `Tᵀ Ω T = Ω`, so `S = T⁻¹`.
pub fn williamson(sigma: &Mat4) -> Result<Williamson> {
    check_finite(sigma)?;
    let eig = SymmetricEigen::new(*sigma);
    if eig.eigenvalues.iter().any(|&x| x <= 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let inv_sqrt = Mat4::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
    let sigma_inv_sqrt = eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let a = sigma_inv_sqrt * omega() * sigma_inv_sqrt;

    let ata = a.transpose() * a;
    let ata = (ata + ata.transpose()) * 0.5;
    let inner = SymmetricEigen::new(ata);
    // Descending in 1/ν², i.e. ascending in ν.
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| inner.eigenvalues[j].total_cmp(&inner.eigenvalues[i]));
    let vecs: Vec<crate::Vec4> = order
        .iter()
        .map(|&i| inner.eigenvectors.column(i).into_owned())
        .collect();

    let u1 = vecs[0].normalize();
    let au1 = a * u1;
    let nu1 = 1.0 / au1.norm();
    let w1 = -nu1 * au1;

    // Second pair: the remaining direction least contained in span{u₁, w₁}.
    let mut best = None;
    let mut best_norm = -1.0;
    for v in &vecs[1..] {
        let r = v - u1 * u1.dot(v) - w1 * w1.dot(v);
        let n = r.norm();
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = Some(r / n);
        }
    }
    let u2 = best.ok_or(Error::Singular)?;
    let au2 = a * u2;
    let nu2 = 1.0 / au2.norm();
    let w2 = -nu2 * au2;

    let o = Mat4::from_columns(&[u1, w1, u2, w2]);
    let d_sqrt = Mat4::from_diagonal(&crate::Vec4::new(
        nu1.sqrt(),
        nu1.sqrt(),
        nu2.sqrt(),
        nu2.sqrt(),
    ));
    let t = sigma_inv_sqrt * o * d_sqrt;
    let s = t.try_inverse().ok_or(Error::Singular)?;
    let (nu, s) = if nu1 <= nu2 {
        ([nu1, nu2], s)
    } else {
        // Swap the two modes, which is itself symplectic.
        let p = mode_swap();
        ([nu2, nu1], p * s)
    };
    Ok(Williamson { nu, s })
}

fn mode_swap() -> Mat4 {
    let mut p = Mat4::zeros();
    p[(0, 2)] = 1.0;
    p[(1, 3)] = 1.0;
    p[(2, 0)] = 1.0;
    p[(3, 1)] = 1.0;
    p
}

/// Phase-space rotation of both modes: `x_φ = cos φ q + sin φ p` becomes the new `q`.
pub fn phase_rotation(phi_a: f64, phi_b: f64) -> Mat4 {
    let mut s = Mat4::zeros();
    for (k, phi) in [(0, phi_a), (2, phi_b)] {
        let (sn, c) = phi.sin_cos();
        s[(k, k)] = c;
        s[(k, k + 1)] = sn;
        s[(k + 1, k)] = -sn;
        s[(k + 1, k + 1)] = c;
    }
    s
}

/// Independent single-mode squeezers, `q → e^{-r} q`, `p → e^{r} p`.
pub fn single_mode_squeezers(r_a: f64, r_b: f64) -> Mat4 {
    Mat4::from_diagonal(&crate::Vec4::new(
        (-r_a).exp(),
        r_a.exp(),
        (-r_b).exp(),
        r_b.exp(),
    ))
}

/// Real beam splitter with transmissivity `cos²θ`.
pub fn beam_splitter(theta: f64) -> Mat4 {
    let (sn, c) = theta.sin_cos();
    let mut s = Mat4::identity() * c;
    s[(0, 2)] = sn;
    s[(1, 3)] = sn;
    s[(2, 0)] = -sn;
    s[(3, 1)] = -sn;
    s
}

/// Two-mode squeezer with q–q correlations and p–p anticorrelations.
pub fn two_mode_squeezer(r: f64) -> Mat4 {
    let (ch, sh) = (r.cosh(), r.sinh());
    let mut s = Mat4::identity() * ch;
    s[(0, 2)] = sh;
    s[(2, 0)] = sh;
    s[(1, 3)] = -sh;
    s[(3, 1)] = -sh;
    s
}

/// A random two-mode symplectic matrix built from rotations, squeezers,
/// a beam splitter and a two-mode squeezer.
pub fn random_symplectic<R: Rng + ?Sized>(rng: &mut R) -> Mat4 {
    use std::f64::consts::PI;
    let mut angle = || rng.random_range(-PI..PI);
    let (p1, p2, p3, p4, theta) = (angle(), angle(), angle(), angle(), angle());
    let r1 = rng.random_range(-0.8..0.8);
    let r2 = rng.random_range(-0.8..0.8);
    let r = rng.random_range(-0.8..0.8);
    phase_rotation(p1, p2)
        * single_mode_squeezers(r1, r2)
        * beam_splitter(theta)
        * two_mode_squeezer(r)
        * phase_rotation(p3, p4)
}
