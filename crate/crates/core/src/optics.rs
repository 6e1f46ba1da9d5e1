//! Mode selection ahead of the homodyne detector.
//!
//! The two input modes, `a` (vertical) and `b` (horizontal), pass through an
//! optional λ/4 plate and a polarization rotator `R_θ`; a PBS then sends the
//! vertical component to the detector. The detected mode is
//!
//! ```text
//! k = e^{iφ_w} cos θ · a + sin θ · b,    φ_w = π/2 with the λ/4 plate, 0 otherwise
//! ```
//!
//! and homodyning `k` at LO phase `φ` measures
//! `x_{k,φ} = cos θ · x_{a,φ−φ_w} + sin θ · x_{b,φ}`, where
//! `x_{m,ψ} = cos ψ · q_m + sin ψ · p_m`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::{Error, Result, Vec4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeLabel {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl ModeLabel {
    pub const ALL: [ModeLabel; 6] = [
        ModeLabel::A,
        ModeLabel::B,
        ModeLabel::C,
        ModeLabel::D,
        ModeLabel::E,
        ModeLabel::F,
    ];

    pub fn token(self) -> char {
        match self {
            ModeLabel::A => 'a',
            ModeLabel::B => 'b',
            ModeLabel::C => 'c',
            ModeLabel::D => 'd',
            ModeLabel::E => 'e',
            ModeLabel::F => 'f',
        }
    }

    fn from_token(c: &str) -> Option<Self> {
        Some(match c {
            "a" => ModeLabel::A,
            "b" => ModeLabel::B,
            "c" => ModeLabel::C,
            "d" => ModeLabel::D,
            "e" => ModeLabel::E,
            "f" => ModeLabel::F,
            _ => return None,
        })
    }
}

/// LO phases used by the schedule: `x` (0), `y` (π/2), `z` (π/4), `t` (−π/4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuadraturePhase {
    X,
    Y,
    Z,
    T,
}

impl QuadraturePhase {
    pub const ALL: [QuadraturePhase; 4] = [
        QuadraturePhase::X,
        QuadraturePhase::Y,
        QuadraturePhase::Z,
        QuadraturePhase::T,
    ];

    pub fn angle(self) -> f64 {
        match self {
            QuadraturePhase::X => 0.0,
            QuadraturePhase::Y => FRAC_PI_2,
            QuadraturePhase::Z => FRAC_PI_4,
            QuadraturePhase::T => -FRAC_PI_4,
        }
    }

    pub fn token(self) -> char {
        match self {
            QuadraturePhase::X => 'x',
            QuadraturePhase::Y => 'y',
            QuadraturePhase::Z => 'z',
            QuadraturePhase::T => 't',
        }
    }

    fn from_token(c: &str) -> Option<Self> {
        Some(match c {
            "x" => QuadraturePhase::X,
            "y" => QuadraturePhase::Y,
            "z" => QuadraturePhase::Z,
            "t" => QuadraturePhase::T,
            _ => return None,
        })
    }
}

/// One schedule entry: which mode is selected and at which LO phase.
/// Rendered as `"<mode>:<phase>"`, e.g. `"e:y"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Setting {
    pub mode: ModeLabel,
    pub phase: QuadraturePhase,
}

impl Setting {
    pub const fn new(mode: ModeLabel, phase: QuadraturePhase) -> Self {
        Self { mode, phase }
    }

    pub fn quadrature_vector(self) -> QuadratureVector {
        quadrature_vector(self.mode, self.phase)
    }

    pub fn optical_setting(self) -> OpticalSetting {
        OpticalSetting::for_mode(self.mode).with_lo_phase(self.phase.angle())
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mode.token(), self.phase.token())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownSetting(s.to_string());
        let (m, p) = s.trim().split_once(':').ok_or_else(unknown)?;
        let mode = ModeLabel::from_token(m).ok_or_else(unknown)?;
        let phase = QuadraturePhase::from_token(p).ok_or_else(unknown)?;
        Ok(Setting { mode, phase })
    }
}

/// λ/4 plate, rotator angle and (once chosen) the LO phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalSetting {
    pub quarter_wave: bool,
    pub theta: f64,
    pub lo_phase: Option<f64>,
}

impl OpticalSetting {
    /// Wave-plate configuration selecting `label`. Modes `a`–`e` follow the
    /// settings table of the apparatus; `f` uses the λ/4 plate with θ = −π/4,
    /// which gives `f = (ia − b)/√2`.
    pub fn for_mode(label: ModeLabel) -> Self {
        let (quarter_wave, theta) = match label {
            ModeLabel::A => (false, 0.0),
            ModeLabel::B => (false, FRAC_PI_2),
            ModeLabel::C => (false, FRAC_PI_4),
            ModeLabel::D => (false, -FRAC_PI_4),
            ModeLabel::E => (true, FRAC_PI_4),
            ModeLabel::F => (true, -FRAC_PI_4),
        };
        Self {
            quarter_wave,
            theta,
            lo_phase: None,
        }
    }

    pub fn with_lo_phase(self, phi: f64) -> Self {
        Self {
            lo_phase: Some(phi),
            ..self
        }
    }

    fn plate_phase(&self) -> f64 {
        if self.quarter_wave {
            FRAC_PI_2
        } else {
            0.0
        }
    }

    /// `(α, β)` with `k = α a + β b`.
    pub fn selected_mode_coefficients(&self) -> (Complex64, Complex64) {
        let (c, s) = cos_sin(self.theta);
        let (wc, ws) = cos_sin(self.plate_phase());
        (Complex64::new(wc * c, ws * c), Complex64::new(s, 0.0))
    }
}

/// `(cos x, sin x)`, exact at multiples of π/4.
fn cos_sin(x: f64) -> (f64, f64) {
    let k = x / FRAC_PI_4;
    let kr = k.round();
    if (k - kr).abs() < 1e-12 {
        let r = FRAC_1_SQRT_2;
        return match (kr as i64).rem_euclid(8) {
            0 => (1.0, 0.0),
            1 => (r, r),
            2 => (0.0, 1.0),
            3 => (-r, r),
            4 => (-1.0, 0.0),
            5 => (-r, -r),
            6 => (0.0, -1.0),
            _ => (r, -r),
        };
    }
    let (s, c) = x.sin_cos();
    (c, s)
}

/// A quadrature written as a linear form on `(q_a, p_a, q_b, p_b)`; unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureVector(Vec4);

impl QuadratureVector {
    pub const NORM_TOL: f64 = 1e-12;

    pub fn new(v: [f64; 4]) -> Result<Self> {
        let v = Vec4::from(v);
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self(v))
    }

    /// Quadrature `x_{k,φ}` of the mode `k = α a + β b` (`|α|² + |β|² = 1`).
    ///
    /// With `a = (q + ip)/√2`, `(a† e^{iφ}α* + a e^{−iφ}α)/√2` contributes
    /// `Re(α e^{−iφ}) q − Im(α e^{−iφ}) p`.
    pub fn from_mode_coefficients(alpha: Complex64, beta: Complex64, phi: f64) -> Result<Self> {
        let rot = Complex64::from_polar(1.0, -phi);
        let a = alpha * rot;
        let b = beta * rot;
        Self::new([a.re, -a.im, b.re, -b.im])
    }

    pub fn as_vector(&self) -> &Vec4 {
        &self.0
    }
}

/// Linear form of `x_{k,φ}` for the given mode and LO phase.
pub fn quadrature_vector(label: ModeLabel, phase: QuadraturePhase) -> QuadratureVector {
    let optics = OpticalSetting::for_mode(label);
    let phi = phase.angle();
    let (ct, st) = cos_sin(optics.theta);
    let (ca, sa) = cos_sin(phi - optics.plate_phase());
    let (cb, sb) = cos_sin(phi);
    QuadratureVector(Vec4::new(ct * ca, ct * sa, st * cb, st * sb))
}

/// The measurement schedule in its fixed order:
/// `x_a y_a z_a t_a x_b y_b z_b t_b x_c y_c x_d y_d x_e y_e`, plus `x_f y_f`
/// when `include_f` is set.
pub fn measurement_schedule(include_f: bool) -> Vec<Setting> {
    use ModeLabel::*;
    use QuadraturePhase::*;
    let mut s = vec![
        Setting::new(A, X),
        Setting::new(A, Y),
        Setting::new(A, Z),
        Setting::new(A, T),
        Setting::new(B, X),
        Setting::new(B, Y),
        Setting::new(B, Z),
        Setting::new(B, T),
        Setting::new(C, X),
        Setting::new(C, Y),
        Setting::new(D, X),
        Setting::new(D, Y),
        Setting::new(E, X),
        Setting::new(E, Y),
    ];
    if include_f {
        s.push(Setting::new(F, X));
        s.push(Setting::new(F, Y));
    }
    s
}
