//! Covariance reconstruction `σ = V − M` from quadrature moments.
//!
//! `M` is the outer product of the first moments
//! `m = (⟨x_a⟩, ⟨y_a⟩, ⟨x_b⟩, ⟨y_b⟩)`. Each entry of `V` is a fixed linear
//! combination of measured second moments `⟨x_k²⟩`:
//!
//! ```text
//! V₁₁ = ⟨x_a²⟩          V₁₂ = ½(⟨z_a²⟩ − ⟨t_a²⟩)   V₁₃ = ½(⟨x_c²⟩ − ⟨x_d²⟩)
//! V₂₂ = ⟨y_a²⟩          V₃₄ = ½(⟨z_b²⟩ − ⟨t_b²⟩)   V₂₄ = ½(⟨y_c²⟩ − ⟨y_d²⟩)
//! V₃₃ = ⟨x_b²⟩          V₁₄ = ⟨y_e²⟩ − ½(⟨x_a²⟩ + ⟨y_b²⟩)   [= ½(⟨y_e²⟩ − ⟨y_f²⟩)]
//! V₄₄ = ⟨y_b²⟩          V₂₃ = ½(⟨x_b²⟩ + ⟨y_a²⟩) − ⟨x_e²⟩   [= ½(⟨x_f²⟩ − ⟨x_e²⟩)]
//! ```
//!
//! Standard errors are propagated to first order, treating records as
//! independent and keeping the within-record covariance of `⟨x⟩` and `⟨x²⟩`.

use std::collections::BTreeMap;

use nalgebra::Cholesky;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, StateDiagnostics};
use crate::gaussian::is_physical;
use crate::measurement::{substream, Dataset};
use crate::optics::{ModeLabel, QuadraturePhase, Setting};
use crate::symplectic::{symplectic_eigenvalues, williamson};
use crate::{CovarianceMatrix, Error, Mat4, Result, Vec4, PHYSICALITY_TOL};

/// Number of estimated standard errors allowed below ν = ½ before a
/// reconstruction is called unphysical.
pub const PHYSICALITY_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }
}

/// Moments of a single quadrature record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordMoments {
    /// `⟨x⟩` with stderr `s/√N`.
    pub first: Estimate,
    /// `⟨x²⟩` with stderr `√((m₄ − m₂²)/N)`.
    pub second: Estimate,
    /// Sampling covariance of the two estimates, `(m₃ − m₁m₂)/N`.
    pub cov_first_second: f64,
    /// `None` for exact (analytic) moments.
    pub count: Option<usize>,
    /// All samples identical.
    pub degenerate: bool,
}

impl RecordMoments {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let m1 = samples.iter().sum::<f64>() / nf;
        let (mut m2, mut m3, mut m4, mut css) = (0.0, 0.0, 0.0, 0.0);
        for &x in samples {
            let x2 = x * x;
            m2 += x2;
            m3 += x2 * x;
            m4 += x2 * x2;
            css += (x - m1) * (x - m1);
        }
        m2 /= nf;
        m3 /= nf;
        m4 /= nf;
        let first_se = if n > 1 { (css / ((nf - 1.0) * nf)).sqrt() } else { 0.0 };
        let degenerate = samples.iter().all(|&x| x == samples[0]);
        Self {
            first: Estimate::new(m1, first_se),
            second: Estimate::new(m2, ((m4 - m2 * m2).max(0.0) / nf).sqrt()),
            cov_first_second: (m3 - m1 * m2) / nf,
            count: Some(n),
            degenerate,
        }
    }
}

/// First and second moments for every setting of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    entries: BTreeMap<Setting, RecordMoments>,
}

impl MomentSet {
    pub fn from_entries(entries: impl IntoIterator<Item = (Setting, RecordMoments)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (s, m) in entries {
            if m.second.value.is_nan() || m.second.value <= 0.0 {
                return Err(Error::InvalidDataset(format!(
                    "second moment of `{s}` must be positive, got {}",
                    m.second.value
                )));
            }
            if map.insert(s, m).is_some() {
                return Err(Error::DuplicateSetting(s.to_string()));
            }
        }
        let settings: Vec<Setting> = map.keys().copied().collect();
        crate::measurement::validate_schedule(&settings)?;
        Ok(Self { entries: map })
    }

    pub fn get(&self, s: Setting) -> Result<&RecordMoments> {
        self.entries
            .get(&s)
            .ok_or_else(|| Error::MissingSetting(s.to_string()))
    }

    pub fn first(&self, s: Setting) -> Result<Estimate> {
        self.get(s).map(|m| m.first)
    }

    pub fn second(&self, s: Setting) -> Result<Estimate> {
        self.get(s).map(|m| m.second)
    }

    pub fn has_f(&self) -> bool {
        self.entries.keys().any(|s| s.mode == ModeLabel::F)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Setting, &RecordMoments)> {
        self.entries.iter()
    }

    pub fn degenerate_settings(&self) -> Vec<Setting> {
        self.entries
            .iter()
            .filter(|(_, m)| m.degenerate)
            .map(|(s, _)| *s)
            .collect()
    }

    fn with_entry(&self, s: Setting, f: impl FnOnce(&mut RecordMoments)) -> Self {
        let mut out = self.clone();
        if let Some(m) = out.entries.get_mut(&s) {
            f(m);
        }
        out
    }
}

/// Per-record moment estimation. Every record needs at least two samples.
pub fn estimate_moment_set(dataset: &Dataset) -> Result<MomentSet> {
    let entries = dataset
        .records()
        .par_iter()
        .map(|r| {
            if r.samples.len() < 2 {
                return Err(Error::TooFewSamples {
                    setting: r.setting.to_string(),
                    count: r.samples.len(),
                });
            }
            Ok((r.setting, RecordMoments::from_samples(&r.samples)))
        })
        .collect::<Result<Vec<_>>>()?;
    MomentSet::from_entries(entries)
}

/// How the redundant f-mode quadratures enter `V₁₄` and `V₂₃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FPolicy {
    /// Use only the 14 a–e quadratures.
    #[default]
    EOnly,
    /// Unweighted mean of the e-based and f-based forms.
    AverageEf,
}

impl std::str::FromStr for FPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e_only" => Ok(FPolicy::EOnly),
            "average_ef" => Ok(FPolicy::AverageEf),
            _ => Err(Error::InvalidConfig(format!(
                "unknown f policy `{s}` (expected e_only or average_ef)"
            ))),
        }
    }
}

/// `Σ cₖ ⟨xₖ²⟩` over a handful of settings.
pub type LinearForm = Vec<(Setting, f64)>;

const fn st(mode: ModeLabel, phase: QuadraturePhase) -> Setting {
    Setting::new(mode, phase)
}

const AX: Setting = st(ModeLabel::A, QuadraturePhase::X);
const AY: Setting = st(ModeLabel::A, QuadraturePhase::Y);
const AZ: Setting = st(ModeLabel::A, QuadraturePhase::Z);
const AT: Setting = st(ModeLabel::A, QuadraturePhase::T);
const BX: Setting = st(ModeLabel::B, QuadraturePhase::X);
const BY: Setting = st(ModeLabel::B, QuadraturePhase::Y);
const BZ: Setting = st(ModeLabel::B, QuadraturePhase::Z);
const BT: Setting = st(ModeLabel::B, QuadraturePhase::T);
const CX: Setting = st(ModeLabel::C, QuadraturePhase::X);
const CY: Setting = st(ModeLabel::C, QuadraturePhase::Y);
const DX: Setting = st(ModeLabel::D, QuadraturePhase::X);
const DY: Setting = st(ModeLabel::D, QuadraturePhase::Y);
const EX: Setting = st(ModeLabel::E, QuadraturePhase::X);
const EY: Setting = st(ModeLabel::E, QuadraturePhase::Y);
const FX: Setting = st(ModeLabel::F, QuadraturePhase::X);
const FY: Setting = st(ModeLabel::F, QuadraturePhase::Y);

/// Records whose sample means give `(⟨q_a⟩, ⟨p_a⟩, ⟨q_b⟩, ⟨p_b⟩)`.
pub const MEAN_SETTINGS: [Setting; 4] = [AX, AY, BX, BY];

/// `V₁₄` from `y_e`, `x_a`, `y_b`.
pub fn v14_e_form() -> LinearForm {
    vec![(EY, 1.0), (AX, -0.5), (BY, -0.5)]
}

/// `V₁₄` from `y_e`, `y_f`.
pub fn v14_f_form() -> LinearForm {
    vec![(EY, 0.5), (FY, -0.5)]
}

/// `V₂₃` from `x_b`, `y_a`, `x_e`.
pub fn v23_e_form() -> LinearForm {
    vec![(BX, 0.5), (AY, 0.5), (EX, -1.0)]
}

/// `V₂₃` from `x_f`, `x_e`.
pub fn v23_f_form() -> LinearForm {
    vec![(FX, 0.5), (EX, -0.5)]
}

fn average(a: LinearForm, b: LinearForm) -> LinearForm {
    let mut out: Vec<(Setting, f64)> = Vec::new();
    for (s, c) in a.into_iter().chain(b) {
        match out.iter_mut().find(|(t, _)| *t == s) {
            Some((_, acc)) => *acc += 0.5 * c,
            None => out.push((s, 0.5 * c)),
        }
    }
    out
}

/// The linear form giving `V_ij` (0-based indices, symmetric).
pub fn variance_form(i: usize, j: usize, policy: FPolicy) -> LinearForm {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    match (i, j) {
        (0, 0) => vec![(AX, 1.0)],
        (1, 1) => vec![(AY, 1.0)],
        (2, 2) => vec![(BX, 1.0)],
        (3, 3) => vec![(BY, 1.0)],
        (0, 1) => vec![(AZ, 0.5), (AT, -0.5)],
        (2, 3) => vec![(BZ, 0.5), (BT, -0.5)],
        (0, 2) => vec![(CX, 0.5), (DX, -0.5)],
        (1, 3) => vec![(CY, 0.5), (DY, -0.5)],
        (0, 3) => match policy {
            FPolicy::EOnly => v14_e_form(),
            FPolicy::AverageEf => average(v14_e_form(), v14_f_form()),
        },
        (1, 2) => match policy {
            FPolicy::EOnly => v23_e_form(),
            FPolicy::AverageEf => average(v23_e_form(), v23_f_form()),
        },
        _ => unreachable!("index out of range"),
    }
}

/// Evaluates a linear form on the second moments, with stderr assuming
/// independent records.
pub fn evaluate_form(ms: &MomentSet, form: &[(Setting, f64)]) -> Result<Estimate> {
    let mut value = 0.0;
    let mut var = 0.0;
    for (s, c) in form {
        let e = ms.second(*s)?;
        value += c * e.value;
        var += (c * e.stderr).powi(2);
    }
    Ok(Estimate::new(value, var.sqrt()))
}

fn check_policy(ms: &MomentSet, policy: FPolicy) -> Result<()> {
    if policy == FPolicy::AverageEf && !ms.has_f() {
        return Err(Error::MissingFRecords);
    }
    Ok(())
}

/// `M_ij = m_i m_j`.
pub fn build_mean_matrix(ms: &MomentSet) -> Result<Mat4> {
    let m = first_moments(ms)?;
    Ok(m * m.transpose())
}

fn first_moments(ms: &MomentSet) -> Result<Vec4> {
    let mut m = Vec4::zeros();
    for (k, s) in MEAN_SETTINGS.iter().enumerate() {
        m[k] = ms.first(*s)?.value;
    }
    Ok(m)
}

pub fn build_variance_matrix(ms: &MomentSet, policy: FPolicy) -> Result<Mat4> {
    check_policy(ms, policy)?;
    let mut v = Mat4::zeros();
    for i in 0..4 {
        for j in i..4 {
            let x = evaluate_form(ms, &variance_form(i, j, policy))?.value;
            v[(i, j)] = x;
            v[(j, i)] = x;
        }
    }
    Ok(v)
}

/// e- and f-based estimates of one redundant entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RedundantPair {
    pub e_based: Estimate,
    pub f_based: Estimate,
    /// `e_based − f_based`, with the stderr of the difference (shared records counted once).
    pub difference: Estimate,
}

fn redundant_pair(ms: &MomentSet, e: LinearForm, f: LinearForm) -> Result<RedundantPair> {
    let mut diff = e.clone();
    for (s, c) in &f {
        match diff.iter_mut().find(|(t, _)| t == s) {
            Some((_, acc)) => *acc -= c,
            None => diff.push((*s, -c)),
        }
    }
    Ok(RedundantPair {
        e_based: evaluate_form(ms, &e)?,
        f_based: evaluate_form(ms, &f)?,
        difference: evaluate_form(ms, &diff)?,
    })
}

/// `[V₁₄, V₂₃]` from both routes; requires the f records.
pub fn redundant_pairs(ms: &MomentSet) -> Result<[RedundantPair; 2]> {
    check_policy(ms, FPolicy::AverageEf)?;
    Ok([
        redundant_pair(ms, v14_e_form(), v14_f_form())?,
        redundant_pair(ms, v23_e_form(), v23_f_form())?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionOptions {
    pub f_policy: FPolicy,
    /// Undo the loss channel: `σ ← (σ − (1−η)/2·I)/η`.
    pub correct_efficiency: bool,
    pub project_to_physical: bool,
    pub bootstrap: Option<BootstrapOptions>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub stderr: Mat4,
    /// 2.5 % percentile of each entry.
    pub lower: Mat4,
    /// 97.5 % percentile of each entry.
    pub upper: Mat4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Estimated first moments `(⟨q_a⟩, ⟨p_a⟩, ⟨q_b⟩, ⟨p_b⟩)`.
    pub mean: Vec4,
    pub mean_stderr: Vec4,
    pub mean_matrix: Mat4,
    pub variance_matrix: Mat4,
    /// `variance_matrix − mean_matrix`.
    pub covariance: Mat4,
    pub stderr: Mat4,
    /// `None` when σ̂ is singular.
    pub min_symplectic_eig: Option<f64>,
    pub min_symplectic_eig_stderr: f64,
    /// σ̂ > 0 and `ν_min ≥ ½ − tol − 5·stderr(ν_min)`.
    pub physical: bool,
    /// σ̂ > 0 and `ν_min ≥ ½ − tol`, ignoring sampling error.
    pub strictly_physical: bool,
    pub projected: Option<Mat4>,
    pub degenerate_settings: Vec<Setting>,
    pub efficiency: f64,
    pub options: ReconstructionOptions,
    pub bootstrap: Option<BootstrapSummary>,
    /// Diagnostics of σ̂; `None` when σ̂ is singular or has `det σ̂ ≤ 0`.
    pub diagnostics: Option<DiagnosticsReport>,
    pub projected_diagnostics: Option<StateDiagnostics>,
}

/// Diagnostics of σ̂ with first-order standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    #[serde(flatten)]
    pub values: StateDiagnostics,
    pub stderr: DiagnosticsStderr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsStderr {
    pub purity: Option<f64>,
    pub min_ppt_symplectic_eig: Option<f64>,
    pub log_negativity: Option<f64>,
    pub epr_variance: Option<f64>,
}

impl ReconstructionResult {
    /// The projected covariance when projection was requested, otherwise σ̂.
    pub fn best_covariance(&self) -> &Mat4 {
        self.projected.as_ref().unwrap_or(&self.covariance)
    }
}

struct Matrices {
    m: Vec4,
    mean_matrix: Mat4,
    variance_matrix: Mat4,
    covariance: Mat4,
}

fn assemble(ms: &MomentSet, policy: FPolicy, eta: Option<f64>) -> Result<Matrices> {
    let mut m = first_moments(ms)?;
    let mut variance_matrix = build_variance_matrix(ms, policy)?;
    if let Some(eta) = eta {
        m /= eta.sqrt();
        variance_matrix = (variance_matrix - Mat4::identity() * (0.5 * (1.0 - eta))) / eta;
    }
    let mean_matrix = m * m.transpose();
    Ok(Matrices {
        m,
        mean_matrix,
        covariance: variance_matrix - mean_matrix,
        variance_matrix,
    })
}

fn correction(efficiency: f64, options: &ReconstructionOptions) -> Option<f64> {
    (options.correct_efficiency && efficiency != 1.0).then_some(efficiency)
}

/// First-order stderr of `σ̂_ij`, combining every record's
/// `(⟨x⟩, ⟨x²⟩)` sampling covariance.
fn entry_stderr(ms: &MomentSet, m: &Vec4, policy: FPolicy, i: usize, j: usize) -> Result<f64> {
    let mut grads: BTreeMap<Setting, (f64, f64)> = BTreeMap::new();
    for (s, c) in variance_form(i, j, policy) {
        grads.entry(s).or_default().1 += c;
    }
    grads.entry(MEAN_SETTINGS[i]).or_default().0 -= m[j];
    grads.entry(MEAN_SETTINGS[j]).or_default().0 -= m[i];
    let mut var = 0.0;
    for (s, (gm, gs)) in grads {
        let r = ms.get(s)?;
        var += gm * gm * r.first.stderr.powi(2)
            + gs * gs * r.second.stderr.powi(2)
            + 2.0 * gm * gs * r.cov_first_second;
    }
    Ok(var.max(0.0).sqrt())
}

/// First-order stderr of a scalar function of σ̂, by central differences
/// with respect to every record's moments.
pub fn functional_stderr(
    ms: &MomentSet,
    policy: FPolicy,
    eta: Option<f64>,
    f: impl Fn(&Mat4) -> Option<f64>,
) -> Option<f64> {
    let eval = |ms: &MomentSet| assemble(ms, policy, eta).ok().and_then(|x| f(&x.covariance));
    let mut var = 0.0;
    for (s, r) in ms.iter() {
        if r.first.stderr == 0.0 && r.second.stderr == 0.0 {
            continue;
        }
        let h1 = 1e-6 * (1.0 + r.first.value.abs());
        let h2 = 1e-6 * (1.0 + r.second.value.abs());
        let g1 = (eval(&ms.with_entry(*s, |m| m.first.value += h1))?
            - eval(&ms.with_entry(*s, |m| m.first.value -= h1))?)
            / (2.0 * h1);
        let g2 = (eval(&ms.with_entry(*s, |m| m.second.value += h2))?
            - eval(&ms.with_entry(*s, |m| m.second.value -= h2))?)
            / (2.0 * h2);
        var += g1 * g1 * r.first.stderr.powi(2)
            + g2 * g2 * r.second.stderr.powi(2)
            + 2.0 * g1 * g2 * r.cov_first_second;
    }
    Some(var.max(0.0).sqrt())
}

/// Builds `σ̂ = V − M` from a moment set. `efficiency` is only used when
/// `options.correct_efficiency` is set; bootstrap needs raw samples and is
/// ignored here.
pub fn reconstruct_from_moments(
    ms: &MomentSet,
    efficiency: f64,
    options: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    let policy = options.f_policy;
    check_policy(ms, policy)?;
    let eta = correction(efficiency, options);
    let mats = assemble(ms, policy, eta)?;
    let scale = eta.map_or(1.0, |e| 1.0 / e);

    let mut stderr = Mat4::zeros();
    for i in 0..4 {
        for j in i..4 {
            // Gradients are taken at the uncorrected means; the correction is linear.
            let raw_m = eta.map_or(mats.m, |e| mats.m * e.sqrt());
            let se = entry_stderr(ms, &raw_m, policy, i, j)? * scale;
            stderr[(i, j)] = se;
            stderr[(j, i)] = se;
        }
    }
    let mut mean_stderr = Vec4::zeros();
    for (k, s) in MEAN_SETTINGS.iter().enumerate() {
        mean_stderr[k] = ms.first(*s)?.stderr * scale.sqrt();
    }

    let sigma = mats.covariance;
    let nu_min = symplectic_eigenvalues(&sigma).ok().map(|nu| nu[0]);
    let nu_se = functional_stderr(ms, policy, eta, |s| {
        symplectic_eigenvalues(s).ok().map(|nu| nu[0])
    })
    .unwrap_or(0.0);
    let positive = Cholesky::new(sigma).is_some();
    let physical = positive
        && nu_min.is_some_and(|nu| nu >= 0.5 - PHYSICALITY_TOL - PHYSICALITY_SIGMAS * nu_se);
    let strictly_physical = is_physical(&sigma, PHYSICALITY_TOL);

    let projected = if options.project_to_physical {
        Some(*project_to_physical(&sigma)?.matrix())
    } else {
        None
    };

    let diagnostics = diagnostics::diagnose(&sigma).ok().map(|values| DiagnosticsReport {
        values,
        stderr: DiagnosticsStderr {
            purity: functional_stderr(ms, policy, eta, |s| diagnostics::purity(s).ok()),
            min_ppt_symplectic_eig: functional_stderr(ms, policy, eta, |s| {
                diagnostics::ppt_min_symplectic_eig(s).ok()
            }),
            log_negativity: functional_stderr(ms, policy, eta, |s| {
                diagnostics::log_negativity(s).ok()
            }),
            epr_variance: functional_stderr(ms, policy, eta, |s| {
                Some(diagnostics::epr_variance(s))
            }),
        },
    });
    let projected_diagnostics = projected.as_ref().and_then(|p| diagnostics::diagnose(p).ok());

    Ok(ReconstructionResult {
        mean: mats.m,
        mean_stderr,
        mean_matrix: mats.mean_matrix,
        variance_matrix: mats.variance_matrix,
        covariance: sigma,
        stderr,
        min_symplectic_eig: nu_min,
        min_symplectic_eig_stderr: nu_se,
        physical,
        strictly_physical,
        projected,
        degenerate_settings: ms.degenerate_settings(),
        efficiency,
        options: *options,
        bootstrap: None,
        diagnostics,
        projected_diagnostics,
    })
}

/// Full pipeline on a dataset: moment estimation, `σ̂ = V − M`, delta-method
/// stderr, and the optional bootstrap.
pub fn reconstruct_covariance(
    dataset: &Dataset,
    options: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    let ms = estimate_moment_set(dataset)?;
    let efficiency = dataset.config().efficiency;
    let mut result = reconstruct_from_moments(&ms, efficiency, options)?;
    if let Some(b) = options.bootstrap {
        result.bootstrap = Some(bootstrap(dataset, options, &b)?);
    }
    Ok(result)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap: each record is resampled with replacement, on
/// stream `b` of the bootstrap seed for replicate `b`.
pub fn bootstrap(
    dataset: &Dataset,
    options: &ReconstructionOptions,
    boot: &BootstrapOptions,
) -> Result<BootstrapSummary> {
    if boot.resamples < 2 {
        return Err(Error::InvalidConfig("bootstrap needs at least 2 resamples".into()));
    }
    let eta = correction(dataset.config().efficiency, options);
    let replicates = (0..boot.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(boot.seed, b as u64);
            let entries: Vec<(Setting, RecordMoments)> = dataset
                .records()
                .iter()
                .map(|r| {
                    let n = r.samples.len();
                    let resampled: Vec<f64> =
                        (0..n).map(|_| r.samples[rng.random_range(0..n)]).collect();
                    (r.setting, RecordMoments::from_samples(&resampled))
                })
                .collect();
            let ms = MomentSet::from_entries(entries)?;
            Ok(assemble(&ms, options.f_policy, eta)?.covariance)
        })
        .collect::<Result<Vec<Mat4>>>()?;

    let nb = replicates.len() as f64;
    let mut stderr = Mat4::zeros();
    let mut lower = Mat4::zeros();
    let mut upper = Mat4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            let mut xs: Vec<f64> = replicates.iter().map(|m| m[(i, j)]).collect();
            let mean = xs.iter().sum::<f64>() / nb;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            stderr[(i, j)] = var.sqrt();
            xs.sort_by(f64::total_cmp);
            lower[(i, j)] = percentile(&xs, 0.025);
            upper[(i, j)] = percentile(&xs, 0.975);
        }
    }
    Ok(BootstrapSummary {
        resamples: boot.resamples,
        stderr,
        lower,
        upper,
    })
}

/// Raises every symplectic eigenvalue below ½ to ½ in the Williamson form.
/// Physical input (within the default tolerance) is returned unchanged.
pub fn project_to_physical(sigma: &Mat4) -> Result<CovarianceMatrix> {
    let sym = CovarianceMatrix::new(*sigma)?;
    if sym.is_physical(PHYSICALITY_TOL) {
        return Ok(sym);
    }
    let w = williamson(sym.matrix())?;
    let clamped = [w.nu[0].max(0.5), w.nu[1].max(0.5)];
    CovarianceMatrix::new(w.recompose(clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{exact_moment_set, run_schedule, HomodyneConfig, Provenance, QuadratureRecord};
    use crate::optics::measurement_schedule;
    use crate::symplectic::two_mode_squeezer;
    use crate::{MeanVector, TwoModeGaussianState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact(state: &TwoModeGaussianState, include_f: bool) -> MomentSet {
        exact_moment_set(state, &measurement_schedule(include_f)).unwrap()
    }

    fn tmss(r: f64) -> TwoModeGaussianState {
        TwoModeGaussianState::two_mode_squeezed(r).unwrap()
    }

    #[test]
    fn mean_matrix_is_outer_product() {
        let ms = exact(&TwoModeGaussianState::vacuum(), false);
        assert_eq!(build_mean_matrix(&ms).unwrap(), Mat4::zeros());

        let s = TwoModeGaussianState::vacuum().displace(&MeanVector::new([1.0, 0.0, 0.0, 0.0]).unwrap());
        let m = build_mean_matrix(&exact(&s, false)).unwrap();
        let mut want = Mat4::zeros();
        want[(0, 0)] = 1.0;
        assert_eq!(m, want);

        let s = TwoModeGaussianState::vacuum().displace(&MeanVector::new([1.0, 2.0, 0.0, 0.0]).unwrap());
        let m = build_mean_matrix(&exact(&s, false)).unwrap();
        assert_eq!((m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]), (1.0, 2.0, 2.0, 4.0));
        assert_eq!(m[(2, 2)], 0.0);
    }

    #[test]
    fn variance_matrix_examples() {
        let v = build_variance_matrix(&exact(&TwoModeGaussianState::vacuum(), false), FPolicy::EOnly).unwrap();
        assert!((v - Mat4::identity() * 0.5).amax() < 1e-15);

        let v = build_variance_matrix(&exact(&tmss(0.5), false), FPolicy::EOnly).unwrap();
        assert!((v[(0, 2)] - 0.5 * (1.35914 - 0.18394)).abs() < 1e-5);
        assert!((v[(0, 2)] - 1f64.sinh() / 2.0).abs() < 1e-14);
        assert!(v[(0, 1)].abs() < 1e-15);
        assert_eq!(v, v.transpose());
    }

    #[test]
    fn average_ef_requires_f_records() {
        let ms = exact(&tmss(0.5), false);
        assert!(matches!(build_variance_matrix(&ms, FPolicy::AverageEf), Err(Error::MissingFRecords)));
        let opts = ReconstructionOptions { f_policy: FPolicy::AverageEf, ..Default::default() };
        assert!(matches!(reconstruct_from_moments(&ms, 1.0, &opts), Err(Error::MissingFRecords)));
    }

    #[test]
    fn exact_moments_reconstruct_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = TwoModeGaussianState::random(&mut rng);
            for (include_f, policy) in [(false, FPolicy::EOnly), (true, FPolicy::AverageEf)] {
                let opts = ReconstructionOptions { f_policy: policy, ..Default::default() };
                let r = reconstruct_from_moments(&exact(&s, include_f), 1.0, &opts).unwrap();
                assert!((r.covariance - s.cov().matrix()).amax() < 1e-10);
                assert!((r.mean - s.mean().as_vector()).amax() < 1e-12);
                assert_eq!(r.covariance, r.variance_matrix - r.mean_matrix);
                assert_eq!(r.covariance, r.covariance.transpose());
                assert_eq!(r.stderr, Mat4::zeros());
            }
        }
    }

    #[test]
    fn redundant_routes_agree_on_exact_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let s = TwoModeGaussianState::random(&mut rng);
            let pairs = redundant_pairs(&exact(&s, true)).unwrap();
            for p in pairs {
                assert!((p.e_based.value - p.f_based.value).abs() < 1e-12);
            }
            let m = s.mean().to_array();
            let v14 = s.cov().matrix()[(0, 3)] + m[0] * m[3];
            assert!((pairs[0].e_based.value - v14).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_vacuum_second_moments_within_bounds() {
        let d = run_schedule(
            &TwoModeGaussianState::vacuum(),
            &measurement_schedule(false),
            &HomodyneConfig::new(100_000, 1.0, 31).unwrap(),
            Provenance::External,
        )
        .unwrap();
        let ms = estimate_moment_set(&d).unwrap();
        for (s, m) in ms.iter() {
            assert!((m.second.value - 0.5).abs() < 5.0 * m.second.stderr, "{s}");
            assert_eq!(m.count, Some(100_000));
        }
    }

    #[test]
    fn sampled_tmss_within_stderr() {
        let truth = tmss(0.5);
        let d = run_schedule(
            &truth,
            &measurement_schedule(false),
            &HomodyneConfig::new(100_000, 1.0, 7).unwrap(),
            Provenance::External,
        )
        .unwrap();
        let r = reconstruct_covariance(&d, &ReconstructionOptions::default()).unwrap();
        let z = (r.covariance - truth.cov().matrix()).component_div(&r.stderr);
        assert!(z.amax() < 5.0, "{z}");
        assert!(r.physical);
    }

    #[test]
    fn delta_stderr_matches_known_gaussian_forms() {
        // For a zero-mean Gaussian record, stderr(⟨x²⟩) = s·√(2/N);
        // σ̂₁₁ = ⟨x²⟩ − ⟨x⟩² has the same first-order stderr.
        let truth = tmss(0.5);
        let n = 200_000;
        let d = run_schedule(
            &truth,
            &measurement_schedule(false),
            &HomodyneConfig::new(n, 1.0, 12).unwrap(),
            Provenance::External,
        )
        .unwrap();
        let r = reconstruct_covariance(&d, &ReconstructionOptions::default()).unwrap();
        let want = truth.cov().matrix()[(0, 0)] * (2.0 / n as f64).sqrt();
        assert!((r.stderr[(0, 0)] / want - 1.0).abs() < 0.02);
        // σ̂₁₃ = ½(⟨x_c²⟩ − ⟨x_d²⟩): ½√2/√N · √(s_c² + s_d²)
        let (sc, sd) = (std::f64::consts::E / 2.0, (-1f64).exp() / 2.0);
        let want = 0.5 * (2.0 / n as f64).sqrt() * (sc * sc + sd * sd).sqrt();
        assert!((r.stderr[(0, 2)] / want - 1.0).abs() < 0.02);
    }

    #[test]
    fn vacuum_sampled_is_physical_within_errors() {
        for seed in 0..10 {
            let d = run_schedule(
                &TwoModeGaussianState::vacuum(),
                &measurement_schedule(false),
                &HomodyneConfig::new(10_000, 1.0, seed).unwrap(),
                Provenance::External,
            )
            .unwrap();
            let r = reconstruct_covariance(&d, &ReconstructionOptions::default()).unwrap();
            assert!(r.physical, "seed {seed}: ν = {:?} ± {}", r.min_symplectic_eig, r.min_symplectic_eig_stderr);
            assert!(r.min_symplectic_eig_stderr > 0.0);
        }
    }

    #[test]
    fn efficiency_correction_is_noop_at_unit_efficiency() {
        let ms = exact(&tmss(0.5), false);
        let a = reconstruct_from_moments(&ms, 1.0, &ReconstructionOptions::default()).unwrap();
        let opts = ReconstructionOptions { correct_efficiency: true, ..Default::default() };
        let b = reconstruct_from_moments(&ms, 1.0, &opts).unwrap();
        assert_eq!(a.covariance, b.covariance);
    }

    #[test]
    fn efficiency_correction_inverts_loss_on_exact_moments() {
        // Exact moments of the lossy marginals: mean √η·μ, variance η·s + (1−η)/2.
        let s = TwoModeGaussianState::random(&mut ChaCha8Rng::seed_from_u64(1));
        let eta: f64 = 0.6;
        let entries = measurement_schedule(false).into_iter().map(|st| {
            let (m, v) = s.quadrature_moments(&st.quadrature_vector());
            let (m, v) = (eta.sqrt() * m, eta * v + 0.5 * (1.0 - eta));
            (st, RecordMoments {
                first: Estimate::exact(m),
                second: Estimate::exact(v + m * m),
                cov_first_second: 0.0,
                count: None,
                degenerate: false,
            })
        });
        let ms = MomentSet::from_entries(entries).unwrap();
        let raw = reconstruct_from_moments(&ms, eta, &ReconstructionOptions::default()).unwrap();
        let lossy = s.cov().matrix() * eta + Mat4::identity() * (0.5 * (1.0 - eta));
        assert!((raw.covariance - lossy).amax() < 1e-12);
        let opts = ReconstructionOptions { correct_efficiency: true, ..Default::default() };
        let fixed = reconstruct_from_moments(&ms, eta, &opts).unwrap();
        assert!((fixed.covariance - s.cov().matrix()).amax() < 1e-12);
        assert!((fixed.mean - s.mean().as_vector()).amax() < 1e-12);
        assert_eq!(fixed.covariance, fixed.variance_matrix - fixed.mean_matrix);
    }

    #[test]
    fn degenerate_records_are_flagged() {
        let recs = measurement_schedule(false)
            .into_iter()
            .map(|s| QuadratureRecord {
                setting: s,
                samples: if s.to_string() == "c:y" { vec![0.7; 4] } else { vec![0.5, -0.5, 0.9, -0.9] },
            })
            .collect();
        let d = crate::measurement::Dataset::new(recs, HomodyneConfig::new(4, 1.0, 0).unwrap(), Provenance::External).unwrap();
        let r = reconstruct_covariance(&d, &ReconstructionOptions::default()).unwrap();
        assert_eq!(r.degenerate_settings, vec!["c:y".parse::<Setting>().unwrap()]);
    }

    #[test]
    fn too_few_samples_rejected() {
        let recs = measurement_schedule(false)
            .into_iter()
            .map(|s| QuadratureRecord { setting: s, samples: vec![0.3] })
            .collect();
        let d = crate::measurement::Dataset::new(recs, HomodyneConfig::new(1, 1.0, 0).unwrap(), Provenance::External).unwrap();
        assert!(matches!(estimate_moment_set(&d), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn projection_examples() {
        let t = *tmss(0.5).cov().matrix();
        assert_eq!(*project_to_physical(&t).unwrap().matrix(), t);

        let p = project_to_physical(&(Mat4::identity() * 0.4)).unwrap();
        assert!((p.matrix() - Mat4::identity() * 0.5).amax() < 1e-12);

        let perturbed = t - Mat4::identity() * 0.01;
        assert!(!is_physical(&perturbed, 1e-9));
        let p = project_to_physical(&perturbed).unwrap();
        let nu = p.symplectic_eigenvalues().unwrap();
        assert!((nu[0] - 0.5).abs() < 1e-12 && (nu[1] - 0.5).abs() < 1e-12);
        assert!(p.is_physical(1e-9));
    }

    #[test]
    fn projection_keeps_physical_eigenvalue() {
        let s = two_mode_squeezer(0.3);
        let d = Mat4::from_diagonal(&Vec4::new(0.45, 0.45, 1.2, 1.2));
        let sigma = s * d * s.transpose();
        let p = project_to_physical(&sigma).unwrap();
        let nu = p.symplectic_eigenvalues().unwrap();
        assert!((nu[0] - 0.5).abs() < 1e-12 && (nu[1] - 1.2).abs() < 1e-10);
    }

    #[test]
    fn projection_rejects_indefinite() {
        let m = Mat4::from_diagonal(&Vec4::new(1.0, -0.1, 1.0, 1.0));
        assert!(matches!(project_to_physical(&m), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn bootstrap_stderr_tracks_delta_method() {
        let d = run_schedule(
            &tmss(0.5),
            &measurement_schedule(false),
            &HomodyneConfig::new(20_000, 1.0, 3).unwrap(),
            Provenance::External,
        )
        .unwrap();
        let opts = ReconstructionOptions {
            bootstrap: Some(BootstrapOptions { resamples: 200, seed: 9 }),
            ..Default::default()
        };
        let r = reconstruct_covariance(&d, &opts).unwrap();
        let b = r.bootstrap.as_ref().unwrap();
        assert_eq!(b.resamples, 200);
        for i in 0..4 {
            for j in 0..4 {
                // 200 resamples give the stderr to roughly ±10 %.
                let ratio = b.stderr[(i, j)] / r.stderr[(i, j)];
                assert!((0.7..1.3).contains(&ratio), "({i},{j}) ratio {ratio}");
                assert!(b.lower[(i, j)] <= b.upper[(i, j)]);
            }
        }
        let again = reconstruct_covariance(&d, &opts).unwrap();
        assert_eq!(again.bootstrap, r.bootstrap);
    }

    #[test]
    fn functional_stderr_of_linear_entry_matches_analytic() {
        let d = run_schedule(
            &tmss(0.4),
            &measurement_schedule(false),
            &HomodyneConfig::new(5_000, 1.0, 44).unwrap(),
            Provenance::External,
        )
        .unwrap();
        let ms = estimate_moment_set(&d).unwrap();
        let r = reconstruct_from_moments(&ms, 1.0, &ReconstructionOptions::default()).unwrap();
        for (i, j) in [(0, 0), (0, 3), (1, 2), (2, 2)] {
            let se = functional_stderr(&ms, FPolicy::EOnly, None, |s| Some(s[(i, j)])).unwrap();
            assert!((se / r.stderr[(i, j)] - 1.0).abs() < 1e-5, "({i},{j})");
        }
    }

    #[test]
    fn f_policy_parses() {
        assert_eq!("e_only".parse::<FPolicy>().unwrap(), FPolicy::EOnly);
        assert_eq!("average_ef".parse::<FPolicy>().unwrap(), FPolicy::AverageEf);
        assert!("both".parse::<FPolicy>().is_err());
    }
}
