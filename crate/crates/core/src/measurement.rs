//! Simulated homodyne detection.
//!
//! Each schedule entry is sampled from the exact Gaussian marginal of its
//! quadrature after a scalar loss channel of efficiency η:
//! mean `√η·(v·X)`, variance `η·vᵀσv + (1−η)/2`.
//!
//! Record `i` of a run draws from its own ChaCha8 stream `(seed, i)`, so
//! records can be generated in parallel and the dataset is bit-reproducible.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::optics::{measurement_schedule, ModeLabel, QuadratureVector, Setting};
use crate::reconstruction::{Estimate, MomentSet, RecordMoments};
use crate::{Error, Result, TwoModeGaussianState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneConfig {
    pub samples_per_quadrature: usize,
    pub efficiency: f64,
    pub seed: u64,
}

impl HomodyneConfig {
    pub fn new(samples_per_quadrature: usize, efficiency: f64, seed: u64) -> Result<Self> {
        if samples_per_quadrature == 0 {
            return Err(Error::InvalidConfig("samples per quadrature must be at least 1".into()));
        }
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "efficiency must lie in (0, 1], got {efficiency}"
            )));
        }
        Ok(Self {
            samples_per_quadrature,
            efficiency,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRecord {
    pub setting: Setting,
    pub samples: Vec<f64>,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    Simulated {
        state: String,
        mean: [f64; 4],
        cov: [[f64; 4]; 4],
    },
    External,
}

impl Provenance {
    pub fn simulated(description: impl Into<String>, state: &TwoModeGaussianState) -> Self {
        Provenance::Simulated {
            state: description.into(),
            mean: state.mean().to_array(),
            cov: state.cov().to_rows(),
        }
    }
}

/// Checks that `settings` is the 14-entry schedule, optionally with both
/// f-quadratures, each exactly once. Returns whether f is present.
pub fn validate_schedule(settings: &[Setting]) -> Result<bool> {
    let mut seen = HashSet::new();
    for s in settings {
        if !seen.insert(*s) {
            return Err(Error::DuplicateSetting(s.to_string()));
        }
    }
    let full = measurement_schedule(true);
    if let Some(extra) = settings.iter().find(|s| !full.contains(s)) {
        return Err(Error::InvalidDataset(format!(
            "setting `{extra}` is not part of the measurement schedule"
        )));
    }
    let has_f = settings.iter().any(|s| s.mode == ModeLabel::F);
    let required = measurement_schedule(has_f);
    if let Some(missing) = required.iter().find(|s| !seen.contains(s)) {
        return Err(Error::MissingSetting(missing.to_string()));
    }
    Ok(has_f)
}

/// Quadrature records for a full schedule, stored in schedule order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<QuadratureRecord>,
    config: HomodyneConfig,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        mut records: Vec<QuadratureRecord>,
        config: HomodyneConfig,
        provenance: Provenance,
    ) -> Result<Self> {
        let settings: Vec<Setting> = records.iter().map(|r| r.setting).collect();
        let has_f = validate_schedule(&settings)?;
        let order = measurement_schedule(has_f);
        records.sort_by_key(|r| order.iter().position(|s| *s == r.setting));
        for r in &records {
            if r.samples.len() != config.samples_per_quadrature {
                return Err(Error::InvalidDataset(format!(
                    "setting `{}` has {} samples, expected {}",
                    r.setting,
                    r.samples.len(),
                    config.samples_per_quadrature
                )));
            }
            if !r.samples.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("quadrature samples"));
            }
        }
        Ok(Self {
            records,
            config,
            provenance,
        })
    }

    pub fn records(&self) -> &[QuadratureRecord] {
        &self.records
    }

    pub fn record(&self, setting: Setting) -> Option<&QuadratureRecord> {
        self.records.iter().find(|r| r.setting == setting)
    }

    pub fn config(&self) -> &HomodyneConfig {
        &self.config
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn schedule(&self) -> Vec<Setting> {
        self.records.iter().map(|r| r.setting).collect()
    }

    pub fn has_f(&self) -> bool {
        self.records.iter().any(|r| r.setting.mode == ModeLabel::F)
    }
}

/// Independent generator for record `stream` of a run seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `N` homodyne outcomes for quadrature `v` on stream `stream`.
pub fn sample_quadrature(
    state: &TwoModeGaussianState,
    v: &QuadratureVector,
    config: &HomodyneConfig,
    stream: u64,
) -> Result<Vec<f64>> {
    let (mean, var) = state.quadrature_moments(v);
    if var.is_nan() || var <= 0.0 {
        return Err(Error::NonPositiveVariance(var));
    }
    let eta = config.efficiency;
    let mu = eta.sqrt() * mean;
    let sd = (eta * var + 0.5 * (1.0 - eta)).sqrt();
    let mut rng = substream(config.seed, stream);
    Ok((0..config.samples_per_quadrature)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mu + sd * z
        })
        .collect())
}

/// Samples every schedule entry; entry `i` uses substream `i`.
pub fn run_schedule(
    state: &TwoModeGaussianState,
    schedule: &[Setting],
    config: &HomodyneConfig,
    provenance: Provenance,
) -> Result<Dataset> {
    validate_schedule(schedule)?;
    let records = schedule
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let samples = sample_quadrature(state, &s.quadrature_vector(), config, i as u64)?;
            Ok(QuadratureRecord {
                setting: *s,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, *config, provenance)
}

/// Noise-free moments: `⟨x⟩ = v·X`, `⟨x²⟩ = vᵀσv + (v·X)²`, zero stderr.
pub fn exact_moment_set(state: &TwoModeGaussianState, schedule: &[Setting]) -> Result<MomentSet> {
    validate_schedule(schedule)?;
    MomentSet::from_entries(schedule.iter().map(|s| {
        let (m, var) = state.quadrature_moments(&s.quadrature_vector());
        (
            *s,
            RecordMoments {
                first: Estimate::exact(m),
                second: Estimate::exact(var + m * m),
                cov_first_second: 0.0,
                count: None,
                degenerate: false,
            },
        )
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{quadrature_vector, QuadraturePhase};
    use crate::MeanVector;

    fn cfg(n: usize, eta: f64, seed: u64) -> HomodyneConfig {
        HomodyneConfig::new(n, eta, seed).unwrap()
    }

    fn mean_var(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn config_validation() {
        assert!(HomodyneConfig::new(0, 1.0, 0).is_err());
        assert!(HomodyneConfig::new(10, 0.0, 0).is_err());
        assert!(HomodyneConfig::new(10, 1.1, 0).is_err());
        assert!(HomodyneConfig::new(10, f64::NAN, 0).is_err());
        assert!(HomodyneConfig::new(1, 1.0, 0).is_ok());
    }

    #[test]
    fn vacuum_sample_mean_bound() {
        let vac = TwoModeGaussianState::vacuum();
        let v = quadrature_vector(ModeLabel::C, QuadraturePhase::Y);
        let x = sample_quadrature(&vac, &v, &cfg(100_000, 1.0, 42), 0).unwrap();
        let (m, _) = mean_var(&x);
        assert!(m.abs() < 5.0 * (0.5f64 / 1e5).sqrt());
    }

    #[test]
    fn vacuum_is_a_fixed_point_of_loss() {
        let vac = TwoModeGaussianState::vacuum();
        let v = quadrature_vector(ModeLabel::E, QuadraturePhase::X);
        let n = 100_000;
        let x = sample_quadrature(&vac, &v, &cfg(n, 0.5, 3), 0).unwrap();
        let (_, var) = mean_var(&x);
        assert!((var - 0.5).abs() < 5.0 * 0.5 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn tmss_variance_bound() {
        let t = TwoModeGaussianState::two_mode_squeezed(0.5).unwrap();
        let v = quadrature_vector(ModeLabel::A, QuadraturePhase::X);
        let n = 1_000_000;
        let x = sample_quadrature(&t, &v, &cfg(n, 1.0, 9), 0).unwrap();
        let (_, var) = mean_var(&x);
        let want = 1f64.cosh() / 2.0;
        assert!((var - want).abs() < 5.0 * want * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn loss_model_variance() {
        let t = TwoModeGaussianState::two_mode_squeezed(0.5).unwrap();
        let v = quadrature_vector(ModeLabel::C, QuadraturePhase::X);
        let (_, s) = t.quadrature_moments(&v);
        let n = 200_000;
        for eta in [0.25, 0.5, 0.9] {
            let x = sample_quadrature(&t, &v, &cfg(n, eta, 1), 4).unwrap();
            let (_, var) = mean_var(&x);
            let want = eta * s + 0.5 * (1.0 - eta);
            assert!((var - want).abs() < 5.0 * want * (2.0 / n as f64).sqrt(), "η={eta}");
        }
    }

    #[test]
    fn displaced_mean_scales_with_root_efficiency() {
        let s = TwoModeGaussianState::vacuum().displace(&MeanVector::new([2.0, 0.0, 0.0, 0.0]).unwrap());
        let v = quadrature_vector(ModeLabel::A, QuadraturePhase::X);
        let n = 100_000;
        let x = sample_quadrature(&s, &v, &cfg(n, 0.64, 5), 0).unwrap();
        let (m, _) = mean_var(&x);
        assert!((m - 1.6).abs() < 5.0 * (0.5 / n as f64).sqrt());
    }

    #[test]
    fn run_schedule_cardinality_and_determinism() {
        let vac = TwoModeGaussianState::vacuum();
        let schedule = measurement_schedule(false);
        let c = cfg(1000, 1.0, 77);
        let a = run_schedule(&vac, &schedule, &c, Provenance::External).unwrap();
        assert_eq!(a.records().len(), 14);
        assert!(a.records().iter().all(|r| r.samples.len() == 1000));
        let b = run_schedule(&vac, &schedule, &c, Provenance::External).unwrap();
        assert_eq!(a, b);
        let bits = |d: &Dataset| -> Vec<u64> {
            d.records().iter().flat_map(|r| r.samples.iter().map(|x| x.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let other = run_schedule(&vac, &schedule, &cfg(1000, 1.0, 78), Provenance::External).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn substreams_are_uncorrelated() {
        let vac = TwoModeGaussianState::vacuum();
        let n = 20_000;
        let d = run_schedule(&vac, &measurement_schedule(true), &cfg(n, 1.0, 123), Provenance::External).unwrap();
        let recs = d.records();
        for i in 0..recs.len() {
            for j in (i + 1)..recs.len() {
                let (mi, vi) = mean_var(&recs[i].samples);
                let (mj, vj) = mean_var(&recs[j].samples);
                let c: f64 = recs[i]
                    .samples
                    .iter()
                    .zip(&recs[j].samples)
                    .map(|(a, b)| (a - mi) * (b - mj))
                    .sum::<f64>()
                    / n as f64;
                let rho = c / (vi * vj).sqrt();
                assert!(rho.abs() < 5.0 / (n as f64).sqrt(), "{i},{j}: {rho}");
            }
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = measurement_schedule(false);
        s.retain(|x| x.to_string() != "e:y");
        assert!(matches!(validate_schedule(&s), Err(Error::MissingSetting(t)) if t == "e:y"));
        let mut s = measurement_schedule(false);
        s.push(s[0]);
        assert!(matches!(validate_schedule(&s), Err(Error::DuplicateSetting(_))));
        let mut s = measurement_schedule(false);
        s.push("c:z".parse().unwrap());
        assert!(matches!(validate_schedule(&s), Err(Error::InvalidDataset(_))));
        let mut s = measurement_schedule(false);
        s.push("f:x".parse().unwrap());
        assert!(matches!(validate_schedule(&s), Err(Error::MissingSetting(t)) if t == "f:y"));
        assert!(!validate_schedule(&measurement_schedule(false)).unwrap());
        assert!(validate_schedule(&measurement_schedule(true)).unwrap());
    }

    #[test]
    fn dataset_is_stored_in_schedule_order() {
        let c = cfg(2, 1.0, 0);
        let mut recs: Vec<QuadratureRecord> = measurement_schedule(false)
            .into_iter()
            .map(|s| QuadratureRecord { setting: s, samples: vec![0.1, 0.2] })
            .collect();
        recs.reverse();
        let d = Dataset::new(recs, c, Provenance::External).unwrap();
        assert_eq!(d.schedule(), measurement_schedule(false));
    }

    #[test]
    fn exact_moments_examples() {
        let sched = measurement_schedule(false);
        let ms = exact_moment_set(&TwoModeGaussianState::vacuum(), &sched).unwrap();
        for s in &sched {
            assert_eq!(ms.first(*s).unwrap().value.abs(), 0.0);
            assert!((ms.second(*s).unwrap().value - 0.5).abs() < 1e-15);
            assert_eq!(ms.second(*s).unwrap().stderr, 0.0);
        }
        let t = TwoModeGaussianState::two_mode_squeezed(0.5).unwrap();
        let ms = exact_moment_set(&t, &sched).unwrap();
        let xc = ms.second("c:x".parse().unwrap()).unwrap().value;
        let xd = ms.second("d:x".parse().unwrap()).unwrap().value;
        assert!((xc - 1.35914).abs() < 1e-5 && (xc - std::f64::consts::E / 2.0).abs() < 1e-14);
        assert!((xd - 0.18394).abs() < 1e-5 && (xd - (-1f64).exp() / 2.0).abs() < 1e-14);

        let d = TwoModeGaussianState::vacuum().displace(&MeanVector::new([1.0, 0.0, 0.0, 0.0]).unwrap());
        let ms = exact_moment_set(&d, &sched).unwrap();
        let ax = "a:x".parse().unwrap();
        assert_eq!(ms.first(ax).unwrap().value, 1.0);
        assert_eq!(ms.second(ax).unwrap().value, 1.5);
    }
}
