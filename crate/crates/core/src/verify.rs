//! Exactness check: random physical states → analytic moments →
//! reconstruction → compare with the true covariance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::measurement::exact_moment_set;
use crate::optics::measurement_schedule;
use crate::reconstruction::{reconstruct_from_moments, FPolicy, MomentSet, ReconstructionOptions};
use crate::{Mat4, Result, TwoModeGaussianState};

pub const EXACTNESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStates {
    Random,
    Vacuum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    pub trials: usize,
    pub max_error: f64,
    pub passed: bool,
}

/// Default reconstruction used by [`run`].
pub fn reconstruct_exact(ms: &MomentSet, policy: FPolicy) -> Result<Mat4> {
    let opts = ReconstructionOptions {
        f_policy: policy,
        ..Default::default()
    };
    Ok(reconstruct_from_moments(ms, 1.0, &opts)?.covariance)
}

/// Runs `trials` states through `reconstruct` on both the 14-setting
/// (`e_only`) and the 16-setting (`average_ef`) schedules.
pub fn run_with<F>(trials: usize, seed: u64, states: TrialStates, reconstruct: F) -> Result<VerifyReport>
where
    F: Fn(&MomentSet, FPolicy) -> Result<Mat4>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..trials {
        let state = match states {
            TrialStates::Random => TwoModeGaussianState::random(&mut rng),
            TrialStates::Vacuum => TwoModeGaussianState::vacuum(),
        };
        for (include_f, policy) in [(false, FPolicy::EOnly), (true, FPolicy::AverageEf)] {
            let ms = exact_moment_set(&state, &measurement_schedule(include_f))?;
            let sigma = reconstruct(&ms, policy)?;
            let err = (sigma - state.cov().matrix()).amax();
            max_error = max_error.max(if err.is_nan() { f64::INFINITY } else { err });
        }
    }
    Ok(VerifyReport {
        trials,
        max_error,
        passed: max_error < EXACTNESS_TOL,
    })
}

pub fn run(trials: usize, seed: u64, states: TrialStates) -> Result<VerifyReport> {
    run_with(trials, seed, states, reconstruct_exact)
}
