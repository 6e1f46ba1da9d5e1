//! Command-line driver: `simulate`, `reconstruct`, `verify`, `diagnose`.
//!
//! Settings come from an optional JSON config (`--config`, unknown keys
//! rejected) overlaid by command-line flags. Exit codes: 0 success,
//! 1 validation error, 2 I/O error, 3 verification failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::gaussian::StateFile;
use crate::io::{self, ResultFile};
use crate::measurement::{run_schedule, HomodyneConfig, Provenance};
use crate::optics::measurement_schedule;
use crate::reconstruction::{
    build_mean_matrix, build_variance_matrix, reconstruct_covariance, BootstrapOptions, FPolicy,
    MomentSet, ReconstructionOptions,
};
use crate::verify::{self, TrialStates};
use crate::{diagnostics, CovarianceMatrix, Error, Mat4, MeanVector, TwoModeGaussianState};

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_io() { EXIT_IO } else { EXIT_VALIDATION },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cvhomodyne", version, about = "Two-mode covariance reconstruction from single-homodyne data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate homodyne data for a state and write CSV + metadata.
    Simulate(SimulateArgs),
    /// Reconstruct the covariance matrix from a dataset.
    Reconstruct(ReconstructArgs),
    /// Check exact reconstruction on random states.
    Verify(VerifyArgs),
    /// Gaussian diagnostics of a covariance matrix in a JSON file.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Vacuum,
    Tmss,
    /// State JSON given by `file`.
    CustomFile,
    /// Inline `mean` and `cov`.
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub kind: Option<StateKind>,
    pub r: Option<f64>,
    pub nbar_a: Option<f64>,
    pub nbar_b: Option<f64>,
    pub mean: Option<[f64; 4]>,
    pub cov: Option<[[f64; 4]; 4]>,
    pub file: Option<PathBuf>,
}

/// JSON experiment configuration; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: Option<StateSpec>,
    pub samples: Option<usize>,
    pub efficiency: Option<f64>,
    pub seed: Option<u64>,
    pub include_f: Option<bool>,
    pub f_policy: Option<FPolicy>,
    pub correct_efficiency: Option<bool>,
    pub project_to_physical: Option<bool>,
    pub bootstrap: Option<usize>,
    pub bootstrap_seed: Option<u64>,
    /// Dataset stem written by `simulate`.
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub state: Option<StateKind>,
    /// Two-mode squeezing parameter.
    #[arg(long)]
    pub r: Option<f64>,
    /// Thermal photons added to both modes.
    #[arg(long)]
    pub nbar: Option<f64>,
    #[arg(long)]
    pub nbar_a: Option<f64>,
    #[arg(long)]
    pub nbar_b: Option<f64>,
    /// Displacement `q_a,p_a,q_b,p_b`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub mean: Option<Vec<f64>>,
    /// State JSON for `--state custom-file`.
    #[arg(long)]
    pub state_file: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub efficiency: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also measure x_f and y_f (16 settings).
    #[arg(long)]
    pub include_f: bool,
    /// Output stem; writes `<out>.csv` and `<out>.meta.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Dataset CSV (`setting,value`).
    pub dataset: PathBuf,
    /// Metadata sidecar; defaults to `<stem>.meta.json` when present.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_policy)]
    pub f_policy: Option<FPolicy>,
    /// Undo the detection loss using the dataset efficiency.
    #[arg(long)]
    pub correct_efficiency: bool,
    /// Clamp symplectic eigenvalues to ½ and report the projected matrix.
    #[arg(long = "project", alias = "project-to-physical")]
    pub project_to_physical: bool,
    /// Percentile bootstrap with this many resamples.
    #[arg(long, num_args = 0..=1, default_missing_value = "200")]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub bootstrap_seed: Option<u64>,
    /// Efficiency of an external dataset without metadata.
    #[arg(long)]
    pub efficiency: Option<f64>,
    /// Result JSON; defaults to `<stem>.result.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress the text report on stdout.
    #[arg(long)]
    pub quiet: bool,
    /// Whitespace-delimited table `i j sigma stderr` for external plotting.
    #[arg(long)]
    pub emit_gnuplot: Option<PathBuf>,
}

fn parse_policy(s: &str) -> Result<FPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyStates {
    Random,
    Vacuum,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = VerifyStates::Random)]
    pub states: VerifyStates,
    /// Add this offset to V₁₄ (mutation check of the verifier itself).
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// JSON with a `cov` (state file) or `sigma` (result file) matrix.
    pub file: PathBuf,
    /// Write the diagnostics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Diagnose(a) => diagnose(a),
    }
}

/// Resolves the state description, returning the state and a label.
pub fn build_state(spec: &StateSpec) -> CliResult<(TwoModeGaussianState, String)> {
    let kind = spec.kind.unwrap_or(StateKind::Vacuum);
    let (mut state, mut label) = match kind {
        StateKind::Vacuum => (TwoModeGaussianState::vacuum(), "vacuum".to_string()),
        StateKind::Tmss => {
            let r = spec
                .r
                .ok_or_else(|| CliError::validation("state tmss needs a squeezing parameter r"))?;
            (TwoModeGaussianState::two_mode_squeezed(r)?, format!("tmss(r={r})"))
        }
        StateKind::CustomFile => {
            let path = spec
                .file
                .as_ref()
                .ok_or_else(|| CliError::validation("state custom-file needs a state file"))?;
            let f: StateFile = io::read_json(path)?;
            (f.try_into()?, format!("custom-file({})", path.display()))
        }
        StateKind::Custom => {
            let cov = spec
                .cov
                .ok_or_else(|| CliError::validation("state custom needs cov"))?;
            let mean = MeanVector::new(spec.mean.unwrap_or([0.0; 4]))?;
            (
                TwoModeGaussianState::new(mean, CovarianceMatrix::from_rows(cov)?)?,
                "custom".to_string(),
            )
        }
    };
    if kind != StateKind::Custom {
        if let Some(d) = spec.mean {
            state = state.displace(&MeanVector::new(d)?);
            let _ = write!(label, ", displaced({},{},{},{})", d[0], d[1], d[2], d[3]);
        }
    }
    let (na, nb) = (spec.nbar_a.unwrap_or(0.0), spec.nbar_b.unwrap_or(0.0));
    if na != 0.0 || nb != 0.0 {
        state = state.add_thermal_noise(na, nb)?;
        let _ = write!(label, ", thermal({na},{nb})");
    }
    Ok((state, label))
}

fn csv_path_for_stem(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "csv") {
        out.to_path_buf()
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".csv");
        PathBuf::from(s)
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    let mut spec = cfg.state.clone().unwrap_or_default();
    if let Some(k) = a.state {
        spec.kind = Some(k);
    }
    if a.r.is_some() {
        spec.r = a.r;
    }
    if let Some(n) = a.nbar {
        spec.nbar_a = Some(n);
        spec.nbar_b = Some(n);
    }
    if a.nbar_a.is_some() {
        spec.nbar_a = a.nbar_a;
    }
    if a.nbar_b.is_some() {
        spec.nbar_b = a.nbar_b;
    }
    if let Some(m) = &a.mean {
        if m.len() != 4 {
            return Err(CliError::validation("--mean needs four comma-separated values"));
        }
        spec.mean = Some([m[0], m[1], m[2], m[3]]);
    }
    if a.state_file.is_some() {
        spec.file = a.state_file.clone();
        spec.kind.get_or_insert(StateKind::CustomFile);
    }
    let (state, label) = build_state(&spec)?;

    let config = HomodyneConfig::new(
        a.samples.or(cfg.samples).unwrap_or(100_000),
        a.efficiency.or(cfg.efficiency).unwrap_or(1.0),
        a.seed.or(cfg.seed).unwrap_or(0),
    )?;
    let include_f = a.include_f || cfg.include_f.unwrap_or(false);
    let out = a.out.or(cfg.out).unwrap_or_else(|| PathBuf::from("run"));
    let csv_path = csv_path_for_stem(&out);

    let dataset = run_schedule(
        &state,
        &measurement_schedule(include_f),
        &config,
        Provenance::simulated(label, &state),
    )?;
    let meta = io::write_dataset(&dataset, &csv_path)?;
    eprintln!(
        "wrote {} ({} settings × {} samples) and {}",
        csv_path.display(),
        dataset.records().len(),
        config.samples_per_quadrature,
        meta.display()
    );
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    let mut dataset = io::read_dataset(&a.dataset, a.meta.as_deref())?;
    if let Some(eta) = a.efficiency.or(cfg.efficiency) {
        let c = dataset.config();
        let config = HomodyneConfig::new(c.samples_per_quadrature, eta, c.seed)?;
        dataset = crate::measurement::Dataset::new(
            dataset.records().to_vec(),
            config,
            dataset.provenance().clone(),
        )?;
    }
    let bootstrap = a.bootstrap.or(cfg.bootstrap).map(|resamples| BootstrapOptions {
        resamples,
        seed: a.bootstrap_seed.or(cfg.bootstrap_seed).unwrap_or(0),
    });
    let options = ReconstructionOptions {
        f_policy: a.f_policy.or(cfg.f_policy).unwrap_or_default(),
        correct_efficiency: a.correct_efficiency || cfg.correct_efficiency.unwrap_or(false),
        project_to_physical: a.project_to_physical || cfg.project_to_physical.unwrap_or(false),
        bootstrap,
    };
    let result = reconstruct_covariance(&dataset, &options)?;
    let file = ResultFile::from(&result);

    let out = a.out.unwrap_or_else(|| a.dataset.with_extension("result.json"));
    io::write_json(&out, &file)?;
    if let Some(g) = &a.emit_gnuplot {
        std::fs::write(g, gnuplot_table(&result.covariance, &result.stderr))?;
    }
    if !a.quiet {
        print!("{}", report(&file));
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Plain-text summary of a reconstruction.
pub fn report(r: &ResultFile) -> String {
    let mut s = String::new();
    let labels = ["q_a", "p_a", "q_b", "p_b"];
    let _ = writeln!(s, "reconstructed covariance (estimate ± stderr)");
    let _ = writeln!(s, "{:>5} {}", "", labels.map(|l| format!("{l:>22}")).join(""));
    for (i, label) in labels.iter().enumerate() {
        let _ = write!(s, "{label:>5} ");
        for j in 0..4 {
            let _ = write!(s, "{:>12.6} ± {:<7.1e}", r.sigma[i][j], r.stderr[i][j]);
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(
        s,
        "mean: [{}]",
        r.mean.iter().zip(&r.mean_stderr).map(|(m, e)| format!("{m:.6} ± {e:.1e}")).collect::<Vec<_>>().join(", ")
    );
    match r.min_symplectic_eig {
        Some(nu) => {
            let _ = writeln!(
                s,
                "min symplectic eigenvalue: {nu:.6} ± {:.1e} ({})",
                r.min_symplectic_eig_stderr,
                if r.physical { "physical" } else { "UNPHYSICAL" }
            );
        }
        None => {
            let _ = writeln!(s, "min symplectic eigenvalue: undefined (singular estimate)");
        }
    }
    if let Some(d) = &r.diagnostics {
        let se = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.1e}"));
        let _ = writeln!(s, "purity:             {:.6} ± {}", d.values.purity, se(d.stderr.purity));
        let _ = writeln!(
            s,
            "PPT min eigenvalue: {:.6} ± {}",
            d.values.min_ppt_symplectic_eig,
            se(d.stderr.min_ppt_symplectic_eig)
        );
        let _ = writeln!(s, "log negativity:     {:.6} ± {}", d.values.log_negativity, se(d.stderr.log_negativity));
        let _ = writeln!(s, "EPR variance:       {:.6} ± {}", d.values.epr_variance, se(d.stderr.epr_variance));
    }
    if !r.degenerate_settings.is_empty() {
        let _ = writeln!(s, "degenerate settings: {}", r.degenerate_settings.join(", "));
    }
    s
}

pub fn gnuplot_table(sigma: &Mat4, stderr: &Mat4) -> String {
    let mut s = String::from("# i j sigma stderr\n");
    for i in 0..4 {
        for j in 0..4 {
            let _ = writeln!(s, "{} {} {} {}", i + 1, j + 1, sigma[(i, j)], stderr[(i, j)]);
        }
    }
    s
}

fn verify_cmd(a: VerifyArgs) -> CliResult<()> {
    if a.trials == 0 {
        return Err(CliError::validation("trials must be at least 1"));
    }
    let states = match a.states {
        VerifyStates::Random => TrialStates::Random,
        VerifyStates::Vacuum => TrialStates::Vacuum,
    };
    let report = match a.inject_fault {
        None => verify::run(a.trials, a.seed, states)?,
        Some(delta) => verify::run_with(a.trials, a.seed, states, |ms: &MomentSet, p| {
            let mut v = build_variance_matrix(ms, p)?;
            v[(0, 3)] += delta;
            v[(3, 0)] += delta;
            Ok(v - build_mean_matrix(ms)?)
        })?,
    };
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    println!("max error {:.1e} over {} trials, {verdict}", report.max_error, report.trials);
    if report.passed {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VERIFICATION,
            message: format!(
                "reconstruction error {:.3e} exceeds {:.0e}",
                report.max_error,
                verify::EXACTNESS_TOL
            ),
        })
    }
}

#[derive(Debug, Serialize)]
struct DiagnoseOutput {
    symplectic_eigenvalues: [f64; 2],
    #[serde(flatten)]
    diagnostics: diagnostics::StateDiagnostics,
}

fn diagnose(a: DiagnoseArgs) -> CliResult<()> {
    let value: serde_json::Value = io::read_json(&a.file)?;
    let sigma = *CovarianceMatrix::new(io::covariance_from_json(&value)?)?.matrix();
    let out = DiagnoseOutput {
        symplectic_eigenvalues: crate::symplectic::symplectic_eigenvalues(&sigma)?,
        diagnostics: diagnostics::diagnose(&sigma)?,
    };
    match &a.out {
        Some(p) => io::write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let e = serde_json::from_str::<ExperimentConfig>(r#"{"samples": 10, "sampels": 3}"#);
        assert!(e.is_err());
        let e = serde_json::from_str::<ExperimentConfig>(r#"{"state": {"kind": "tmss", "rr": 1}}"#);
        assert!(e.is_err());
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"state": {"kind": "tmss", "r": 0.5}, "f_policy": "average_ef"}"#).unwrap();
        assert_eq!(c.f_policy, Some(FPolicy::AverageEf));
        assert_eq!(c.state.unwrap().kind, Some(StateKind::Tmss));
    }

    #[test]
    fn state_building() {
        let spec = StateSpec { kind: Some(StateKind::Tmss), r: Some(0.5), ..Default::default() };
        let (s, label) = build_state(&spec).unwrap();
        assert_eq!(s, TwoModeGaussianState::two_mode_squeezed(0.5).unwrap());
        assert_eq!(label, "tmss(r=0.5)");

        let spec = StateSpec { kind: Some(StateKind::Tmss), ..Default::default() };
        assert_eq!(build_state(&spec).unwrap_err().code, EXIT_VALIDATION);

        let spec = StateSpec {
            kind: Some(StateKind::Vacuum),
            nbar_a: Some(0.5),
            nbar_b: Some(0.5),
            mean: Some([1.0, 0.0, 0.0, 0.0]),
            ..Default::default()
        };
        let (s, _) = build_state(&spec).unwrap();
        assert_eq!(*s.cov().matrix(), Mat4::identity());
        assert_eq!(s.mean().to_array(), [1.0, 0.0, 0.0, 0.0]);

        let spec = StateSpec {
            kind: Some(StateKind::Custom),
            cov: Some([[0.4, 0.0, 0.0, 0.0], [0.0, 0.4, 0.0, 0.0], [0.0, 0.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.5]]),
            ..Default::default()
        };
        assert_eq!(build_state(&spec).unwrap_err().code, EXIT_VALIDATION);
    }

    #[test]
    fn csv_stem_handling() {
        assert_eq!(csv_path_for_stem(Path::new("run1")), PathBuf::from("run1.csv"));
        assert_eq!(csv_path_for_stem(Path::new("x/run1.csv")), PathBuf::from("x/run1.csv"));
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "cvhomodyne", "simulate", "--state", "tmss", "--r", "0.5", "--samples", "10", "--seed", "42",
            "--mean", "1,-2,0,0", "--include-f", "--out", "run1",
        ])
        .unwrap();
        match cli.command {
            Command::Simulate(a) => {
                assert_eq!(a.state, Some(StateKind::Tmss));
                assert_eq!(a.mean, Some(vec![1.0, -2.0, 0.0, 0.0]));
                assert!(a.include_f);
            }
            _ => panic!("wrong subcommand"),
        }
        let cli = Cli::try_parse_from(["cvhomodyne", "reconstruct", "d.csv", "--f-policy", "average_ef", "--bootstrap"]).unwrap();
        match cli.command {
            Command::Reconstruct(a) => {
                assert_eq!(a.f_policy, Some(FPolicy::AverageEf));
                assert_eq!(a.bootstrap, Some(200));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["cvhomodyne", "reconstruct", "d.csv", "--f-policy", "both"]).is_err());
    }

    #[test]
    fn gnuplot_rows() {
        let t = gnuplot_table(&(Mat4::identity() * 0.5), &Mat4::zeros());
        assert_eq!(t.lines().count(), 17);
        assert_eq!(t.lines().nth(1), Some("1 1 0.5 0"));
    }
}
