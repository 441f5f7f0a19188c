//! `rssm`: spectra, SSM expansions, bounded noise, Monte-Carlo PSD runs and
//! PSD comparisons from the command line.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Every subcommand writes its CSV artifacts and a `manifest.toml`
//! echoing the resolved settings into the output directory.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rssm::forcing::NoiseMethod;
use rssm::montecarlo::Variants;

use crate::config::{
    CompareSettings, ConfigFile, NoiseSettings, PsdSettings, RunSection, SpectrumSettings, SsmSettings,
};
use crate::output::OutputDir;

/// Default worker count when neither `--workers` nor the config sets one.
pub const WORKERS_ENV: &str = "RSSM_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rssm::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if numerical(e) => 3,
            _ => 2,
        }
    }
}

fn numerical(e: &rssm::Error) -> bool {
    use rssm::Error::*;
    match e {
        NewtonDivergence { .. } | InnerOuterResonance { .. } | DefectiveMatrix { .. } | CombinatorialCap { .. }
        | NonFiniteState { .. } => true,
        Realization { source, .. } => numerical(source),
        _ => false,
    }
}

#[derive(Parser)]
#[command(name = "rssm", version, about = "Random spectral submanifolds for randomly forced mechanical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues, spectral quotient and gap, inner-outer resonances.
    AnalyzeSpectrum(SpectrumArgs),
    /// Autonomous SSM coefficients and invariance residuals.
    ComputeSsm(SsmArgs),
    /// Bounded noise realizations for a model's forcing channels.
    GenNoise(NoiseArgs),
    /// Monte-Carlo PSDs of the full, reduced and linear models.
    Simulate(SimulateArgs),
    /// Ensemble PSD of trajectory CSVs.
    Psd(PsdArgs),
    /// Band-averaged comparison of two PSD CSVs.
    Compare(CompareArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: rssm-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    common: Common,
    /// Model preset: quarter-car, building[:n=..,ground=..], chain[:n=..], duffing.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    max_order: Option<u32>,
}

#[derive(Args)]
struct SsmArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    order: Option<u32>,
    /// Comma-separated radii for the residual check.
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long)]
    directions: Option<usize>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    /// spectral, truncated-gaussian or reflected.
    #[arg(long, value_parser = parse_method)]
    method: Option<NoiseMethod>,
    /// Record length [s].
    #[arg(long = "T")]
    duration: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    /// spectral, truncated-gaussian or reflected.
    #[arg(long, value_parser = parse_method)]
    method: Option<NoiseMethod>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of realizations.
    #[arg(long)]
    m: Option<usize>,
    /// Record length [s].
    #[arg(long = "T")]
    duration: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// SSM order N.
    #[arg(long)]
    order: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Include the h₁ correction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    h1: Option<bool>,
    /// Zero all nonlinear coefficients.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    linearize: Option<bool>,
    /// Comma-separated state rows of (q, q̇).
    #[arg(long, value_delimiter = ',')]
    observables: Option<Vec<usize>>,
    /// Transient to drop before the PSD [s].
    #[arg(long)]
    discard: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    hann: Option<bool>,
    /// Comma-separated subset of full, reduced, linear, linear-simulated.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Worker threads (0 = all cores) [env: RSSM_WORKERS].
    #[arg(long)]
    workers: Option<usize>,
    /// Also write every realization's observed trajectories.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    trajectories: Option<bool>,
}

#[derive(Args)]
struct PsdArgs {
    #[command(flatten)]
    common: Common,
    /// Trajectory CSVs, one realization each.
    inputs: Vec<PathBuf>,
    /// Comma-separated column labels [default: all].
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    #[arg(long)]
    discard: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    hann: Option<bool>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Reference PSD CSV.
    a: Option<PathBuf>,
    /// PSD CSV compared against `a`.
    b: Option<PathBuf>,
    /// `auto` or `lo,hi` in rad/s.
    #[arg(long, value_parser = parse_band)]
    band: Option<Band>,
    #[arg(long)]
    observable: Option<String>,
}

#[derive(Clone, Copy)]
enum Band {
    Auto,
    Fixed([f64; 2]),
}

fn parse_band(s: &str) -> Result<Band, String> {
    if s == "auto" {
        return Ok(Band::Auto);
    }
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [lo, hi] => {
            let lo: f64 = lo.trim().parse().map_err(|_| format!("`{lo}` is not a number"))?;
            let hi: f64 = hi.trim().parse().map_err(|_| format!("`{hi}` is not a number"))?;
            Ok(Band::Fixed([lo, hi]))
        }
        _ => Err("expected `auto` or `lo,hi`".into()),
    }
}

fn parse_method(s: &str) -> Result<NoiseMethod, String> {
    match s {
        "spectral" => Ok(NoiseMethod::Spectral),
        "truncated-gaussian" | "truncated" => Ok(NoiseMethod::TruncatedGaussian),
        "reflected" => Ok(NoiseMethod::Reflected),
        _ => Err("expected spectral, truncated-gaussian or reflected".into()),
    }
}

fn parse_variants(list: &[String]) -> Result<Variants, CliError> {
    let mut v = Variants {
        full: false,
        reduced: false,
        linear: false,
        linear_simulated: false,
    };
    for name in list {
        match name.trim() {
            "full" => v.full = true,
            "reduced" => v.reduced = true,
            "linear" => v.linear = true,
            "linear-simulated" => v.linear_simulated = true,
            other => {
                return Err(CliError::Config(format!(
                    "variants: unknown variant `{other}` (expected full, reduced, linear, linear-simulated)"
                )))
            }
        }
    }
    Ok(v)
}

fn env_workers() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{WORKERS_ENV}: expected a nonnegative integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

macro_rules! set {
    ($target:expr, $flag:expr) => {
        if let Some(v) = $flag {
            $target = v;
        }
    };
}

fn prepare(common: &Common) -> Result<(ConfigFile, RunSection, OutputDir), CliError> {
    let file = ConfigFile::load(common.config.as_deref())?;
    let mut run = file.run.clone();
    if let Some(o) = &common.out {
        run.out = Some(o.clone());
    }
    let root = run.out.clone().unwrap_or_else(|| PathBuf::from("rssm-out"));
    run.out = Some(root.clone());
    let out = OutputDir::create(&root)?;
    Ok((file, run, out))
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::AnalyzeSpectrum(a) => {
            let (file, run, mut out) = prepare(&a.common)?;
            let mut s: SpectrumSettings = file.analyze_spectrum.unwrap_or_default();
            set!(s.model, a.model);
            set!(s.dim, a.dim);
            set!(s.max_order, a.max_order);
            commands::analyze_spectrum(&s, &run, &mut out)
        }
        Command::ComputeSsm(a) => {
            let (file, run, mut out) = prepare(&a.common)?;
            let mut s: SsmSettings = file.compute_ssm.unwrap_or_default();
            set!(s.model, a.model);
            set!(s.dim, a.dim);
            set!(s.order, a.order);
            set!(s.radii, a.radii);
            set!(s.directions, a.directions);
            commands::compute_ssm(&s, &run, &mut out)
        }
        Command::GenNoise(a) => {
            let (file, run, mut out) = prepare(&a.common)?;
            let mut s: NoiseSettings = file.gen_noise.unwrap_or_default();
            set!(s.model, a.model);
            if a.method.is_some() {
                s.method = a.method;
            }
            set!(s.duration, a.duration);
            set!(s.dt, a.dt);
            set!(s.seed, a.seed);
            set!(s.realizations, a.realizations);
            commands::gen_noise(&s, &run, &mut out)
        }
        Command::Simulate(a) => {
            let (file, run, mut out) = prepare(&a.common)?;
            let from_file = file.simulate.is_some();
            let mut c = file.simulate.unwrap_or_default();
            set!(c.model, a.model);
            if a.method.is_some() {
                c.method = a.method;
            }
            set!(c.epsilon, a.epsilon);
            set!(c.m, a.m);
            set!(c.duration, a.duration);
            set!(c.dt, a.dt);
            set!(c.order, a.order);
            set!(c.dim, a.dim);
            set!(c.seed, a.seed);
            set!(c.include_h1, a.h1);
            set!(c.linearize, a.linearize);
            set!(c.observables, a.observables);
            if a.discard.is_some() {
                c.discard = a.discard;
            }
            set!(c.hann, a.hann);
            set!(c.keep_trajectories, a.trajectories);
            if let Some(v) = &a.variants {
                c.variants = parse_variants(v)?;
            }
            match a.workers {
                Some(w) => c.workers = w,
                None if !from_file => c.workers = env_workers()?.unwrap_or(0),
                None => {}
            }
            commands::simulate(&c, &run, &mut out)
        }
        Command::Psd(a) => {
            let (file, run, mut out) = prepare(&a.common)?;
            let mut s: PsdSettings = file.psd.unwrap_or_default();
            if !a.inputs.is_empty() {
                s.inputs = a.inputs;
            }
            set!(s.columns, a.columns);
            set!(s.discard, a.discard);
            set!(s.hann, a.hann);
            commands::psd(&s, &run, &mut out)
        }
        Command::Compare(a) => {
            let (file, run, mut out) = prepare(&a.common)?;
            let mut s: CompareSettings = file.compare.unwrap_or_default();
            set!(s.a, a.a);
            set!(s.b, a.b);
            match a.band {
                Some(Band::Auto) => s.band = None,
                Some(Band::Fixed(b)) => s.band = Some(b),
                None => {}
            }
            if a.observable.is_some() {
                s.observable = a.observable;
            }
            if s.a.as_os_str().is_empty() || s.b.as_os_str().is_empty() {
                return Err(CliError::Config("compare needs two PSD CSVs (a and b)".into()));
            }
            commands::compare(&s, &run, &mut out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
