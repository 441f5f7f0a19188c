//! Monte-Carlo ensembles on the full, reduced and linear models.
//!
//! Realization `i` uses seed `s_i = derive_seed(master, i)`; channel `j` of
//! that realization draws its noise from `derive_seed(s_i, j)`. The full and
//! reduced runs of a realization replay the same stored noise path, so PSD
//! differences between the variants reflect model error, not sampling error.
//!
//! Each ensemble phase runs on its own, so its wall time is not polluted by
//! the others. Results are collected by realization index and reduced in a
//! fixed order, which makes them independent of the worker count.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{derive_seed, generate_noise, path_fingerprint, IncrementModel, NoiseMethod, NoiseSourceConfig};
use crate::integrate::{newmark_integrate, rk4_reduced_integrate, ForcingPath, IntegratorConfig, Record, Trajectory};
use crate::library::preset;
use crate::model::{to_first_order, MechanicalSystem};
use crate::psd::{channel_force_psd, default_discard, estimate_psd, fft_grid, linear_psd, PsdEstimate, PsdOptions};
use crate::reduced::RandomReducedModel;
use crate::spectral::{compute_spectrum, slow_subspace_by_dim};
use crate::ssm::compute_autonomous_ssm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variants {
    pub full: bool,
    pub reduced: bool,
    /// Transfer-function PSD of the linear part.
    pub linear: bool,
    /// Newmark on the linear part with the same noise.
    pub linear_simulated: bool,
}

impl Default for Variants {
    fn default() -> Self {
        Self {
            full: true,
            reduced: true,
            linear: true,
            linear_simulated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name, e.g. `building:n=10`.
    pub model: String,
    pub epsilon: f64,
    /// Zero all nonlinear coefficients.
    pub linearize: bool,
    /// Replaces the noise method of every filtered channel.
    pub method: Option<NoiseMethod>,
    /// Replaces the noise sources channel by channel.
    pub sources: Option<Vec<NoiseSourceConfig>>,
    /// Number of realizations.
    pub m: usize,
    /// Record length [s].
    pub duration: f64,
    pub dt: f64,
    pub order: u32,
    /// Dimension of the slow subspace.
    pub dim: usize,
    pub include_h1: bool,
    pub seed: u64,
    /// Observed state rows of `(q, q̇)`; the preset's default when empty.
    pub observables: Vec<usize>,
    /// Transient to drop before the PSD [s]; `5 / |Re λ₁|` when unset.
    pub discard: Option<f64>,
    pub hann: bool,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub variants: Variants,
    /// Keep the observed trajectories of every realization.
    pub keep_trajectories: bool,
    /// Newmark settings; its `dt` is replaced by the experiment's.
    pub integrator: IntegratorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "duffing".into(),
            epsilon: 1.0,
            linearize: false,
            method: None,
            sources: None,
            m: 50,
            duration: 100.0,
            dt: 1e-3,
            order: 5,
            dim: 2,
            include_h1: false,
            seed: 0,
            observables: Vec::new(),
            discard: None,
            hann: false,
            workers: 0,
            variants: Variants::default(),
            keep_trajectories: false,
            integrator: IntegratorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        let steps = self.duration / self.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return bad(format!("duration {} is not a multiple of dt {}", self.duration, self.dt));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if let Some(d) = self.discard {
            if !(d >= 0.0 && d < self.duration) {
                return bad(format!("discard {d} must lie in [0, duration)"));
            }
        }
        if self.order < 1 {
            return bad("SSM order must be at least 1".into());
        }
        self.integrator_config().validate()
    }

    /// Model with all overrides applied.
    pub fn build_model(&self) -> Result<(MechanicalSystem, Vec<usize>, Vec<String>)> {
        let p = preset(&self.model, self.epsilon)?;
        let mut sys = p.system;
        if self.linearize {
            sys = sys.linearized();
        }
        let mut forcing = sys.forcing().clone();
        if let Some(sources) = &self.sources {
            if sources.len() != forcing.channels.len() {
                return Err(Error::InvalidArgument(format!(
                    "model has {} forcing channels, {} sources given",
                    forcing.channels.len(),
                    sources.len()
                )));
            }
            for (ch, s) in forcing.channels.iter_mut().zip(sources) {
                ch.source = s.clone();
            }
        }
        if let Some(method) = self.method {
            for ch in &mut forcing.channels {
                ch.source = with_method(&ch.source, method)?;
            }
        }
        let sys = sys.with_forcing(forcing)?;
        let n = sys.n_dof();
        let rows = if self.observables.is_empty() {
            vec![p.observable]
        } else {
            self.observables.clone()
        };
        if let Some(&r) = rows.iter().find(|&&r| r >= 2 * n) {
            return Err(Error::InvalidArgument(format!("observable {r} beyond state dimension {}", 2 * n)));
        }
        let labels = rows
            .iter()
            .map(|&r| {
                if r == p.observable {
                    p.observable_label.clone()
                } else if r < n {
                    format!("q{r}")
                } else {
                    format!("qd{}", r - n)
                }
            })
            .collect();
        Ok((sys, rows, labels))
    }

    /// Integrator settings with `dt` taken from the experiment.
    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            ..self.integrator
        }
    }

    fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

fn with_method(source: &NoiseSourceConfig, method: NoiseMethod) -> Result<NoiseSourceConfig> {
    match (source, method) {
        (NoiseSourceConfig::Spectral { .. }, NoiseMethod::Spectral) => Ok(source.clone()),
        (NoiseSourceConfig::Filtered { filter }, NoiseMethod::TruncatedGaussian) => {
            let mut f = *filter;
            if !matches!(f.increments, IncrementModel::TruncatedGaussian { .. }) {
                f.increments = IncrementModel::default();
            }
            Ok(NoiseSourceConfig::Filtered { filter: f })
        }
        (NoiseSourceConfig::Filtered { filter }, NoiseMethod::Reflected) => {
            let mut f = *filter;
            f.increments = IncrementModel::GaussianWithReflection;
            Ok(NoiseSourceConfig::Filtered { filter: f })
        }
        _ => Err(Error::InvalidArgument(format!(
            "method {method:?} does not apply to a {:?} channel",
            source.method()
        ))),
    }
}

/// Wall times [s].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Spectrum, subspace and SSM expansion, once.
    pub ssm_build: f64,
    pub noise: f64,
    pub full_ensemble: f64,
    pub reduced_ensemble: f64,
    /// `ssm_build + reduced_ensemble`.
    pub reduced_total: f64,
    pub linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmSummary {
    pub dim: usize,
    pub order: u32,
    /// Slow eigenvalues `(re, im)`.
    pub eigenvalues: Vec<(f64, f64)>,
    pub validity_radius: f64,
    /// Near-resonant denominators flagged during the solve, smallest first.
    pub small_divisors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// The configuration with the discard and observables resolved.
    pub config: ExperimentConfig,
    pub model_name: String,
    pub observables: Vec<usize>,
    pub labels: Vec<String>,
    /// Transient actually dropped [s].
    pub discard: f64,
    /// Per-realization seeds `s_i`.
    pub seeds: Vec<u64>,
    /// Fingerprint of the noise path the full run consumed, per realization.
    pub full_noise: Vec<u64>,
    /// Same for the reduced run.
    pub reduced_noise: Vec<u64>,
    pub full: Option<PsdEstimate>,
    pub reduced: Option<PsdEstimate>,
    pub linear: Option<PsdEstimate>,
    pub linear_simulated: Option<PsdEstimate>,
    pub ssm: Option<SsmSummary>,
    pub timings: Timings,
    #[serde(skip)]
    pub trajectories: Vec<RealizationTrajectories>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealizationTrajectories {
    pub full: Option<Trajectory>,
    pub reduced: Option<Trajectory>,
}

fn path_hash(path: &ForcingPath) -> u64 {
    let per: Vec<f64> = path
        .channels
        .iter()
        .map(|c| f64::from_bits(path_fingerprint(c)))
        .collect();
    path_fingerprint(&per)
}

/// Runs `f` over `0..m` on `pool`, keeping index order. The first failure by
/// index is reported with its seed.
fn indexed<T: Send>(
    pool: &rayon::ThreadPool,
    seeds: &[u64],
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let out: Vec<Result<T>> = pool.install(|| (0..seeds.len()).into_par_iter().map(&f).collect());
    out.into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Realization {
                index,
                seed: seeds[index],
                source: Box::new(e),
            })
        })
        .collect()
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Realization seed `s_i`.
pub fn realization_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, i as u64)
}

/// Seed of channel `j` in realization `i`.
pub fn channel_seed(master: u64, i: usize, j: usize) -> u64 {
    derive_seed(realization_seed(master, i), j as u64)
}

/// Noise path of realization `i`.
pub fn realization_path(sys: &MechanicalSystem, cfg: &ExperimentConfig, i: usize) -> Result<ForcingPath> {
    let noise = sys
        .forcing()
        .channels
        .iter()
        .enumerate()
        .map(|(j, ch)| generate_noise(&ch.source, cfg.duration, cfg.dt, channel_seed(cfg.seed, i, j)))
        .collect::<Result<Vec<_>>>()?;
    if noise.is_empty() {
        return Ok(ForcingPath::silent(cfg.dt, cfg.steps(), 0));
    }
    ForcingPath::from_noise(&noise)
}

fn observed(traj: &Trajectory) -> Vec<Vec<f64>> {
    (0..traj.width()).map(|j| traj.column(j)).collect()
}

/// Ensemble PSD of signals indexed `[realization][observable][sample]`.
fn ensemble_psd(signals: &[Vec<Vec<f64>>], labels: &[String], dt: f64, opts: &PsdOptions) -> Result<PsdEstimate> {
    let mut out: Option<PsdEstimate> = None;
    for (o, label) in labels.iter().enumerate() {
        let refs: Vec<&[f64]> = signals.iter().map(|s| s[o].as_slice()).collect();
        let est = estimate_psd(&refs, dt, label, opts)?;
        match &mut out {
            None => out = Some(est),
            Some(acc) => acc.extend(est)?,
        }
    }
    out.ok_or_else(|| Error::InvalidArgument("no observables".into()))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (sys, rows, labels) = cfg.build_model()?;
    let pool = thread_pool(cfg.workers)?;
    let icfg = cfg.integrator_config();
    let n = sys.n_dof();
    let seeds: Vec<u64> = (0..cfg.m).map(|i| realization_seed(cfg.seed, i)).collect();

    let t0 = Instant::now();
    let fos = to_first_order(&sys)?;
    let spec = compute_spectrum(fos.a())?;
    let slowest = spec.eigenvalues[0].re;
    let mut reduced_model = None;
    let mut ssm = None;
    if cfg.variants.reduced {
        let sub = slow_subspace_by_dim(&spec, fos.a(), cfg.dim)?;
        let exp = compute_autonomous_ssm(&fos, &sub, cfg.order)?;
        ssm = Some(SsmSummary {
            dim: cfg.dim,
            order: cfg.order,
            eigenvalues: spec.eigenvalues[..cfg.dim].iter().map(|l| (l.re, l.im)).collect(),
            validity_radius: exp.validity_radius,
            small_divisors: {
                let mut v: Vec<f64> = exp.small_divisors.iter().map(|s| s.magnitude).collect();
                v.sort_by(f64::total_cmp);
                v
            },
        });
        reduced_model = Some(RandomReducedModel::new(&fos, sub, exp, cfg.include_h1)?);
    }
    let mut timings = Timings {
        ssm_build: t0.elapsed().as_secs_f64(),
        ..Timings::default()
    };

    let mut discard = cfg.discard.unwrap_or_else(|| default_discard(slowest));
    if let Some(m) = reduced_model.as_ref().filter(|m| m.include_h1()) {
        discard = discard.max(m.spin_up_time());
    }
    if discard >= cfg.duration {
        return Err(Error::InvalidArgument(format!(
            "transient discard {discard} s leaves no record in {} s; raise the duration or set `discard`",
            cfg.duration
        )));
    }
    let opts = PsdOptions { discard, hann: cfg.hann };

    let t0 = Instant::now();
    let paths = indexed(&pool, &seeds, |i| realization_path(&sys, cfg, i))?;
    timings.noise = t0.elapsed().as_secs_f64();

    let zeros = vec![0.0; n];
    let record = Record::Rows(rows.clone());
    let mut trajectories = vec![RealizationTrajectories::default(); if cfg.keep_trajectories { cfg.m } else { 0 }];

    let mut full = None;
    let mut full_noise = Vec::new();
    if cfg.variants.full {
        let t0 = Instant::now();
        let runs = indexed(&pool, &seeds, |i| {
            let mut traj = newmark_integrate(&sys, &paths[i], &zeros, &zeros, &icfg, &record)?;
            traj.seed = Some(seeds[i]);
            Ok((path_hash(&paths[i]), traj))
        })?;
        timings.full_ensemble = t0.elapsed().as_secs_f64();
        let signals: Vec<_> = runs.iter().map(|(_, t)| observed(t)).collect();
        full = Some(ensemble_psd(&signals, &labels, cfg.dt, &opts)?);
        full_noise = runs.iter().map(|(h, _)| *h).collect();
        for (slot, (_, t)) in trajectories.iter_mut().zip(runs) {
            slot.full = Some(t);
        }
    }

    let mut reduced = None;
    let mut reduced_noise = Vec::new();
    if let Some(model) = &reduced_model {
        let xi0 = vec![0.0; model.d()];
        let t0 = Instant::now();
        let runs = indexed(&pool, &seeds, |i| {
            let mut m = model.clone();
            let mut traj = rk4_reduced_integrate(&mut m, &paths[i], &xi0, cfg.dt, &record)?;
            traj.seed = Some(seeds[i]);
            Ok((path_hash(&paths[i]), traj))
        })?;
        timings.reduced_ensemble = t0.elapsed().as_secs_f64();
        timings.reduced_total = timings.ssm_build + timings.reduced_ensemble;
        let signals: Vec<_> = runs.iter().map(|(_, t)| observed(t)).collect();
        reduced = Some(ensemble_psd(&signals, &labels, cfg.dt, &opts)?);
        reduced_noise = runs.iter().map(|(h, _)| *h).collect();
        for (slot, (_, t)) in trajectories.iter_mut().zip(runs) {
            slot.reduced = Some(t);
        }
    }

    let mut linear_simulated = None;
    if cfg.variants.linear_simulated {
        let lin = sys.linearized();
        let runs = indexed(&pool, &seeds, |i| {
            let traj = newmark_integrate(&lin, &paths[i], &zeros, &zeros, &icfg, &record)?;
            Ok(observed(&traj))
        })?;
        linear_simulated = Some(ensemble_psd(&runs, &labels, cfg.dt, &opts)?);
    }

    let mut linear = None;
    if cfg.variants.linear {
        let t0 = Instant::now();
        let skip = (discard / cfg.dt).round() as usize;
        let omega = fft_grid(cfg.steps() - skip, cfg.dt);
        let channel_psd = channel_densities(&sys, cfg, &paths, &omega, &opts)?;
        let phi = |k: usize, _: f64| {
            let col: Vec<f64> = channel_psd.iter().map(|c| c[k]).collect();
            channel_force_psd(&sys, &col)
        };
        let mut est = linear_psd(&sys, &phi, &omega, &rows, &labels)?;
        est.dt = cfg.dt;
        linear = Some(est);
        timings.linear = t0.elapsed().as_secs_f64();
    }

    let mut config = cfg.clone();
    config.discard = Some(discard);
    config.observables = rows.clone();
    Ok(ExperimentReport {
        config,
        model_name: sys.name().to_string(),
        observables: rows,
        labels,
        discard,
        seeds,
        full_noise,
        reduced_noise,
        full,
        reduced,
        linear,
        linear_simulated,
        ssm,
        timings,
        trajectories,
    })
}

/// One-sided density of every channel on `omega`: the analytic curve
/// (zero outside its window) for spectral synthesis, the ensemble-averaged
/// empirical PSD of the realized samples for the filter methods.
fn channel_densities(
    sys: &MechanicalSystem,
    cfg: &ExperimentConfig,
    paths: &[ForcingPath],
    omega: &[f64],
    opts: &PsdOptions,
) -> Result<Vec<Vec<f64>>> {
    sys.forcing()
        .channels
        .iter()
        .enumerate()
        .map(|(j, ch)| match ch.source.curve(cfg.duration)? {
            Some(curve) => Ok(omega
                .iter()
                .map(|&w| {
                    let half = 0.5 * curve.d_omega;
                    if w >= curve.omega_min - half && w <= curve.omega_max + half {
                        curve.eval(w)
                    } else {
                        0.0
                    }
                })
                .collect()),
            None => {
                let refs: Vec<&[f64]> = paths.iter().map(|p| p.channels[j].as_slice()).collect();
                Ok(estimate_psd(&refs, cfg.dt, &ch.label, opts)?.values.remove(0))
            }
        })
        .collect()
}
