//! Uniformly bounded scalar noise.
//!
//! Three generators are provided:
//!
//! 1. **Spectral synthesis**: a random-phase cosine sum drawn from a one-sided
//!    spectral density `Φ(ω)` (rad/s convention) on a finite frequency window.
//! 2. **Truncated-Gaussian filter**: a second-order linear filter
//!    `m ä + c ȧ + k a = θ` driven by white-noise increments whose per-step
//!    distribution is `N(0, Δt)` truncated to a symmetric interval.
//! 3. **Reflected filter**: the same filter driven by untruncated Gaussian
//!    increments, with the selected output folded back into `[-1, 1]` every step.
//!
//! Increments are applied as a force held constant over the step,
//! `θ_n = ΔW_n / Δt`, so the continuum limit is unit-intensity white noise
//! (one-sided density `1/π` in rad/s) scaled by `intensity`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `master`: `mix64(master ^ mix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over the bit patterns of a sample path.
pub fn path_fingerprint(samples: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in samples {
        for b in s.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMethod {
    Spectral,
    TruncatedGaussian,
    Reflected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub dt: f64,
    pub samples: Vec<f64>,
    pub declared_bound: f64,
    pub seed: u64,
    pub method: NoiseMethod,
    /// Raw Brownian increments `ΔW_n` for the filter methods.
    pub increments: Option<Vec<f64>>,
}

impl NoiseRealization {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn fingerprint(&self) -> u64 {
        path_fingerprint(&self.samples)
    }

    /// Zero-order-hold lookup.
    pub fn at(&self, t: f64) -> Result<f64> {
        let end = self.dt * self.samples.len() as f64;
        if !(0.0..end).contains(&t) {
            return Err(Error::TimeOutOfRange { t, end });
        }
        let i = ((t / self.dt) * (1.0 + 1e-12)).floor() as usize;
        Ok(self.samples[i.min(self.samples.len() - 1)])
    }
}

/// One-sided spectral density on a finite, uniformly spaced frequency window.
#[derive(Clone)]
pub struct SpectralDensityCurve {
    density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub omega_min: f64,
    pub omega_max: f64,
    pub d_omega: f64,
}

impl fmt::Debug for SpectralDensityCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralDensityCurve")
            .field("omega_min", &self.omega_min)
            .field("omega_max", &self.omega_max)
            .field("d_omega", &self.d_omega)
            .finish()
    }
}

impl SpectralDensityCurve {
    pub fn new(
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        omega_min: f64,
        omega_max: f64,
        d_omega: f64,
    ) -> Result<Self> {
        if !(omega_min.is_finite() && omega_max.is_finite() && d_omega.is_finite()) {
            return Err(Error::InvalidArgument("frequency window must be finite".into()));
        }
        if omega_min < 0.0 || omega_max < omega_min || d_omega <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bad frequency window [{omega_min}, {omega_max}] with spacing {d_omega}"
            )));
        }
        Ok(Self {
            density: Arc::new(density),
            omega_min,
            omega_max,
            d_omega,
        })
    }

    pub fn eval(&self, omega: f64) -> f64 {
        (self.density)(omega)
    }

    pub fn bin_count(&self) -> usize {
        ((self.omega_max - self.omega_min) / self.d_omega + 1e-9).floor() as usize + 1
    }

    pub fn bins(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.bin_count()).map(move |i| self.omega_min + i as f64 * self.d_omega)
    }

    /// Cosine amplitudes `sqrt(2 Φ(ω_i) Δω)`.
    pub fn amplitudes(&self) -> Result<Vec<f64>> {
        self.bins()
            .map(|w| {
                let p = self.eval(w);
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "spectral density {p} at {w} rad/s is not a finite nonnegative value"
                    )));
                }
                Ok((2.0 * p * self.d_omega).sqrt())
            })
            .collect()
    }
}

/// Lorentzian road-roughness model driven at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    /// Roughness amplitude `A_v` [m²].
    pub a_v: f64,
    /// Irregularity coefficient `a` [rad/m].
    pub a: f64,
    /// Travel speed `v` [m/s].
    pub v: f64,
}

impl RoadProfile {
    pub fn elevation_density(&self, omega: f64) -> f64 {
        let av = self.a * self.v;
        self.a_v * av / (av * av + omega * omega)
    }

    pub fn gradient_density(&self, omega: f64) -> f64 {
        omega * omega / self.v * self.elevation_density(omega)
    }

    fn check(&self) -> Result<()> {
        if self.a_v > 0.0 && self.a > 0.0 && self.v > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("road parameters A_v, a, v must be positive".into()))
        }
    }
}

/// `φ_h(ω) = A_v a v / ((a v)² + ω²)` on the given window.
pub fn road_elevation_psd(road: RoadProfile, omega_min: f64, omega_max: f64, d_omega: f64) -> Result<SpectralDensityCurve> {
    road.check()?;
    SpectralDensityCurve::new(move |w| road.elevation_density(w), omega_min, omega_max, d_omega)
}

/// `φ_∇h(ω) = (ω²/v) φ_h(ω)` on the given window.
pub fn road_gradient_psd(road: RoadProfile, omega_min: f64, omega_max: f64, d_omega: f64) -> Result<SpectralDensityCurve> {
    road.check()?;
    SpectralDensityCurve::new(move |w| road.gradient_density(w), omega_min, omega_max, d_omega)
}

fn check_grid(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("need T > 0 and dt > 0 (T={duration}, dt={dt})")));
    }
    let n = (duration / dt).round() as usize;
    if n < 2 {
        return Err(Error::InvalidArgument("noise record needs at least two samples".into()));
    }
    Ok(n)
}

/// Random-phase cosine synthesis of `Φ` over `[0, T)` on the grid `t = i dt`.
pub fn sample_from_psd<R: Rng + ?Sized>(
    curve: &SpectralDensityCurve,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Result<NoiseRealization> {
    let n = check_grid(duration, dt)?;
    let nyquist = PI / dt;
    if curve.omega_max >= nyquist {
        return Err(Error::NyquistViolation {
            omega: curve.omega_max,
            nyquist,
        });
    }
    if curve.d_omega > 2.0 * PI / duration * (1.0 + 1e-9) {
        log::warn!(
            "frequency spacing {} rad/s is coarser than 2π/T = {} rad/s",
            curve.d_omega,
            2.0 * PI / duration
        );
    }
    let amps = curve.amplitudes()?;
    let phases: Vec<f64> = amps.iter().map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let samples = synthesize(curve, &amps, &phases, n, dt);
    Ok(NoiseRealization {
        dt,
        samples,
        declared_bound: amps.iter().sum(),
        seed: 0,
        method: NoiseMethod::Spectral,
        increments: None,
    })
}

fn synthesize(curve: &SpectralDensityCurve, amps: &[f64], phases: &[f64], n: usize, dt: f64) -> Vec<f64> {
    let period = 2.0 * PI / (curve.d_omega * dt);
    let fft_len = period.round();
    let first_bin = curve.omega_min / curve.d_omega;
    let aligned = (period - fft_len).abs() < 1e-6 * period
        && (first_bin - first_bin.round()).abs() < 1e-6
        && fft_len >= 2.0
        && first_bin.round() as usize + amps.len() <= fft_len as usize / 2 + 1;
    if aligned {
        let len = fft_len as usize;
        let j0 = first_bin.round() as usize;
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (i, (&c, &phi)) in amps.iter().zip(phases).enumerate() {
            buf[j0 + i] += Complex64::from_polar(c, phi);
        }
        FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
        return (0..n).map(|i| buf[i % len].re).collect();
    }
    // Off-grid frequencies: rotating phasors, re-anchored periodically.
    let omegas: Vec<f64> = curve.bins().collect();
    let rot: Vec<Complex64> = omegas.iter().map(|w| Complex64::from_polar(1.0, w * dt)).collect();
    let mut out = vec![0.0; n];
    let mut z = vec![Complex64::new(0.0, 0.0); amps.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        if i % 256 == 0 {
            let t = i as f64 * dt;
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = Complex64::from_polar(amps[k], omegas[k] * t + phases[k]);
            }
        }
        *slot = z.iter().map(|c| c.re).sum();
        for (zk, r) in z.iter_mut().zip(&rot) {
            *zk *= r;
        }
    }
    out
}

/// Rejection sampler for `N(0, σ²)` conditioned on `[lower, upper]`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    sigma: f64,
    lower: f64,
    upper: f64,
}

impl TruncatedNormal {
    pub fn new(variance: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(variance > 0.0) || !(lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "truncated Gaussian needs variance > 0 and lower < upper (got {variance}, [{lower}, {upper}])"
            )));
        }
        let sigma = variance.sqrt();
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let probability = std.cdf(upper / sigma) - std.cdf(lower / sigma);
        if probability < 1e-6 {
            return Err(Error::DegenerateInterval {
                lower,
                upper,
                probability,
            });
        }
        Ok(Self { sigma, lower, upper })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let x = z * self.sigma;
            if x >= self.lower && x <= self.upper {
                return x;
            }
        }
    }
}

pub fn truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64, lower: f64, upper: f64) -> Result<f64> {
    Ok(TruncatedNormal::new(variance, lower, upper)?.sample(rng))
}

/// Folds `b` into `[-1, 1]` by repeated mirror reflection at ±1.
pub fn reflect_into_unit(b: f64) -> f64 {
    reflect_counting(b).0
}

/// Like [`reflect_into_unit`], also returning the number of mirror flips.
pub fn reflect_counting(mut b: f64) -> (f64, u64) {
    if !b.is_finite() {
        return (b, 0);
    }
    let mut flips = 0;
    // The map has period 4, so far-away inputs are first shifted close.
    if b.abs() > 5.0 {
        let shift = ((b + 1.0) / 4.0).floor() * 4.0;
        b -= shift;
    }
    while !(-1.0..=1.0).contains(&b) {
        if b > 1.0 {
            b = 2.0 - b;
        } else {
            b = -2.0 - b;
        }
        flips += 1;
    }
    (b, flips)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterOutput {
    Displacement,
    Velocity,
    Acceleration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IncrementModel {
    /// `N(0, Δt)` truncated to `[lower √Δt, upper √Δt]`.
    TruncatedGaussian { lower: f64, upper: f64 },
    GaussianWithReflection,
}

impl IncrementModel {
    pub fn symmetric_truncation(half_width: f64) -> Self {
        Self::TruncatedGaussian {
            lower: -half_width,
            upper: half_width,
        }
    }
}

impl Default for IncrementModel {
    fn default() -> Self {
        Self::symmetric_truncation(4.0)
    }
}

fn default_intensity() -> f64 {
    1.0
}

/// Second-order noise filter `m ä + c ȧ + k a = θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub output: FilterOutput,
    #[serde(default)]
    pub increments: IncrementModel,
    /// Scale applied to every increment.
    #[serde(default = "default_intensity")]
    pub intensity: f64,
}

impl FilterConfig {
    fn validate(&self) -> Result<()> {
        if self.m > 0.0 && self.k > 0.0 && self.c >= 0.0 && self.intensity >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "filter needs m > 0, k > 0, c >= 0, intensity >= 0 (got m={}, c={}, k={}, intensity={})",
                self.m, self.c, self.k, self.intensity
            )))
        }
    }
}

/// Filter state `(a, ȧ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterState {
    pub a: f64,
    pub a_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutputs {
    pub a: f64,
    pub a_dot: f64,
    pub a_ddot: f64,
}

impl FilterOutputs {
    pub fn select(&self, which: FilterOutput) -> f64 {
        match which {
            FilterOutput::Displacement => self.a,
            FilterOutput::Velocity => self.a_dot,
            FilterOutput::Acceleration => self.a_ddot,
        }
    }
}

/// Exact zero-order-hold discretization of the 2×2 filter for a fixed step.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteFilter {
    cfg: FilterConfig,
    phi: [[f64; 2]; 2],
    gamma: [f64; 2],
}

impl DiscreteFilter {
    pub fn new(cfg: FilterConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        let (m, c, k) = (cfg.m, cfg.c, cfg.k);
        // A = [[0, 1], [-k/m, -c/m]]; exp(A dt) = e^{τ/2 dt}(g0 I + g1 (A - τ/2 I))
        let tr = -c / m;
        let det = k / m;
        let half = 0.5 * tr;
        let disc = half * half - det;
        let (g0, g1) = if disc > 0.0 {
            let s = disc.sqrt();
            (
                (s * dt).cosh(),
                if s * dt < 1e-8 { dt } else { (s * dt).sinh() / s },
            )
        } else {
            let s = (-disc).sqrt();
            (
                (s * dt).cos(),
                if s * dt < 1e-8 { dt } else { (s * dt).sin() / s },
            )
        };
        let e = (half * dt).exp();
        let a = [[0.0, 1.0], [-det, tr]];
        let mut phi = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                phi[i][j] = e * (g0 * id + g1 * (a[i][j] - half * id));
            }
        }
        // Γ = A⁻¹ (Φ - I) b with b = (0, 1/m); A⁻¹ = [[tr, -1], [det, 0]] / det
        let pm = [[phi[0][0] - 1.0, phi[0][1]], [phi[1][0], phi[1][1] - 1.0]];
        let pb = [pm[0][1] / m, pm[1][1] / m];
        let gamma = [(tr * pb[0] - pb[1]) / det, pb[0]];
        Ok(Self { cfg, phi, gamma })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn step(&self, s: FilterState, theta: f64) -> FilterState {
        FilterState {
            a: self.phi[0][0] * s.a + self.phi[0][1] * s.a_dot + self.gamma[0] * theta,
            a_dot: self.phi[1][0] * s.a + self.phi[1][1] * s.a_dot + self.gamma[1] * theta,
        }
    }

    pub fn outputs(&self, s: FilterState, theta: f64) -> FilterOutputs {
        FilterOutputs {
            a: s.a,
            a_dot: s.a_dot,
            a_ddot: (theta - self.cfg.c * s.a_dot - self.cfg.k * s.a) / self.cfg.m,
        }
    }

    /// Reflects the selected state variable (Method 3). Displacement flips
    /// flip the velocity sign so the folded path stays a mirror image.
    pub fn reflect(&self, s: FilterState) -> FilterState {
        match self.cfg.output {
            FilterOutput::Displacement => {
                let (a, flips) = reflect_counting(s.a);
                let a_dot = if flips % 2 == 1 { -s.a_dot } else { s.a_dot };
                FilterState { a, a_dot }
            }
            FilterOutput::Velocity => FilterState {
                a: s.a,
                a_dot: reflect_into_unit(s.a_dot),
            },
            FilterOutput::Acceleration => s,
        }
    }

    /// L1 gain of `u -> selected output` over a record of `n` samples.
    fn l1_gain(&self, n: usize) -> f64 {
        let (row, feedthrough) = match self.cfg.output {
            FilterOutput::Displacement => ([1.0, 0.0], 0.0),
            FilterOutput::Velocity => ([0.0, 1.0], 0.0),
            FilterOutput::Acceleration => ([-self.cfg.k / self.cfg.m, -self.cfg.c / self.cfg.m], 1.0 / self.cfg.m),
        };
        let mut sum = feedthrough.abs();
        let mut v = self.gamma;
        for _ in 1..n {
            sum += (row[0] * v[0] + row[1] * v[1]).abs();
            v = [
                self.phi[0][0] * v[0] + self.phi[0][1] * v[1],
                self.phi[1][0] * v[0] + self.phi[1][1] * v[1],
            ];
        }
        sum
    }
}

/// One exact step of the filter with `θ` held over the step. Returns the new
/// state and its outputs, `ä` evaluated with the same held `θ`.
pub fn advance_filter(cfg: &FilterConfig, state: FilterState, theta: f64, dt: f64) -> Result<(FilterState, FilterOutputs)> {
    let f = DiscreteFilter::new(*cfg, dt)?;
    let next = f.step(state, theta);
    Ok((next, f.outputs(next, theta)))
}

/// Draws the Brownian increments `ΔW_n` for a filter method.
pub fn draw_increments<R: Rng + ?Sized>(cfg: &FilterConfig, n: usize, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    let sd = dt.sqrt();
    match cfg.increments {
        IncrementModel::TruncatedGaussian { lower, upper } => {
            let tn = TruncatedNormal::new(dt, lower * sd, upper * sd)?;
            Ok((0..n).map(|_| tn.sample(rng)).collect())
        }
        IncrementModel::GaussianWithReflection => Ok((0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * sd
            })
            .collect()),
    }
}

/// Runs the filter over a sequence of increments, producing the selected
/// output at each grid time. Shared by noise generation and the coupled
/// integrator so both see the identical path.
#[derive(Debug, Clone)]
pub struct FilterDriver {
    filter: DiscreteFilter,
    reflect: bool,
    state: FilterState,
    dt: f64,
}

impl FilterDriver {
    pub fn new(cfg: FilterConfig, dt: f64) -> Result<Self> {
        Ok(Self {
            filter: DiscreteFilter::new(cfg, dt)?,
            reflect: matches!(cfg.increments, IncrementModel::GaussianWithReflection),
            state: FilterState::default(),
            dt,
        })
    }

    pub fn state(&self) -> FilterState {
        self.state
    }

    pub fn set_state(&mut self, state: FilterState) {
        self.state = state;
    }

    /// Emits the sample for the current grid time under increment `dw`, then
    /// advances to the next grid time.
    pub fn next_sample(&mut self, dw: f64) -> f64 {
        let cfg = self.filter.config();
        let u = cfg.intensity * dw / self.dt;
        let mut y = self.filter.outputs(self.state, u).select(cfg.output);
        if self.reflect && cfg.output == FilterOutput::Acceleration {
            y = reflect_into_unit(y);
        }
        let next = self.filter.step(self.state, u);
        self.state = if self.reflect { self.filter.reflect(next) } else { next };
        y
    }
}

/// Noise source selection for a forcing channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum NoiseSourceConfig {
    /// Method 1: random-phase synthesis from a spectral density.
    Spectral {
        density: DensitySpec,
        omega_min: f64,
        omega_max: f64,
        /// Defaults to `2π/T`.
        #[serde(default)]
        d_omega: Option<f64>,
    },
    /// Methods 2 and 3, selected by the filter's increment model.
    Filtered { filter: FilterConfig },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensitySpec {
    RoadElevation(RoadProfile),
    RoadGradient(RoadProfile),
    Flat { level: f64 },
}

impl DensitySpec {
    pub fn eval(&self, omega: f64) -> f64 {
        match *self {
            DensitySpec::RoadElevation(r) => r.elevation_density(omega),
            DensitySpec::RoadGradient(r) => r.gradient_density(omega),
            DensitySpec::Flat { level } => level,
        }
    }
}

impl NoiseSourceConfig {
    pub fn method(&self) -> NoiseMethod {
        match self {
            NoiseSourceConfig::Spectral { .. } => NoiseMethod::Spectral,
            NoiseSourceConfig::Filtered { filter } => match filter.increments {
                IncrementModel::TruncatedGaussian { .. } => NoiseMethod::TruncatedGaussian,
                IncrementModel::GaussianWithReflection => NoiseMethod::Reflected,
            },
        }
    }

    pub fn curve(&self, duration: f64) -> Result<Option<SpectralDensityCurve>> {
        match self {
            NoiseSourceConfig::Spectral {
                density,
                omega_min,
                omega_max,
                d_omega,
            } => {
                let spec = *density;
                let dw = d_omega.unwrap_or(2.0 * PI / duration);
                if let DensitySpec::RoadElevation(r) | DensitySpec::RoadGradient(r) = spec {
                    r.check()?;
                }
                Ok(Some(SpectralDensityCurve::new(move |w| spec.eval(w), *omega_min, *omega_max, dw)?))
            }
            NoiseSourceConfig::Filtered { .. } => Ok(None),
        }
    }
}

/// Generates one bounded realization over `[0, T)` from `seed`.
pub fn generate_noise(source: &NoiseSourceConfig, duration: f64, dt: f64, seed: u64) -> Result<NoiseRealization> {
    let mut rng = rng_from_seed(seed);
    let n = check_grid(duration, dt)?;
    let mut out = match source {
        NoiseSourceConfig::Spectral { .. } => {
            let curve = source.curve(duration)?.expect("spectral source has a curve");
            sample_from_psd(&curve, duration, dt, &mut rng)?
        }
        NoiseSourceConfig::Filtered { filter } => {
            let increments = draw_increments(filter, n, dt, &mut rng)?;
            let mut driver = FilterDriver::new(*filter, dt)?;
            let samples: Vec<f64> = increments.iter().map(|&dw| driver.next_sample(dw)).collect();
            let declared_bound = match filter.increments {
                IncrementModel::GaussianWithReflection => 1.0,
                IncrementModel::TruncatedGaussian { lower, upper } => {
                    let umax = filter.intensity * lower.abs().max(upper.abs()) / dt.sqrt();
                    umax * DiscreteFilter::new(*filter, dt)?.l1_gain(n) * (1.0 + 1e-9)
                }
            };
            NoiseRealization {
                dt,
                samples,
                declared_bound,
                seed,
                method: source.method(),
                increments: Some(increments),
            }
        }
    };
    out.seed = seed;
    debug_assert!(out.max_abs() <= out.declared_bound);
    Ok(out)
}
