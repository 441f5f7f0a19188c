//! Prebuilt example systems.
//!
//! * quarter-car suspension on a random road (two noise channels: elevation
//!   through the tyre spring, gradient through the tyre damper);
//! * `n`-storey fixed-base building under bounded ground acceleration;
//! * cubic oscillator chain with Rayleigh damping, a desk-scale stand-in for
//!   larger structural models;
//! * single-degree-of-freedom Duffing oscillator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{DensitySpec, FilterConfig, FilterOutput, IncrementModel, NoiseSourceConfig, RoadProfile};
use crate::model::{ForcingChannel, ForcingSpec, MechanicalSystem};
use crate::poly::PolynomialMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuarterCarParams {
    pub m_s: f64,
    pub m_u: f64,
    pub c_s: f64,
    pub c_t: f64,
    pub k_s: f64,
    pub k_t: f64,
    pub kappa: f64,
    /// Travel speed [m/s].
    pub v: f64,
    /// Road length [m].
    pub length: f64,
    pub a_v: f64,
    pub a: f64,
    /// Upper edge of the synthesized road spectrum [rad/s].
    pub omega_max: f64,
}

impl Default for QuarterCarParams {
    fn default() -> Self {
        Self {
            m_s: 229.0,
            m_u: 31.0,
            c_s: 100.0,
            c_t: 100.0,
            k_s: 6e4,
            k_t: 2e4,
            kappa: 2.5e5,
            v: 30.0,
            length: 1800.0,
            a_v: 3.5e-5,
            a: 0.4,
            omega_max: 100.0,
        }
    }
}

impl QuarterCarParams {
    pub fn travel_time(&self) -> f64 {
        self.length / self.v
    }

    pub fn road(&self) -> RoadProfile {
        RoadProfile {
            a_v: self.a_v,
            a: self.a,
            v: self.v,
        }
    }
}

fn positive(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidModel(format!("parameter {name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Two-mass suspension with cubic suspension spring `κ (x_s - x_u)³`.
pub fn quarter_car(p: &QuarterCarParams, eps: f64) -> Result<MechanicalSystem> {
    positive(&[
        ("m_s", p.m_s),
        ("m_u", p.m_u),
        ("c_s", p.c_s),
        ("c_t", p.c_t),
        ("k_s", p.k_s),
        ("k_t", p.k_t),
        ("v", p.v),
        ("length", p.length),
        ("a_v", p.a_v),
        ("a", p.a),
        ("omega_max", p.omega_max),
    ])?;
    if p.kappa < 0.0 {
        return Err(Error::InvalidModel("kappa must be nonnegative".into()));
    }
    let mass = DMatrix::from_diagonal(&DVector::from_vec(vec![p.m_s, p.m_u]));
    let damping = DMatrix::from_row_slice(2, 2, &[p.c_s, -p.c_s, -p.c_s, p.c_s + p.c_t]);
    let stiffness = DMatrix::from_row_slice(2, 2, &[p.k_s, -p.k_s, -p.k_s, p.k_s + p.k_t]);
    let mut nl = PolynomialMap::zero(4, 2);
    if p.kappa > 0.0 {
        nl.add_power_of_difference(0, Some(1), 3, p.kappa, 0)?;
        nl.add_power_of_difference(0, Some(1), 3, -p.kappa, 1)?;
    }
    let road = p.road();
    let omega_min = 2.0 * PI / p.travel_time();
    let window = |density| NoiseSourceConfig::Spectral {
        density,
        omega_min,
        omega_max: p.omega_max,
        d_omega: None,
    };
    let forcing = ForcingSpec {
        amplitude: eps,
        channels: vec![
            ForcingChannel {
                label: "elevation".into(),
                shape: vec![0.0, p.k_t],
                parametric: None,
                source: window(DensitySpec::RoadElevation(road)),
            },
            ForcingChannel {
                label: "gradient".into(),
                shape: vec![0.0, p.c_t * p.v],
                parametric: None,
                source: window(DensitySpec::RoadGradient(road)),
            },
        ],
    };
    MechanicalSystem::new("quarter-car", mass, damping, stiffness, nl, forcing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingParams {
    pub n: usize,
    pub mass: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub kappa: f64,
    /// Adds a cubic spring between the first floor and the ground.
    pub ground_spring: bool,
    pub filter: FilterConfig,
}

impl Default for BuildingParams {
    fn default() -> Self {
        Self {
            n: 10,
            mass: 7.0,
            alpha: 0.0,
            beta: 0.0198,
            k: 4555.0,
            kappa: 2000.0,
            ground_spring: false,
            filter: FilterConfig {
                m: 1e-6,
                c: 2e-5,
                k: 4e-6,
                output: FilterOutput::Displacement,
                increments: IncrementModel::GaussianWithReflection,
                intensity: 1.0,
            },
        }
    }
}

/// Fixed-base chain stiffness: `diag k_i + k_{i+1}` (`k_{n+1} = 0`), off-diagonal `-k_{i+1}`.
pub fn chain_stiffness(k: &[f64]) -> DMatrix<f64> {
    let n = k.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = k[i] + k.get(i + 1).copied().unwrap_or(0.0);
        if i + 1 < n {
            out[(i, i + 1)] = -k[i + 1];
            out[(i + 1, i)] = -k[i + 1];
        }
    }
    out
}

fn chain_cubics(n: usize, kappa: f64, ground: bool) -> Result<PolynomialMap> {
    let mut nl = PolynomialMap::zero(2 * n, n);
    if kappa == 0.0 {
        return Ok(nl);
    }
    if ground {
        nl.add_power_of_difference(0, None, 3, kappa, 0)?;
    }
    for i in 0..n.saturating_sub(1) {
        nl.add_power_of_difference(i, Some(i + 1), 3, kappa, i)?;
        nl.add_power_of_difference(i, Some(i + 1), 3, -kappa, i + 1)?;
    }
    Ok(nl)
}

/// `n`-storey shear building, forcing `ε a(t) M 1` with `a` a bounded
/// ground acceleration.
pub fn building(p: &BuildingParams, eps: f64) -> Result<MechanicalSystem> {
    if p.n == 0 {
        return Err(Error::InvalidModel("building needs at least one storey".into()));
    }
    positive(&[("mass", p.mass), ("k", p.k)])?;
    if p.alpha < 0.0 || p.beta < 0.0 || p.kappa < 0.0 {
        return Err(Error::InvalidModel("alpha, beta and kappa must be nonnegative".into()));
    }
    let n = p.n;
    let mass = DMatrix::from_diagonal_element(n, n, p.mass);
    let stiffness = chain_stiffness(&vec![p.k; n]);
    let damping = &stiffness * p.beta + &mass * p.alpha;
    let nl = chain_cubics(n, p.kappa, p.ground_spring)?;
    let forcing = ForcingSpec {
        amplitude: eps,
        channels: vec![ForcingChannel {
            label: "ground-acceleration".into(),
            shape: vec![p.mass; n],
            parametric: None,
            source: NoiseSourceConfig::Filtered { filter: p.filter },
        }],
    };
    MechanicalSystem::new(format!("building:n={n}"), mass, damping, stiffness, nl, forcing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    pub n: usize,
    pub mass: f64,
    pub k: f64,
    pub kappa: f64,
    /// Rayleigh mass coefficient.
    pub alpha: f64,
    /// Rayleigh stiffness coefficient; makes higher modes decay faster.
    pub beta: f64,
    pub filter: FilterConfig,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            n: 10,
            mass: 1.0,
            k: 100.0,
            kappa: 100.0,
            alpha: 0.02,
            beta: 0.005,
            filter: FilterConfig {
                m: 5.0,
                c: 100.0,
                k: 20.0,
                output: FilterOutput::Acceleration,
                increments: IncrementModel::default(),
                intensity: 1.0,
            },
        }
    }
}

/// Fixed-base chain of unit cells with cubic neighbour couplings, driven by
/// a filtered bounded base acceleration.
pub fn cubic_chain(p: &ChainParams, eps: f64) -> Result<MechanicalSystem> {
    if p.n < 2 {
        return Err(Error::InvalidModel("chain needs at least two masses".into()));
    }
    positive(&[("mass", p.mass), ("k", p.k)])?;
    if p.alpha < 0.0 || p.beta < 0.0 || p.kappa < 0.0 {
        return Err(Error::InvalidModel("alpha, beta and kappa must be nonnegative".into()));
    }
    let n = p.n;
    let mass = DMatrix::from_diagonal_element(n, n, p.mass);
    let stiffness = chain_stiffness(&vec![p.k; n]);
    let damping = &stiffness * p.beta + &mass * p.alpha;
    let nl = chain_cubics(n, p.kappa, true)?;
    let forcing = ForcingSpec {
        amplitude: eps,
        channels: vec![ForcingChannel {
            label: "base-acceleration".into(),
            shape: vec![p.mass; n],
            parametric: None,
            source: NoiseSourceConfig::Filtered { filter: p.filter },
        }],
    };
    MechanicalSystem::new(format!("chain:n={n}"), mass, damping, stiffness, nl, forcing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuffingParams {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub kappa: f64,
    /// Flat forcing spectrum level on `[omega_min, omega_max]`.
    pub level: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for DuffingParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            c: 0.2,
            k: 1.0,
            kappa: 0.5,
            level: 1.0,
            omega_min: 0.05,
            omega_max: 5.0,
        }
    }
}

/// `m ẍ + c ẋ + k x + κ x³ = ε θ(t)`.
pub fn duffing(p: &DuffingParams, eps: f64) -> Result<MechanicalSystem> {
    positive(&[("m", p.m), ("k", p.k)])?;
    let mut nl = PolynomialMap::zero(2, 1);
    if p.kappa != 0.0 {
        nl.add_power_of_difference(0, None, 3, p.kappa, 0)?;
    }
    let forcing = ForcingSpec {
        amplitude: eps,
        channels: vec![ForcingChannel {
            label: "force".into(),
            shape: vec![1.0],
            parametric: None,
            source: NoiseSourceConfig::Spectral {
                density: DensitySpec::Flat { level: p.level },
                omega_min: p.omega_min,
                omega_max: p.omega_max,
                d_omega: None,
            },
        }],
    };
    MechanicalSystem::new(
        "duffing",
        DMatrix::from_element(1, 1, p.m),
        DMatrix::from_element(1, 1, p.c),
        DMatrix::from_element(1, 1, p.k),
        nl,
        forcing,
    )
}

/// A named preset with its default observed degree of freedom.
#[derive(Debug, Clone)]
pub struct Preset {
    pub system: MechanicalSystem,
    /// Index into the state `(q, q̇)` of the default observable.
    pub observable: usize,
    pub observable_label: String,
}

/// Parses `quarter-car`, `building[:n=10[,ground=true]]`, `chain[:n=30]` or
/// `duffing` and builds the model at amplitude `eps`.
pub fn preset(spec: &str, eps: f64) -> Result<Preset> {
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (spec.trim(), ""),
    };
    let mut kv = Vec::new();
    for part in args.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("model option `{part}` is not key=value")))?;
        kv.push((k.trim().to_string(), v.trim().to_string()));
    }
    let int = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("`{v}` is not a nonnegative integer")))
    };
    let flag = |v: &str| {
        v.parse::<bool>()
            .map_err(|_| Error::InvalidArgument(format!("`{v}` is not true/false")))
    };
    let unknown = |k: &str| Error::InvalidArgument(format!("unknown option `{k}` for model `{name}`"));
    match name {
        "quarter-car" => {
            if let Some((k, _)) = kv.first() {
                return Err(unknown(k));
            }
            Ok(Preset {
                system: quarter_car(&QuarterCarParams::default(), eps)?,
                observable: 0,
                observable_label: "x_s".into(),
            })
        }
        "building" => {
            let mut p = BuildingParams::default();
            for (k, v) in &kv {
                match k.as_str() {
                    "n" => p.n = int(v)?,
                    "ground" => p.ground_spring = flag(v)?,
                    _ => return Err(unknown(k)),
                }
            }
            let n = p.n;
            Ok(Preset {
                system: building(&p, eps)?,
                observable: n.saturating_sub(1),
                observable_label: format!("u_{n}"),
            })
        }
        "chain" => {
            let mut p = ChainParams::default();
            for (k, v) in &kv {
                match k.as_str() {
                    "n" => p.n = int(v)?,
                    _ => return Err(unknown(k)),
                }
            }
            let n = p.n;
            Ok(Preset {
                system: cubic_chain(&p, eps)?,
                observable: n - 1,
                observable_label: format!("q_{n}"),
            })
        }
        "duffing" => {
            if let Some((k, _)) = kv.first() {
                return Err(unknown(k));
            }
            Ok(Preset {
                system: duffing(&DuffingParams::default(), eps)?,
                observable: 0,
                observable_label: "x".into(),
            })
        }
        _ => Err(Error::InvalidArgument(format!(
            "unknown model `{name}` (expected quarter-car, building, chain or duffing)"
        ))),
    }
}

/// Undamped natural frequencies `sqrt(eig(M⁻¹K))`, ascending.
pub fn undamped_frequencies(sys: &MechanicalSystem) -> Vec<f64> {
    let m = sys.mass();
    let l = m.clone().cholesky().expect("mass is positive definite").l();
    let linv = l.clone().try_inverse().expect("triangular factor is invertible");
    let sym = &linv * sys.stiffness() * linv.transpose();
    let mut w: Vec<f64> = nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    w.sort_by(f64::total_cmp);
    w
}
