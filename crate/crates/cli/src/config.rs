//! Config files: one TOML table per subcommand plus a shared `[run]` table.
//! A run manifest has the same layout (with an extra `[manifest]` table that
//! is ignored on input), so it can be fed back with `--config`.

use std::path::{Path, PathBuf};

use rssm::forcing::{NoiseMethod, NoiseSourceConfig};
use rssm::montecarlo::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Output directory; every artifact of the run goes below it.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSettings {
    pub model: String,
    /// Dimension of the slow subspace.
    pub dim: usize,
    /// Highest order checked for inner-outer resonances.
    pub max_order: u32,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self {
            model: "quarter-car".into(),
            dim: 2,
            max_order: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmSettings {
    pub model: String,
    pub dim: usize,
    pub order: u32,
    /// Radii `s` at which the invariance residual is sampled.
    pub radii: Vec<f64>,
    /// Directions per radius.
    pub directions: usize,
}

impl Default for SsmSettings {
    fn default() -> Self {
        Self {
            model: "quarter-car".into(),
            dim: 2,
            order: 5,
            radii: vec![1e-3, 1e-2, 1e-1],
            directions: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub model: String,
    pub method: Option<NoiseMethod>,
    pub sources: Option<Vec<NoiseSourceConfig>>,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Realizations `0..realizations`, seeded as in `simulate`.
    pub realizations: usize,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            model: "quarter-car".into(),
            method: None,
            sources: None,
            duration: 60.0,
            dt: 1e-3,
            seed: 0,
            realizations: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdSettings {
    /// Trajectory CSVs, one realization each.
    pub inputs: Vec<PathBuf>,
    /// Columns to analyze; all but `t` when empty.
    pub columns: Vec<String>,
    pub discard: f64,
    pub hann: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub a: PathBuf,
    pub b: PathBuf,
    /// `[lo, hi]` in rad/s; `[0.5, 2] ω_peak` of `a` when unset.
    pub band: Option<[f64; 2]>,
    /// Label of the observable; the first one when unset.
    pub observable: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub run: RunSection,
    pub analyze_spectrum: Option<SpectrumSettings>,
    pub compute_ssm: Option<SsmSettings>,
    pub gen_noise: Option<NoiseSettings>,
    pub simulate: Option<ExperimentConfig>,
    pub psd: Option<PsdSettings>,
    pub compare: Option<CompareSettings>,
    /// Written by runs, ignored on input.
    pub manifest: Option<toml::Table>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Largest seed a TOML manifest can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

pub fn check_seed(seed: u64) -> Result<(), CliError> {
    if seed > MAX_SEED {
        return Err(CliError::Config(format!("seed: expected an integer in 0..={MAX_SEED}, got {seed}")));
    }
    Ok(())
}
