//! Power spectral densities: ensemble-averaged periodograms of simulated
//! signals and the transfer-function PSD `Φ_x = H Φ_g H†` of the linear part.
//!
//! Convention: one-sided in `ω` [rad/s], `PSD_k = 2 dt / (2π L) · mean |X_k|²`
//! for `0 < k < L/2` (no doubling at `k = 0` and `k = L/2`), so that
//! `Σ_k PSD_k Δω` equals the mean square of the signal.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MechanicalSystem;

/// Shortest signal accepted by [`estimate_psd`].
pub const MIN_SIGNAL_LEN: usize = 64;

/// Default dB floor.
pub const DB_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdOptions {
    /// Leading transient to drop [s].
    pub discard: f64,
    /// Hann taper, normalized to unit mean square. Off by default.
    pub hann: bool,
}

impl Default for PsdOptions {
    fn default() -> Self {
        Self {
            discard: 0.0,
            hann: false,
        }
    }
}

/// Default transient discard `5 / |Re λ₁|`.
pub fn default_discard(slowest_real_part: f64) -> f64 {
    5.0 / slowest_real_part.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub omega: Vec<f64>,
    pub labels: Vec<String>,
    /// `values[observable][k]`.
    pub values: Vec<Vec<f64>>,
    /// Number of averaged realizations (0 for analytic curves).
    pub ensemble: usize,
    /// Samples per realization after the discard.
    pub record_len: usize,
    pub dt: f64,
    /// Bins where an analytic evaluation was skipped.
    #[serde(default)]
    pub flagged: Vec<usize>,
}

impl PsdEstimate {
    pub fn d_omega(&self) -> f64 {
        if self.omega.len() > 1 {
            self.omega[1] - self.omega[0]
        } else {
            0.0
        }
    }

    pub fn observable(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|i| self.values[i].as_slice())
    }

    /// `Σ_k PSD_k Δω` for one observable.
    pub fn total_power(&self, obs: usize) -> f64 {
        self.values[obs].iter().sum::<f64>() * self.d_omega()
    }

    /// Appends the observables of `other`, which must share the grid.
    pub fn extend(&mut self, other: PsdEstimate) -> Result<()> {
        if other.omega != self.omega {
            return Err(Error::GridMismatch);
        }
        self.labels.extend(other.labels);
        self.values.extend(other.values);
        Ok(())
    }

    /// Ensemble-size-weighted average of two estimates on the same grid.
    pub fn pooled(&self, other: &PsdEstimate) -> Result<PsdEstimate> {
        if other.omega != self.omega || other.labels != self.labels {
            return Err(Error::GridMismatch);
        }
        let (ma, mb) = (self.ensemble as f64, other.ensemble as f64);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (ma * x + mb * y) / (ma + mb)).collect())
            .collect();
        Ok(PsdEstimate {
            values,
            ensemble: self.ensemble + other.ensemble,
            ..self.clone()
        })
    }

    /// CSV with columns `omega_rad_s, psd_<label>, psd_db_<label>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["omega_rad_s".to_string()];
        for l in &self.labels {
            header.push(format!("psd_{l}"));
            header.push(format!("psd_db_{l}"));
        }
        wr.write_record(&header)?;
        for (k, om) in self.omega.iter().enumerate() {
            let mut rec = vec![format!("{om:e}")];
            for v in &self.values {
                rec.push(format!("{:e}", v[k]));
                rec.push(format!("{:.6}", decibel(v[k], DB_FLOOR)));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format written by [`PsdEstimate::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<PsdEstimate> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let mut labels = Vec::new();
        let mut cols = Vec::new();
        for (i, h) in header.iter().enumerate() {
            if let Some(l) = h.strip_prefix("psd_") {
                if !l.starts_with("db_") {
                    labels.push(l.to_string());
                    cols.push(i);
                }
            }
        }
        if header.get(0) != Some("omega_rad_s") || labels.is_empty() {
            return Err(Error::InvalidArgument("not a PSD table (expected omega_rad_s, psd_<label> columns)".into()));
        }
        let mut omega = Vec::new();
        let mut values = vec![Vec::new(); labels.len()];
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad number in column {i}")))
            };
            omega.push(parse(0)?);
            for (v, &c) in values.iter_mut().zip(&cols) {
                v.push(parse(c)?);
            }
        }
        let dt = if omega.len() > 1 { PI / omega[omega.len() - 1] } else { 0.0 };
        Ok(PsdEstimate {
            omega,
            labels,
            values,
            ensemble: 0,
            record_len: 0,
            dt,
            flagged: Vec::new(),
        })
    }
}

/// Frequency grid `ω_k = 2πk / (L dt)`, `k = 0..=L/2`.
pub fn fft_grid(len: usize, dt: f64) -> Vec<f64> {
    let dw = 2.0 * PI / (len as f64 * dt);
    (0..=len / 2).map(|k| k as f64 * dw).collect()
}

fn periodogram(signal: &[f64], fft: &dyn rustfft::Fft<f64>, window: Option<&[f64]>) -> Vec<f64> {
    let mut buf: Vec<Complex64> = match window {
        Some(w) => signal.iter().zip(w).map(|(x, w)| Complex64::new(x * w, 0.0)).collect(),
        None => signal.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
    };
    fft.process(&mut buf);
    buf[..=signal.len() / 2].iter().map(|z| z.norm_sqr()).collect()
}

/// Ensemble-averaged one-sided periodogram of one observable.
/// `signals[i]` is realization `i`; the first `opts.discard` seconds are dropped.
pub fn estimate_psd(signals: &[&[f64]], dt: f64, label: &str, opts: &PsdOptions) -> Result<PsdEstimate> {
    if signals.is_empty() {
        return Err(Error::InvalidArgument("PSD estimate needs at least one realization".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let full = signals[0].len();
    for s in signals {
        if s.len() != full {
            return Err(Error::LengthMismatch { expected: full, got: s.len() });
        }
    }
    let skip = (opts.discard / dt).round() as usize;
    let len = full.saturating_sub(skip);
    if len < MIN_SIGNAL_LEN {
        return Err(Error::LengthMismatch {
            expected: MIN_SIGNAL_LEN,
            got: len,
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(len);
    let window: Option<Vec<f64>> = opts.hann.then(|| {
        let w: Vec<f64> = (0..len).map(|i| (PI * i as f64 / len as f64).sin().powi(2)).collect();
        let ms = (w.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
        w.into_iter().map(|x| x / ms).collect()
    });
    let spectra: Vec<Vec<f64>> = signals
        .par_iter()
        .map(|s| periodogram(&s[skip..], fft.as_ref(), window.as_deref()))
        .collect();
    let bins = len / 2 + 1;
    // members are summed in ascending order per bin, so the result depends
    // neither on scheduling nor on the order of the realizations
    let mut acc = vec![0.0; bins];
    let mut column = vec![0.0; spectra.len()];
    for (k, a) in acc.iter_mut().enumerate() {
        for (c, sp) in column.iter_mut().zip(&spectra) {
            *c = sp[k];
        }
        column.sort_unstable_by(f64::total_cmp);
        *a = column.iter().sum();
    }
    let scale = dt / (2.0 * PI * len as f64) / signals.len() as f64;
    for (k, a) in acc.iter_mut().enumerate() {
        let fold = if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 };
        *a *= scale * fold;
    }
    Ok(PsdEstimate {
        omega: fft_grid(len, dt),
        labels: vec![label.to_string()],
        values: vec![acc],
        ensemble: signals.len(),
        record_len: len,
        dt,
        flagged: Vec::new(),
    })
}

/// `10 log₁₀ max(v, floor)`.
pub fn decibel(v: f64, floor: f64) -> f64 {
    10.0 * v.max(floor).log10()
}

/// Elementwise [`decibel`] of every observable.
pub fn to_decibel(psd: &PsdEstimate, floor: f64) -> Result<Vec<Vec<f64>>> {
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument("dB floor must be positive".into()));
    }
    Ok(psd
        .values
        .iter()
        .map(|v| v.iter().map(|&x| decibel(x, floor)).collect())
        .collect())
}

/// Transfer matrix `H(ω) = (-ω² M + iω C + K)⁻¹`, or `None` where it is singular.
pub fn transfer_matrix(sys: &MechanicalSystem, omega: f64) -> Option<DMatrix<Complex64>> {
    let n = sys.n_dof();
    let z = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(
            sys.stiffness()[(i, j)] - omega * omega * sys.mass()[(i, j)],
            omega * sys.damping()[(i, j)],
        )
    });
    let lu = z.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
    let pmax = pivots.iter().cloned().fold(0.0, f64::max);
    let pmin = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if pmax == 0.0 || pmin <= 1e-14 * pmax {
        return None;
    }
    lu.try_inverse()
}

/// `Φ_x = H Φ_g H†` on `omega`, diagonal entries of the requested state rows.
/// Rows `< n` are displacements, rows `n..2n` velocities (`ω² Φ_q`).
/// `forcing(k, ω)` returns the physical force PSD matrix at grid index `k`.
pub fn linear_psd(
    sys: &MechanicalSystem,
    forcing: &(dyn Fn(usize, f64) -> DMatrix<f64> + Sync),
    omega: &[f64],
    rows: &[usize],
    labels: &[String],
) -> Result<PsdEstimate> {
    let n = sys.n_dof();
    if let Some(&r) = rows.iter().find(|&&r| r >= 2 * n) {
        return Err(Error::InvalidArgument(format!("state row {r} out of range")));
    }
    if labels.len() != rows.len() {
        return Err(Error::LengthMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    let per_bin: Vec<Option<Vec<f64>>> = omega
        .par_iter()
        .enumerate()
        .map(|(k, &w)| {
            let h = transfer_matrix(sys, w)?;
            let phi_g = forcing(k, w).map(|x| Complex64::new(x, 0.0));
            let phi_x = &h * phi_g * h.adjoint();
            Some(
                rows.iter()
                    .map(|&r| {
                        let i = r % n;
                        let scale = if r >= n { w * w } else { 1.0 };
                        phi_x[(i, i)].re.max(0.0) * scale
                    })
                    .collect(),
            )
        })
        .collect();
    let mut values = vec![vec![0.0; omega.len()]; rows.len()];
    let mut flagged = Vec::new();
    for (k, v) in per_bin.into_iter().enumerate() {
        match v {
            Some(v) => {
                for (col, x) in values.iter_mut().zip(v) {
                    col[k] = x;
                }
            }
            None => {
                log::warn!("singular transfer matrix at ω = {}", omega[k]);
                flagged.push(k);
            }
        }
    }
    Ok(PsdEstimate {
        omega: omega.to_vec(),
        labels: labels.to_vec(),
        values,
        ensemble: 0,
        record_len: 0,
        dt: if omega.len() > 1 { PI / omega[omega.len() - 1] } else { 0.0 },
        flagged,
    })
}

/// Physical force PSD `ε² Σ_j φ_j(ω) v_j v_jᵀ` for independent channels with
/// shapes `v_j` and one-sided channel densities `φ_j`.
pub fn channel_force_psd(sys: &MechanicalSystem, channel_psd: &[f64]) -> DMatrix<f64> {
    let n = sys.n_dof();
    let eps = sys.forcing().amplitude;
    let mut out = DMatrix::zeros(n, n);
    for (ch, &phi) in sys.forcing().channels.iter().zip(channel_psd) {
        let v = nalgebra::DVector::from_column_slice(&ch.shape);
        out += &v * v.transpose() * (eps * eps * phi);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdComparison {
    pub band: (f64, f64),
    /// Mean of `|dB(a) - dB(b)|` over the band.
    pub band_mean_abs_db: f64,
    /// Mean of `dB(b) - dB(a)` over the band.
    pub band_mean_db: f64,
    /// `argmax b - argmax a` in bins (DC excluded).
    pub peak_offset_bins: i64,
    /// `dB(max b) - dB(max a)`.
    pub peak_height_db: f64,
    pub bins: usize,
}

fn peak_index(v: &[f64]) -> usize {
    (1..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap_or(0)
}

/// Compares observable `obs` of two estimates on the same grid. The band
/// defaults to `[0.5, 2] ω_peak` of `a`.
pub fn compare_psd(a: &PsdEstimate, b: &PsdEstimate, obs: usize, band: Option<(f64, f64)>) -> Result<PsdComparison> {
    if a.omega.len() != b.omega.len()
        || a.omega.iter().zip(&b.omega).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1e-300))
    {
        return Err(Error::GridMismatch);
    }
    let (va, vb) = match (a.values.get(obs), b.values.get(obs)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::InvalidArgument(format!("observable {obs} missing"))),
    };
    let pa = peak_index(va);
    let pb = peak_index(vb);
    let band = band.unwrap_or((0.5 * a.omega[pa], 2.0 * a.omega[pa]));
    let mut sum_abs = 0.0;
    let mut sum = 0.0;
    let mut count = 0;
    for (k, &w) in a.omega.iter().enumerate() {
        if w < band.0 || w > band.1 || a.flagged.contains(&k) || b.flagged.contains(&k) {
            continue;
        }
        let diff = decibel(vb[k], DB_FLOOR) - decibel(va[k], DB_FLOOR);
        sum_abs += diff.abs();
        sum += diff;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "band [{}, {}] rad/s contains no frequency bins",
            band.0, band.1
        )));
    }
    Ok(PsdComparison {
        band,
        band_mean_abs_db: sum_abs / count as f64,
        band_mean_db: sum / count as f64,
        peak_offset_bins: pb as i64 - pa as i64,
        peak_height_db: decibel(vb[pb], DB_FLOOR) - decibel(va[pa], DB_FLOOR),
        bins: count,
    })
}
