use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rssm::forcing::generate_noise;
use rssm::integrate::Trajectory;
use rssm::library::preset;
use rssm::model::to_first_order;
use rssm::montecarlo::{channel_seed, run_experiment, ExperimentConfig, ExperimentReport};
use rssm::psd::{compare_psd, estimate_psd, PsdComparison, PsdEstimate, PsdOptions};
use rssm::spectral::{check_nonresonance, compute_spectrum, slow_subspace_by_dim, spectral_gap, spectral_quotient};
use rssm::ssm::{compute_autonomous_ssm, invariance_residual, SsmExpansion};
use serde::Serialize;

use crate::config::{check_seed, CompareSettings, NoiseSettings, PsdSettings, RunSection, SpectrumSettings, SsmSettings};
use crate::output::{hex, OutputDir};
use crate::CliError;

fn io(out: &OutputDir, rel: &str) -> impl Fn(std::io::Error) -> CliError {
    let path = out.root().join(rel);
    move |e| CliError::io(&path, e)
}

#[derive(Serialize)]
struct SpectrumInfo {
    model: String,
    dof: usize,
    state_dim: usize,
    spectral_quotient: u64,
    spectral_gap: Option<u64>,
    resonances: usize,
}

pub fn analyze_spectrum(s: &SpectrumSettings, run: &RunSection, out: &mut OutputDir) -> Result<(), CliError> {
    let sys = preset(&s.model, 1.0)?.system;
    let fos = to_first_order(&sys)?;
    let spec = compute_spectrum(fos.a())?;
    let quotient = spectral_quotient(&spec);
    let gap = (s.dim < spec.dim()).then(|| spectral_gap(&spec, s.dim)).transpose()?;
    let resonances = if s.dim < spec.dim() {
        check_nonresonance(&spec, s.dim, s.max_order)?
    } else {
        Vec::new()
    };

    let name = "eigenvalues.csv";
    let mut f = out.file(name)?;
    let e = io(out, name);
    writeln!(f, "index,re,im,abs,damping_ratio").map_err(&e)?;
    for (i, l) in spec.eigenvalues.iter().enumerate() {
        let abs = l.norm();
        writeln!(f, "{i},{:e},{:e},{abs:e},{:e}", l.re, l.im, -l.re / abs).map_err(&e)?;
    }
    f.flush().map_err(&e)?;
    drop(f);

    let name = "resonances.csv";
    let mut f = out.file(name)?;
    let e = io(out, name);
    writeln!(f, "exponents,outer_index,defect").map_err(&e)?;
    for r in &resonances {
        let exps: Vec<String> = r.exponents.iter().map(u32::to_string).collect();
        writeln!(f, "{},{},{:e}", exps.join(" "), r.index, r.defect).map_err(&e)?;
    }
    f.flush().map_err(&e)?;
    drop(f);

    println!("{}: {} DOF, {} first-order states", sys.name(), sys.n_dof(), spec.dim());
    for (i, l) in spec.eigenvalues.iter().enumerate().take(s.dim.max(6)) {
        println!("  λ{i:<3} {:>14.6e} {:+14.6e} i", l.re, l.im);
    }
    println!("spectral quotient σ = {quotient}");
    if let Some(g) = gap {
        println!("spectral gap ρ(d={}) = {g}", s.dim);
    }
    println!("inner-outer resonances up to order {}: {}", s.max_order, resonances.len());

    let info = SpectrumInfo {
        model: sys.name().into(),
        dof: sys.n_dof(),
        state_dim: spec.dim(),
        spectral_quotient: quotient,
        spectral_gap: gap,
        resonances: resonances.len(),
    };
    out.manifest(run, "analyze-spectrum", s, &info)
}

fn write_coefficients(out: &mut OutputDir, name: &str, exp: &SsmExpansion<f64>, coeffs: &[Vec<f64>]) -> Result<(), CliError> {
    let mut f = out.file(name)?;
    let e = io(out, name);
    let vars: Vec<String> = (0..exp.d).map(|l| format!("e{l}")).collect();
    writeln!(f, "component,{},coefficient", vars.join(",")).map_err(&e)?;
    for (i, row) in coeffs.iter().enumerate() {
        for (m, &c) in row.iter().enumerate() {
            if c != 0.0 {
                let exps: Vec<String> = exp.index.exponents(m).iter().map(u32::to_string).collect();
                writeln!(f, "{i},{},{c:e}", exps.join(",")).map_err(&e)?;
            }
        }
    }
    f.flush().map_err(&e)
}

/// Unit directions spread over the sphere in `d` dimensions.
fn directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let v: Vec<f64> = (0..d)
                .map(|l| (2.0 * PI * (k as f64 + 0.5) * (l as f64 + 1.0) / count as f64 + l as f64).cos())
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

#[derive(Serialize)]
struct SsmInfo {
    model: String,
    slow_eigenvalues: Vec<[f64; 2]>,
    validity_radius: f64,
    max_imag_residue: f64,
    small_divisors: usize,
    max_residual: BTreeMap<String, f64>,
}

pub fn compute_ssm(s: &SsmSettings, run: &RunSection, out: &mut OutputDir) -> Result<(), CliError> {
    if s.directions == 0 {
        return Err(CliError::Config("directions: expected a positive integer".into()));
    }
    let sys = preset(&s.model, 1.0)?.system;
    let fos = to_first_order(&sys)?;
    let spec = compute_spectrum(fos.a())?;
    let sub = slow_subspace_by_dim(&spec, fos.a(), s.dim)?;
    let exp = compute_autonomous_ssm(&fos, &sub, s.order)?;
    write_coefficients(out, "ssm_w.csv", &exp, &exp.w)?;
    write_coefficients(out, "ssm_r.csv", &exp, &exp.r)?;

    let name = "residuals.csv";
    let mut f = out.file(name)?;
    let e = io(out, name);
    writeln!(f, "radius,direction,residual,relative").map_err(&e)?;
    let dirs = directions(exp.d, s.directions);
    let mut worst = BTreeMap::new();
    for &r in &s.radii {
        let mut max: f64 = 0.0;
        for (k, dir) in dirs.iter().enumerate() {
            let xi: Vec<f64> = dir.iter().map(|x| x * r).collect();
            let res = invariance_residual(&fos, &exp, &xi);
            let rel = res / (spec.a_norm * r);
            max = max.max(res);
            writeln!(f, "{r:e},{k},{res:e},{rel:e}").map_err(&e)?;
        }
        worst.insert(format!("{r:e}"), max);
    }
    f.flush().map_err(&e)?;
    drop(f);

    println!("{}: order {} SSM over d = {}", sys.name(), s.order, s.dim);
    println!("validity radius ≈ {:.3e}", exp.validity_radius);
    for (r, m) in &worst {
        println!("  max invariance residual at s = {r}: {m:.3e}");
    }
    let info = SsmInfo {
        model: sys.name().into(),
        slow_eigenvalues: spec.eigenvalues[..s.dim].iter().map(|l| [l.re, l.im]).collect(),
        validity_radius: exp.validity_radius,
        max_imag_residue: exp.max_imag_residue,
        small_divisors: exp.small_divisors.len(),
        max_residual: worst,
    };
    out.manifest(run, "compute-ssm", s, &info)
}

#[derive(Serialize)]
struct ChannelInfo {
    realization: usize,
    channel: usize,
    label: String,
    method: String,
    seed: String,
    fingerprint: String,
    declared_bound: f64,
    max_abs: f64,
}

#[derive(Serialize)]
struct NoiseInfo {
    seed_derivation: &'static str,
    channels: Vec<ChannelInfo>,
}

const SEED_DERIVATION: &str =
    "s_i = mix64(master ^ mix64(i)), channel seed = mix64(s_i ^ mix64(j)), mix64 = splitmix64 finalizer; ChaCha8 per channel";

pub fn gen_noise(s: &NoiseSettings, run: &RunSection, out: &mut OutputDir) -> Result<(), CliError> {
    check_seed(s.seed)?;
    if s.realizations == 0 {
        return Err(CliError::Config("realizations: expected a positive integer".into()));
    }
    let cfg = ExperimentConfig {
        model: s.model.clone(),
        method: s.method,
        sources: s.sources.clone(),
        duration: s.duration,
        dt: s.dt,
        seed: s.seed,
        m: s.realizations,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let (sys, _, _) = cfg.build_model()?;
    let channels = &sys.forcing().channels;
    let mut infos = Vec::new();
    for i in 0..s.realizations {
        let mut noise = Vec::new();
        for (j, ch) in channels.iter().enumerate() {
            let seed = channel_seed(s.seed, i, j);
            let n = generate_noise(&ch.source, s.duration, s.dt, seed)?;
            infos.push(ChannelInfo {
                realization: i,
                channel: j,
                label: ch.label.clone(),
                method: format!("{:?}", n.method),
                seed: hex(seed),
                fingerprint: hex(n.fingerprint()),
                declared_bound: n.declared_bound,
                max_abs: n.max_abs(),
            });
            noise.push(n);
        }
        let name = format!("noise_{i:04}.csv");
        let mut f = out.file(&name)?;
        let e = io(out, &name);
        let labels: Vec<String> = channels
            .iter()
            .enumerate()
            .map(|(j, c)| if c.label.is_empty() { format!("theta{j}") } else { format!("theta_{}", c.label) })
            .collect();
        writeln!(f, "t,{}", labels.join(",")).map_err(&e)?;
        let len = noise.first().map_or(0, |n| n.len());
        for k in 0..len {
            let row: Vec<String> = noise.iter().map(|n| format!("{:e}", n.samples[k])).collect();
            writeln!(f, "{:e},{}", k as f64 * s.dt, row.join(",")).map_err(&e)?;
        }
        f.flush().map_err(&e)?;
    }
    println!(
        "{} realization(s) of {} channel(s), {} samples each",
        s.realizations,
        channels.len(),
        (s.duration / s.dt).round()
    );
    let info = NoiseInfo {
        seed_derivation: SEED_DERIVATION,
        channels: infos,
    };
    out.manifest(run, "gen-noise", s, &info)
}

#[derive(Serialize)]
struct ComparisonRow {
    a: String,
    b: String,
    observable: String,
    #[serde(flatten)]
    metrics: PsdComparison,
}

#[derive(Serialize)]
struct SimulateInfo {
    model: String,
    observables: Vec<String>,
    discard: f64,
    seed_derivation: &'static str,
    noise_pairing: &'static str,
    timings: rssm::montecarlo::Timings,
    ssm: Option<rssm::montecarlo::SsmSummary>,
    comparisons: Vec<ComparisonRow>,
}

fn comparisons(r: &ExperimentReport) -> Result<Vec<ComparisonRow>, CliError> {
    let variants: [(&str, &Option<PsdEstimate>); 4] = [
        ("full", &r.full),
        ("reduced", &r.reduced),
        ("linear", &r.linear),
        ("linear-simulated", &r.linear_simulated),
    ];
    let pairs = [(0, 1), (0, 2), (1, 2), (2, 3), (0, 3)];
    let mut rows = Vec::new();
    for (i, j) in pairs {
        let ((na, Some(a)), (nb, Some(b))) = (variants[i], variants[j]) else {
            continue;
        };
        for (o, label) in r.labels.iter().enumerate() {
            rows.push(ComparisonRow {
                a: na.into(),
                b: nb.into(),
                observable: label.clone(),
                metrics: compare_psd(a, b, o, None)?,
            });
        }
    }
    Ok(rows)
}

fn write_psd(out: &mut OutputDir, name: &str, est: &PsdEstimate) -> Result<(), CliError> {
    let f = out.file(name)?;
    est.write_csv(f)?;
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, run: &RunSection, out: &mut OutputDir) -> Result<(), CliError> {
    check_seed(cfg.seed)?;
    let report = run_experiment(cfg)?;
    for (name, est) in [
        ("psd_full.csv", &report.full),
        ("psd_reduced.csv", &report.reduced),
        ("psd_linear.csv", &report.linear),
        ("psd_linear_simulated.csv", &report.linear_simulated),
    ] {
        if let Some(est) = est {
            write_psd(out, name, est)?;
        }
    }
    let rows = comparisons(&report)?;

    let name = "comparisons.csv";
    let mut f = out.file(name)?;
    let e = io(out, name);
    writeln!(f, "a,b,observable,band_lo,band_hi,band_mean_abs_db,band_mean_db,peak_offset_bins,peak_height_db,bins")
        .map_err(&e)?;
    for r in &rows {
        let m = &r.metrics;
        writeln!(
            f,
            "{},{},{},{:e},{:e},{:e},{:e},{},{:e},{}",
            r.a, r.b, r.observable, m.band.0, m.band.1, m.band_mean_abs_db, m.band_mean_db, m.peak_offset_bins, m.peak_height_db, m.bins
        )
        .map_err(&e)?;
    }
    f.flush().map_err(&e)?;
    drop(f);

    let name = "seeds.csv";
    let mut f = out.file(name)?;
    let e = io(out, name);
    writeln!(f, "realization,seed,full_noise,reduced_noise").map_err(&e)?;
    for (i, s) in report.seeds.iter().enumerate() {
        let fp = |v: &[u64]| v.get(i).map(|x| hex(*x)).unwrap_or_default();
        writeln!(f, "{i},{},{},{}", hex(*s), fp(&report.full_noise), fp(&report.reduced_noise)).map_err(&e)?;
    }
    f.flush().map_err(&e)?;
    drop(f);

    for (i, t) in report.trajectories.iter().enumerate() {
        for (kind, traj) in [("full", &t.full), ("reduced", &t.reduced)] {
            if let Some(traj) = traj {
                let f = out.file(&format!("trajectories/{kind}_{i:04}.csv"))?;
                traj.write_csv(f)?;
            }
        }
    }

    let tm = &report.timings;
    println!("{}: m = {}, T = {} s, dt = {} s, ε = {}", report.model_name, cfg.m, cfg.duration, cfg.dt, cfg.epsilon);
    println!(
        "wall time [s]: SSM build {:.3}, full ensemble {:.3}, reduced ensemble {:.3}, reduced total {:.3}",
        tm.ssm_build, tm.full_ensemble, tm.reduced_ensemble, tm.reduced_total
    );
    if tm.reduced_total > 0.0 && tm.full_ensemble > 0.0 {
        println!("speedup full / reduced total: {:.1}x", tm.full_ensemble / tm.reduced_total);
    }
    print_table(&rows);

    let info = SimulateInfo {
        model: report.model_name.clone(),
        observables: report.labels.clone(),
        discard: report.discard,
        seed_derivation: SEED_DERIVATION,
        noise_pairing: "full, reduced and linear-simulated runs of realization i consume the identical noise path",
        timings: report.timings,
        ssm: report.ssm.clone(),
        comparisons: rows,
    };
    out.manifest(run, "simulate", &report.config, &info)
}

fn print_table(rows: &[ComparisonRow]) {
    if rows.is_empty() {
        return;
    }
    println!(
        "{:<18} {:<18} {:<10} {:>10} {:>10} {:>6} {:>10}",
        "a", "b", "obs", "|Δ| dB", "Δ dB", "Δpeak", "Δheight"
    );
    for r in rows {
        let m = &r.metrics;
        println!(
            "{:<18} {:<18} {:<10} {:>10.4} {:>10.4} {:>6} {:>10.4}",
            r.a, r.b, r.observable, m.band_mean_abs_db, m.band_mean_db, m.peak_offset_bins, m.peak_height_db
        );
    }
}

fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Trajectory::read_csv(std::io::BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct PsdInfo {
    ensemble: usize,
    record_len: usize,
    dt: f64,
}

pub fn psd(s: &PsdSettings, run: &RunSection, out: &mut OutputDir) -> Result<(), CliError> {
    if s.inputs.is_empty() {
        return Err(CliError::Config("inputs: expected at least one trajectory CSV".into()));
    }
    let trajs = s.inputs.iter().map(|p| read_trajectory(p)).collect::<Result<Vec<_>, _>>()?;
    let first = &trajs[0];
    for (t, p) in trajs.iter().zip(&s.inputs).skip(1) {
        if t.labels != first.labels || (t.dt - first.dt).abs() > 1e-9 * first.dt {
            return Err(CliError::Config(format!(
                "{}: columns or time step differ from {}",
                p.display(),
                s.inputs[0].display()
            )));
        }
    }
    let columns: Vec<String> = if s.columns.is_empty() {
        first.labels.clone()
    } else {
        s.columns.clone()
    };
    let opts = PsdOptions {
        discard: s.discard,
        hann: s.hann,
    };
    let mut est: Option<PsdEstimate> = None;
    for c in &columns {
        let j = first
            .labels
            .iter()
            .position(|l| l == c)
            .ok_or_else(|| CliError::Config(format!("columns: no column `{c}` in the inputs")))?;
        let signals: Vec<Vec<f64>> = trajs.iter().map(|t| t.column(j)).collect();
        let refs: Vec<&[f64]> = signals.iter().map(|v| v.as_slice()).collect();
        let e = estimate_psd(&refs, first.dt, c, &opts)?;
        match &mut est {
            None => est = Some(e),
            Some(acc) => acc.extend(e)?,
        }
    }
    let est = est.expect("at least one column");
    write_psd(out, "psd.csv", &est)?;
    println!(
        "PSD of {} column(s) over {} realization(s), {} samples after discard",
        columns.len(),
        est.ensemble,
        est.record_len
    );
    let info = PsdInfo {
        ensemble: est.ensemble,
        record_len: est.record_len,
        dt: est.dt,
    };
    out.manifest(run, "psd", s, &info)
}

fn read_psd(path: &Path) -> Result<PsdEstimate, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    PsdEstimate::read_csv(std::io::BufReader::new(f)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn compare(s: &CompareSettings, run: &RunSection, out: &mut OutputDir) -> Result<(), CliError> {
    let a = read_psd(&s.a)?;
    let b = read_psd(&s.b)?;
    let label = s.observable.clone().unwrap_or_else(|| a.labels[0].clone());
    let find = |est: &PsdEstimate, p: &Path| {
        est.labels
            .iter()
            .position(|l| *l == label)
            .ok_or_else(|| CliError::Config(format!("observable: `{label}` not found in {}", p.display())))
    };
    let (ia, ib) = (find(&a, &s.a)?, find(&b, &s.b)?);
    let pick = |est: &PsdEstimate, i: usize| PsdEstimate {
        labels: vec![est.labels[i].clone()],
        values: vec![est.values[i].clone()],
        ..est.clone()
    };
    if let Some([lo, hi]) = s.band {
        if !(lo < hi) {
            return Err(CliError::Config(format!("band: expected lo < hi, got [{lo}, {hi}]")));
        }
    }
    let m = compare_psd(&pick(&a, ia), &pick(&b, ib), 0, s.band.map(|[lo, hi]| (lo, hi)))?;
    let row = ComparisonRow {
        a: s.a.display().to_string(),
        b: s.b.display().to_string(),
        observable: label,
        metrics: m,
    };
    println!("band [{:.6}, {:.6}] rad/s, {} bins", m.band.0, m.band.1, m.bins);
    println!("band-averaged |dB gap|  {:.4}", m.band_mean_abs_db);
    println!("band-averaged dB gap    {:.4}", m.band_mean_db);
    println!("peak offset [bins]      {}", m.peak_offset_bins);
    println!("peak height gap [dB]    {:.4}", m.peak_height_db);

    let name = "metrics.csv";
    let mut f = out.file(name)?;
    let e = io(out, name);
    writeln!(f, "observable,band_lo,band_hi,band_mean_abs_db,band_mean_db,peak_offset_bins,peak_height_db,bins").map_err(&e)?;
    writeln!(
        f,
        "{},{:e},{:e},{:e},{:e},{},{:e},{}",
        row.observable, m.band.0, m.band.1, m.band_mean_abs_db, m.band_mean_db, m.peak_offset_bins, m.peak_height_db, m.bins
    )
    .map_err(&e)?;
    f.flush().map_err(&e)?;
    drop(f);
    out.manifest(run, "compare", s, &row)
}
