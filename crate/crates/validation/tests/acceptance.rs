//! Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
//! when any criterion fails. Diagnostic lines are indented under their
//! criterion.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rssm::forcing::{
    derive_seed, generate_noise, reflect_into_unit, rng_from_seed, FilterOutput, IncrementModel, NoiseSourceConfig,
};
use rssm::integrate::{
    cocycle_check, newmark_integrate, rk4_reduced_integrate, ForcingPath, IntegratorConfig, Record,
};
use rssm::library::{
    building, cubic_chain, duffing, preset, quarter_car, BuildingParams, ChainParams, DuffingParams, QuarterCarParams,
};
use rssm::model::{to_first_order, ForcingSpec, MechanicalSystem};
use rssm::montecarlo::{run_experiment, ExperimentConfig, ExperimentReport, Timings, Variants};
use rssm::poly::PolynomialMap;
use rssm::psd::{compare_psd, estimate_psd, fft_grid, transfer_matrix, PsdComparison, PsdEstimate, PsdOptions};
use rssm::reduced::{reduced_forcing, RandomReducedModel};
use rssm::scalar::{DoubleDouble, Real};
use rssm::spectral::{compute_spectrum, slow_subspace_by_dim, SpectralSubspace};
use rssm::ssm::{compute_autonomous_ssm, compute_autonomous_ssm_extended, invariance_residual};

type Check = Result<(bool, String), rssm::Error>;

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn record(&mut self, id: u32, title: &str, start: Instant, check: Check, notes: &[String]) {
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match check {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            self.failed.push(id);
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}  {title}: {detail} [{secs:.1} s]");
        for n in notes {
            println!("              {n}");
        }
    }
}

fn subspace(sys: &MechanicalSystem) -> Result<(rssm::model::FirstOrderSystem, SpectralSubspace), rssm::Error> {
    let fos = to_first_order(sys)?;
    let spec = compute_spectrum(fos.a())?;
    let sub = slow_subspace_by_dim(&spec, fos.a(), 2)?;
    Ok((fos, sub))
}

fn library_models() -> Result<Vec<MechanicalSystem>, rssm::Error> {
    Ok(vec![
        quarter_car(&QuarterCarParams::default(), 1.0)?,
        building(&BuildingParams::default(), 0.5)?,
        cubic_chain(&ChainParams::default(), 1.0)?,
        duffing(&DuffingParams::default(), 1.0)?,
    ])
}

fn gap(a: &PsdEstimate, b: &PsdEstimate) -> Result<PsdComparison, rssm::Error> {
    compare_psd(a, b, 0, None)
}

// 1. Invariance residual decays at least like s^(N+1/2). Points whose
// residual is within a factor 100 of the arithmetic's rounding floor carry
// no slope information and are left out of the fit. The floor is measured on
// the linearized model, whose manifold is exactly flat, so its computed
// residual is rounding alone; the worst of the sampled directions is used at
// each radius.
fn order_property(notes: &mut Vec<String>) -> Check {
    let radii: Vec<f64> = (0..=32).map(|i| 10f64.powf(-4.0 + 0.0625 * i as f64)).collect();
    let mut rng = rng_from_seed(2024);
    let angles: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let point = |s: f64, phi: f64| [DoubleDouble::from_f64(s * phi.cos()), DoubleDouble::from_f64(s * phi.sin())];
    let mut pass = true;
    let mut worst = f64::INFINITY;
    for spec in ["quarter-car", "building:n=10", "duffing"] {
        let sys = preset(spec, 1.0)?.system;
        let (fos, sub) = subspace(&sys)?;
        let lin = to_first_order(&sys.linearized())?;
        let flat = compute_autonomous_ssm_extended(&lin, &sub, 2)?;
        // floor at each radius, worst over the directions
        let floor: Vec<f64> = radii
            .iter()
            .map(|&s| {
                angles
                    .iter()
                    .map(|&phi| invariance_residual(&lin, &flat, &point(s, phi)).to_f64())
                    .fold(0.0, f64::max)
            })
            .collect();
        for order in [3u32, 5] {
            let exp = compute_autonomous_ssm_extended(&fos, &sub, order)?;
            let mut min_slope = f64::INFINITY;
            let mut smallest_used = 0.0_f64;
            let mut resolvable = true;
            for &phi in &angles {
                let pts: Vec<(f64, f64)> = radii
                    .iter()
                    .zip(&floor)
                    .filter_map(|(&s, &fl)| {
                        let r = invariance_residual(&fos, &exp, &point(s, phi)).to_f64();
                        (r >= 100.0 * fl).then(|| (s.ln(), r.ln()))
                    })
                    .collect();
                if pts.len() < 3 {
                    resolvable = false;
                    continue;
                }
                smallest_used = smallest_used.max(pts[0].0.exp());
                // least-squares slope of ln r against ln s
                let k = pts.len() as f64;
                let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                min_slope = min_slope.min(sxy / sxx);
            }
            if !resolvable && min_slope.is_infinite() {
                // nothing above the floor anywhere: with d equal to the state
                // dimension the expansion is exact
                let exact = fos.dim() == sub.d;
                pass &= exact;
                notes.push(format!(
                    "{spec} N={order}: residual at the rounding floor for every s{}",
                    if exact { " (exact to working precision)" } else { "" }
                ));
                continue;
            }
            pass &= resolvable && min_slope >= f64::from(order) + 0.5;
            worst = worst.min(min_slope - f64::from(order));
            notes.push(format!(
                "{spec} N={order}: min slope {min_slope:.2} over 10 directions, fitted on s in [{smallest_used:.1e}, 1e-2]{}",
                if resolvable { "" } else { "; some directions had fewer than 3 points above the floor" }
            ));
        }
    }
    Ok((pass, format!("smallest slope minus N = {worst:.2} (need >= 0.5)")))
}

// 2. Linear limit against the transfer-function PSD, plus 1-DOF spot values.
fn linear_limit(notes: &mut Vec<String>) -> Check {
    let mut pass = true;
    let mut worst = 0.0_f64;
    for model in ["quarter-car", "building:n=10", "duffing"] {
        let cfg = ExperimentConfig {
            model: model.into(),
            linearize: true,
            m: 20,
            duration: 100.0,
            dt: 1e-3,
            order: 5,
            seed: 1,
            variants: Variants {
                full: false,
                reduced: true,
                linear: true,
                linear_simulated: false,
            },
            ..Default::default()
        };
        let r = run_experiment(&cfg)?;
        let c = gap(r.linear.as_ref().unwrap(), r.reduced.as_ref().unwrap())?;
        worst = worst.max(c.band_mean_abs_db);
        pass &= c.band_mean_abs_db < 3.0;
        notes.push(format!(
            "{model}: reduced vs analytic {:.3} dB over [{:.3}, {:.3}] rad/s",
            c.band_mean_abs_db, c.band.0, c.band.1
        ));
    }
    let sys = duffing(
        &DuffingParams {
            kappa: 0.0,
            ..DuffingParams::default()
        },
        1.0,
    )?;
    let h0 = transfer_matrix(&sys, 0.0).unwrap()[(0, 0)].norm();
    let h1 = transfer_matrix(&sys, 1.0).unwrap()[(0, 0)].norm_sqr();
    let spot = (h0 - 1.0).abs().max((h1 - 25.0).abs());
    pass &= spot <= 1e-12;
    notes.push(format!("|H(0)| = {h0}, |H(1)|^2 = {h1}"));
    Ok((pass, format!("worst band gap {worst:.3} dB (< 3), spot error {spot:.1e} (<= 1e-12)")))
}

fn trend_config(model: &str, eps: f64, m: usize, duration: f64) -> ExperimentConfig {
    ExperimentConfig {
        model: model.into(),
        epsilon: eps,
        m,
        duration,
        dt: 1e-3,
        order: 5,
        seed: 1,
        variants: Variants {
            full: true,
            reduced: true,
            linear: true,
            linear_simulated: true,
        },
        ..Default::default()
    }
}

struct Gaps {
    full_reduced: f64,
    full_linear: f64,
    reduced_linear: f64,
    full_linear_simulated: f64,
}

fn gaps(r: &ExperimentReport) -> Result<Gaps, rssm::Error> {
    let (f, red, lin, sim) = (
        r.full.as_ref().unwrap(),
        r.reduced.as_ref().unwrap(),
        r.linear.as_ref().unwrap(),
        r.linear_simulated.as_ref().unwrap(),
    );
    Ok(Gaps {
        full_reduced: gap(f, red)?.band_mean_abs_db,
        full_linear: gap(f, lin)?.band_mean_abs_db,
        reduced_linear: gap(f, lin)
            .and_then(|c| compare_psd(red, lin, 0, Some(c.band)))?
            .band_mean_abs_db,
        full_linear_simulated: gap(f, sim)?.band_mean_abs_db,
    })
}

fn describe(eps: f64, g: &Gaps) -> String {
    format!(
        "eps={eps}: full-reduced {:.3} dB, full-linear {:.3} dB, reduced-linear {:.3} dB, full-linear(simulated) {:.3} dB",
        g.full_reduced, g.full_linear, g.reduced_linear, g.full_linear_simulated
    )
}

// 3 and 4. Agreement at the small level; at the large level reduced tracks
// full and the linear curve sits strictly further away.
fn trend(model: &str, levels: [f64; 2], m: usize, duration: f64, notes: &mut Vec<String>) -> Result<(bool, String, Timings), rssm::Error> {
    let low = run_experiment(&trend_config(model, levels[0], m, duration))?;
    let high = run_experiment(&trend_config(model, levels[1], m, duration))?;
    let (gl, gh) = (gaps(&low)?, gaps(&high)?);
    let low_ok = gl.full_reduced < 3.0 && gl.full_linear < 3.0 && gl.reduced_linear < 3.0;
    let high_ok = gh.full_reduced < 3.0 && gh.full_linear > gh.full_reduced && gh.reduced_linear > gh.full_reduced;
    notes.push(describe(levels[0], &gl));
    notes.push(describe(levels[1], &gh));
    let nonlinear_shift = gh.full_linear_simulated - gl.full_linear_simulated;
    notes.push(format!(
        "full vs identically-driven linear simulation changes by {nonlinear_shift:+.3} dB between the two levels; \
         the full-linear gap is estimator bias of the finite record, not a nonlinear effect"
    ));
    Ok((
        low_ok && high_ok,
        format!(
            "eps={}: all gaps < 3 dB {}; eps={}: full-reduced {:.3} < 3 dB and < full-linear {:.3} dB {}",
            levels[0],
            if low_ok { "yes" } else { "no" },
            levels[1],
            gh.full_reduced,
            gh.full_linear,
            if high_ok { "yes" } else { "no" }
        ),
        high.timings,
    ))
}

/// Best-of-`reps` wall time per step of `f`, which runs `steps` steps.
fn per_step(reps: usize, steps: usize, mut f: impl FnMut() -> Result<(), rssm::Error>) -> Result<f64, rssm::Error> {
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t0 = Instant::now();
        f()?;
        best = best.min(t0.elapsed().as_secs_f64());
    }
    Ok(best / steps as f64)
}

// 5. Speedup on the building and per-step scaling on the chain.
fn speedup(building: Option<Timings>, notes: &mut Vec<String>) -> Check {
    let mut pass = true;
    match building {
        Some(t) => {
            let ok = t.reduced_total < 0.5 * t.full_ensemble;
            pass &= ok;
            notes.push(format!(
                "building n=10, m=20: SSM build {:.3} s + reduced ensemble {:.3} s vs full ensemble {:.3} s ({:.1}x)",
                t.ssm_build,
                t.reduced_ensemble,
                t.full_ensemble,
                t.full_ensemble / t.reduced_total
            ));
        }
        None => {
            pass = false;
            notes.push("building timings unavailable".into());
        }
    }
    let dt = 1e-3;
    let (steps, full_steps) = (200_000, 20_000);
    let filter = ChainParams::default().filter;
    let noise = generate_noise(&NoiseSourceConfig::Filtered { filter }, steps as f64 * dt, dt, 7)?;
    let path = ForcingPath::from_noise(&[noise])?;
    let short = path.truncated(full_steps);
    let sizes = [5usize, 10, 20, 30];
    let mut models = Vec::new();
    for &n in &sizes {
        let sys = cubic_chain(&ChainParams { n, ..Default::default() }, 1.0)?;
        let (fos, sub) = subspace(&sys)?;
        let exp = compute_autonomous_ssm(&fos, &sub, 5)?;
        let model = RandomReducedModel::new(&fos, sub, exp, false)?;
        models.push((sys, model));
    }
    // sizes are interleaved within each repetition so slow drifts in clock
    // speed hit all of them alike
    let mut reduced = vec![f64::INFINITY; sizes.len()];
    for _ in 0..7 {
        for (i, (_, model)) in models.iter_mut().enumerate() {
            let rows = Record::Rows(vec![sizes[i] - 1]);
            let t = per_step(1, steps, || rk4_reduced_integrate(model, &path, &[0.0, 0.0], dt, &rows).map(|_| ()))?;
            reduced[i] = reduced[i].min(t);
        }
    }
    let mut full = Vec::new();
    for (i, (sys, _)) in models.iter().enumerate() {
        let rows = Record::Rows(vec![sizes[i] - 1]);
        let cfg = IntegratorConfig::with_dt(dt);
        let zero = vec![0.0; sizes[i]];
        full.push(per_step(2, full_steps, || newmark_integrate(sys, &short, &zero, &zero, &cfg, &rows).map(|_| ()))?);
    }
    let spread = reduced.iter().fold(0.0_f64, |m, r| m.max((r / reduced[0] - 1.0).abs()));
    let exponent = (full[3] / full[1]).ln() / (30f64 / 10.0).ln();
    pass &= spread <= 0.2 && exponent > 1.0;
    for (i, n) in sizes.iter().enumerate() {
        notes.push(format!(
            "chain n={n}: reduced {:.2} us/step, full {:.2} us/step",
            reduced[i] * 1e6,
            full[i] * 1e6
        ));
    }
    Ok((
        pass,
        format!(
            "building speedup {}; chain reduced per-step spread {:.0}% (<= 20%), full cost ~ n^{exponent:.2} (> 1)",
            building.map_or("n/a".into(), |t| format!("{:.1}x (> 2x)", t.full_ensemble / t.reduced_total)),
            spread * 100.0
        ),
    ))
}

// 6. Bounded-noise invariants and bitwise reproducibility.
fn bounded_noise(notes: &mut Vec<String>) -> Check {
    let dt = 1e-3;
    let steps = 1_000_000;
    let horizon = steps as f64 * dt;
    let base = BuildingParams::default().filter;
    let mut pass = true;
    for output in [FilterOutput::Displacement, FilterOutput::Velocity, FilterOutput::Acceleration] {
        let mut filter = base;
        filter.output = output;
        filter.increments = IncrementModel::GaussianWithReflection;
        let src = NoiseSourceConfig::Filtered { filter };
        let a = generate_noise(&src, horizon, dt, 31)?;
        let inside = a.samples.len() == steps && a.samples.iter().all(|v| (-1.0..=1.0).contains(v));
        let same = generate_noise(&src, horizon, dt, 31)?.samples == a.samples;
        pass &= inside && same;
        notes.push(format!(
            "reflected {output:?}: {} samples, max |θ| = {:.6}, in [-1, 1]: {inside}, reproducible: {same}",
            a.len(),
            a.max_abs()
        ));
    }
    let (lo, hi) = (-2.5, 3.0);
    let mut filter = base;
    filter.increments = IncrementModel::TruncatedGaussian { lower: lo, upper: hi };
    let src = NoiseSourceConfig::Filtered { filter };
    let a = generate_noise(&src, horizon, dt, 32)?;
    let sd = dt.sqrt();
    let incs = a.increments.as_ref().unwrap();
    let inc_ok = incs.iter().all(|w| (lo * sd..=hi * sd).contains(w));
    let bound_ok = a.max_abs() <= a.declared_bound;
    let same = generate_noise(&src, horizon, dt, 32)? == a;
    pass &= inc_ok && bound_ok && same;
    notes.push(format!(
        "truncated Gaussian: {} increments in [{lo}√dt, {hi}√dt]: {inc_ok}; max |θ| {:.4} <= declared {:.4}: {bound_ok}; reproducible: {same}",
        incs.len(),
        a.max_abs(),
        a.declared_bound
    ));
    let road = QuarterCarParams::default();
    let qc = quarter_car(&road, 1.0)?;
    for ch in &qc.forcing().channels {
        let mut all = true;
        let mut ratio = 0.0_f64;
        for i in 0..5 {
            let r = generate_noise(&ch.source, road.travel_time(), dt, derive_seed(33, i))?;
            all &= r.max_abs() <= r.declared_bound;
            ratio = ratio.max(r.max_abs() / r.declared_bound);
            all &= generate_noise(&ch.source, road.travel_time(), dt, derive_seed(33, i))? == r;
        }
        pass &= all;
        notes.push(format!(
            "spectral `{}`: 5 realizations within the coefficient-sum bound and reproducible: {all} (max |θ|/bound {ratio:.3})",
            ch.label
        ));
    }
    let detail = if pass {
        "all bounds hold exactly, all paths bit-identical on replay"
    } else {
        "a bound or reproducibility check failed"
    };
    Ok((pass, detail.to_string()))
}

// 7. Reflection unit cases.
fn reflection() -> Check {
    let cases = [(1.5, 0.5), (-1.2, -0.8), (0.3, 0.3), (3.5, -0.5)];
    let got: Vec<f64> = cases.iter().map(|(b, _)| reflect_into_unit(*b)).collect();
    let pass = cases.iter().zip(&got).all(|((_, want), g)| g == want);
    let detail = cases
        .iter()
        .zip(&got)
        .map(|((b, _), g)| format!("reflect({b}) = {g}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((pass, detail))
}

// 8. Split-advection defect on the building with replayed noise.
fn cocycle(notes: &mut Vec<String>) -> Check {
    let p = BuildingParams::default();
    let sys = building(&p, 0.5)?;
    let dt = 1e-3;
    let noise = generate_noise(&NoiseSourceConfig::Filtered { filter: p.filter }, 20.0, dt, 5)?;
    let path = ForcingPath::from_noise(&[noise])?;
    let q0: Vec<f64> = (0..p.n).map(|i| 0.001 * (i as f64 + 1.0)).collect();
    let v0 = vec![0.0; p.n];
    let cfg = IntegratorConfig::with_dt(dt);
    let end = newmark_integrate(&sys, &path, &q0, &v0, &cfg, &Record::All)?;
    let norm = end.last().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut worst = 0.0_f64;
    for split in [1, path.len / 4, path.len / 2, 3 * path.len / 4, path.len - 2] {
        let defect = cocycle_check(&sys, &path, &q0, &v0, &cfg, split)?;
        notes.push(format!("split at t = {:.3} s: defect {defect:.2e}", split as f64 * dt));
        worst = worst.max(defect / norm);
    }
    Ok((worst < 1e-8, format!("max defect / ‖state‖ = {worst:.2e} (< 1e-8)")))
}

// 9. Projection identities.
fn projections(notes: &mut Vec<String>) -> Check {
    let mut worst = 0.0_f64;
    for sys in library_models()? {
        let (_, sub) = subspace(&sys)?;
        let id = (&sub.ve_l * &sub.ve_r - DMatrix::identity(2, 2)).amax();
        let p = sub.complement_projector();
        let idem = (&p * &p - &p).amax();
        let u = DVector::from_vec(vec![0.7, -1.3]);
        let back = (reduced_forcing(&sub, &(&sub.ve_r * &u)) - &u).amax();
        worst = worst.max(id).max(idem).max(back);
        notes.push(format!(
            "{}: |VE_L VE_R - I| {id:.1e}, |P⊥² - P⊥| {idem:.1e}, |g_ξ(VE_R u) - u| {back:.1e}",
            sys.name()
        ));
    }
    // with d equal to the state dimension range(VE_R) is the whole space, so
    // every forcing lies in it and the h1 input must vanish exactly
    let sys = duffing(&DuffingParams::default(), 1.0)?;
    let (fos, sub) = subspace(&sys)?;
    let exp = compute_autonomous_ssm(&fos, &sub, 3)?;
    let mut model = RandomReducedModel::new(&fos, sub, exp, true)?;
    model.prepare(0.01);
    let mut rng = rng_from_seed(9);
    for _ in 0..1000 {
        model.advance_h1(&[rng.random::<f64>() * 2.0 - 1.0]);
    }
    let h1_zero = model.h1_state.iter().all(|v| *v == 0.0);
    notes.push(format!("duffing (range(VE_R) = whole space), 1000 forced steps: h1 identically zero: {h1_zero}"));
    Ok((
        worst < 1e-10 && h1_zero,
        format!("worst identity defect {worst:.1e} (< 1e-10), h1 exact zero: {h1_zero}"),
    ))
}

// 10. Parseval and single-tone bin power.
fn parseval(notes: &mut Vec<String>) -> Check {
    let len = 1 << 14;
    let dt = 0.01;
    let grid = fft_grid(len, dt);
    let ms = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let (amp, k) = (1.7, 300);
    let tone: Vec<f64> = (0..len).map(|i| amp * (grid[k] * i as f64 * dt).cos()).collect();
    let p = estimate_psd(&[&tone], dt, "x", &PsdOptions::default())?;
    let bin_err = (p.values[0][k] * p.d_omega() / (amp * amp / 2.0) - 1.0).abs();
    let tone_err = (p.total_power(0) / ms(&tone) - 1.0).abs();
    let two: Vec<f64> = (0..len).map(|i| (0.37 * i as f64).sin() + 0.3 * (1.91 * i as f64).cos()).collect();
    let p2 = estimate_psd(&[&two], dt, "x", &PsdOptions::default())?;
    let two_err = (p2.total_power(0) / ms(&two) - 1.0).abs();
    let src = NoiseSourceConfig::Filtered {
        filter: BuildingParams::default().filter,
    };
    let paths: Vec<Vec<f64>> = (0..20)
        .map(|i| generate_noise(&src, len as f64 * dt, dt, derive_seed(12, i)).map(|r| r.samples))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&[f64]> = paths.iter().map(|p| p.as_slice()).collect();
    let pn = estimate_psd(&refs, dt, "θ", &PsdOptions::default())?;
    let var = paths.iter().map(|p| ms(p)).sum::<f64>() / paths.len() as f64;
    let noise_err = (pn.total_power(0) / var - 1.0).abs();
    notes.push(format!(
        "on-bin tone: Parseval {:.2e}, bin power {:.2e}; off-bin tones: Parseval {:.2e}; bounded noise (20 paths): Parseval {:.2e}",
        tone_err, bin_err, two_err, noise_err
    ));
    let worst = tone_err.max(two_err).max(noise_err);
    Ok((
        worst < 0.05 && bin_err < 0.01,
        format!("worst Parseval error {:.3}% (< 5%), tone bin error {:.3}% (< 1%)", worst * 100.0, bin_err * 100.0),
    ))
}

fn oscillator() -> Result<MechanicalSystem, rssm::Error> {
    let one = DMatrix::from_element(1, 1, 1.0);
    MechanicalSystem::new(
        "oscillator",
        one.clone(),
        DMatrix::zeros(1, 1),
        one,
        PolynomialMap::zero(2, 1),
        ForcingSpec::none(),
    )
}

// 11. Integrator oracles.
fn integrators(notes: &mut Vec<String>) -> Check {
    let sys = oscillator()?;
    let horizon: f64 = 10.0;
    let mut errs = Vec::new();
    for dt in [1e-3, 5e-4, 2.5e-4] {
        let n = (horizon / dt).round() as usize + 1;
        let traj = newmark_integrate(&sys, &ForcingPath::silent(dt, n, 0), &[1.0], &[0.0], &IntegratorConfig::with_dt(dt), &Record::All)?;
        errs.push((traj.last()[0] - horizon.cos()).abs());
    }
    let order = errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    notes.push(format!("Newmark cosine errors [{}], observed order {order:.3}", shown.join(", ")));

    let mut worst = 0.0_f64;
    for sys in library_models()? {
        let lin = sys.linearized();
        let (fos, sub) = subspace(&lin)?;
        let exp = compute_autonomous_ssm(&fos, &sub, 2)?;
        let mut model = RandomReducedModel::new(&fos, sub, exp, false)?;
        let ev = model.sub.spectrum.eigenvalues[0];
        let period = 2.0 * PI / ev.im.abs();
        let dt = period / 200.0;
        let len = 2000 + 1;
        let xi0 = [0.6, -0.8];
        let silent = ForcingPath::silent(dt, len, model.channel_count());
        let traj = rk4_reduced_integrate(&mut model, &silent, &xi0, dt, &Record::All)?;
        let ae = model.sub.ae.clone();
        let mut err = 0.0_f64;
        for i in 0..len {
            let exact = (&ae * (i as f64 * dt)).exp() * DVector::from_row_slice(&xi0);
            let r = traj.row(i);
            err = err.max((r[0] - exact[0]).abs().max((r[1] - exact[1]).abs()));
        }
        worst = worst.max(err);
        notes.push(format!(
            "{}: slow pair {:.4} ± {:.4}i, RK4 vs exp(AE t) over 10 periods at dt = T/200: {err:.2e} (|ξ0| = 1)",
            sys.name(),
            ev.re,
            ev.im.abs()
        ));
    }
    notes.push(
        "RK4 phase error per step is (ωh)^5/120; ten periods at ωh = 2π/200 accumulate ≈ 5e-7 for a lightly damped pair".into(),
    );
    Ok((
        order >= 1.9 && worst <= 1e-8,
        format!("Newmark order {order:.3} (>= 1.9); RK4 worst error {worst:.2e} (need <= 1e-8)"),
    ))
}

fn main() -> ExitCode {
    let mut report = Report { failed: Vec::new() };
    let mut run = |id: u32, title: &str, f: &mut dyn FnMut(&mut Vec<String>) -> Check| {
        let start = Instant::now();
        let mut notes = Vec::new();
        let check = f(&mut notes);
        report.record(id, title, start, check, &notes);
    };
    run(1, "SSM order property", &mut order_property);
    run(2, "linear-limit equivalence", &mut linear_limit);
    run(3, "quarter-car trend", &mut |notes| {
        trend("quarter-car", [0.1, 1.5], 50, 60.0, notes).map(|(p, d, _)| (p, d))
    });
    let mut building_timings = None;
    run(4, "building trend", &mut |notes| {
        trend("building:n=10", [0.05, 0.5], 20, 100.0, notes).map(|(p, d, t)| {
            building_timings = Some(t);
            (p, d)
        })
    });
    run(5, "speedup", &mut |notes| speedup(building_timings, notes));
    run(6, "bounded-noise invariants", &mut bounded_noise);
    run(7, "reflection cases", &mut |_| reflection());
    run(8, "cocycle defect", &mut cocycle);
    run(9, "projection identities", &mut projections);
    run(10, "PSD Parseval", &mut parseval);
    run(11, "integrator oracles", &mut integrators);
    if report.failed.is_empty() {
        println!("acceptance: all 11 criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAIL on criteria {:?}", report.failed);
        ExitCode::FAILURE
    }
}
