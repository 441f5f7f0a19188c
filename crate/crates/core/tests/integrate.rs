use nalgebra::{DMatrix, DVector};
use rssm::forcing::{draw_increments, generate_noise, rng_from_seed, NoiseSourceConfig};
use rssm::integrate::{
    cocycle_check, cocycle_check_reduced, coupled_implicit_integrate, newmark_integrate, rk4_reduced_integrate,
    ForcingPath, IntegratorConfig, Record, Trajectory,
};
use rssm::library::{building, duffing, BuildingParams, DuffingParams};
use rssm::model::{to_first_order, ForcingChannel, ForcingSpec, MechanicalSystem};
use rssm::poly::PolynomialMap;
use rssm::reduced::RandomReducedModel;
use rssm::spectral::{compute_spectrum, slow_subspace_by_dim};
use rssm::ssm::compute_autonomous_ssm;
use rssm::Error;

fn oscillator(c: f64, forcing: ForcingSpec) -> MechanicalSystem {
    let one = DMatrix::from_element(1, 1, 1.0);
    MechanicalSystem::new("osc", one.clone(), DMatrix::from_element(1, 1, c), one, PolynomialMap::zero(2, 1), forcing)
        .unwrap()
}

fn unit_channel(shape: Vec<f64>) -> ForcingSpec {
    ForcingSpec {
        amplitude: 1.0,
        channels: vec![ForcingChannel {
            label: "g".into(),
            shape,
            parametric: None,
            source: NoiseSourceConfig::Spectral {
                density: rssm::forcing::DensitySpec::Flat { level: 1.0 },
                omega_min: 0.1,
                omega_max: 1.0,
                d_omega: None,
            },
        }],
    }
}

/// Classical RK4 with a small step, the reference for nonlinear free decay.
fn rk4_reference(f: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], dt: f64, steps: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    let add = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&add(&x, &k1, dt / 2.0));
        let k3 = f(&add(&x, &k2, dt / 2.0));
        let k4 = f(&add(&x, &k3, dt));
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

#[test]
fn newmark_conserves_energy_of_undamped_oscillator() {
    let sys = oscillator(0.0, ForcingSpec::none());
    let dt = 2.0 * std::f64::consts::PI / 100.0;
    let n = 100 * 100 + 1;
    let cfg = IntegratorConfig::with_dt(dt);
    let traj = newmark_integrate(&sys, &ForcingPath::silent(dt, n, 0), &[1.0], &[0.0], &cfg, &Record::All).unwrap();
    for i in 0..traj.len() {
        let r = traj.row(i);
        let e = 0.5 * (r[0] * r[0] + r[1] * r[1]);
        assert!((e - 0.5).abs() < 1e-6 * 0.5, "energy {e} at step {i}");
    }
}

#[test]
fn newmark_is_second_order_on_free_vibration() {
    let sys = oscillator(0.0, ForcingSpec::none());
    let horizon: f64 = 10.0;
    let errs: Vec<f64> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&dt: &f64| {
            let n = (horizon / dt).round() as usize + 1;
            let cfg = IntegratorConfig::with_dt(dt);
            let traj = newmark_integrate(&sys, &ForcingPath::silent(dt, n, 0), &[1.0], &[0.0], &cfg, &Record::All)
                .unwrap();
            (traj.last()[0] - horizon.cos()).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "observed order {order} from {errs:?}");
    }
}

#[test]
fn newmark_reaches_static_deflection() {
    let sys = MechanicalSystem::new(
        "two",
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
        DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 2.0]),
        PolynomialMap::zero(4, 2),
        unit_channel(vec![1.0, 0.5]),
    )
    .unwrap();
    let dt = 1e-2;
    let n = 10_000;
    let path = ForcingPath {
        dt,
        len: n,
        channels: vec![vec![1.0; n]],
    };
    let traj = newmark_integrate(&sys, &path, &[0.0, 0.0], &[0.0, 0.0], &IntegratorConfig::with_dt(dt), &Record::All)
        .unwrap();
    let expect = sys.stiffness().clone().lu().solve(&DVector::from_vec(vec![1.0, 0.5])).unwrap();
    let last = traj.last();
    assert!((last[0] - expect[0]).abs() < 1e-9 && (last[1] - expect[1]).abs() < 1e-9);
}

#[test]
fn newmark_matches_reference_on_duffing_decay() {
    let sys = duffing(&DuffingParams::default(), 0.0).unwrap();
    let fos = to_first_order(&sys).unwrap();
    let period = 2.0 * std::f64::consts::PI;
    let dt = 2.5e-4;
    let steps = (10.0 * period / dt).round() as usize;
    let path = ForcingPath::silent(dt, steps + 1, 1);
    let traj = newmark_integrate(&sys, &path, &[1.0], &[0.0], &IntegratorConfig::with_dt(dt), &Record::All).unwrap();
    let reference = rk4_reference(|x| fos.rhs(x, &[0.0]).unwrap().as_slice().to_vec(), &[1.0, 0.0], dt / 4.0, steps * 4);
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let err = traj.last().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5 * scale.max(1e-2), "error {err}, scale {scale}");
}

#[test]
fn newmark_reports_divergence() {
    let mut nl = PolynomialMap::zero(2, 1);
    nl.add_power_of_difference(0, None, 3, 1e12, 0).unwrap();
    let one = DMatrix::from_element(1, 1, 1.0);
    let sys = MechanicalSystem::new("stiff", one.clone(), one.clone(), one, nl, ForcingSpec::none()).unwrap();
    let cfg = IntegratorConfig {
        max_iters: 2,
        ..IntegratorConfig::with_dt(0.1)
    };
    let r = newmark_integrate(&sys, &ForcingPath::silent(0.1, 20, 0), &[10.0], &[0.0], &cfg, &Record::All);
    assert!(matches!(r, Err(Error::NewtonDivergence { .. })), "{r:?}");
}

fn small_building(eps: f64) -> (MechanicalSystem, BuildingParams) {
    let p = BuildingParams {
        n: 4,
        ..BuildingParams::default()
    };
    (building(&p, eps).unwrap(), p)
}

#[test]
fn coupled_scheme_replays_pregenerated_noise() {
    let (sys, p) = small_building(0.5);
    let dt = 1e-3;
    let horizon = 5.0;
    let n = 4;
    let source = NoiseSourceConfig::Filtered { filter: p.filter };
    let noise = generate_noise(&source, horizon, dt, 9).unwrap();
    let increments = noise.increments.clone().unwrap();
    let cfg = IntegratorConfig::with_dt(dt);
    let q0 = vec![0.01; n];
    let v0 = vec![0.0; n];
    let a = coupled_implicit_integrate(&sys, &p.filter, &increments, &q0, &v0, &cfg, &Record::All).unwrap();
    let b = newmark_integrate(&sys, &ForcingPath::from_noise(&[noise]).unwrap(), &q0, &v0, &cfg, &Record::All).unwrap();
    assert_eq!(a.len(), b.len());
    for i in 0..a.len() {
        assert_eq!(a.row(i), b.row(i));
    }
}

#[test]
fn coupled_scheme_with_zero_increments_is_free_decay() {
    let (sys, p) = small_building(0.5);
    let dt = 1e-3;
    let len = 2000;
    let cfg = IntegratorConfig::with_dt(dt);
    let q0 = vec![0.02, -0.01, 0.0, 0.01];
    let v0 = vec![0.0; 4];
    let a = coupled_implicit_integrate(&sys, &p.filter, &vec![0.0; len], &q0, &v0, &cfg, &Record::All).unwrap();
    let b = newmark_integrate(&sys, &ForcingPath::silent(dt, len, 1), &q0, &v0, &cfg, &Record::All).unwrap();
    for i in 0..len {
        assert_eq!(a.row(i), b.row(i));
    }
}

#[test]
fn building_smoke_run_stays_bounded() {
    let p = BuildingParams::default();
    let sys = building(&p, 0.5).unwrap();
    let dt = 1e-3;
    let len = 200_000;
    let increments = draw_increments(&p.filter, len, dt, &mut rng_from_seed(3)).unwrap();
    let traj = coupled_implicit_integrate(
        &sys,
        &p.filter,
        &increments,
        &vec![0.0; p.n],
        &vec![0.0; p.n],
        &IntegratorConfig::with_dt(dt),
        &Record::Rows(vec![p.n - 1]),
    )
    .unwrap();
    let peak = traj.column(0).iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(peak.is_finite() && peak < 1.0, "roof peak {peak}");
}

#[test]
fn cocycle_defect_on_building() {
    let p = BuildingParams::default();
    let sys = building(&p, 0.5).unwrap();
    let dt = 1e-3;
    let horizon = 20.0;
    let noise = generate_noise(&NoiseSourceConfig::Filtered { filter: p.filter }, horizon, dt, 5).unwrap();
    let path = ForcingPath::from_noise(&[noise]).unwrap();
    let q0: Vec<f64> = (0..p.n).map(|i| 0.001 * (i as f64 + 1.0)).collect();
    let v0 = vec![0.0; p.n];
    let cfg = IntegratorConfig::with_dt(dt);
    let end = newmark_integrate(&sys, &path, &q0, &v0, &cfg, &Record::All).unwrap();
    let norm = end.last().iter().map(|v| v * v).sum::<f64>().sqrt();
    for split in [0, path.len / 2, path.len - 1] {
        let defect = cocycle_check(&sys, &path, &q0, &v0, &cfg, split).unwrap();
        assert!(defect < 1e-8 * norm, "split {split}: defect {defect}, norm {norm}");
    }
    assert_eq!(cocycle_check(&sys, &path, &q0, &v0, &cfg, 0).unwrap(), 0.0);
}

fn reduced_two_dof(kappa: f64, order: u32) -> (RandomReducedModel, rssm::model::FirstOrderSystem) {
    let m = DMatrix::identity(2, 2);
    let k = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
    let c = &k * 0.02 + &m * 0.02;
    let mut nl = PolynomialMap::zero(4, 2);
    if kappa != 0.0 {
        nl.add_power_of_difference(0, None, 3, kappa, 0).unwrap();
    }
    let sys = MechanicalSystem::new("two", m, c, k, nl, ForcingSpec::none()).unwrap();
    let fos = to_first_order(&sys).unwrap();
    let spec = compute_spectrum(fos.a()).unwrap();
    let sub = slow_subspace_by_dim(&spec, fos.a(), 2).unwrap();
    let exp = compute_autonomous_ssm(&fos, &sub, order).unwrap();
    (RandomReducedModel::new(&fos, sub, exp, false).unwrap(), fos)
}

fn rk4_linear_error(model: &mut RandomReducedModel, steps_per_period: usize) -> f64 {
    let omega = model.sub.spectrum.eigenvalues[0].im.abs();
    let period = 2.0 * std::f64::consts::PI / omega;
    let dt = period / steps_per_period as f64;
    let len = 10 * steps_per_period + 1;
    let xi0 = [0.6, -0.8];
    let traj = rk4_reduced_integrate(model, &ForcingPath::silent(dt, len, 0), &xi0, dt, &Record::All).unwrap();
    let ae = model.sub.ae.clone();
    let mut worst = 0.0_f64;
    for i in (0..len).step_by(steps_per_period / 10) {
        let exact = (&ae * (i as f64 * dt)).exp() * DVector::from_row_slice(&xi0);
        let r = traj.row(i);
        worst = worst.max((r[0] - exact[0]).abs().max((r[1] - exact[1]).abs()));
    }
    worst
}

#[test]
fn rk4_matches_matrix_exponential_on_linear_reduced_model() {
    let (mut model, _) = reduced_two_dof(0.0, 3);
    // RK4 phase error per step is (ωh)^5/120, so ten periods at 200 steps per
    // period accumulate about 2π·10·(2π/200)^4/120 ≈ 5e-7 relative.
    let coarse = rk4_linear_error(&mut model, 200);
    assert!(coarse < 5e-7, "unit-amplitude error {coarse:e} at 200 steps per period");
    let fine = rk4_linear_error(&mut model, 1000);
    assert!(fine < 1e-8, "unit-amplitude error {fine:e} at 1000 steps per period");
    let order = (coarse / fine).ln() / 5f64.ln();
    assert!(order > 3.8, "observed order {order}");
}

#[test]
fn rk4_from_rest_without_forcing_stays_at_rest() {
    let (mut model, _) = reduced_two_dof(2.0, 5);
    let traj = rk4_reduced_integrate(&mut model, &ForcingPath::silent(0.01, 500, 0), &[0.0, 0.0], 0.01, &Record::All)
        .unwrap();
    assert!((0..traj.len()).all(|i| traj.row(i) == [0.0, 0.0]));
}

#[test]
fn rk4_error_shrinks_by_sixteen_when_halving_dt() {
    let (mut model, _) = reduced_two_dof(2.0, 5);
    let xi0 = [0.2, 0.1];
    let horizon = 10.0;
    let run = |model: &mut RandomReducedModel, dt: f64| {
        let len = (horizon / dt).round() as usize + 1;
        rk4_reduced_integrate(model, &ForcingPath::silent(dt, len, 0), &xi0, dt, &Record::All)
            .unwrap()
            .last()
            .to_vec()
    };
    let fine = run(&mut model, 0.1 / 16.0);
    let e1: f64 = run(&mut model, 0.1).iter().zip(&fine).map(|(a, b)| (a - b).abs()).sum();
    let e2: f64 = run(&mut model, 0.05).iter().zip(&fine).map(|(a, b)| (a - b).abs()).sum();
    assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
}

#[test]
fn reduced_cocycle_defect_is_zero_at_the_ends() {
    let (model, _) = reduced_two_dof(2.0, 5);
    let path = ForcingPath::silent(0.01, 300, 0);
    assert_eq!(cocycle_check_reduced(&model, &path, &[0.1, 0.0], 0).unwrap(), 0.0);
    assert_eq!(cocycle_check_reduced(&model, &path, &[0.1, 0.0], 299).unwrap(), 0.0);
    assert!(cocycle_check_reduced(&model, &path, &[0.1, 0.0], 150).unwrap() < 1e-14);
}

#[test]
fn trajectory_csv_has_header_and_rows() {
    let sys = oscillator(0.1, ForcingSpec::none());
    let traj = newmark_integrate(&sys, &ForcingPath::silent(0.1, 5, 0), &[1.0], &[0.0], &IntegratorConfig::with_dt(0.1), &Record::All)
        .unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,q0,qd0");
    assert_eq!(lines.len(), 6);
    let back = Trajectory::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back.labels, traj.labels);
    assert_eq!(back.len(), 5);
    assert!((back.dt - 0.1).abs() < 1e-15);
    for i in 0..5 {
        assert_eq!(back.row(i), traj.row(i));
    }
    assert!(Trajectory::read_csv("x,y\n1,2\n".as_bytes()).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let sys = oscillator(0.1, ForcingSpec::none());
    let path = ForcingPath::silent(0.1, 5, 0);
    let bad = IntegratorConfig {
        beta: 0.7,
        ..IntegratorConfig::with_dt(0.1)
    };
    assert!(newmark_integrate(&sys, &path, &[0.0], &[0.0], &bad, &Record::All).is_err());
    let wrong_dt = IntegratorConfig::with_dt(0.05);
    assert!(matches!(
        newmark_integrate(&sys, &path, &[0.0], &[0.0], &wrong_dt, &Record::All),
        Err(Error::GridMismatch)
    ));
}
