use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rssm::forcing::{derive_seed, generate_noise, FilterConfig, FilterOutput, IncrementModel, NoiseSourceConfig};
use rssm::integrate::{newmark_integrate, ForcingPath, IntegratorConfig, Record};
use rssm::library::{duffing, DuffingParams};
use rssm::model::{ForcingSpec, MechanicalSystem};
use rssm::poly::PolynomialMap;
use rssm::psd::{
    channel_force_psd, compare_psd, decibel, estimate_psd, fft_grid, linear_psd, to_decibel, transfer_matrix,
    PsdEstimate, PsdOptions,
};
use rssm::Error;

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn single_tone_bin_carries_half_amplitude_squared() {
    let (len, dt) = (1 << 14, 0.01);
    let grid = fft_grid(len, dt);
    let k = 300;
    let (amp, w) = (1.7, grid[k]);
    let x: Vec<f64> = (0..len).map(|i| amp * (w * i as f64 * dt).cos()).collect();
    let psd = estimate_psd(&[&x], dt, "x", &PsdOptions::default()).unwrap();
    let bin = psd.values[0][k] * psd.d_omega();
    assert!((bin / (amp * amp / 2.0) - 1.0).abs() < 0.01, "bin power {bin}");
    assert!((psd.total_power(0) / mean_square(&x) - 1.0).abs() < 0.05);
}

#[test]
fn zero_signal_has_zero_psd() {
    let x = vec![0.0; 128];
    let psd = estimate_psd(&[&x], 0.1, "x", &PsdOptions::default()).unwrap();
    assert!(psd.values[0].iter().all(|v| *v == 0.0));
}

#[test]
fn parseval_on_bounded_noise_ensemble() {
    let filter = FilterConfig {
        m: 1.0,
        c: 2.0,
        k: 25.0,
        output: FilterOutput::Displacement,
        increments: IncrementModel::default(),
        intensity: 1.0,
    };
    let source = NoiseSourceConfig::Filtered { filter };
    let dt = 0.01;
    let len = 1 << 14;
    let paths: Vec<Vec<f64>> = (0..50)
        .map(|i| generate_noise(&source, len as f64 * dt, dt, derive_seed(11, i)).unwrap().samples)
        .collect();
    let refs: Vec<&[f64]> = paths.iter().map(|p| p.as_slice()).collect();
    let psd = estimate_psd(&refs, dt, "a", &PsdOptions::default()).unwrap();
    let var: f64 = paths.iter().map(|p| mean_square(p)).sum::<f64>() / 50.0;
    assert!((psd.total_power(0) / var - 1.0).abs() < 0.05);
}

#[test]
fn transient_discard_and_hann_keep_parseval() {
    let dt = 0.01;
    let len = 1 << 14;
    let x: Vec<f64> = (0..len).map(|i| (0.37 * i as f64).sin() + 0.3 * (1.91 * i as f64).cos()).collect();
    let opts = PsdOptions { discard: 10.0, hann: true };
    let psd = estimate_psd(&[&x], dt, "x", &opts).unwrap();
    assert_eq!(psd.record_len, len - 1000);
    let ms = mean_square(&x[1000..]);
    assert!((psd.total_power(0) / ms - 1.0).abs() < 0.05);
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

#[test]
fn pooled_estimate_equals_union() {
    let dt = 0.05;
    let make = |seed: u64| -> Vec<f64> {
        let src = NoiseSourceConfig::Filtered {
            filter: FilterConfig {
                m: 1.0,
                c: 1.0,
                k: 4.0,
                output: FilterOutput::Velocity,
                increments: IncrementModel::default(),
                intensity: 1.0,
            },
        };
        generate_noise(&src, 256.0 * dt, dt, seed).unwrap().samples
    };
    let a: Vec<Vec<f64>> = (0..3).map(make).collect();
    let b: Vec<Vec<f64>> = (3..8).map(make).collect();
    let opts = PsdOptions::default();
    let pa = estimate_psd(&refs(&a), dt, "x", &opts).unwrap();
    let pb = estimate_psd(&refs(&b), dt, "x", &opts).unwrap();
    let all: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
    let pu = estimate_psd(&refs(&all), dt, "x", &opts).unwrap();
    let pooled = pa.pooled(&pb).unwrap();
    assert_eq!(pooled.ensemble, 8);
    for (x, y) in pooled.values[0].iter().zip(&pu.values[0]) {
        assert!((x - y).abs() <= 1e-13 * y.abs().max(1e-300));
    }
}

#[test]
fn estimator_validates_inputs() {
    let a = vec![0.0; 100];
    let b = vec![0.0; 101];
    assert!(matches!(
        estimate_psd(&[&a, &b], 0.1, "x", &PsdOptions::default()),
        Err(Error::LengthMismatch { .. })
    ));
    let short = vec![0.0; 63];
    assert!(estimate_psd(&[&short], 0.1, "x", &PsdOptions::default()).is_err());
}

fn one_dof() -> MechanicalSystem {
    duffing(
        &DuffingParams {
            kappa: 0.0,
            ..DuffingParams::default()
        },
        1.0,
    )
    .unwrap()
}

#[test]
fn transfer_function_spot_values() {
    let sys = one_dof();
    let h0 = transfer_matrix(&sys, 0.0).unwrap();
    assert!((h0[(0, 0)].norm() - 1.0).abs() < 1e-12);
    let h1 = transfer_matrix(&sys, 1.0).unwrap();
    assert!((h1[(0, 0)].norm_sqr() - 25.0).abs() < 1e-12);
    let psd = linear_psd(&sys, &|_, _| DMatrix::from_element(1, 1, 2.0), &[0.0, 1.0], &[0], &["x".into()]).unwrap();
    assert!((psd.values[0][1] - 50.0).abs() < 1e-12);
    assert!((psd.values[0][0] - 2.0).abs() < 1e-12);
}

#[test]
fn undamped_resonance_bin_is_flagged() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let sys = MechanicalSystem::new("u", one.clone(), DMatrix::zeros(1, 1), one, PolynomialMap::zero(2, 1), ForcingSpec::none())
        .unwrap();
    let psd = linear_psd(&sys, &|_, _| DMatrix::from_element(1, 1, 1.0), &[0.5, 1.0, 1.5], &[0], &["x".into()]).unwrap();
    assert_eq!(psd.flagged, vec![1]);
}

#[test]
fn decibel_conversion() {
    assert_eq!(decibel(1.0, 1e-20), 0.0);
    assert_eq!(decibel(100.0, 1e-20), 20.0);
    assert_eq!(decibel(0.0, 1e-20), -200.0);
    let psd = PsdEstimate {
        omega: vec![0.0, 1.0],
        labels: vec!["x".into()],
        values: vec![vec![1.0, 0.0]],
        ensemble: 1,
        record_len: 2,
        dt: PI,
        flagged: vec![],
    };
    assert_eq!(to_decibel(&psd, 1e-10).unwrap(), vec![vec![0.0, -100.0]]);
    assert!(to_decibel(&psd, 0.0).is_err());
}

fn bump(scale: f64) -> PsdEstimate {
    let omega: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
    let values = omega.iter().map(|w| scale / ((1.0 - w * w).powi(2) + 0.04 * w * w)).collect();
    PsdEstimate {
        omega,
        labels: vec!["x".into()],
        values: vec![values],
        ensemble: 1,
        record_len: 398,
        dt: 0.3,
        flagged: vec![],
    }
}

#[test]
fn comparison_metrics() {
    let a = bump(1.0);
    let same = compare_psd(&a, &a, 0, None).unwrap();
    assert_eq!(same.band_mean_abs_db, 0.0);
    assert_eq!(same.peak_offset_bins, 0);
    assert_eq!(same.peak_height_db, 0.0);
    assert!((same.band.0 - 0.5).abs() < 1e-12 && (same.band.1 - 2.0).abs() < 1e-12);
    let double = compare_psd(&a, &bump(2.0), 0, None).unwrap();
    assert!((double.band_mean_abs_db - 10.0 * 2f64.log10()).abs() < 1e-12);
    assert!((double.band_mean_db - 3.0103).abs() < 1e-4);
    let mut shifted = bump(1.0);
    shifted.omega[3] += 0.01;
    assert!(matches!(compare_psd(&a, &shifted, 0, None), Err(Error::GridMismatch)));
}

#[test]
fn csv_round_trip() {
    let a = bump(1.0);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let back = PsdEstimate::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.labels, a.labels);
    for (x, y) in back.values[0].iter().zip(&a.values[0]) {
        assert!((x - y).abs() <= 1e-12 * y.abs());
    }
}

#[test]
fn simulated_linear_response_matches_transfer_function() {
    let sys = one_dof();
    let dt = 0.02;
    let horizon = 400.0;
    let source = sys.forcing().channels[0].source.clone();
    let curve = source.curve(horizon).unwrap().unwrap();
    let cfg = IntegratorConfig::with_dt(dt);
    let signals: Vec<Vec<f64>> = (0..50)
        .map(|i| {
            let noise = generate_noise(&source, horizon, dt, derive_seed(4, i)).unwrap();
            let path = ForcingPath::from_noise(&[noise]).unwrap();
            newmark_integrate(&sys, &path, &[0.0], &[0.0], &cfg, &Record::Rows(vec![0])).unwrap().column(0)
        })
        .collect();
    let refs: Vec<&[f64]> = signals.iter().map(|s| s.as_slice()).collect();
    let opts = PsdOptions { discard: 50.0, hann: false };
    let sim = estimate_psd(&refs, dt, "x", &opts).unwrap();
    let phi = |_: usize, w: f64| channel_force_psd(&sys, &[curve.eval(w)]);
    let lin = linear_psd(&sys, &phi, &sim.omega, &[0], &["x".into()]).unwrap();
    let cmp = compare_psd(&lin, &sim, 0, None).unwrap();
    assert!(cmp.band_mean_abs_db < 3.0, "{cmp:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn parseval_holds_for_arbitrary_signals(seed in 0u64..1000, len_pow in 6u32..12) {
        use rand::Rng;
        let mut rng = rssm::forcing::rng_from_seed(seed);
        let len = 1usize << len_pow;
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psd = estimate_psd(&[&x], 0.01, "x", &PsdOptions::default()).unwrap();
        prop_assert!((psd.total_power(0) / mean_square(&x) - 1.0).abs() < 1e-10);
        prop_assert!(psd.values[0].iter().all(|v| *v >= 0.0));
    }
}
