use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmscale::scaling::{
    collapse_score, count_pi_groups, fit_breakpoint, fit_powerlaw, fit_tanh_threshold, predict_naeff, predict_ndeff,
    tanh_threshold, unscaled, CollapseOptions, DimensionedParam, ExpLaw, NaEffLaw, PerformanceCurve, SpreadScale,
};

#[test]
fn pi_group_counts() {
    let mut mlt = vec![
        DimensionedParam::new("m", 1.0, 1, 0, 0),
        DimensionedParam::new("len", 1.0, 0, 1, 0),
        DimensionedParam::new("t", 1.0, 0, 0, 1),
    ];
    for i in 0..13 {
        mlt.push(DimensionedParam::new(format!("q{i}"), 1.0, (i % 3) as i64 - 1, 1, -(i as i64 % 2)));
    }
    assert_eq!(count_pi_groups(&mlt), 13);
    let lt: Vec<DimensionedParam> = [(1, 0), (1, 0), (1, -1), (0, -1), (2, 0), (0, 0), (0, 1)]
        .iter()
        .enumerate()
        .map(|(i, &(l, t))| DimensionedParam::new(format!("p{i}"), 1.0, 0, l, t))
        .collect();
    assert_eq!(count_pi_groups(&lt), 5);
    let bare: Vec<DimensionedParam> = (0..4).map(|i| DimensionedParam::dimensionless(format!("x{i}"), 2.0)).collect();
    assert_eq!(count_pi_groups(&bare), 4);
}

#[test]
fn predictor_reference_values() {
    let law = NaEffLaw { alpha: 0.6, amplitude: ExpLaw { amplitude: 1.0, rate: 0.0 } };
    assert!((predict_naeff(50.0, 2.0, 1.0, 6.0, 3.0, &law) - 75.785_828_325_519_9).abs() < 1e-9);
    assert!((predict_naeff(50.0, 1.0, 1.0, 6.0, 3.0, &law) - 50.0).abs() < 1e-12);
    assert!((predict_ndeff(24.0, 1.2, 1.0, 1.25, 5.0, 0.4) - 492.454_614_130_461).abs() < 1e-9);
    assert!((predict_ndeff(1.0, 1.0, 1.0, 0.0, 0.0, 0.4) - 1.0).abs() < 1e-15);
    let r = predict_ndeff(48.0, 1.2, 1.0, 1.25, 5.0, 0.4) / predict_ndeff(24.0, 1.2, 1.0, 1.25, 5.0, 0.4);
    assert!((r - 2f64.powf(1.5)).abs() < 1e-12);
}

#[test]
fn shifted_threshold_curves_are_recovered() {
    for n_eff in [100.0, 200.0] {
        let x: Vec<f64> = (1..=40).map(|k| k as f64 * n_eff / 10.0).collect();
        let y = x.iter().map(|&v| tanh_threshold(v, n_eff)).collect();
        let fit = fit_tanh_threshold(&PerformanceCurve::new(x, y).unwrap()).unwrap();
        assert!((fit.n_eff / n_eff - 1.0).abs() < 1e-3, "{}", fit.n_eff);
    }
    assert!(fit_tanh_threshold(&PerformanceCurve::new(vec![1.0, 2.0, 3.0, 4.0], vec![1.0; 4]).unwrap()).is_err());
}

#[test]
fn noisy_powerlaw_exponent_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 400;
    let mut hits = 0;
    for _ in 0..trials {
        let x: Vec<f64> = (0..20).map(|k| 2f64.powf(k as f64 / 3.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                // Box–Muller for a 5% multiplicative Gaussian factor
                let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                2.0 * v.powf(0.6) * (1.0 + 0.05 * z)
            })
            .collect();
        if (fit_powerlaw(&x, &y).unwrap().exponent - 0.6).abs() <= 0.05 {
            hits += 1;
        }
    }
    assert!(hits as f64 / trials as f64 >= 0.95, "{hits}/{trials}");
}

#[test]
fn knee_recovered_from_two_segment_data() {
    let x: Vec<f64> = (0..30).map(|k| 2.0 * 1.2f64.powi(k)).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v < 50.0 { (v / 50.0).powf(-0.75) } else { 1.0 }).collect();
    let fit = fit_breakpoint(&PerformanceCurve::new(x.clone(), y).unwrap()).unwrap();
    assert!((fit.n_eff / 50.0 - 1.0).abs() < 0.05, "{}", fit.n_eff);
    let line: Vec<f64> = x.iter().map(|&v| v.powf(-0.75)).collect();
    assert!(fit_breakpoint(&PerformanceCurve::new(x, line).unwrap()).is_err());
}

#[test]
fn collapse_score_of_identical_and_doubled_curves() {
    let x: Vec<f64> = (1..=20).map(|k| k as f64).collect();
    let a = PerformanceCurve::new(x.clone(), x.iter().map(|v| v.sqrt()).collect()).unwrap();
    let b = PerformanceCurve::new(x.clone(), x.iter().map(|v| 2.0 * v.sqrt()).collect()).unwrap();
    let log = CollapseOptions { scale: SpreadScale::Log, ..CollapseOptions::default() };
    assert_eq!(collapse_score(&[a.clone(), a.clone()], unscaled, log).unwrap().score, 0.0);
    let s = collapse_score(&[a, b], unscaled, log).unwrap().score;
    assert!((s - 2f64.ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn exact_powerlaws_are_recovered(amp in 0.01..100.0f64, exp in -2.0..2.0f64, x0 in 0.1..10.0f64) {
        let x: Vec<f64> = (0..8).map(|k| x0 * 1.7f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().map(|&v| amp * v.powf(exp)).collect();
        let fit = fit_powerlaw(&x, &y).unwrap();
        prop_assert!((fit.exponent - exp).abs() < 1e-9);
        prop_assert!((fit.amplitude / amp - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tanh_threshold_is_decreasing_and_bounded(n_eff in 1.0..1e4f64, a in 0.0..1e5f64, b in 0.0..1e5f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (ylo, yhi) = (tanh_threshold(lo, n_eff), tanh_threshold(hi, n_eff));
        prop_assert!(yhi <= ylo + 1e-15);
        prop_assert!((0.0..=1.0).contains(&ylo) && (0.0..=1.0).contains(&yhi));
    }
}
