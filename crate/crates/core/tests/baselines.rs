use proptest::prelude::*;
use spo2dcac::baselines::*;
use spo2dcac::harness::{raw_windows, run_baseline, BaselineMethod};
use spo2dcac::stmap::SpatioTemporalMap;
use spo2dcac::synth::{gen_cohort, SynthParams};

fn noiseless(n_rois: usize, seed: u64) -> SynthParams {
    SynthParams { n_rois, drift_amp: 0.0, noise_sigma: 0.0, seed, ..Default::default() }
}

#[test]
fn sinusoid_dc_and_ac() {
    let x: Vec<f64> = (0..300).map(|i| 5.0 + 0.1 * (2.0 * std::f64::consts::PI * 1.2 * i as f64 / 30.0).sin()).collect();
    let (dc, ac) = window_dc_ac(&x).unwrap();
    assert!((dc - 5.0).abs() < 1e-3);
    assert!((ac / (0.1 / 2f64.sqrt()) - 1.0).abs() < 0.02);
}

#[test]
fn ror_arithmetic() {
    // dc 100 / ac 1 against dc 50 / ac 1.
    let red = [99.0, 101.0, 99.0, 101.0];
    let blue = [49.0, 51.0, 49.0, 51.0];
    assert!((compute_ror(&red, &blue).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(compute_ror(&red, &red).unwrap(), 1.0);
    assert!(matches!(compute_ror(&red, &[3.0; 4]), Err(spo2dcac::Error::Degenerate(_))));
}

#[test]
fn calibration_examples() {
    let cal = fit_calibration(&[0.4, 0.6], &[98.0, 92.0]).unwrap();
    assert!((cal.a + 30.0).abs() < 1e-9 && (cal.b - 110.0).abs() < 1e-9);
    assert!(matches!(fit_calibration(&[0.5, 0.5, 0.5], &[90.0, 91.0, 92.0]), Err(spo2dcac::Error::Rank(_))));
    let cal = RorCalibration { a: -30.0, b: 110.0 };
    assert_eq!(cal.apply(0.5), 95.0);
    assert_eq!(clamp_spo2(cal.apply(1.0 / 3.0)), 100.0);
}

#[test]
fn calibration_recovers_generator_constants() {
    let p = noiseless(8, 21);
    let recs = gen_cohort(&p, 4).unwrap();
    let mask: Vec<usize> = (0..8).collect();
    let (mut rors, mut ys) = (Vec::new(), Vec::new());
    for r in &recs {
        for w in raw_windows(&r.map, &r.spo2, 2.0).unwrap() {
            rors.push(window_ror(&w.map, &mask).unwrap());
            ys.push(w.spo2.iter().sum::<f64>() / 10.0);
        }
    }
    let cal = fit_calibration(&rors, &ys).unwrap();
    assert!(((cal.a - p.a_star) / p.a_star).abs() < 5e-3, "a = {}", cal.a);
    assert!(((cal.b - p.b_star) / p.b_star).abs() < 5e-3, "b = {}", cal.b);
}

#[test]
fn noiseless_window_prediction_at_93() {
    let p = SynthParams { spo2_baseline: 93.0, dip_depth: 0.0, n_rois: 4, duration_s: 20.0, ..noiseless(4, 2) };
    let rec = &gen_cohort(&p, 1).unwrap()[0];
    let cal = RorCalibration { a: p.a_star, b: p.b_star };
    let w = rec.map.window(150, 300).unwrap();
    assert!((predict_ror(&cal, &w, &[0, 1, 2, 3]).unwrap() - 93.0).abs() < 0.05);
}

#[test]
fn lr_recovers_planted_model_and_ignores_duplicates() {
    let feats: Vec<[f64; 3]> = (0..12).map(|i| [0.1 + 0.05 * i as f64, 0.3 + 0.01 * ((i * 7) % 5) as f64, 0.2 + 0.02 * ((i * 3) % 4) as f64]).collect();
    let y: Vec<f64> = feats.iter().map(|f| 100.0 - 10.0 * f[0]).collect();
    let m = fit_lr(&feats, &y).unwrap();
    assert!((m.weights[0] + 10.0).abs() < 1e-6);
    assert!(m.weights[1].abs() < 1e-6 && m.weights[2].abs() < 1e-6);
    assert!((m.bias - 100.0).abs() < 1e-6);
    let doubled: Vec<[f64; 3]> = feats.iter().chain(&feats).copied().collect();
    let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
    let m2 = fit_lr(&doubled, &y2).unwrap();
    for (a, b) in m.weights.iter().zip(&m2.weights) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!((m.bias - m2.bias).abs() < 1e-9);
    assert!(matches!(fit_lr(&vec![[1.0, 2.0, 3.0]; 6], &[90.0; 6]), Err(spo2dcac::Error::Rank(_))));
}

/// Without noise both baselines sit at the floor set by one estimate per
/// 10-s window. RoR is exact there while LR, being linear in the three
/// ratios, only approximates their quotient, so LR is held to within 1 %.
#[test]
fn lr_matches_ror_on_noiseless_data() {
    let recs = gen_cohort(&noiseless(16, 5), 5).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = recs.iter().enumerate().partition(|(i, _)| *i < 3);
    let train: Vec<_> = train.into_iter().map(|(_, r)| r).collect();
    let test: Vec<_> = test.into_iter().map(|(_, r)| r).collect();
    let ror = run_baseline(BaselineMethod::Ror, &train, &test, None).unwrap();
    let lr = run_baseline(BaselineMethod::Lr, &train, &test, None).unwrap();
    eprintln!("noiseless: RoR MAE {:.4}, LR MAE {:.4}", ror.evaluation.metrics.mae, lr.evaluation.metrics.mae);
    assert!(lr.evaluation.metrics.mae <= 1.01 * ror.evaluation.metrics.mae);
    assert_eq!(ror.flagged_windows, 0);
}

#[test]
fn models_serialize_with_kind_tag() {
    let v = serde_json::to_value(BaselineModel::from(RorCalibration { a: -30.0, b: 110.0 })).unwrap();
    assert_eq!(v, serde_json::json!({"kind": "ror", "a": -30.0, "b": 110.0}));
    let lr = fit_lr(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]], &[90.0, 91.0, 92.0, 95.0]).unwrap();
    let v = serde_json::to_value(BaselineModel::from(lr)).unwrap();
    assert_eq!(v["kind"], "lr");
    assert_eq!(v["feature_names"], serde_json::json!(LR_FEATURES));
    assert_eq!(v["weights"].as_array().unwrap().len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_residuals_satisfy_normal_equations(
        pts in prop::collection::vec((0.2f64..1.5, 85.0f64..100.0), 3..40),
    ) {
        let rors: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        prop_assume!(rors.iter().any(|r| (r - rors[0]).abs() > 1e-3));
        let cal = fit_calibration(&rors, &ys).unwrap();
        let res: Vec<f64> = rors.iter().zip(&ys).map(|(x, y)| cal.apply(*x) - y).collect();
        prop_assert!(res.iter().sum::<f64>().abs() < 1e-6);
        prop_assert!(res.iter().zip(&rors).map(|(r, x)| r * x).sum::<f64>().abs() < 1e-6);
    }

    #[test]
    fn exact_lines_interpolate(a in -50.0f64..-1.0, b in 90.0f64..130.0) {
        let rors = [0.3, 0.45, 0.6, 0.9];
        let ys: Vec<f64> = rors.iter().map(|r| a * r + b).collect();
        let cal = fit_calibration(&rors, &ys).unwrap();
        for (r, y) in rors.iter().zip(&ys) {
            prop_assert!((cal.apply(*r) - y).abs() < 1e-9);
        }
    }

    #[test]
    fn ror_is_scale_invariant(k in 0.01f64..100.0, phase in 0.0f64..6.0) {
        let red: Vec<f64> = (0..60).map(|i| 2.0 + 0.05 * (i as f64 * 0.3 + phase).sin()).collect();
        let blue: Vec<f64> = (0..60).map(|i| 1.0 + 0.07 * (i as f64 * 0.3).sin()).collect();
        let scaled: Vec<f64> = red.iter().map(|v| v * k).collect();
        prop_assert!((compute_ror(&scaled, &blue).unwrap() - compute_ror(&red, &blue).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ror_predictions_stay_in_range(
        a in -200.0f64..200.0,
        b in -100.0f64..300.0,
        data in prop::collection::vec(0.1f64..1.0, 3 * 2 * 20),
    ) {
        let w = SpatioTemporalMap::from_data(data, 2, 20, 30.0, "s").unwrap();
        if let Ok(p) = predict_ror(&RorCalibration { a, b }, &w, &[0, 1]) {
            prop_assert!((SPO2_MIN..=SPO2_MAX).contains(&p));
        }
    }
}
