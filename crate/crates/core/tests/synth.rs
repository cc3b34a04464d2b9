use spo2dcac::baselines::compute_ror;
use spo2dcac::filters::split_dc_ac;
use spo2dcac::synth::*;

fn clean(spo2: f64, n_rois: usize, seed: u64) -> SynthParams {
    SynthParams { n_rois, duration_s: 60.0, drift_amp: 0.0, dip_depth: 0.0, spo2_baseline: spo2, seed, ..Default::default() }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn noiseless_window_ror_inverts_the_calibration() {
    let p = clean(95.0, 4, 1);
    assert!((p.target_ror(95.0) - 0.5).abs() < 1e-12);
    let rec = gen_subject(&p, 0).unwrap();
    for n in 0..4 {
        for start in (0..1500).step_by(150) {
            let r = &rec.map.trace(0, n)[start..start + 300];
            let b = &rec.map.trace(2, n)[start..start + 300];
            assert!((compute_ror(r, b).unwrap() - 0.5).abs() < 1e-3);
        }
    }
}

#[test]
fn breath_hold_windows_satisfy_the_calibration() {
    let p = SynthParams { n_rois: 2, drift_amp: 0.0, seed: 3, ..Default::default() };
    let rec = gen_subject(&p, 0).unwrap();
    let mut checked = 0;
    for start in (0..=170).map(|s| s as f64) {
        let values: Vec<f64> = (0..300).map(|i| spo2_profile(&p, start + i as f64 / 30.0)).collect();
        let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        if hi - lo >= 0.1 {
            continue;
        }
        let i0 = (start * 30.0) as usize;
        let ror = compute_ror(&rec.map.trace(0, 1)[i0..i0 + 300], &rec.map.trace(2, 1)[i0..i0 + 300]).unwrap();
        let mean = values.iter().sum::<f64>() / 300.0;
        assert!((p.a_star * ror + p.b_star - mean).abs() < 0.05, "t={start}");
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn components_match_generator_terms() {
    let p = clean(95.0, 3, 2);
    let rec = gen_subject(&p, 0).unwrap();
    let parts = split_dc_ac(&rec.map).unwrap();
    let t = rec.map.n_frames();
    let central = t / 10..t - t / 10;
    for c in 0..3 {
        for n in 0..3 {
            let x = rec.map.trace(c, n);
            // Without drift the DC level is the trace mean; the pulse is what is left.
            let level = x.iter().sum::<f64>() / t as f64;
            let pulse: Vec<f64> = x.iter().map(|v| v - level).collect();
            let dc = parts.dc.trace(c, n);
            assert!(central.clone().all(|i| (dc[i] - level).abs() < 0.01 * level));
            let ac = &parts.ac.trace(c, n)[central.clone()];
            let want = &pulse[central.clone()];
            // The second harmonic may sit above the pass band, so compare
            // amplitude and shape rather than samples.
            let ratio = rms(ac) / rms(want);
            assert!((0.9..=1.1).contains(&ratio), "c={c} n={n} ratio {ratio}");
            let corr = ac.iter().zip(want).map(|(a, b)| a * b).sum::<f64>() / (rms(ac) * rms(want) * ac.len() as f64);
            assert!(corr > 0.9, "c={c} n={n} corr {corr}");
        }
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let p = SynthParams { n_rois: 8, duration_s: 20.0, noise_sigma: 1e-4, seed: 7, ..Default::default() };
    assert_eq!(gen_subject(&p, 3).unwrap(), gen_subject(&p, 3).unwrap());
    assert_ne!(gen_subject(&p, 3).unwrap().map, gen_subject(&p, 4).unwrap().map);
    let other = SynthParams { seed: 8, ..p.clone() };
    assert_ne!(gen_subject(&p, 3).unwrap().map, gen_subject(&other, 3).unwrap().map);
}

#[test]
fn ror_is_invariant_to_roi_level_scaling() {
    let rec = gen_subject(&clean(93.0, 1, 4), 0).unwrap();
    let r: Vec<f64> = rec.map.trace(0, 0)[..300].to_vec();
    let b: Vec<f64> = rec.map.trace(2, 0)[..300].to_vec();
    let base = compute_ror(&r, &b).unwrap();
    for k in [0.3, 1.7, 12.0] {
        let rs: Vec<f64> = r.iter().map(|v| v * k).collect();
        let bs: Vec<f64> = b.iter().map(|v| v * k).collect();
        assert!((compute_ror(&rs, &b).unwrap() - base).abs() < 1e-9);
        assert!((compute_ror(&rs, &bs).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn small_noise_keeps_ror_within_envelope() {
    let mut sq = 0.0;
    for trial in 0..100 {
        let mut p = clean(95.0, 1, 1000 + trial);
        p.duration_s = 10.0;
        p.noise_sigma = 0.01 * p.blue_ac_amplitude();
        let rec = gen_subject(&p, 0).unwrap();
        let ror = compute_ror(rec.map.trace(0, 0), rec.map.trace(2, 0)).unwrap();
        sq += ((ror - 0.5) / 0.5).powi(2);
    }
    let rel_rms = (sq / 100.0).sqrt();
    eprintln!("RoR relative RMS deviation at 1% noise: {rel_rms:.4}");
    assert!(rel_rms < 0.05);
}

#[test]
fn profile_and_trace_agree() {
    let p = SynthParams { n_rois: 1, ..Default::default() };
    let rec = gen_subject(&p, 0).unwrap();
    assert_eq!(rec.spo2.values.len(), 180);
    assert_eq!(rec.spo2.duration_s(), rec.map.duration_s());
    for (k, v) in rec.spo2.values.iter().enumerate() {
        assert_eq!(*v, spo2_profile(&p, k as f64));
        assert!((85.0..=100.0).contains(v));
    }
    let min = (0..1800).map(|i| spo2_profile(&p, i as f64 / 10.0)).fold(f64::MAX, f64::min);
    assert!((min - (p.spo2_baseline - p.dip_depth)).abs() < 1e-9);
}

#[test]
fn rendering_leaves_background_black() {
    use spo2dcac::stmap::{make_grid, FaceRect};
    let rec = gen_subject(&SynthParams { duration_s: 1.0, ..Default::default() }, 0).unwrap();
    let face = FaceRect::new(5, 6, 32, 28).unwrap();
    let frames = render_frames(&rec.map, &make_grid(face, 14, 16).unwrap(), 48, 40).unwrap();
    assert_eq!(frames.frames.len(), 30);
    for f in &frames.frames {
        for y in 0..40 {
            for x in 0..48 {
                if !face.contains(x, y) {
                    assert_eq!(f.pixel(x, y), [0.0; 3]);
                }
            }
        }
    }
}

#[test]
fn invalid_calibration_is_a_parameter_error() {
    // b_star below the SpO2 range makes the target RoR non-positive.
    let p = SynthParams { b_star: 90.0, ..Default::default() };
    assert!(matches!(gen_subject(&p, 0), Err(spo2dcac::Error::Parameter(_))));
}
