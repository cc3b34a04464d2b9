//! Finite-difference gradient suite shared by the gradient tests and the
//! acceptance gate.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spo2dcac::models::*;
use spo2dcac::tensornet::gradcheck::{grad_check, grad_check_module, GradCheckReport};
use spo2dcac::tensornet::layers::Linear;
use spo2dcac::tensornet::ops::{self, ConvGeom};
use spo2dcac::tensornet::{Mmtm, Mode, Tensor};
use spo2dcac::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_POINTS: u64 = 10;
/// Small enough that the stencil rarely straddles a ReLU kink, large enough
/// to stay well above f64 round-off.
const H: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Conv2d,
    DepthwiseConv,
    BatchNorm,
    Linear,
    Gap,
    MmtmFuse,
    LossSpo2,
    LossEndToEnd,
    ModelFilter,
    ModelEnd2end,
}

impl Op {
    pub const ALL: [Op; 10] = [
        Op::Conv2d,
        Op::DepthwiseConv,
        Op::BatchNorm,
        Op::Linear,
        Op::Gap,
        Op::MmtmFuse,
        Op::LossSpo2,
        Op::LossEndToEnd,
        Op::ModelFilter,
        Op::ModelEnd2end,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Conv2d => "conv2d",
            Op::DepthwiseConv => "depthwise_conv",
            Op::BatchNorm => "batchnorm",
            Op::Linear => "linear",
            Op::Gap => "gap",
            Op::MmtmFuse => "mmtm_fuse",
            Op::LossSpo2 => "loss_spo2",
            Op::LossEndToEnd => "loss_end_to_end",
            Op::ModelFilter => "model(filter, [2,2,4,4])",
            Op::ModelEnd2end => "model(end2end, [2,2,4,4])",
        }
    }
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_vec(shape, v.to_vec()).unwrap()
}

/// Largest relative error of one operation at one seeded random point.
pub fn op_error(op: Op, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(op as u64));
    let report = match op {
        Op::Conv2d => {
            let (x, w, b) = (random(&[2, 3, 6, 7], &mut rng), random(&[4, 3, 3, 3], &mut rng), random(&[4], &mut rng));
            let geom = ConvGeom::new(2, 1);
            let y = ops::conv2d(&x, &w, Some(&b), geom)?;
            let r = random(y.shape(), &mut rng);
            let g = ops::conv2d_backward(&x, &w, &r, geom)?;
            let point = vec![x.data().to_vec(), w.data().to_vec(), b.data().to_vec()];
            let analytic = vec![g.dx.into_data(), g.dweight.into_data(), g.dbias];
            grad_check(&names(&["x", "weight", "bias"]), &point, &analytic, H, |p| {
                Ok(dot(&ops::conv2d(&t(x.shape(), &p[0]), &t(w.shape(), &p[1]), Some(&t(&[4], &p[2])), geom)?, r.data()))
            })?
        }
        Op::DepthwiseConv => {
            let (x, w, b) = (random(&[2, 3, 4, 20], &mut rng), random(&[3, 1, 1, 5], &mut rng), random(&[3], &mut rng));
            let geom = ConvGeom { stride: [1, 1], padding: [0, 2] };
            let y = ops::depthwise_conv(&x, &w, Some(&b), geom)?;
            let r = random(y.shape(), &mut rng);
            let g = ops::depthwise_conv_backward(&x, &w, &r, geom)?;
            let point = vec![x.data().to_vec(), w.data().to_vec(), b.data().to_vec()];
            let analytic = vec![g.dx.into_data(), g.dweight.into_data(), g.dbias];
            grad_check(&names(&["x", "weight", "bias"]), &point, &analytic, H, |p| {
                Ok(dot(&ops::depthwise_conv(&t(x.shape(), &p[0]), &t(w.shape(), &p[1]), Some(&t(&[3], &p[2])), geom)?, r.data()))
            })?
        }
        Op::BatchNorm => {
            let (x, gamma, beta) = (random(&[3, 4, 3, 5], &mut rng), random(&[4], &mut rng), random(&[4], &mut rng));
            let (y, cache) = ops::batchnorm_train(&x, &gamma, &beta)?;
            let r = random(y.shape(), &mut rng);
            let (dx, dg, db) = ops::batchnorm_backward(&r, &gamma, &cache)?;
            let point = vec![x.data().to_vec(), gamma.data().to_vec(), beta.data().to_vec()];
            let analytic = vec![dx.into_data(), dg, db];
            grad_check(&names(&["x", "gamma", "beta"]), &point, &analytic, H, |p| {
                Ok(dot(&ops::batchnorm_train(&t(x.shape(), &p[0]), &t(&[4], &p[1]), &t(&[4], &p[2]))?.0, r.data()))
            })?
        }
        Op::Linear => {
            let (x, w, b) = (random(&[5, 6], &mut rng), random(&[3, 6], &mut rng), random(&[3], &mut rng));
            let y = ops::linear(&x, &w, Some(&b))?;
            let r = random(y.shape(), &mut rng);
            let (dx, dw, db) = ops::linear_backward(&x, &w, &r)?;
            let point = vec![x.data().to_vec(), w.data().to_vec(), b.data().to_vec()];
            let analytic = vec![dx.into_data(), dw.into_data(), db];
            grad_check(&names(&["x", "weight", "bias"]), &point, &analytic, H, |p| {
                Ok(dot(&ops::linear(&t(x.shape(), &p[0]), &t(w.shape(), &p[1]), Some(&t(&[3], &p[2])))?, r.data()))
            })?
        }
        Op::Gap => {
            let x = random(&[2, 3, 4, 5], &mut rng);
            let r = random(&[2, 3], &mut rng);
            let dx = ops::gap_backward(x.shape(), &r)?;
            grad_check(&names(&["x"]), &[x.data().to_vec()], &[dx.into_data()], H, |p| Ok(dot(&ops::gap(&t(x.shape(), &p[0]))?, r.data())))?
        }
        Op::MmtmFuse => mmtm_report(&mut rng)?,
        Op::LossSpo2 => {
            let (y, gt) = (random(&[3, 10], &mut rng), random(&[3, 10], &mut rng));
            let (_, dy) = loss_spo2(&y, &gt)?;
            grad_check(&names(&["y_out"]), &[y.data().to_vec()], &[dy.into_data()], H, |p| Ok(loss_spo2(&t(y.shape(), &p[0]), &gt)?.0))?
        }
        Op::LossEndToEnd => {
            let shape = [2, 3, 2, 8];
            let pred = SpO2Prediction {
                y_out: random(&[2, 10], &mut rng),
                x_dc_hat: Some(random(&shape, &mut rng)),
                x_ac_hat: Some(random(&shape, &mut rng)),
            };
            let (gt, xd, xa) = (random(&[2, 10], &mut rng), random(&shape, &mut rng), random(&shape, &mut rng));
            let alpha = rng.gen_range(0.05..1.0);
            let (_, g) = loss_end_to_end(&pred, &gt, &xd, &xa, alpha)?;
            let point = vec![
                pred.y_out.data().to_vec(),
                pred.x_dc_hat.as_ref().unwrap().data().to_vec(),
                pred.x_ac_hat.as_ref().unwrap().data().to_vec(),
            ];
            let analytic = vec![g.dy.into_data(), g.d_dc_hat.into_data(), g.d_ac_hat.into_data()];
            grad_check(&names(&["y_out", "x_dc_hat", "x_ac_hat"]), &point, &analytic, H, |p| {
                let q = SpO2Prediction { y_out: t(&[2, 10], &p[0]), x_dc_hat: Some(t(&shape, &p[1])), x_ac_hat: Some(t(&shape, &p[2])) };
                Ok(loss_end_to_end(&q, &gt, &xd, &xa, alpha)?.0)
            })?
        }
        Op::ModelFilter => model_report(Variant::Filter, seed, &mut rng)?,
        Op::ModelEnd2end => model_report(Variant::End2end, seed, &mut rng)?,
    };
    Ok(report.max_rel_error())
}

fn randomize_linear(l: &mut Linear, rng: &mut ChaCha8Rng) {
    for v in l.weight.value.data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    for v in l.bias.value.data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
}

fn mmtm_report(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut m = Mmtm::new(3, 4, rng);
    // Move the gates off their identity start so every path carries gradient.
    randomize_linear(&mut m.excite_a, rng);
    randomize_linear(&mut m.excite_b, rng);
    let (a, b) = (random(&[2, 3, 3, 4], rng), random(&[2, 4, 3, 4], rng));
    let (a2, b2) = m.forward(&a, &b)?;
    let (ra, rb) = (random(a2.shape(), rng), random(b2.shape(), rng));
    let (da, db) = m.backward(&ra, &rb)?;
    let mut report = grad_check(&names(&["a", "b"]), &[a.data().to_vec(), b.data().to_vec()], &[da.into_data(), db.into_data()], H, |p| {
        let (a2, b2) = m.clone().forward(&t(a.shape(), &p[0]), &t(b.shape(), &p[1]))?;
        Ok(dot(&a2, ra.data()) + dot(&b2, rb.data()))
    })?;
    let params = grad_check_module(&mut m, H, |m, backward| {
        let (a2, b2) = m.forward(&a, &b)?;
        if backward {
            m.backward(&ra, &rb)?;
        }
        Ok(dot(&a2, ra.data()) + dot(&b2, rb.data()))
    })?;
    report.entries.extend(params.entries);
    Ok(report)
}

fn model_report(variant: Variant, seed: u64, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = ModelConfig { variant, stage_channels: vec![2, 2, 4, 4], dcac_kernel: 5, seed, ..Default::default() };
    let mut model = build_model(&cfg)?;
    if let Some(ms) = model.mmtm_mut() {
        for m in ms {
            randomize_linear(&mut m.excite_a, rng);
            randomize_linear(&mut m.excite_b, rng);
        }
    }
    let shape = [3, 3, 16, 64];
    let gt = Tensor::from_vec(&[3, 10], (0..30).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let loss: Box<dyn FnMut(&mut SpO2Net, bool) -> Result<f64>> = match variant {
        Variant::End2end => {
            let (x, xd, xa) = (random(&shape, rng), random(&shape, rng), random(&shape, rng));
            let alpha = cfg.alpha;
            Box::new(move |m: &mut SpO2Net, backward: bool| {
                let pred = m.forward(&ModelInput::Map(x.clone()), Mode::Train)?;
                let (l, g) = loss_end_to_end(&pred, &gt, &xd, &xa, alpha)?;
                if backward {
                    m.backward(&g.dy, Some(&g.d_dc_hat), Some(&g.d_ac_hat))?;
                }
                Ok(l)
            })
        }
        _ => {
            let input = ModelInput::Components { dc: random(&shape, rng), ac: random(&shape, rng) };
            Box::new(move |m: &mut SpO2Net, backward: bool| {
                let pred = m.forward(&input, Mode::Train)?;
                let (l, dy) = loss_spo2(&pred.y_out, &gt)?;
                if backward {
                    m.backward(&dy, None, None)?;
                }
                Ok(l)
            })
        }
    };
    let mut loss = loss;
    grad_check_module(&mut model, H, |m, b| loss(m, b))
}

/// Worst relative error of `op` over the seeded points.
pub fn worst_over_points(op: Op, points: u64) -> Result<f64> {
    (0..points).map(|s| op_error(op, s)).try_fold(0.0f64, |m, e| Ok(m.max(e?)))
}

