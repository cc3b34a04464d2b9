//! Functional forward and backward kernels.
//!
//! Image-like tensors are `(B, C, H, W)`; rank-3 `(C, H, W)` inputs are
//! accepted by the convolution kernels and treated as a batch of one.
//! Every reduction runs in a fixed order so results are bit-reproducible.

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Stride and zero padding of a 2-D convolution, `[rows, cols]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride: [stride, stride], padding: [padding, padding] }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_len(&self, axis: usize, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding[axis];
        if self.stride[axis] == 0 || kernel == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride[axis] + 1)
    }
}

struct Dims {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    rank3: bool,
}

fn image_dims(x: &Tensor, what: &str) -> Result<Dims> {
    match *x.shape() {
        [c, h, w] => Ok(Dims { batch: 1, channels: c, h, w, rank3: true }),
        [b, c, h, w] => Ok(Dims { batch: b, channels: c, h, w, rank3: false }),
        ref s => Err(shape_err!("{what}: expected (C,H,W) or (B,C,H,W), got {:?}", s)),
    }
}

fn image_shape(d: &Dims, c: usize, h: usize, w: usize) -> Vec<usize> {
    if d.rank3 {
        vec![c, h, w]
    } else {
        vec![d.batch, c, h, w]
    }
}

/// `c = alpha * a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers size `a`, `b` and `c` for the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let p = oh * ow;
    for c in 0..c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut cols[((c * kh + i) * kw + j) * p..][..p];
                for r in 0..oh {
                    let y = (r * sh + i) as isize - ph as isize;
                    let dst = &mut row[r * ow..(r + 1) * ow];
                    if y < 0 || y >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    for (q, d) in dst.iter_mut().enumerate() {
                        let xx = (q * sw + j) as isize - pw as isize;
                        *d = if xx < 0 || xx >= w as isize { 0.0 } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let p = oh * ow;
    for c in 0..c_in {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &cols[((c * kh + i) * kw + j) * p..][..p];
                for r in 0..oh {
                    let y = (r * sh + i) as isize - ph as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for (q, &v) in row[r * ow..(r + 1) * ow].iter().enumerate() {
                        let xx = (q * sw + j) as isize - pw as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

struct ConvPlan {
    d: Dims,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_plan(x: &Tensor, weight: &Tensor, geom: ConvGeom, depthwise: bool) -> Result<ConvPlan> {
    let name = if depthwise { "depthwise_conv" } else { "conv2d" };
    let d = image_dims(x, name)?;
    let [c_out, c_w, kh, kw] = *weight.shape() else {
        return Err(shape_err!("{name}: weight must be rank 4, got {:?}", weight.shape()));
    };
    if depthwise {
        if c_w != 1 || c_out != d.channels {
            return Err(shape_err!(
                "depthwise_conv: weight {:?} needs (C=1x{},1,kh,kw) for input channels",
                weight.shape(),
                d.channels
            ));
        }
    } else if c_w != d.channels {
        return Err(shape_err!(
            "conv2d: channel axis mismatch, input has {} but weight expects {}",
            d.channels,
            c_w
        ));
    }
    let oh = geom
        .out_len(0, d.h, kh)
        .ok_or_else(|| shape_err!("{name}: kernel height {kh} does not fit H={} with padding {}", d.h, geom.padding[0]))?;
    let ow = geom
        .out_len(1, d.w, kw)
        .ok_or_else(|| shape_err!("{name}: kernel width {kw} does not fit W={} with padding {}", d.w, geom.padding[1]))?;
    Ok(ConvPlan { d, c_out, kh, kw, oh, ow })
}

fn check_bias(bias: Option<&Tensor>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != c_out => Err(shape_err!("bias has {} entries, expected {}", b.len(), c_out)),
        _ => Ok(()),
    }
}

/// 2-D cross-correlation, `weight: (C_out, C_in, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeom) -> Result<Tensor> {
    let pl = conv_plan(x, weight, geom, false)?;
    check_bias(bias, pl.c_out)?;
    let ConvPlan { ref d, c_out, kh, kw, oh, ow } = pl;
    let k = d.channels * kh * kw;
    let p = oh * ow;
    let mut cols = vec![0.0; k * p];
    let mut out = vec![0.0; d.batch * c_out * p];
    let in_len = d.channels * d.h * d.w;
    for b in 0..d.batch {
        im2col(&x.data()[b * in_len..(b + 1) * in_len], d.channels, d.h, d.w, kh, kw, geom, oh, ow, &mut cols);
        let y = &mut out[b * c_out * p..(b + 1) * c_out * p];
        if let Some(bias) = bias {
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.fill(bias.data()[o]);
            }
        }
        gemm(c_out, k, p, weight.data(), (k as isize, 1), &cols, (p as isize, 1), 1.0, y);
    }
    Tensor::from_vec(&image_shape(d, c_out, oh, ow), out)
}

/// Gradients of a convolution with respect to its input, weight and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dweight: Tensor,
    pub dbias: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor, weight: &Tensor, dy: &Tensor, geom: ConvGeom) -> Result<ConvGrads> {
    let pl = conv_plan(x, weight, geom, false)?;
    let ConvPlan { ref d, c_out, kh, kw, oh, ow } = pl;
    if dy.shape() != image_shape(d, c_out, oh, ow).as_slice() {
        return Err(shape_err!("conv2d_backward: dy {:?} does not match output", dy.shape()));
    }
    let k = d.channels * kh * kw;
    let p = oh * ow;
    let in_len = d.channels * d.h * d.w;
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut dbias = vec![0.0; c_out];
    for b in 0..d.batch {
        let g = &dy.data()[b * c_out * p..(b + 1) * c_out * p];
        for (o, row) in g.chunks(p).enumerate() {
            dbias[o] += row.iter().sum::<f64>();
        }
        im2col(&x.data()[b * in_len..(b + 1) * in_len], d.channels, d.h, d.w, kh, kw, geom, oh, ow, &mut cols);
        // dW += dY * cols^T
        gemm(c_out, p, k, g, (p as isize, 1), &cols, (1, p as isize), 1.0, &mut dw);
        // dcols = W^T * dY
        gemm(k, c_out, p, weight.data(), (1, k as isize), g, (p as isize, 1), 0.0, &mut dcols);
        col2im(&dcols, d.channels, d.h, d.w, kh, kw, geom, oh, ow, &mut dx[b * in_len..(b + 1) * in_len]);
    }
    Ok(ConvGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dweight: Tensor::from_vec(weight.shape(), dw)?,
        dbias,
    })
}

/// Channel-independent convolution, `weight: (C, 1, kh, kw)`.
pub fn depthwise_conv(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeom) -> Result<Tensor> {
    let pl = conv_plan(x, weight, geom, true)?;
    check_bias(bias, pl.c_out)?;
    let ConvPlan { ref d, c_out, kh, kw, oh, ow } = pl;
    let mut out = vec![0.0; d.batch * c_out * oh * ow];
    for b in 0..d.batch {
        for c in 0..c_out {
            let plane = &x.data()[((b * c_out + c) * d.h * d.w)..][..d.h * d.w];
            let kern = &weight.data()[c * kh * kw..(c + 1) * kh * kw];
            let y = &mut out[((b * c_out + c) * oh * ow)..][..oh * ow];
            if let Some(bias) = bias {
                y.fill(bias.data()[c]);
            }
            depthwise_plane(plane, d.h, d.w, kern, kh, kw, geom, oh, ow, y);
        }
    }
    Tensor::from_vec(&image_shape(d, c_out, oh, ow), out)
}

#[allow(clippy::too_many_arguments)]
fn depthwise_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    kern: &[f64],
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    oh: usize,
    ow: usize,
    y: &mut [f64],
) {
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    for r in 0..oh {
        let out_row = &mut y[r * ow..(r + 1) * ow];
        for i in 0..kh {
            let yy = (r * sh + i) as isize - ph as isize;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            let src = &plane[yy as usize * w..(yy as usize + 1) * w];
            for j in 0..kw {
                let wv = kern[i * kw + j];
                let (q0, q1) = valid_outputs(j, sw, pw, w, ow);
                if q0 >= q1 {
                    continue;
                }
                let x0 = q0 * sw + j - pw;
                if sw == 1 {
                    for (o, xv) in out_row[q0..q1].iter_mut().zip(&src[x0..x0 + (q1 - q0)]) {
                        *o += wv * xv;
                    }
                } else {
                    for (k, o) in out_row[q0..q1].iter_mut().enumerate() {
                        *o += wv * src[x0 + k * sw];
                    }
                }
            }
        }
    }
}

/// Output columns `q0..q1` whose input column `q * stride + j - pad` lies in `0..w`.
fn valid_outputs(j: usize, stride: usize, pad: usize, w: usize, ow: usize) -> (usize, usize) {
    let q0 = pad.saturating_sub(j).div_ceil(stride);
    let q1 = if w + pad > j { (w + pad - j).div_ceil(stride).min(ow) } else { 0 };
    (q0, q1.max(q0))
}

pub fn depthwise_conv_backward(x: &Tensor, weight: &Tensor, dy: &Tensor, geom: ConvGeom) -> Result<ConvGrads> {
    let pl = conv_plan(x, weight, geom, true)?;
    let ConvPlan { ref d, c_out, kh, kw, oh, ow } = pl;
    if dy.shape() != image_shape(d, c_out, oh, ow).as_slice() {
        return Err(shape_err!("depthwise_conv_backward: dy {:?} does not match output", dy.shape()));
    }
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.padding;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut dbias = vec![0.0; c_out];
    for b in 0..d.batch {
        for c in 0..c_out {
            let base = (b * c_out + c) * d.h * d.w;
            let plane = &x.data()[base..base + d.h * d.w];
            let dplane = &mut dx[base..base + d.h * d.w];
            let kern = &weight.data()[c * kh * kw..(c + 1) * kh * kw];
            let dkern = &mut dw[c * kh * kw..(c + 1) * kh * kw];
            let g = &dy.data()[((b * c_out + c) * oh * ow)..][..oh * ow];
            dbias[c] += g.iter().sum::<f64>();
            for r in 0..oh {
                let g_row = &g[r * ow..(r + 1) * ow];
                for i in 0..kh {
                    let yy = (r * sh + i) as isize - ph as isize;
                    if yy < 0 || yy >= d.h as isize {
                        continue;
                    }
                    let row_off = yy as usize * d.w;
                    for j in 0..kw {
                        let wv = kern[i * kw + j];
                        let (q0, q1) = valid_outputs(j, sw, pw, d.w, ow);
                        if q0 >= q1 {
                            continue;
                        }
                        let x0 = row_off + q0 * sw + j - pw;
                        let mut acc = 0.0;
                        if sw == 1 {
                            let n = q1 - q0;
                            for ((&gv, &xv), dxv) in g_row[q0..q1].iter().zip(&plane[x0..x0 + n]).zip(&mut dplane[x0..x0 + n]) {
                                acc += gv * xv;
                                *dxv += gv * wv;
                            }
                        } else {
                            for (k, &gv) in g_row[q0..q1].iter().enumerate() {
                                acc += gv * plane[x0 + k * sw];
                                dplane[x0 + k * sw] += gv * wv;
                            }
                        }
                        dkern[i * kw + j] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dweight: Tensor::from_vec(weight.shape(), dw)?,
        dbias,
    })
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved statistics of a training-mode batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn bn_dims(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (b, c, hw) = match *x.shape() {
        [b, c, h, w] => (b, c, h * w),
        [b, c] => (b, c, 1),
        ref s => return Err(shape_err!("batchnorm: expected (B,C,H,W) or (B,C), got {:?}", s)),
    };
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err!("batchnorm: gamma/beta need {} entries", c));
    }
    Ok((b, c, hw))
}

/// Batch normalization with batch statistics (population variance, `eps = 1e-5`).
pub fn batchnorm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, BatchNormCache)> {
    let (b, c, hw) = bn_dims(x, gamma, beta)?;
    if b < 2 {
        return Err(Error::BatchSize(format!("batchnorm in train mode needs batch >= 2, got {b}")));
    }
    let m = (b * hw) as f64;
    let xs = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for n in 0..b {
            s += xs[(n * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for n in 0..b {
            v += xs[(n * c + ch) * hw..][..hw].iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for n in 0..b {
        for ch in 0..c {
            let off = (n * c + ch) * hw;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let h = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = g * h + bt;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), y)?,
        BatchNormCache { xhat: Tensor::from_vec(x.shape(), xhat)?, inv_std, mean, var },
    ))
}

/// Batch normalization with fixed (running) statistics.
pub fn batchnorm_eval(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], var: &[f64]) -> Result<Tensor> {
    let (b, c, hw) = bn_dims(x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(shape_err!("batchnorm: running stats need {} entries", c));
    }
    let mut y = x.data().to_vec();
    for n in 0..b {
        for ch in 0..c {
            let s = gamma.data()[ch] / (var[ch] + BN_EPS).sqrt();
            let t = beta.data()[ch] - mean[ch] * s;
            for v in &mut y[(n * c + ch) * hw..][..hw] {
                *v = *v * s + t;
            }
        }
    }
    Tensor::from_vec(x.shape(), y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(dy: &Tensor, gamma: &Tensor, cache: &BatchNormCache) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if dy.shape() != cache.xhat.shape() {
        return Err(shape_err!("batchnorm_backward: dy {:?} vs {:?}", dy.shape(), cache.xhat.shape()));
    }
    let (b, c, hw) = bn_dims(dy, gamma, gamma)?;
    let m = (b * hw) as f64;
    let g = dy.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..b {
        for ch in 0..c {
            let off = (n * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for n in 0..b {
        for ch in 0..c {
            let off = (n * c + ch) * hw;
            let k = gamma.data()[ch] * cache.inv_std[ch] / m;
            for i in off..off + hw {
                dx[i] = k * (m * g[i] - dbeta[ch] - xh[i] * dgamma[ch]);
            }
        }
    }
    Ok((Tensor::from_vec(dy.shape(), dx)?, dgamma, dbeta))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Takes the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut out = dy.clone();
    for (g, &s) in out.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (1.0 - s);
    }
    out
}

fn linear_dims(x: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let [out_f, in_f] = *weight.shape() else {
        return Err(shape_err!("linear: weight must be (out, in), got {:?}", weight.shape()));
    };
    let (batch, xin) = match *x.shape() {
        [n] => (1, n),
        [b, n] => (b, n),
        ref s => return Err(shape_err!("linear: input must be (in) or (B, in), got {:?}", s)),
    };
    if xin != in_f {
        return Err(shape_err!("linear: feature axis {} vs weight in-features {}", xin, in_f));
    }
    Ok((batch, in_f, out_f))
}

/// `y = x W^T + b` for `x: (B, in)` and `W: (out, in)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (batch, in_f, out_f) = linear_dims(x, weight)?;
    check_bias(bias, out_f)?;
    let mut y = vec![0.0; batch * out_f];
    if let Some(b) = bias {
        for row in y.chunks_mut(out_f) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(batch, in_f, out_f, x.data(), (in_f as isize, 1), weight.data(), (1, in_f as isize), 1.0, &mut y);
    let shape = if x.rank() == 1 { vec![out_f] } else { vec![batch, out_f] };
    Tensor::from_vec(&shape, y)
}

/// Returns `(dx, dweight, dbias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (batch, in_f, out_f) = linear_dims(x, weight)?;
    if dy.len() != batch * out_f {
        return Err(shape_err!("linear_backward: dy {:?}", dy.shape()));
    }
    let mut dx = vec![0.0; batch * in_f];
    let mut dw = vec![0.0; out_f * in_f];
    let mut db = vec![0.0; out_f];
    for row in dy.data().chunks(out_f) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    gemm(batch, out_f, in_f, dy.data(), (out_f as isize, 1), weight.data(), (in_f as isize, 1), 0.0, &mut dx);
    gemm(out_f, batch, in_f, dy.data(), (1, out_f as isize), x.data(), (in_f as isize, 1), 0.0, &mut dw);
    Ok((Tensor::from_vec(x.shape(), dx)?, Tensor::from_vec(weight.shape(), dw)?, db))
}

/// Global average pooling: spatial mean per channel, `(B,C,H,W) -> (B,C)`.
pub fn gap(x: &Tensor) -> Result<Tensor> {
    let d = image_dims(x, "gap")?;
    let hw = d.h * d.w;
    if hw == 0 {
        return Err(shape_err!("gap: empty spatial extent"));
    }
    let data = x.data().chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    let shape = if d.rank3 { vec![d.channels] } else { vec![d.batch, d.channels] };
    Tensor::from_vec(&shape, data)
}

pub fn gap_backward(x_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let hw: usize = x_shape[x_shape.len() - 2..].iter().product();
    let n: usize = x_shape.iter().product();
    if dy.len() * hw != n {
        return Err(shape_err!("gap_backward: dy {:?} vs input {:?}", dy.shape(), x_shape));
    }
    let mut dx = Vec::with_capacity(n);
    for &g in dy.data() {
        dx.extend(std::iter::repeat(g / hw as f64).take(hw));
    }
    Tensor::from_vec(x_shape, dx)
}
