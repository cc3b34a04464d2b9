//! Stateful layers: parameters, cached activations and backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, BatchNormCache, ConvGeom};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor plus its Adam moments.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) step: u64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let mut value = value;
        value.set_requires_grad(true);
        let n = value.len();
        Self { value, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    /// He-uniform initialization, bound `sqrt(6 / fan_in)`.
    pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::new(Tensor::from_vec(shape, data).expect("sized by shape"))
    }

    pub fn grad(&self) -> &[f64] {
        self.value.grad().expect("parameters always carry a gradient buffer")
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub(crate) fn accumulate(&mut self, g: &[f64]) {
        for (a, b) in self.value.grad_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// What a [`Module`] exposes to visitors: trainable parameters or
/// non-trainable state such as running statistics.
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Tensor),
}

pub trait Module {
    /// Calls `f` on every parameter and buffer with a dotted path name, in a fixed order.
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn zero_grad<M: Module + ?Sized>(m: &mut M) {
    m.visit("", &mut |_, s| {
        if let Slot::Param(p) = s {
            p.value.zero_grad();
        }
    });
}

pub fn param_count<M: Module + ?Sized>(m: &mut M) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, s| {
        if let Slot::Param(p) = s {
            n += p.value.len();
        }
    });
    n
}

/// Named snapshot of every parameter and buffer value.
pub fn state_dict<M: Module + ?Sized>(m: &mut M) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, s| {
        let t = match s {
            Slot::Param(p) => Tensor::from_vec(p.value.shape(), p.value.data().to_vec()),
            Slot::Buffer(b) => Tensor::from_vec(b.shape(), b.data().to_vec()),
        };
        out.push((name.to_string(), t.expect("same shape")));
    });
    out
}

/// Restores values saved by [`state_dict`]; names and shapes must match exactly.
pub fn load_state_dict<M: Module + ?Sized>(m: &mut M, state: &[(String, Tensor)]) -> Result<()> {
    let mut i = 0;
    let mut err = None;
    m.visit("", &mut |name, s| {
        if err.is_some() {
            return;
        }
        let Some((n, t)) = state.get(i) else {
            err = Some(Error::Format(format!("state is missing entry {name}")));
            return;
        };
        i += 1;
        let dst = match s {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => b,
        };
        if n != name || t.shape() != dst.shape() {
            err = Some(Error::Format(format!("state entry {n} {:?} does not match {name} {:?}", t.shape(), dst.shape())));
            return;
        }
        dst.data_mut().copy_from_slice(t.data());
    });
    if let Some(e) = err {
        return Err(e);
    }
    if i != state.len() {
        return Err(Error::Format(format!("state has {} entries, module has {}", state.len(), i)));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geom: ConvGeom,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, kernel: [usize; 2], geom: ConvGeom, bias: bool, rng: &mut impl Rng) -> Self {
        let fan_in = c_in * kernel[0] * kernel[1];
        Self {
            weight: Param::he_uniform(&[c_out, c_in, kernel[0], kernel[1]], fan_in, rng),
            bias: bias.then(|| Param::zeros(&[c_out])),
            geom,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::conv2d(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.geom)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| shape_err!("conv2d backward before forward"))?;
        let g = ops::conv2d_backward(x, &self.weight.value, dy, self.geom)?;
        self.weight.accumulate(g.dweight.data());
        if let Some(b) = self.bias.as_mut() {
            b.accumulate(&g.dbias);
        }
        Ok(g.dx)
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = self.bias.as_mut() {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}

#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geom: ConvGeom,
    input: Option<Tensor>,
}

impl DepthwiseConv2d {
    pub fn new(channels: usize, kernel: [usize; 2], geom: ConvGeom, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::he_uniform(&[channels, 1, kernel[0], kernel[1]], kernel[0] * kernel[1], rng),
            bias: bias.then(|| Param::zeros(&[channels])),
            geom,
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::depthwise_conv(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.geom)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| shape_err!("depthwise backward before forward"))?;
        let g = ops::depthwise_conv_backward(x, &self.weight.value, dy, self.geom)?;
        self.weight.accumulate(g.dweight.data());
        if let Some(b) = self.bias.as_mut() {
            b.accumulate(&g.dbias);
        }
        Ok(g.dx)
    }
}

impl Module for DepthwiseConv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = self.bias.as_mut() {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}

#[derive(Clone, Debug)]
enum BnCache {
    Train(BatchNormCache),
    Eval,
}

/// Per-channel batch normalization with running statistics (momentum 0.1).
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let (y, cache) = ops::batchnorm_train(x, &self.gamma.value, &self.beta.value)?;
                let k = ops::BN_MOMENTUM;
                for (r, m) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
                    *r = (1.0 - k) * *r + k * m;
                }
                for (r, v) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
                    *r = (1.0 - k) * *r + k * v;
                }
                self.cache = Some(BnCache::Train(cache));
                Ok(y)
            }
            Mode::Eval => {
                self.cache = Some(BnCache::Eval);
                ops::batchnorm_eval(x, &self.gamma.value, &self.beta.value, self.running_mean.data(), self.running_var.data())
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self.cache.as_ref().ok_or_else(|| shape_err!("batchnorm backward before forward"))? {
            BnCache::Train(cache) => {
                let (dx, dg, db) = ops::batchnorm_backward(dy, &self.gamma.value, cache)?;
                self.gamma.accumulate(&dg);
                self.beta.accumulate(&db);
                Ok(dx)
            }
            BnCache::Eval => {
                // Affine map with frozen statistics; gamma/beta gradients are not needed here.
                let c = self.gamma.value.len();
                let hw = dy.len() / (dy.shape()[0] * c);
                let mut dx = dy.clone();
                for (i, v) in dx.data_mut().iter_mut().enumerate() {
                    let ch = (i / hw) % c;
                    *v *= self.gamma.value.data()[ch] / (self.running_var.data()[ch] + ops::BN_EPS).sqrt();
                }
                Ok(dx)
            }
        }
    }
}

impl Module for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        Self { weight: Param::he_uniform(&[out_f, in_f], in_f, rng), bias: Param::zeros(&[out_f]), input: None }
    }

    pub fn zeros(in_f: usize, out_f: usize) -> Self {
        Self { weight: Param::zeros(&[out_f, in_f]), bias: Param::zeros(&[out_f]), input: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::linear(x, &self.weight.value, Some(&self.bias.value))?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| shape_err!("linear backward before forward"))?;
        let (dx, dw, db) = ops::linear_backward(x, &self.weight.value, dy)?;
        self.weight.accumulate(dw.data());
        self.bias.accumulate(&db);
        Ok(dx)
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

#[derive(Clone, Debug)]
struct MmtmCache {
    a: Tensor,
    b: Tensor,
    zpre: Tensor,
    gate_a: Tensor,
    gate_b: Tensor,
}

/// Squeeze-and-excitation style exchange between two feature maps.
///
/// Both inputs are squeezed by global average pooling, a joint vector of
/// width `ceil((C_a + C_b) / 4)` is formed, and each branch is rescaled per
/// channel by `2 * sigmoid(.)` of its own excitation. Gate layers start at
/// zero so a fresh module is the identity.
#[derive(Clone, Debug)]
pub struct Mmtm {
    pub squeeze: Linear,
    pub excite_a: Linear,
    pub excite_b: Linear,
    cache: Option<MmtmCache>,
}

impl Mmtm {
    pub fn joint_dim(c_a: usize, c_b: usize) -> usize {
        (c_a + c_b).div_ceil(4)
    }

    pub fn new(c_a: usize, c_b: usize, rng: &mut impl Rng) -> Self {
        let cz = Self::joint_dim(c_a, c_b);
        Self { squeeze: Linear::new(c_a + c_b, cz, rng), excite_a: Linear::zeros(cz, c_a), excite_b: Linear::zeros(cz, c_b), cache: None }
    }

    pub fn forward(&mut self, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
        if a.rank() != 4 || b.rank() != 4 || a.shape()[0] != b.shape()[0] {
            return Err(shape_err!("mmtm: inputs {:?} and {:?} must be (B,C,H,W) with equal B", a.shape(), b.shape()));
        }
        let (ca, cb) = (a.shape()[1], b.shape()[1]);
        if self.excite_a.weight.value.shape()[0] != ca || self.excite_b.weight.value.shape()[0] != cb {
            return Err(shape_err!("mmtm: parameters built for other channel counts than {ca}/{cb}"));
        }
        let sa = ops::gap(a)?;
        let sb = ops::gap(b)?;
        let s = concat_features(&sa, &sb)?;
        let zpre = self.squeeze.forward(&s)?;
        let z = ops::relu(&zpre);
        let gate_a = ops::sigmoid(&self.excite_a.forward(&z)?).scale(2.0);
        let gate_b = ops::sigmoid(&self.excite_b.forward(&z)?).scale(2.0);
        let a2 = apply_gate(a, &gate_a);
        let b2 = apply_gate(b, &gate_b);
        self.cache = Some(MmtmCache { a: a.clone(), b: b.clone(), zpre, gate_a, gate_b });
        Ok((a2, b2))
    }

    pub fn backward(&mut self, da2: &Tensor, db2: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = self.cache.take().ok_or_else(|| shape_err!("mmtm backward before forward"))?;
        let (mut da, dga) = gate_backward(&c.a, &c.gate_a, da2);
        let (mut db, dgb) = gate_backward(&c.b, &c.gate_b, db2);
        // d(2 sigmoid(u))/du = g (1 - g/2)
        let dua = Tensor::from_vec(dga.shape(), dga.data().iter().zip(c.gate_a.data()).map(|(d, g)| d * g * (1.0 - g / 2.0)).collect())?;
        let dub = Tensor::from_vec(dgb.shape(), dgb.data().iter().zip(c.gate_b.data()).map(|(d, g)| d * g * (1.0 - g / 2.0)).collect())?;
        let dz = self.excite_a.backward(&dua)?.add(&self.excite_b.backward(&dub)?)?;
        let dzpre = ops::relu_backward(&c.zpre, &dz);
        let ds = self.squeeze.backward(&dzpre)?;
        let ca = c.a.shape()[1];
        let batch = c.a.shape()[0];
        let width = ds.shape()[1];
        let mut dsa = Vec::with_capacity(batch * ca);
        let mut dsb = Vec::with_capacity(batch * (width - ca));
        for row in ds.data().chunks(width) {
            dsa.extend_from_slice(&row[..ca]);
            dsb.extend_from_slice(&row[ca..]);
        }
        let ga = ops::gap_backward(c.a.shape(), &Tensor::from_vec(&[batch, ca], dsa)?)?;
        let gb = ops::gap_backward(c.b.shape(), &Tensor::from_vec(&[batch, width - ca], dsb)?)?;
        for (d, g) in da.data_mut().iter_mut().zip(ga.data()) {
            *d += g;
        }
        for (d, g) in db.data_mut().iter_mut().zip(gb.data()) {
            *d += g;
        }
        Ok((da, db))
    }

    /// Gates from the most recent forward pass, `(B, C_a)` and `(B, C_b)`.
    pub fn last_gates(&self) -> Option<(&Tensor, &Tensor)> {
        self.cache.as_ref().map(|c| (&c.gate_a, &c.gate_b))
    }
}

impl Module for Mmtm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.squeeze.visit(&join(prefix, "squeeze"), f);
        self.excite_a.visit(&join(prefix, "excite_a"), f);
        self.excite_b.visit(&join(prefix, "excite_b"), f);
    }
}

/// Row-wise concatenation of `(B, n)` and `(B, m)` feature matrices.
pub fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (Some(&ba), Some(&bb)) = (a.shape().first(), b.shape().first()) else {
        return Err(shape_err!("concat_features: empty shapes"));
    };
    if a.rank() != 2 || b.rank() != 2 || ba != bb {
        return Err(shape_err!("concat_features: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (na, nb) = (a.shape()[1], b.shape()[1]);
    let mut data = Vec::with_capacity(ba * (na + nb));
    for i in 0..ba {
        data.extend_from_slice(&a.data()[i * na..(i + 1) * na]);
        data.extend_from_slice(&b.data()[i * nb..(i + 1) * nb]);
    }
    Tensor::from_vec(&[ba, na + nb], data)
}

fn apply_gate(x: &Tensor, gate: &Tensor) -> Tensor {
    let hw = x.shape()[2] * x.shape()[3];
    let mut out = x.clone();
    for (plane, &g) in out.data_mut().chunks_mut(hw).zip(gate.data()) {
        for v in plane {
            *v *= g;
        }
    }
    out
}

/// Returns `(dx, dgate)` for `y = x * gate` broadcast over space.
fn gate_backward(x: &Tensor, gate: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let hw = x.shape()[2] * x.shape()[3];
    let mut dx = dy.clone();
    let mut dg = Tensor::zeros(gate.shape());
    for (i, ((dplane, xplane), &g)) in dx.data_mut().chunks_mut(hw).zip(x.data().chunks(hw)).zip(gate.data()).enumerate() {
        let mut acc = 0.0;
        for (d, &xv) in dplane.iter_mut().zip(xplane) {
            acc += *d * xv;
            *d *= g;
        }
        dg.data_mut()[i] = acc;
    }
    (dx, dg)
}
