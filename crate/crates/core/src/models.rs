//! The four estimator variants and their training losses.
//!
//! | variant   | input                        | body                                   |
//! |-----------|------------------------------|----------------------------------------|
//! | `plain`   | map `X` (3 ch)               | one residual branch                    |
//! | `early`   | `concat(X_DC, X_AC)` (6 ch)  | one residual branch                    |
//! | `filter`  | `X_DC`, `X_AC`               | two branches, MMTM after every stage   |
//! | `end2end` | map `X`                      | learned DC/AC heads, then as `filter`  |
//!
//! A branch is a strided 3x3 stem followed by four residual stages; the
//! pooled branch features are concatenated and mapped to `d_spo2` outputs
//! by one linear layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensornet::layers::{concat_features, join};
use crate::tensornet::{ops, BatchNorm2d, Conv2d, ConvGeom, DepthwiseConv2d, Linear, Mmtm, Mode, Module, Slot, Tensor};
use crate::tensornet::{mse_loss, negcorr_loss};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Early,
    Filter,
    End2end,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Plain, Variant::Early, Variant::Filter, Variant::End2end];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Early => "early",
            Variant::Filter => "filter",
            Variant::End2end => "end2end",
        }
    }

    /// Whether the variant consumes filtered DC/AC maps rather than the raw map.
    pub fn uses_components(&self) -> bool {
        matches!(self, Variant::Early | Variant::Filter)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stage_channels: Vec<usize>,
    pub stem_stride: usize,
    pub d_spo2: usize,
    pub alpha: f64,
    pub dcac_kernel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { variant: Variant::Filter, stage_channels: vec![8, 16, 32, 64], stem_stride: 2, d_spo2: 10, alpha: 0.1, dcac_kernel: 31, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return bad(format!("stage_channels must hold 4 positive widths, got {:?}", self.stage_channels));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.d_spo2 < 2 {
            return bad(format!("d_spo2 must be >= 2, got {}", self.d_spo2));
        }
        if self.stem_stride == 0 {
            return bad("stem_stride must be >= 1".into());
        }
        if self.dcac_kernel == 0 || self.dcac_kernel % 2 == 0 {
            return bad(format!("dcac_kernel must be odd, got {}", self.dcac_kernel));
        }
        Ok(())
    }
}

fn conv3x3(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Conv2d {
    Conv2d::new(c_in, c_out, [3, 3], ConvGeom::new(stride, 1), false, rng)
}

/// Two 3x3 conv/BN layers with an identity or 1x1 projection shortcut.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    pre1: Option<Tensor>,
    pre_out: Option<Tensor>,
}

impl ResBlock {
    fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = (stride != 1 || c_in != c_out)
            .then(|| (Conv2d::new(c_in, c_out, [1, 1], ConvGeom::new(stride, 0), false, rng), BatchNorm2d::new(c_out)));
        Self {
            conv1: conv3x3(c_in, c_out, stride, rng),
            bn1: BatchNorm2d::new(c_out),
            conv2: conv3x3(c_out, c_out, 1, rng),
            bn2: BatchNorm2d::new(c_out),
            shortcut,
            pre1: None,
            pre_out: None,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, mode)?;
        let a = ops::relu(&h);
        self.pre1 = Some(h);
        let h2 = self.bn2.forward(&self.conv2.forward(&a)?, mode)?;
        let s = match self.shortcut.as_mut() {
            Some((c, bn)) => bn.forward(&c.forward(x)?, mode)?,
            None => x.clone(),
        };
        let o = h2.add(&s)?;
        let out = ops::relu(&o);
        self.pre_out = Some(o);
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let o = self.pre_out.take().ok_or_else(|| shape_err!("resblock backward before forward"))?;
        let d = ops::relu_backward(&o, dy);
        let g = self.conv2.backward(&self.bn2.backward(&d)?)?;
        let h = self.pre1.take().ok_or_else(|| shape_err!("resblock backward before forward"))?;
        let g = ops::relu_backward(&h, &g);
        let dx = self.conv1.backward(&self.bn1.backward(&g)?)?;
        let ds = match self.shortcut.as_mut() {
            Some((c, bn)) => c.backward(&bn.backward(&d)?)?,
            None => d,
        };
        dx.add(&ds)
    }
}

impl Module for ResBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((c, bn)) = self.shortcut.as_mut() {
            c.visit(&join(prefix, "shortcut.conv"), f);
            bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }
}

/// Stem plus four residual stages (stride 2 at stages 2-4).
#[derive(Clone, Debug)]
pub struct Branch {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<ResBlock>,
    stem_pre: Option<Tensor>,
}

impl Branch {
    fn new(c_in: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let ch = &cfg.stage_channels;
        let stem = conv3x3(c_in, ch[0], cfg.stem_stride, rng);
        let stages = (0..4).map(|i| ResBlock::new(if i == 0 { ch[0] } else { ch[i - 1] }, ch[i], if i == 0 { 1 } else { 2 }, rng)).collect();
        Self { stem, stem_bn: BatchNorm2d::new(ch[0]), stages, stem_pre: None }
    }

    fn forward_stem(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.stem_bn.forward(&self.stem.forward(x)?, mode)?;
        let a = ops::relu(&h);
        self.stem_pre = Some(h);
        Ok(a)
    }

    fn backward_stem(&mut self, dy: &Tensor) -> Result<Tensor> {
        let h = self.stem_pre.take().ok_or_else(|| shape_err!("stem backward before forward"))?;
        self.stem.backward(&self.stem_bn.backward(&ops::relu_backward(&h, dy))?)
    }
}

impl Module for Branch {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.stem.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit(&join(prefix, &format!("stages.{i}")), f);
        }
    }
}

/// Depthwise temporal conv, BN, ReLU, then a linear depthwise temporal conv.
#[derive(Clone, Debug)]
pub struct DcAcHead {
    pub conv1: DepthwiseConv2d,
    pub bn: BatchNorm2d,
    pub conv2: DepthwiseConv2d,
    pre: Option<Tensor>,
}

impl DcAcHead {
    fn new(kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let geom = ConvGeom { stride: [1, 1], padding: [0, kernel / 2] };
        Self {
            conv1: DepthwiseConv2d::new(3, [1, kernel], geom, false, rng),
            bn: BatchNorm2d::new(3),
            conv2: DepthwiseConv2d::new(3, [1, kernel], geom, true, rng),
            pre: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn.forward(&self.conv1.forward(x)?, mode)?;
        let a = ops::relu(&h);
        self.pre = Some(h);
        self.conv2.forward(&a)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let g = self.conv2.backward(dy)?;
        let h = self.pre.take().ok_or_else(|| shape_err!("dc/ac head backward before forward"))?;
        self.conv1.backward(&self.bn.backward(&ops::relu_backward(&h, &g))?)
    }
}

impl Module for DcAcHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

/// What a forward pass consumes; `(B, 3, N, T)` tensors.
#[derive(Clone, Debug)]
pub enum ModelInput {
    Map(Tensor),
    Components { dc: Tensor, ac: Tensor },
}

#[derive(Clone, Debug)]
pub struct SpO2Prediction {
    /// `(B, d_spo2)` in scaled units.
    pub y_out: Tensor,
    pub x_dc_hat: Option<Tensor>,
    pub x_ac_hat: Option<Tensor>,
}

#[derive(Clone, Debug)]
struct DualCache {
    gap_a_shape: Vec<usize>,
    gap_b_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Body {
    Single { branch: Branch, gap_shape: Option<Vec<usize>> },
    Dual { dc: Branch, ac: Branch, mmtm: Vec<Mmtm>, heads: Option<(DcAcHead, DcAcHead)>, cache: Option<DualCache> },
}

#[derive(Clone, Debug)]
pub struct SpO2Net {
    cfg: ModelConfig,
    body: Body,
    head: Linear,
    /// When false, the dual-branch variants skip intermediate fusion.
    pub fusion_enabled: bool,
}

pub fn build_model(cfg: &ModelConfig) -> Result<SpO2Net> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let last = cfg.stage_channels[3];
    let (body, features) = match cfg.variant {
        Variant::Plain => (Body::Single { branch: Branch::new(3, cfg, &mut rng), gap_shape: None }, last),
        Variant::Early => (Body::Single { branch: Branch::new(6, cfg, &mut rng), gap_shape: None }, last),
        Variant::Filter | Variant::End2end => {
            let heads = (cfg.variant == Variant::End2end)
                .then(|| (DcAcHead::new(cfg.dcac_kernel, &mut rng), DcAcHead::new(cfg.dcac_kernel, &mut rng)));
            let dc = Branch::new(3, cfg, &mut rng);
            let ac = Branch::new(3, cfg, &mut rng);
            let mmtm = cfg.stage_channels.iter().map(|&c| Mmtm::new(c, c, &mut rng)).collect();
            (Body::Dual { dc, ac, mmtm, heads, cache: None }, 2 * last)
        }
    };
    let head = Linear::new(features, cfg.d_spo2, &mut rng);
    Ok(SpO2Net { cfg: cfg.clone(), body, head, fusion_enabled: true })
}

fn check_map(t: &Tensor, what: &str) -> Result<()> {
    match t.shape() {
        [_, 3, _, _] => Ok(()),
        s => Err(shape_err!("{what}: expected (B, 3, N, T), got {:?}", s)),
    }
}

impl SpO2Net {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn dcac_heads_mut(&mut self) -> Option<(&mut DcAcHead, &mut DcAcHead)> {
        match &mut self.body {
            Body::Dual { heads: Some((a, b)), .. } => Some((a, b)),
            _ => None,
        }
    }

    pub fn mmtm_mut(&mut self) -> Option<&mut [Mmtm]> {
        match &mut self.body {
            Body::Dual { mmtm, .. } => Some(mmtm),
            _ => None,
        }
    }

    pub fn forward(&mut self, input: &ModelInput, mode: Mode) -> Result<SpO2Prediction> {
        let variant = self.cfg.variant;
        let fusion = self.fusion_enabled;
        let (features, x_dc_hat, x_ac_hat) = match (&mut self.body, input) {
            (Body::Single { branch, gap_shape }, inp) => {
                let x = match (variant, inp) {
                    (Variant::Plain, ModelInput::Map(x)) => {
                        check_map(x, "plain input")?;
                        x.clone()
                    }
                    (Variant::Early, ModelInput::Components { dc, ac }) => {
                        check_map(dc, "early dc input")?;
                        check_map(ac, "early ac input")?;
                        Tensor::concat_channels(dc, ac)?
                    }
                    _ => return Err(shape_err!("{} variant got the wrong kind of input", variant.name())),
                };
                let mut h = branch.forward_stem(&x, mode)?;
                for s in branch.stages.iter_mut() {
                    h = s.forward(&h, mode)?;
                }
                *gap_shape = Some(h.shape().to_vec());
                (ops::gap(&h)?, None, None)
            }
            (Body::Dual { dc, ac, mmtm, heads, cache }, inp) => {
                let (xd, xa, hats) = match (heads.as_mut(), inp) {
                    (Some((hd, ha)), ModelInput::Map(x)) => {
                        check_map(x, "end2end input")?;
                        let xd = hd.forward(x, mode)?;
                        let xa = ha.forward(x, mode)?;
                        (xd.clone(), xa.clone(), Some((xd, xa)))
                    }
                    (None, ModelInput::Components { dc, ac }) => {
                        check_map(dc, "filter dc input")?;
                        check_map(ac, "filter ac input")?;
                        if dc.shape() != ac.shape() {
                            return Err(shape_err!("dc {:?} and ac {:?} shapes differ", dc.shape(), ac.shape()));
                        }
                        (dc.clone(), ac.clone(), None)
                    }
                    _ => return Err(shape_err!("{} variant got the wrong kind of input", variant.name())),
                };
                let mut a = dc.forward_stem(&xd, mode)?;
                let mut b = ac.forward_stem(&xa, mode)?;
                for i in 0..4 {
                    a = dc.stages[i].forward(&a, mode)?;
                    b = ac.stages[i].forward(&b, mode)?;
                    if fusion {
                        (a, b) = mmtm[i].forward(&a, &b)?;
                    }
                }
                *cache = Some(DualCache { gap_a_shape: a.shape().to_vec(), gap_b_shape: b.shape().to_vec() });
                let f = concat_features(&ops::gap(&a)?, &ops::gap(&b)?)?;
                match hats {
                    Some((xd, xa)) => (f, Some(xd), Some(xa)),
                    None => (f, None, None),
                }
            }
        };
        let y_out = self.head.forward(&features)?;
        Ok(SpO2Prediction { y_out, x_dc_hat, x_ac_hat })
    }

    /// Backpropagates `d loss / d y_out` (and, for `end2end`, the gradients
    /// reaching the reconstructed component maps), accumulating parameter gradients.
    pub fn backward(&mut self, dy: &Tensor, d_dc_hat: Option<&Tensor>, d_ac_hat: Option<&Tensor>) -> Result<()> {
        let dfeat = self.head.backward(dy)?;
        let fusion = self.fusion_enabled;
        match &mut self.body {
            Body::Single { branch, gap_shape } => {
                let shape = gap_shape.take().ok_or_else(|| shape_err!("backward before forward"))?;
                let mut g = ops::gap_backward(&shape, &dfeat)?;
                for s in branch.stages.iter_mut().rev() {
                    g = s.backward(&g)?;
                }
                branch.backward_stem(&g)?;
            }
            Body::Dual { dc, ac, mmtm, heads, cache } => {
                let c = cache.take().ok_or_else(|| shape_err!("backward before forward"))?;
                let ca = c.gap_a_shape[1];
                let width = dfeat.shape()[1];
                let batch = dfeat.shape()[0];
                let mut fa = Vec::with_capacity(batch * ca);
                let mut fb = Vec::with_capacity(batch * (width - ca));
                for row in dfeat.data().chunks(width) {
                    fa.extend_from_slice(&row[..ca]);
                    fb.extend_from_slice(&row[ca..]);
                }
                let mut ga = ops::gap_backward(&c.gap_a_shape, &Tensor::from_vec(&[batch, ca], fa)?)?;
                let mut gb = ops::gap_backward(&c.gap_b_shape, &Tensor::from_vec(&[batch, width - ca], fb)?)?;
                for i in (0..4).rev() {
                    if fusion {
                        (ga, gb) = mmtm[i].backward(&ga, &gb)?;
                    }
                    ga = dc.stages[i].backward(&ga)?;
                    gb = ac.stages[i].backward(&gb)?;
                }
                let gxd = dc.backward_stem(&ga)?;
                let gxa = ac.backward_stem(&gb)?;
                if let Some((hd, ha)) = heads.as_mut() {
                    let gxd = match d_dc_hat {
                        Some(d) => gxd.add(d)?,
                        None => gxd,
                    };
                    let gxa = match d_ac_hat {
                        Some(d) => gxa.add(d)?,
                        None => gxa,
                    };
                    hd.backward(&gxd)?;
                    ha.backward(&gxa)?;
                }
            }
        }
        Ok(())
    }
}

impl Module for SpO2Net {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        match &mut self.body {
            Body::Single { branch, .. } => branch.visit(&join(prefix, "branch"), f),
            Body::Dual { dc, ac, mmtm, heads, .. } => {
                if let Some((hd, ha)) = heads.as_mut() {
                    hd.visit(&join(prefix, "dc_head"), f);
                    ha.visit(&join(prefix, "ac_head"), f);
                }
                dc.visit(&join(prefix, "dc"), f);
                ac.visit(&join(prefix, "ac"), f);
                for (i, m) in mmtm.iter_mut().enumerate() {
                    m.visit(&join(prefix, &format!("mmtm.{i}")), f);
                }
            }
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// `MSE + (1 - Pearson)` averaged over the batch; returns the value and `d/d y_out`.
pub fn loss_spo2(y_out: &Tensor, y_gt: &Tensor) -> Result<(f64, Tensor)> {
    let (m, gm) = mse_loss(y_out, y_gt)?;
    let (c, gc) = negcorr_loss(y_out, y_gt)?;
    Ok((m + c, gm.add(&gc)?))
}

/// Gradients of the end-to-end loss with respect to the three model outputs.
#[derive(Clone, Debug)]
pub struct EndToEndGrads {
    pub dy: Tensor,
    pub d_dc_hat: Tensor,
    pub d_ac_hat: Tensor,
}

/// `loss_spo2 + alpha * (MSE(x_dc_hat, x_dc) + MSE(x_ac_hat, x_ac))`.
pub fn loss_end_to_end(pred: &SpO2Prediction, y_gt: &Tensor, x_dc: &Tensor, x_ac: &Tensor, alpha: f64) -> Result<(f64, EndToEndGrads)> {
    let (ls, dy) = loss_spo2(&pred.y_out, y_gt)?;
    let (Some(dc_hat), Some(ac_hat)) = (pred.x_dc_hat.as_ref(), pred.x_ac_hat.as_ref()) else {
        return Err(shape_err!("end-to-end loss needs reconstructed DC/AC maps"));
    };
    let (ld, gd) = mse_loss(dc_hat, x_dc)?;
    let (la, ga) = mse_loss(ac_hat, x_ac)?;
    Ok((ls + alpha * (ld + la), EndToEndGrads { dy, d_dc_hat: gd.scale(alpha), d_ac_hat: ga.scale(alpha) }))
}

/// Closed-form parameter count of a variant, from layer sizes alone.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let ch = &cfg.stage_channels;
    let bn = |c: usize| 2 * c;
    let branch = |c_in: usize| {
        let mut n = c_in * ch[0] * 9 + bn(ch[0]);
        for i in 0..4 {
            let cin = if i == 0 { ch[0] } else { ch[i - 1] };
            let c = ch[i];
            n += cin * c * 9 + bn(c) + c * c * 9 + bn(c);
            if i > 0 || cin != c {
                n += cin * c + bn(c);
            }
        }
        n
    };
    let mmtm = |c: usize| {
        let cz = (2 * c).div_ceil(4);
        (2 * c * cz + cz) + 2 * (cz * c + c)
    };
    match cfg.variant {
        Variant::Plain => branch(3) + ch[3] * cfg.d_spo2 + cfg.d_spo2,
        Variant::Early => branch(6) + ch[3] * cfg.d_spo2 + cfg.d_spo2,
        Variant::Filter | Variant::End2end => {
            let heads = if cfg.variant == Variant::End2end { 2 * (3 * cfg.dcac_kernel + bn(3) + 3 * cfg.dcac_kernel + 3) } else { 0 };
            heads + 2 * branch(3) + ch.iter().map(|&c| mmtm(c)).sum::<usize>() + 2 * ch[3] * cfg.d_spo2 + cfg.d_spo2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::layers::param_count;

    fn small(variant: Variant) -> ModelConfig {
        ModelConfig { variant, stage_channels: vec![2, 2, 4, 4], dcac_kernel: 5, ..Default::default() }
    }

    fn input(variant: Variant, b: usize, n: usize, t: usize) -> ModelInput {
        let x = |k: f64| Tensor::from_vec(&[b, 3, n, t], (0..b * 3 * n * t).map(|i| (i as f64 * k).sin()).collect()).unwrap();
        if variant.uses_components() {
            ModelInput::Components { dc: x(0.013), ac: x(0.29) }
        } else {
            ModelInput::Map(x(0.07))
        }
    }

    #[test]
    fn config_validation() {
        assert!(build_model(&ModelConfig { stage_channels: vec![8, 16, 32], ..Default::default() }).is_err());
        assert!(build_model(&ModelConfig { alpha: -1.0, ..Default::default() }).is_err());
        assert!(build_model(&ModelConfig { d_spo2: 1, ..Default::default() }).is_err());
        assert!("end2end".parse::<Variant>().is_ok() && "resnet".parse::<Variant>().is_err());
    }

    #[test]
    fn param_counts_match_closed_form() {
        for v in Variant::ALL {
            for cfg in [ModelConfig { variant: v, ..Default::default() }, small(v)] {
                let mut m = build_model(&cfg).unwrap();
                assert_eq!(param_count(&mut m), expected_param_count(&cfg), "{v:?}");
            }
        }
    }

    #[test]
    fn every_variant_outputs_batch_by_d() {
        for v in Variant::ALL {
            let mut m = build_model(&small(v)).unwrap();
            let p = m.forward(&input(v, 3, 8, 40), Mode::Train).unwrap();
            assert_eq!(p.y_out.shape(), &[3, 10]);
            assert_eq!(p.x_dc_hat.is_some(), v == Variant::End2end);
            if let Some(h) = p.x_ac_hat {
                assert_eq!(h.shape(), &[3, 3, 8, 40]);
            }
        }
    }

    #[test]
    fn wrong_input_kind_is_rejected() {
        let mut m = build_model(&small(Variant::Filter)).unwrap();
        assert!(m.forward(&input(Variant::Plain, 2, 4, 20), Mode::Eval).is_err());
    }

    #[test]
    fn loss_examples() {
        let gt = Tensor::from_vec(&[1, 4], vec![-1.5, -0.5, 0.5, 1.5]).unwrap();
        assert!(loss_spo2(&gt, &gt).unwrap().0.abs() < 1e-8);
        let off = gt.map(|v| v + 0.1);
        assert!((loss_spo2(&off, &gt).unwrap().0 - 0.01).abs() < 1e-8);
        let neg = gt.scale(-1.0);
        let mse = gt.data().iter().map(|v| 4.0 * v * v).sum::<f64>() / 4.0;
        assert!((loss_spo2(&neg, &gt).unwrap().0 - (mse + 2.0)).abs() < 1e-8);
    }
}
