use serde::{Deserialize, Serialize};

use super::layers::{Module, Param, Slot};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One update of a single parameter from its accumulated gradient.
    pub fn update(&self, p: &mut Param) {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let grad = p.value.grad().expect("parameter gradient").to_vec();
        let data = p.value.data_mut();
        for (i, g) in grad.into_iter().enumerate() {
            p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
            p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = p.m[i] / c1;
            let vhat = p.v[i] / c2;
            data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// Updates every parameter of `module` in visit order.
    pub fn step<M: Module + ?Sized>(&self, module: &mut M) {
        module.visit("", &mut |_, s| {
            if let Slot::Param(p) = s {
                self.update(p);
            }
        });
    }
}

/// Free-function form over an explicit parameter list.
pub fn adam_step(params: &mut [&mut Param], opt: &Adam) {
    for p in params.iter_mut() {
        opt.update(p);
    }
}
