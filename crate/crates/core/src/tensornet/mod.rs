//! Minimal differentiable tensor kernel: layers, losses, Adam and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod serialize;
mod tensor;

pub use gradcheck::{grad_check, grad_check_module, GradCheckReport};
pub use layers::{BatchNorm2d, Conv2d, DepthwiseConv2d, Linear, Mmtm, Mode, Module, Param, Slot};
pub use loss::{mse_loss, negcorr_loss, pearson};
pub use ops::ConvGeom;
pub use optim::{adam_step, Adam};
pub use tensor::Tensor;
