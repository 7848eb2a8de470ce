//! Differentiable computation core and the two networks.

pub mod checkpoint;
pub mod cldnn;
pub mod ctc;
pub mod gradcheck;
pub mod graph;
pub mod hparams;
pub mod optim;
pub mod params;
pub mod tcn;

pub use checkpoint::Checkpoint;
pub use cldnn::{CldnnConfig, CldnnLite};
pub use graph::{Conv2dGeom, Gradients, Graph, Tensor, Var};
pub use optim::Adam;
pub use params::ParamSet;
pub use tcn::{TcnConfig, TcnMaskNet};
