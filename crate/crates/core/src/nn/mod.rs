//! A small trainable network engine: dense and batch-norm layers, ReLU,
//! dropout, softmax and sigmoid, the residual basic module, and Adam.

pub mod adam;
pub mod layers;
pub mod module;
pub mod params;

pub use adam::Adam;
pub use layers::{sigmoid, softmax, BatchNorm, Dense};
pub use module::{BasicModule, BasicModuleSpec, ModuleCache};
pub use params::{NamedTensor, Parameters, TensorMap};
