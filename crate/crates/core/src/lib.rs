//! Particle approximations of McKean-Vlasov SDEs with super-linear
//! convolution kernels: the split-step method, taming baselines and the
//! error analysis around them.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod brownian;
pub mod error;
pub mod init;
pub mod measure;
pub mod model;
pub mod schemes;
pub mod sum;

pub use error::{Error, Result};
pub use measure::{MeasureSummary, ParticleState};
pub use model::{builtin_model, Kernel, Model, ModelConstants};
