//! Tensor and reverse-mode autodiff substrate with Adam, initializers and
//! gradient utilities.

mod adam;
mod init;
mod norm;
mod tape;
mod tensor;

pub use adam::{AdamState, ParamStore};
pub use init::{kaiming_init, normal_init};
pub use norm::{clip_by_norm, l2_norm};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
