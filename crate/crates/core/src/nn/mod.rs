//! Numeric substrate: dense matrices, MLPs with explicit reverse passes,
//! Adam, and binary serialization.

mod adam;
mod matrix;
mod mlp;
mod params;
pub mod serialize;

pub use adam::{AdamState, ScalarAdam};
pub use matrix::{accumulate_dyt_x, matmul_dy_w, matmul_xwt, Matrix};
pub use mlp::{dense_param_count, Activation, ActivationCache, Mlp, ParamGrads};
pub use params::{Grads, Parameters};
