//! Desk-scale multi-task soft actor-critic laboratory.

pub mod arch;
pub mod env;
pub mod error;
pub mod eval;
pub mod harness;
pub mod nn;
pub mod plasticity;
pub mod replay;
pub mod sac;
pub mod stats;

pub use error::{Error, Result};
