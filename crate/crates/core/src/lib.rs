#![no_std]

extern crate alloc;

pub mod disentangle;
pub mod domains;
pub mod error;
pub mod matrix;
pub mod mlp;
pub mod orchestrator;
pub mod policy;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use mlp::{finite_diff_check, xavier_init, Direction, Gradients, Mlp, OutputActivation};
pub use rng::DetRng;
