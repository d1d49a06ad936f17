//! Event-driven depth completion on the CPU.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]), a
//! modulated deformable convolution ([`deform`]), the event-conditioned
//! alignment and filtering blocks ([`ema`], [`ldf`]), the full encoder/decoder
//! ([`network`]), a synthetic dynamic-scene generator ([`datagen`]) and the
//! training/evaluation loop ([`train`]).

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod deform;
pub mod ema;
pub mod error;
pub mod events;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod ldf;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
