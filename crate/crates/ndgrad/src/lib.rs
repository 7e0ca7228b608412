//! A minimal reverse-mode automatic differentiation engine.
//!
//! Computations are recorded on a [`Graph`] (a Wengert tape). Every node keeps
//! its forward value; [`Graph::backward`] replays the tape in reverse and
//! returns a [`Gradients`] table. Parameters live outside the tape in a
//! [`ParamStore`] and are copied in as leaves at each forward pass, so a tape
//! can be dropped after every step.
//!
//! The engine is generic over [`Real`] (`f32` for training, `f64` for gradient
//! checking).

mod error;
mod graph;
mod ops;
mod real;
mod tensor;

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod param;
pub mod rng;
pub mod weights;

#[cfg(feature = "fault-injection")]
pub mod fault;

pub use adam::{AdamConfig, AdamState};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use ops::DropoutMode;
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use rng::RngState;
pub use tensor::Tensor;
