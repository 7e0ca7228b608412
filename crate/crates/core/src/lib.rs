//! Palmprint alignment and recognition: landmark geometry, a thin-plate-spline
//! ROI sampler, the localization and recognition networks, training
//! schedules, matchers, evaluation protocols and a synthetic palm generator.

pub mod augment;
pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod image;
pub mod landmarks;
pub mod nets;
pub mod pipeline;
pub mod synth;
pub mod tps;
pub mod train;

pub use error::{Error, Result};
