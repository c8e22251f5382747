//! Recurrent attention model (hard visual attention) for digit classification,
//! with a linear-search hyperparameter sweep harness and metrics/report tooling.
//!
//! The model senses an image through a small foveated window instead of
//! processing every pixel: at each step a glimpse sensor extracts a
//! multi-scale retina-like observation around a location, a recurrent core
//! integrates the observations, a classification head predicts the digit and
//! a location head proposes where to look next. The location head is trained
//! with a score-function (REINFORCE) gradient because the crop is not
//! differentiable; everything else trains by ordinary backpropagation.

pub mod dataset;
pub mod error;
pub mod glimpse;
pub mod model;
pub mod nncore;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod training;

pub use error::{RamError, Result};
