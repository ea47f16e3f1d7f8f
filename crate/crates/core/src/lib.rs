//! Gaussian-splat scene reconstruction from posed event-camera streams.
//!
//! The pipeline accumulates windows of events into images of signed
//! log-intensity change, renders the same change from a Gaussian scene at the
//! window's start and end poses, and fits the scene by gradient descent. A
//! frame-differencing event simulator closes the loop for testing.

pub mod checkpoint;
pub mod closed_loop;
pub mod error;
pub mod evaluator;
pub mod event;
pub mod image;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod simulator;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
