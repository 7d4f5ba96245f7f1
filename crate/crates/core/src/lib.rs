//! Event-assisted monocular depth estimation for adverse night scenes.
//!
//! The pipeline has three phases: a low-light enhancer brightens the raw RGB
//! frame, an attention fusion network merges it with a stacked event frame
//! into a fusion image, and a depth network regresses metric depth from that
//! image. A procedural scene generator supplies paired RGB/event/depth data
//! and the evaluation module scores every input variant with the standard
//! depth metrics.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod depth;
pub mod enhance;
pub mod error;
pub mod evaluate;
pub mod events;
pub mod fusion;
pub mod io;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod plot;
pub mod seed;
pub mod synthcam;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
