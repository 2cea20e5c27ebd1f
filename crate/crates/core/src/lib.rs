#![allow(clippy::needless_range_loop)]

//! Tiny speaker encoder toolkit: MFCC front-end, a ~150k-parameter
//! convolutional speaker encoder with hand-written forward/backward passes,
//! contrastive embedding-distillation training, on-the-fly similarity
//! refinement of a reference speaker embedding, and speaker-verification
//! metrics.

pub mod config;
pub mod dsp;
pub mod embedding;
pub mod error;
pub mod io;
pub mod kd;
pub mod mat;
pub mod nn;
pub mod par;
pub mod refine;
pub mod sv;

pub use error::{Error, Result};
