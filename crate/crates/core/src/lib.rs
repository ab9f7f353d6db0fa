//! Gated fusion of structured ICU time series and chest-radiograph
//! embeddings for predicting invasive mechanical ventilation within 24 hours.
//!
//! The crate covers the whole pipeline: cohort representation and labeling,
//! a seeded synthetic cohort generator, hourly feature assembly, radiograph
//! alignment, a hand-differentiated model family, training, evaluation and
//! the batch commands behind the `gatefuse` binary.

pub mod cohort;
pub mod commands;
pub mod cxr;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod schema;
pub mod search;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
