//! Library for building and evaluating a hearing-aid speech assessment model.
//!
//! The crate covers the full pipeline: synthesizing a five-condition
//! evaluation corpus (noisy, enhanced, reverberant, dereverberated, vocoded),
//! encoding hearing-loss patterns from an audiogram catalog, extracting
//! acoustic features through pluggable providers, training a dual-head
//! frame/utterance regression model, and reporting quality/intelligibility
//! prediction metrics.

pub mod audiogram;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod signal;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
