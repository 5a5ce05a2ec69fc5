//! Gaze-sequence modeling library: ROI tokenization of eye movements,
//! transformer channel encoders, attention-based channel fusion, and
//! choice/count prediction with training and evaluation utilities.

pub mod error;
pub mod rng;

pub mod gaze_data;
pub mod roi_map;
pub mod tokenizer;

pub mod nn;

pub mod encoder;
pub mod fusion;
pub mod model;
pub mod training;
pub mod evaluation;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
