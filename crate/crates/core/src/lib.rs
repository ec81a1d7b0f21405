//! Objective depth from binocular gaze: vergence geometry, the sample
//! cleaning cascade, per-participant diopter calibration, the regression
//! machinery used to analyze the results, and a simulator that produces
//! ground-truth data for all of it.

pub mod analysis;
pub mod calibration;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
