//! Safety-aware hierarchical adversarial imitation learning on a
//! path-constrained traffic simulator.
//!
//! The crate covers the full pipeline: recorded or synthetic roundabout tracks
//! ([`scenario`]), a replay simulator with an ego under acceleration control
//! ([`simulator`]), the ego-centric feature encoder ([`observation`]), a fixed
//! set of velocity/time options with a constant-velocity safety predictor
//! ([`options`]), small hand-differentiated networks ([`nn`]), the BC, GAIL,
//! HAIL and SHAIL trainers together with a tabular occupancy checker
//! ([`learning`]), baseline policies ([`baselines`]) and evaluation metrics
//! ([`evaluation`]).

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod learning;
pub mod nn;
pub mod observation;
pub mod options;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};

/// Simulation frame period in seconds (10 Hz recordings).
pub const FRAME_DT: f64 = 0.1;
/// Frame period in milliseconds.
pub const FRAME_MS: i64 = 100;
/// Bound on any commanded or expert acceleration (m/s²).
pub const A_CLIP: f64 = 5.0;
