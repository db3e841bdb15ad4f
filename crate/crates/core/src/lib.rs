//! Speaker-comparison evaluation toolkit.
//!
//! Trial keys, score and LLR files, Cllr/minCllr/EER metrics, logistic
//! calibration and fusion, perceptual response pooling, per-speaker
//! analysis, significance tests and listening-experiment design.

pub mod calibration;
pub mod cli;
pub mod design;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod perceptual;
pub mod scores;
pub mod serve;
pub mod speaker;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Condition, Label, SpeakerId, Stimulus, Style, Trial, TrialSet};
pub use scores::{LlrSet, ScoreSet};
