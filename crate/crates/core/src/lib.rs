//! Cross-modal EEG and music affect pipeline.
//!
//! Differential-entropy EEG features feed a bi-stream network whose EEG and
//! music branches project into a shared 64-D space. Training combines two
//! emotion classification losses with a gradient-reversal modality
//! discriminator; the learned space supports both direct emotion prediction
//! and distance-based music retrieval from EEG queries.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
