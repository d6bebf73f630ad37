//! Dialog value profiling.
//!
//! A causal token-level multi-task predictor is trained from dialog-level
//! weak labels (issue, actions, recontact, optional cost); its per-token
//! predictions are converted into information-gain values per aspect,
//! collapsed to a scalar, and differenced into turn-level rewards. On top
//! of the value traces sit corpus analytics (progress curves, quantile
//! bands, bot-failure detection, accuracy/calibration reports), response
//! candidate re-ranking and training-weight emission.

pub mod analytics;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod integrate;
pub mod value;

pub use error::{Error, Result};
