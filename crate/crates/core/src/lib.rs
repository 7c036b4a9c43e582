//! Time-to-green (T2G) forecasting for fully-actuated signalized intersections.
//!
//! The crate covers the whole offline flow: event telegrams are parsed and
//! rasterized into 1 Hz device states ([`telegram`]), aggregated into per-cycle
//! features ([`features`]), and fed to four predictors of the next red
//! duration: a shift-by-one baseline and OLS ([`baseline`]), a regression
//! forest ([`forest`]) and a peephole LSTM ([`lstm`]). [`selection`] holds
//! feature elimination and hyperparameter search, [`evaluation`] the split and
//! the accuracy metrics. [`sim`] is a deterministic actuated controller that
//! produces telegram logs to train on.

pub mod baseline;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod lstm;
pub mod selection;
pub mod sim;
pub mod telegram;

pub use error::{Error, Result};
