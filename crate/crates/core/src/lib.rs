//! Semi-unsupervised time-series classification with a Gaussian-mixture
//! deep generative model.
//!
//! The crate is organised bottom-up: [`diff`] provides arrays and a
//! reverse-mode tape, [`model`] the networks and parameter layout,
//! [`objective`] the loss, [`datasets`] ingestion and regimes, [`trainer`]
//! the optimization loop, [`evaluation`] metrics and cluster mapping, and
//! [`hpsearch`] random hyperparameter search.

pub mod checkpoint;
pub mod datasets;
pub mod diff;
pub mod evaluation;
pub mod hpsearch;
pub mod model;
pub mod objective;
pub mod trainer;
