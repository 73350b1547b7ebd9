//! Federated optimization simulator.
//!
//! Implements FedAvg and FedProx over a linear softmax classification head
//! trained on fixed feature vectors. Clients hold disjoint splits of a
//! labeled dataset, produced either by a uniform (IID) partition or by
//! single-label shards that bound every client to a few classes.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: parameter vectors, softmax, cross-entropy and its gradient.
//! - [`dataset`]: synthetic Gaussian features and the two partitioners.
//! - [`trainer`]: client-side SGD for both local objectives.
//! - [`federation`]: client selection, aggregation, the round loop.
//! - [`evaluation`]: accuracy, the centralized baseline and multi-seed statistics.
//! - [`config`] and [`cli`]: the experiment description and command entry points.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod seeding;
pub mod tensor;
pub mod textio;
pub mod trainer;

pub use error::{Error, Result};
