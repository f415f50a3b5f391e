//! Budget-aware acquisition of costly high-resolution tiles.
//!
//! A small policy network looks at cheap low-resolution features of each tile
//! and decides which of its subtiles are worth paying for. Acquired subtiles
//! are passed through a (simulated) object detector, and the resulting class
//! counts are aggregated per cluster and fed to a gradient-boosted regressor.
//!
//! The crate is organised bottom-up:
//!
//! * [`world`] synthetic clusters of tiles, persistence and train/test splits
//! * [`detector`] keyed noisy counting and action-gated aggregation
//! * [`policy`] the Bernoulli acquisition policy and its analytic gradient
//! * [`reward`] accuracy plus acquisition-cost reward
//! * [`trainer`] self-critical policy-gradient training
//! * [`baselines`] non-learned tile selection rules
//! * [`downstream`] cluster aggregation, boosted trees and metrics
//! * [`harness`] experiment configuration, sweeps and report files

pub mod baselines;
pub mod counts;
pub mod detector;
pub mod downstream;
pub mod error;
pub mod harness;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;
pub mod world;

pub use counts::ClassCounts;
pub use error::{Error, Result};
