//! Graph-neural-network semantic communication over noisy channels.
//!
//! Images become superpixel graphs ([`segment`], [`graph`]); a message-passing encoder
//! ([`nn`], [`model`]) produces node features that cross an AWGN channel ([`channel`]) and
//! a mean-readout decoder classifies them. [`experiment`] drives preprocessing, training
//! and the evaluation sweeps.

pub mod channel;
pub mod data;
pub mod experiment;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod rng;
pub mod segment;

pub use error::{Error, Result};
