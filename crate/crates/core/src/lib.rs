//! End-to-end zero-shot voice conversion with location-variable
//! convolutions.
//!
//! The crate covers feature extraction, the speaker model, the LVC
//! generator, discriminators and losses, the two-phase trainer and the
//! command-line tooling built on top of them.

pub mod commands;
pub mod container;
pub mod corpus;
pub mod error;
pub mod features;
pub mod gan;
pub mod generator;
pub mod inference;
pub mod lvc;
pub mod nn;
pub mod speaker;
pub mod train;

pub use error::{Error, Result};
