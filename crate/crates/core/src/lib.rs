//! Multitask networks that pack one task-specific subnetwork per task into
//! shared weight storage, with gradient-based one-shot subnetwork selection.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod multitask;
pub mod nn;
pub mod prune;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
