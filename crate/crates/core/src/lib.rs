pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod quantum;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
