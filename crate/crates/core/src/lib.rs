pub mod cli;
pub mod cluster;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod numcore;
pub mod seed;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
