pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod gradcheck;
pub mod imaging;
pub mod inference;
pub mod losses;
pub mod models;
pub mod nn;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
