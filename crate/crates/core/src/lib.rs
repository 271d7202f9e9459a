pub mod attention;
pub mod checkpoint;
pub mod critic;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod extractors;
pub mod features;
pub mod generator;
pub mod inference;
pub mod losses;
pub mod mask;
pub mod nn;
pub mod optim;
pub mod service;
pub mod ssim;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
