pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod nets;
pub mod pipeline;
pub mod study;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
