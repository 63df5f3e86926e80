pub mod augment;
pub mod cifar;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod output;
pub mod train;

pub use error::{LabError, Result};
