pub mod batch;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fixture;
pub mod imageio;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod probe;
pub mod trainer;

pub use batch::{AttrBatch, AttributeCode, ImageBatch};
pub use error::{Error, Result};
