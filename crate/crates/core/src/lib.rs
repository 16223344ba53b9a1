pub mod classnet;
pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod ndcore;
pub mod nn;
pub mod pipeline;
pub mod segnet;
pub mod stain;

pub use error::{Error, Result};
