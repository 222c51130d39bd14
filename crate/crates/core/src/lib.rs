pub mod config;
pub mod error;
pub mod fsutil;
pub mod infer;
pub mod model;
pub mod structured;
pub mod synth;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
