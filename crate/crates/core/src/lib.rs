pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod numcore;
pub mod probes;
pub mod rng;
pub mod sigproc;
pub mod ssl;

pub use error::{Error, Result};
