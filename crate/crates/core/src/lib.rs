pub mod config;
pub mod diagnostics;
mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod objective;
pub mod split;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
