pub mod augment;
pub mod cli;
pub mod cola;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
