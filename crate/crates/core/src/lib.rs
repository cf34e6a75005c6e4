pub mod accel;
pub mod acrl;
pub mod cli;
pub mod cosearch;
pub mod das;
pub mod env;
mod error;
pub mod supernet;
pub mod tensorcore;

pub use error::{Error, Result};
