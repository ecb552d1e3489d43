pub mod cli;
pub mod error;
pub mod hilbert;
pub mod krotov;
pub mod model;
pub mod objective;
pub mod propagate;

pub use error::{Error, Result};
