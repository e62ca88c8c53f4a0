pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod graphstore;
pub mod maxent;
pub mod mixture;
pub mod synthetic;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
