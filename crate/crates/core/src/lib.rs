pub mod cli;
pub mod curve;
pub mod elliptic;
pub mod error;
pub mod modularity;
pub mod open;
pub mod ramification;
pub mod recursion;
pub mod series;

pub use error::{Error, Result};
