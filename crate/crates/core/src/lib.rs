pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
