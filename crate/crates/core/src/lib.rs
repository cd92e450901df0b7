//! An in-memory database engine where tuples, relations, databases and sets
//! of databases are all maps.

pub mod engine;
pub mod error;
pub mod json;
pub mod model;
pub mod schema;
pub mod views;

pub use error::{Error, Result};
pub use model::*;
