pub mod cluster_models;
pub mod error;
pub mod experiments;
pub mod interactive;
pub mod kernel_linear;
pub mod oracle;
pub mod posterior;
pub mod query_engine;
pub mod service;
pub mod structures;
pub mod verify;

pub use error::{Error, Result};
