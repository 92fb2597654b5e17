pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod io;
pub mod ledger;
pub mod memdetect;
pub mod metrics;
pub mod provenance;
pub mod seed;
pub mod simnet;
pub mod verify;

pub use error::{Error, Result};
