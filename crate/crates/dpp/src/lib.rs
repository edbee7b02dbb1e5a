//! Files, configuration, parallel Monte Carlo and command implementations
//! on top of `dpp-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod mc;
pub mod verify;

pub use error::{Error, Result};
