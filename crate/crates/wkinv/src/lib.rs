//! Simulation, estimation commands and Monte-Carlo experiments on top of
//! `wkinv-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;

pub use error::{AppError, Result};
