//! HTTP service and command line for the fund arena.

pub mod api;
pub mod cli;
pub mod error;

pub use error::ApiError;
