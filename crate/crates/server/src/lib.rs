//! HTTP API and command-line front end for the curation staging area.

pub mod api;
pub mod cli;
pub mod error;

pub use api::router;
pub use error::{ApiError, ErrorCode};
