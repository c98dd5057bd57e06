//! HTTP service and CLI plumbing around `arsentinel-core`.

pub mod api;
pub mod backend_server;
pub mod config;
pub mod server;

pub use config::ServiceConfig;
