//! HTTP service and command line for the timeline engine.

pub mod api;
pub mod commands;

pub use api::router;
