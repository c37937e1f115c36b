//! Generative timeline engine: event model, prompt rendering, response
//! parsing, layout, model gateway, persistence and labelled audits.

pub mod audit;
pub mod gateway;
pub mod layout;
pub mod model;
pub mod parse;
pub mod prompt;
pub mod service;
pub mod store;

pub use gateway::{Gateway, GatewayError, MockMode, MockProvider, Provider};
pub use layout::{LayoutSnapshot, Screen, Viewport};
pub use model::*;
pub use service::{Engine, EngineConfig, ServiceError};

pub use store::{export_timeline, load_session, save_session, ExportFormat, StoreError};
