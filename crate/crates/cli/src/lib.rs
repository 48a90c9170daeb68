//! Command-line tools and WebSocket service for the probe engine.

pub mod app;
pub mod protocol;
pub mod server;
