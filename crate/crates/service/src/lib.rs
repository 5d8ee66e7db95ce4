//! HTTP detection service.
//!
//! Requests are tokenized and windowed on the blocking pool, their windows
//! are scored in cross-request batches, and the rows are aggregated exactly
//! as the offline pipeline does. For a given scorer and configuration the
//! served result matches `spanguard_core::detect`.

pub mod batcher;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod server;

pub use config::{ConfigError, ScorerSpec, ServiceConfig};
pub use engine::{DetectRequest, DetectResponse, Engine, LatencyRecord, RequestDocument, RequestError, ServiceError};
pub use metrics::Metrics;
pub use server::{router, serve, start, ServeError};
