//! Durable pool store, ingestion pipeline, framed wire service and the
//! evaluation harness built on `unipool-core`.

pub mod client;
pub mod config;
pub mod files;
pub mod pipeline;
pub mod planner_process;
pub mod protocol;
pub mod report;
pub mod server;
pub mod store;

pub use config::Config;
pub use pipeline::{IngestReport, Ingestor};
pub use store::{PoolStore, StoreOptions, StoreStats};
