//! Core of the V2X knowledge pool.
//!
//! Roadside records are synchronized, calibrated and turned into
//! language-based [`KnowledgeEntry`] rows, routed by their measured change
//! rate into a static, high-frequency or low-frequency partition, and served
//! back to vehicles through feature-hashed dual-query retrieval. The crate
//! also carries the baseline planner, the trajectory metrics and a seeded
//! intersection simulator.
//!
//! Everything here is `no_std` with `alloc`. Durable storage, networking and
//! file formats live in the `unipool` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod canonical;
pub mod dynamics;
pub mod encode;
pub mod evaluator;
pub mod ingest;
pub mod pool;
pub mod query;
pub mod reasoner;
pub mod sim;
pub mod types;

pub use dynamics::{ClassifierState, DynamicsProfile, Thresholds};
pub use pool::{PoolError, PoolReader, PoolWriter, Receipt, WindowQuery};
pub use query::{FusedContext, QueryRequirement, QueryVector, RetrievalParams, ScoredEntry};
pub use reasoner::{PlanOutput, Planner, ReasoningContext, RulePlanner, VehicleState};
pub use types::{GeoAnchor, KnowledgeEntry, Modality, Partition, RawRecord, Value};
