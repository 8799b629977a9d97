//! Storage contract shared by the durable store and retrieval.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AnchorError, KnowledgeEntry, Partition};

/// Sliding-window query over one partition. Bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowQuery {
    pub partition: Partition,
    pub intersection_id: String,
    pub t0_us: i64,
    pub t1_us: i64,
    #[serde(default)]
    pub field_filter: Option<BTreeSet<String>>,
    pub limit: usize,
}

impl WindowQuery {
    pub fn new(partition: Partition, intersection_id: impl Into<String>, t0_us: i64, t1_us: i64) -> Self {
        WindowQuery {
            partition,
            intersection_id: intersection_id.into(),
            t0_us,
            t1_us,
            field_filter: None,
            limit: usize::MAX,
        }
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    pub fn with_fields<I, S>(mut self, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.field_filter = Some(keys.into_iter().map(Into::into).collect());
        self
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if self.t0_us > self.t1_us {
            return Err(PoolError::InvalidQuery("t0_us must not exceed t1_us"));
        }
        if self.limit == 0 {
            return Err(PoolError::InvalidQuery("limit must be at least 1"));
        }
        Ok(())
    }

    /// Row predicate: intersection, inclusive time bounds and field filter.
    pub fn matches(&self, e: &KnowledgeEntry) -> bool {
        e.anchor.intersection_id == self.intersection_id
            && self.t0_us <= e.timestamp_us
            && e.timestamp_us <= self.t1_us
            && self
                .field_filter
                .as_ref()
                .map_or(true, |keys| keys.iter().any(|k| e.has_field(k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub entry_id: u64,
    pub partition: Partition,
    /// Per-partition, strictly increasing.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("entry {0} already exists")]
    DuplicateId(u64),
    #[error("malformed anchor: {0}")]
    Anchor(#[from] AnchorError),
    #[error("entry {0} has no partition tag")]
    Untagged(u64),
    #[error("entry {entry_id} is tagged {found}, expected {expected}")]
    PartitionMismatch {
        entry_id: u64,
        expected: Partition,
        found: Partition,
    },
    #[error("entries span several intersections; expected `{0}`")]
    MixedIntersections(String),
    #[error("the static partition is never compacted")]
    StaticCompaction,
    #[error("invalid query: {0}")]
    InvalidQuery(&'static str),
    #[error("storage backend: {0}")]
    Backend(String),
}

impl PoolError {
    /// Short machine-readable code, used in receipts and wire errors.
    pub fn code(&self) -> &'static str {
        match self {
            PoolError::DuplicateId(_) => "duplicate_id",
            PoolError::Anchor(_) => "malformed_anchor",
            PoolError::Untagged(_) => "untagged_entry",
            PoolError::PartitionMismatch { .. } => "partition_mismatch",
            PoolError::MixedIntersections(_) => "mixed_intersections",
            PoolError::StaticCompaction => "static_compaction",
            PoolError::InvalidQuery(_) => "invalid_query",
            PoolError::Backend(_) => "backend",
        }
    }
}

pub trait PoolReader {
    /// Rows matching `q`, newest first (ties: higher sequence first),
    /// truncated to `q.limit`. The result is a snapshot.
    fn query_window(&self, q: &WindowQuery) -> Result<Vec<Arc<KnowledgeEntry>>, PoolError>;
}

pub trait PoolWriter {
    fn insert(&self, entry: KnowledgeEntry) -> Result<Receipt, PoolError>;
}

impl<T: PoolReader + ?Sized> PoolReader for &T {
    fn query_window(&self, q: &WindowQuery) -> Result<Vec<Arc<KnowledgeEntry>>, PoolError> {
        (**self).query_window(q)
    }
}

impl<T: PoolWriter + ?Sized> PoolWriter for &T {
    fn insert(&self, entry: KnowledgeEntry) -> Result<Receipt, PoolError> {
        (**self).insert(entry)
    }
}

impl<T: PoolReader + ?Sized> PoolReader for Arc<T> {
    fn query_window(&self, q: &WindowQuery) -> Result<Vec<Arc<KnowledgeEntry>>, PoolError> {
        (**self).query_window(q)
    }
}

impl<T: PoolWriter + ?Sized> PoolWriter for Arc<T> {
    fn insert(&self, entry: KnowledgeEntry) -> Result<Receipt, PoolError> {
        (**self).insert(entry)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! A minimal single-threaded pool for unit tests of the pure stages.

    use super::*;
    use core::cell::RefCell;

    #[derive(Default)]
    pub struct VecPool {
        rows: RefCell<Vec<(u64, Arc<KnowledgeEntry>)>>,
        pub fail_ids: BTreeSet<u64>,
    }

    impl VecPool {
        pub fn len(&self) -> usize {
            self.rows.borrow().len()
        }
    }

    impl PoolWriter for VecPool {
        fn insert(&self, entry: KnowledgeEntry) -> Result<Receipt, PoolError> {
            if self.fail_ids.contains(&entry.entry_id) {
                return Err(PoolError::Backend("injected failure".into()));
            }
            let partition = entry.partition.ok_or(PoolError::Untagged(entry.entry_id))?;
            let mut rows = self.rows.borrow_mut();
            if rows.iter().any(|(_, e)| e.entry_id == entry.entry_id) {
                return Err(PoolError::DuplicateId(entry.entry_id));
            }
            let seq = rows.len() as u64;
            let entry_id = entry.entry_id;
            rows.push((seq, Arc::new(entry)));
            Ok(Receipt {
                entry_id,
                partition,
                seq,
            })
        }
    }

    impl PoolReader for VecPool {
        fn query_window(&self, q: &WindowQuery) -> Result<Vec<Arc<KnowledgeEntry>>, PoolError> {
            q.validate()?;
            let mut hits: Vec<(u64, Arc<KnowledgeEntry>)> = self
                .rows
                .borrow()
                .iter()
                .filter(|(_, e)| e.partition == Some(q.partition) && q.matches(e))
                .cloned()
                .collect();
            hits.sort_by(|a, b| b.1.timestamp_us.cmp(&a.1.timestamp_us).then(b.0.cmp(&a.0)));
            Ok(hits.into_iter().take(q.limit).map(|(_, e)| e).collect())
        }
    }
}
