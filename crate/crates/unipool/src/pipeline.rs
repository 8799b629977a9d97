//! Calibrate, normalize, synchronize, semanticize, route and store.

use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use unipool_core::ingest::{
    calibrate, ingest_batch, interpolate_missing, normalize_structured, semanticize, synchronize, Anomalies, Captioner,
    FrameTransforms, IngestReceipt, RigidTransform2, Schema, TemplateCaptioner, DEFAULT_SYNC_WINDOW_US,
};
use unipool_core::types::UNIFIED_FRAME;
use unipool_core::{ClassifierState, Modality, RawRecord, Thresholds};

use crate::store::PoolStore;

/// Outcome of one `ingest` call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records: usize,
    pub entries: usize,
    pub stored: usize,
    pub anomalies: u64,
    /// Records or entries that were dropped, with the reason.
    pub errors: Vec<String>,
    pub receipts: Vec<IngestReceipt>,
}

pub struct Ingestor {
    store: Arc<PoolStore>,
    classifier: Mutex<ClassifierState>,
    transforms: FrameTransforms,
    schema: Schema,
    captioner: Box<dyn Captioner + Send + Sync>,
    sync_window_us: i64,
}

impl Ingestor {
    pub fn new(store: Arc<PoolStore>, thresholds: Thresholds) -> Self {
        let mut transforms = FrameTransforms::new();
        transforms.insert(UNIFIED_FRAME.to_string(), RigidTransform2::IDENTITY);
        Ingestor {
            store,
            classifier: Mutex::new(ClassifierState::new(thresholds, unipool_core::dynamics::DEFAULT_WINDOW_CAPACITY)),
            transforms,
            schema: Schema::new(),
            captioner: Box::new(TemplateCaptioner),
            sync_window_us: DEFAULT_SYNC_WINDOW_US,
        }
    }

    pub fn with_transform(mut self, frame: impl Into<String>, t: RigidTransform2) -> Self {
        self.transforms.insert(frame.into(), t);
        self
    }

    pub fn with_schema(mut self, schema: Schema) -> Self {
        self.schema = schema;
        self
    }

    pub fn with_captioner(mut self, captioner: Box<dyn Captioner + Send + Sync>) -> Self {
        self.captioner = captioner;
        self
    }

    pub fn with_sync_window(mut self, window_us: i64) -> Self {
        self.sync_window_us = window_us;
        self
    }

    pub fn store(&self) -> &Arc<PoolStore> {
        &self.store
    }

    pub fn ingest(&self, records: Vec<RawRecord>) -> IngestReport {
        let mut report = IngestReport {
            records: records.len(),
            ..IngestReport::default()
        };
        let mut anomalies = Anomalies::default();
        let mut ready = Vec::with_capacity(records.len());
        for r in records {
            let r = match calibrate(r, &self.transforms) {
                Ok(r) => r,
                Err(e) => {
                    report.errors.push(e.to_string());
                    continue;
                }
            };
            if r.modality == Modality::Structured {
                match normalize_structured(r, &self.schema, &mut anomalies) {
                    Ok(r) => ready.push(r),
                    Err(e) => report.errors.push(e.to_string()),
                }
            } else {
                ready.push(r);
            }
        }
        interpolate_missing(&mut ready, &self.schema);
        report.anomalies = anomalies.count;

        let sync = match synchronize(ready, self.sync_window_us) {
            Ok(s) => s,
            Err(e) => {
                report.errors.push(e.to_string());
                return report;
            }
        };
        report.errors.extend(sync.rejected.iter().map(|e| e.to_string()));

        // One classifier lock per call keeps per-stream observations ordered.
        let mut classifier = self.classifier.lock();
        for batch in &sync.batches {
            let out = semanticize(batch, self.captioner.as_ref());
            report.errors.extend(out.errors.iter().map(|e| e.to_string()));
            report.entries += out.entries.len();
            for r in ingest_batch(out.entries, &*self.store, &mut classifier) {
                match &r.error {
                    None => report.stored += 1,
                    Some(code) => report.errors.push(format!("entry {}: {code}", r.entry_id)),
                }
                report.receipts.push(r);
            }
        }
        report
    }
}
