//! Infrastructure-side ingestion: synchronize, calibrate, normalize and
//! semanticize roadside records into knowledge entry drafts, then route and
//! store them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ClassifierState;
use crate::encode::Fnv64;
use crate::pool::PoolWriter;
use crate::types::{
    GeoAnchor, KnowledgeEntry, Modality, Partition, RawRecord, RecordError, Value, EXTENSION_PREFIX, UNIFIED_FRAME,
};

/// One 10 Hz tick.
pub const DEFAULT_SYNC_WINDOW_US: i64 = 100_000;

/// Missing values are interpolated only from neighbors this close in time.
pub const INTERPOLATION_REACH_US: i64 = 1_000_000;

/// Reason text for entries mapped directly from structured sensor records.
pub const STRUCTURED_REASON: &str = "sensor report";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("synchronization window must be positive, got {0} us")]
    InvalidWindow(i64),
    #[error("record from `{source_id}` rejected: {error}")]
    Record { source_id: String, error: RecordError },
    #[error("no transform registered for frame `{0}`")]
    MissingFrame(String),
    #[error("record from `{0}` is not structured")]
    NotStructured(String),
    #[error("captioner failed on `{source_id}`: {detail}")]
    Caption { source_id: String, detail: String },
}

/// A group of records sharing one alignment timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub aligned_us: i64,
    pub records: Vec<RawRecord>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Synchronized {
    pub batches: Vec<Batch>,
    pub rejected: Vec<IngestError>,
}

impl Synchronized {
    pub fn record_count(&self) -> usize {
        self.batches.iter().map(|b| b.records.len()).sum()
    }
}

/// Buckets records by `floor(timestamp / window) * window`. Batches come out
/// ascending; within a batch records are ordered by `(source_id, timestamp)`.
/// Records with a non-positive timestamp are rejected individually.
pub fn synchronize(records: Vec<RawRecord>, window_us: i64) -> Result<Synchronized, IngestError> {
    if window_us <= 0 {
        return Err(IngestError::InvalidWindow(window_us));
    }
    let mut buckets: BTreeMap<i64, Vec<RawRecord>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for r in records {
        if r.timestamp_us <= 0 {
            rejected.push(IngestError::Record {
                source_id: r.source_id.clone(),
                error: RecordError::NonPositiveTimestamp(r.timestamp_us),
            });
            continue;
        }
        let aligned = r.timestamp_us.div_euclid(window_us) * window_us;
        buckets.entry(aligned).or_default().push(r);
    }
    let batches = buckets
        .into_iter()
        .map(|(aligned_us, mut records)| {
            records.sort_by(|a, b| {
                a.source_id
                    .cmp(&b.source_id)
                    .then(a.timestamp_us.cmp(&b.timestamp_us))
            });
            Batch { aligned_us, records }
        })
        .collect();
    Ok(Synchronized { batches, rejected })
}

/// 2-D rigid transform: rotate by `theta_rad`, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2 {
    pub theta_rad: f64,
    pub tx_m: f64,
    pub ty_m: f64,
}

impl Default for RigidTransform2 {
    fn default() -> Self {
        RigidTransform2::IDENTITY
    }
}

impl RigidTransform2 {
    pub const IDENTITY: RigidTransform2 = RigidTransform2 {
        theta_rad: 0.0,
        tx_m: 0.0,
        ty_m: 0.0,
    };

    pub fn new(theta_rad: f64, tx_m: f64, ty_m: f64) -> Self {
        RigidTransform2 { theta_rad, tx_m, ty_m }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = libm::sincos(self.theta_rad);
        (c * x - s * y + self.tx_m, s * x + c * y + self.ty_m)
    }

    /// `other ∘ self`: apply `self` first, then `other`.
    pub fn then(&self, other: &RigidTransform2) -> RigidTransform2 {
        let (tx, ty) = other.apply(self.tx_m, self.ty_m);
        RigidTransform2 {
            theta_rad: self.theta_rad + other.theta_rad,
            tx_m: tx,
            ty_m: ty,
        }
    }
}

pub type FrameTransforms = BTreeMap<String, RigidTransform2>;

/// Maps the record's anchor into the unified frame.
pub fn calibrate(record: RawRecord, transforms: &FrameTransforms) -> Result<RawRecord, IngestError> {
    let t = transforms
        .get(&record.calibration_frame)
        .ok_or_else(|| IngestError::MissingFrame(record.calibration_frame.clone()))?;
    let (x, y) = t.apply(record.anchor.x_m, record.anchor.y_m);
    Ok(RawRecord {
        anchor: GeoAnchor {
            x_m: x,
            y_m: y,
            ..record.anchor
        },
        calibration_frame: UNIFIED_FRAME.into(),
        ..record
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub default: Value,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub scalable: bool,
}

pub type Schema = BTreeMap<String, FieldSpec>;

/// Values clamped because they sat more than ten ranges outside `[min, max]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Anomalies {
    pub count: u64,
    pub flagged: Vec<(String, String, f64)>,
}

impl Anomalies {
    fn flag(&mut self, source_id: &str, key: &str, value: f64) {
        self.count += 1;
        self.flagged.push((source_id.into(), key.into(), value));
    }
}

fn normalize_number(spec: &FieldSpec, value: f64) -> f64 {
    let clamped = value.clamp(spec.min, spec.max);
    if !spec.scalable {
        return clamped;
    }
    let range = spec.max - spec.min;
    if range > 0.0 {
        (clamped - spec.min) / range
    } else {
        0.0
    }
}

/// Fills schema defaults for missing keys, clamps numeric schema values to
/// `[min, max]` and min-max scales those marked scalable. Non-schema keys
/// pass through verbatim. Far out-of-range values are clamped and counted.
pub fn normalize_structured(
    record: RawRecord,
    schema: &Schema,
    anomalies: &mut Anomalies,
) -> Result<RawRecord, IngestError> {
    if record.modality != Modality::Structured {
        return Err(IngestError::NotStructured(record.source_id));
    }
    let mut record = record;
    for (key, spec) in schema {
        let value = record.payload.get(key).cloned().unwrap_or_else(|| spec.default.clone());
        let normalized = match value {
            Value::Number(x) | Value::Quantity { value: x, .. } if !x.is_finite() => spec.default.clone(),
            Value::Number(x) => {
                check_anomaly(&record.source_id, key, spec, x, anomalies);
                Value::Number(normalize_number(spec, x))
            }
            Value::Quantity { value: x, unit } => {
                check_anomaly(&record.source_id, key, spec, x, anomalies);
                Value::Quantity {
                    value: normalize_number(spec, x),
                    unit,
                }
            }
            text @ Value::Text(_) => text,
        };
        record.payload.insert(key.clone(), normalized);
    }
    Ok(record)
}

fn check_anomaly(source_id: &str, key: &str, spec: &FieldSpec, x: f64, anomalies: &mut Anomalies) {
    let slack = 10.0 * (spec.max - spec.min);
    if x < spec.min - slack || x > spec.max + slack {
        anomalies.flag(source_id, key, x);
    }
}

/// Linearly interpolates numeric schema keys missing from structured
/// records, using the same source's nearest earlier and later samples when
/// both lie within one second. Anything else is left for default fill.
pub fn interpolate_missing(records: &mut [RawRecord], schema: &Schema) {
    let mut by_source: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.modality == Modality::Structured {
            by_source.entry(r.source_id.clone()).or_default().push(i);
        }
    }
    for idx in by_source.values_mut() {
        idx.sort_by_key(|&i| records[i].timestamp_us);
        for key in schema.keys() {
            let known: Vec<(i64, f64)> = idx
                .iter()
                .filter_map(|&i| {
                    let r = &records[i];
                    r.payload.get(key).and_then(Value::as_number).map(|v| (r.timestamp_us, v))
                })
                .collect();
            for &i in idx.iter() {
                if records[i].payload.contains_key(key) {
                    continue;
                }
                let t = records[i].timestamp_us;
                let prev = known.iter().rev().find(|(tk, _)| *tk < t);
                let next = known.iter().find(|(tk, _)| *tk > t);
                if let (Some(&(t0, v0)), Some(&(t1, v1))) = (prev, next) {
                    if t - t0 <= INTERPOLATION_REACH_US && t1 - t <= INTERPOLATION_REACH_US {
                        let w = (t - t0) as f64 / (t1 - t0) as f64;
                        records[i].payload.insert(key.clone(), Value::Number(v0 + w * (v1 - v0)));
                    }
                }
            }
        }
    }
}

/// Output of a captioner: symbolic fields plus reason and prediction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub fields: BTreeMap<String, Value>,
    pub reason: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct CaptionError(pub String);

/// Turns an unstructured-derived record into a language description.
pub trait Captioner {
    fn caption(&self, record: &RawRecord) -> Result<Caption, CaptionError>;
}

/// Deterministic captioner filling reason and prediction from fixed
/// per-field templates.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateCaptioner;

fn label(key: &str) -> String {
    key.trim_start_matches(EXTENSION_PREFIX).replace('_', " ")
}

fn predict(key: &str) -> String {
    match key {
        "objects" => "objects stay near the anchor".into(),
        "trajectory" => "agent keeps its path".into(),
        "lane_markings" | "traffic_signs" | "road_geometry" | "map_feature" => format!("{} unchanged", label(key)),
        "construction" => "reduced capacity ahead".into(),
        "abnormal_event" => "expect slowdowns".into(),
        "alert" => "prepare to brake".into(),
        "weather" => "weather persists".into(),
        "signal_state" => "signal holds until the next phase".into(),
        _ => format!("{} likely unchanged", label(key)),
    }
}

impl Captioner for TemplateCaptioner {
    fn caption(&self, record: &RawRecord) -> Result<Caption, CaptionError> {
        if !record.payload.values().any(Value::is_free_text) {
            return Err(CaptionError("no free-text content to describe".into()));
        }
        let fields: BTreeMap<String, Value> = record
            .payload
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::Text(s) => Value::Text(s.trim().into()),
                    other => other.clone(),
                };
                (k.clone(), v)
            })
            .collect();
        // Values already travel in `fields`; captions only name them.
        let observed: Vec<String> = fields.keys().map(|k| label(k)).collect();
        let predictions: Vec<String> = fields
            .iter()
            .filter(|(_, v)| v.is_free_text())
            .map(|(k, _)| predict(k))
            .collect();
        Ok(Caption {
            fields,
            reason: format!("observed {}", observed.join(", ")),
            prediction: predictions.join("; "),
        })
    }
}

/// Field groups: entries are formed per `(anchor, group)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FieldGroup {
    Map,
    Signal,
    Agent,
    Conditions,
    Extension,
}

impl FieldGroup {
    pub fn of_key(key: &str) -> Option<FieldGroup> {
        Some(match key {
            "lane_markings" | "traffic_signs" | "road_geometry" | "map_feature" => FieldGroup::Map,
            "signal_state" => FieldGroup::Signal,
            "objects" | "trajectory" | "velocity" | "object_type" => FieldGroup::Agent,
            "weather" | "traffic_conditions" | "density" | "alert" | "construction" | "abnormal_event" => {
                FieldGroup::Conditions
            }
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldGroup::Map => "map",
            FieldGroup::Signal => "signal",
            FieldGroup::Agent => "agent",
            FieldGroup::Conditions => "conditions",
            FieldGroup::Extension => "extension",
        }
    }
}

/// Stable id of the entry for `(anchor, group)` at `aligned_us`.
pub fn entry_id_for(anchor: &GeoAnchor, aligned_us: i64, group: FieldGroup) -> u64 {
    Fnv64::default()
        .part(anchor.intersection_id.as_bytes())
        .part(&anchor.x_m.to_bits().to_le_bytes())
        .part(&anchor.y_m.to_bits().to_le_bytes())
        .part(&aligned_us.to_le_bytes())
        .part(group.as_str().as_bytes())
        .finish()
}

fn split_by_group(fields: BTreeMap<String, Value>) -> BTreeMap<FieldGroup, BTreeMap<String, Value>> {
    // Extension keys follow the record's first vocabulary group.
    let home = fields
        .keys()
        .filter_map(|k| FieldGroup::of_key(k))
        .min()
        .unwrap_or(FieldGroup::Extension);
    let mut out: BTreeMap<FieldGroup, BTreeMap<String, Value>> = BTreeMap::new();
    for (k, v) in fields {
        let group = FieldGroup::of_key(&k).unwrap_or(home);
        out.entry(group).or_default().insert(k, v);
    }
    out
}

struct Draft {
    anchor: GeoAnchor,
    group: FieldGroup,
    fields: BTreeMap<String, Value>,
    reasons: Vec<String>,
    predictions: Vec<String>,
}

fn push_unique(list: &mut Vec<String>, s: String) {
    if !s.is_empty() && !list.contains(&s) {
        list.push(s);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Semanticized {
    pub entries: Vec<KnowledgeEntry>,
    pub errors: Vec<IngestError>,
}

/// Builds one entry per `(anchor, field group)` in the batch. Structured
/// payloads map directly; others go through the captioner. Records that
/// fail validation or captioning are skipped and reported.
pub fn semanticize(batch: &Batch, captioner: &dyn Captioner) -> Semanticized {
    let mut drafts: Vec<Draft> = Vec::new();
    let mut index: BTreeMap<(String, u64, u64, FieldGroup), usize> = BTreeMap::new();
    let mut errors = Vec::new();

    for record in &batch.records {
        if let Err(error) = record.validate() {
            errors.push(IngestError::Record {
                source_id: record.source_id.clone(),
                error,
            });
            continue;
        }
        let (fields, reason, prediction) = match record.modality {
            Modality::Structured => (record.payload.clone(), STRUCTURED_REASON.to_string(), String::new()),
            Modality::ImageSemantic | Modality::LidarSummary => match captioner.caption(record) {
                Ok(c) if !c.fields.is_empty() && !c.reason.is_empty() && !c.prediction.is_empty() => {
                    (c.fields, c.reason, c.prediction)
                }
                Ok(_) => {
                    errors.push(IngestError::Caption {
                        source_id: record.source_id.clone(),
                        detail: "caption is missing fields, reason or prediction".into(),
                    });
                    continue;
                }
                Err(e) => {
                    errors.push(IngestError::Caption {
                        source_id: record.source_id.clone(),
                        detail: e.0,
                    });
                    continue;
                }
            },
        };
        for (group, group_fields) in split_by_group(fields) {
            let a = &record.anchor;
            let key = (a.intersection_id.clone(), a.x_m.to_bits(), a.y_m.to_bits(), group);
            let slot = *index.entry(key).or_insert_with(|| {
                drafts.push(Draft {
                    anchor: a.clone(),
                    group,
                    fields: BTreeMap::new(),
                    reasons: Vec::new(),
                    predictions: Vec::new(),
                });
                drafts.len() - 1
            });
            let draft = &mut drafts[slot];
            for (k, v) in group_fields {
                draft.fields.entry(k).or_insert(v);
            }
            push_unique(&mut draft.reasons, reason.clone());
            push_unique(&mut draft.predictions, prediction.clone());
        }
    }

    let entries = drafts
        .into_iter()
        .map(|d| {
            let mut e = KnowledgeEntry::new(entry_id_for(&d.anchor, batch.aligned_us, d.group), d.anchor, batch.aligned_us);
            e.fields = d.fields;
            e.reason = d.reasons.join("; ");
            e.prediction = d.predictions.join("; ");
            e
        })
        .collect();
    Semanticized { entries, errors }
}

/// Outcome of routing and storing one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub entry_id: u64,
    pub partition: Partition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl IngestReceipt {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Routes each entry through the classifier and writes it. Receipts come
/// back in input order; a failed write does not undo earlier ones.
pub fn ingest_batch<W: PoolWriter + ?Sized>(
    entries: Vec<KnowledgeEntry>,
    pool: &W,
    classifier: &mut ClassifierState,
) -> Vec<IngestReceipt> {
    entries
        .into_iter()
        .map(|entry| {
            let routed = classifier.route(entry);
            let entry_id = routed.entry_id;
            let partition = routed.partition.unwrap_or(Partition::Static);
            match pool.insert(routed) {
                Ok(r) => IngestReceipt {
                    entry_id,
                    partition,
                    seq: Some(r.seq),
                    error: None,
                },
                Err(e) => IngestReceipt {
                    entry_id,
                    partition,
                    seq: None,
                    error: Some(e.code().into()),
                },
            }
        })
        .collect()
}
