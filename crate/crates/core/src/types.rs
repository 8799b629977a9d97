//! Domain types shared by every stage of the pool.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use once_cell::race::OnceBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Local map frames are bounded to +/- 10 km around the intersection origin.
pub const LOCAL_FRAME_BOUND_M: f64 = 10_000.0;

/// Frame id carried by records after calibration.
pub const UNIFIED_FRAME: &str = "unified";

/// Controlled field vocabulary. Extension keys must start with [`EXTENSION_PREFIX`].
pub const FIELD_VOCABULARY: [&str; 15] = [
    "lane_markings",
    "traffic_signs",
    "weather",
    "traffic_conditions",
    "objects",
    "signal_state",
    "trajectory",
    "velocity",
    "object_type",
    "density",
    "alert",
    "construction",
    "abnormal_event",
    "road_geometry",
    "map_feature",
];

pub const EXTENSION_PREFIX: &str = "x_";

pub fn is_known_field_key(key: &str) -> bool {
    FIELD_VOCABULARY.contains(&key) || (key.len() > EXTENSION_PREFIX.len() && key.starts_with(EXTENSION_PREFIX))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("intersection id is empty")]
    EmptyIntersection,
    #[error("coordinate ({x_m}, {y_m}) outside the local frame")]
    OutOfBounds { x_m: f64, y_m: f64 },
}

/// Intersection id plus local map coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoAnchor {
    pub intersection_id: String,
    pub x_m: f64,
    pub y_m: f64,
}

impl GeoAnchor {
    pub fn new(intersection_id: impl Into<String>, x_m: f64, y_m: f64) -> Self {
        GeoAnchor {
            intersection_id: intersection_id.into(),
            x_m,
            y_m,
        }
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.intersection_id.is_empty() {
            return Err(AnchorError::EmptyIntersection);
        }
        let inside = |v: f64| v.is_finite() && v.abs() <= LOCAL_FRAME_BOUND_M;
        if !inside(self.x_m) || !inside(self.y_m) {
            return Err(AnchorError::OutOfBounds {
                x_m: self.x_m,
                y_m: self.y_m,
            });
        }
        Ok(())
    }

    pub fn distance_to(&self, other: &GeoAnchor) -> f64 {
        libm::hypot(self.x_m - other.x_m, self.y_m - other.y_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ImageSemantic,
    LidarSummary,
    Structured,
}

/// A payload or field value: a bare number, a number with a unit tag, or text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Quantity { value: f64, unit: String },
    Text(String),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) | Value::Quantity { value: v, .. } => Some(*v),
            Value::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Text containing whitespace counts as free text; single tokens are enum values.
    pub fn is_free_text(&self) -> bool {
        matches!(self, Value::Text(s) if s.trim().contains(char::is_whitespace))
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("timestamp {0} us is not positive")]
    NonPositiveTimestamp(i64),
    #[error("payload is empty")]
    EmptyPayload,
    #[error("invalid anchor: {0}")]
    Anchor(#[from] AnchorError),
    #[error("structured payload carries free text in `{0}`")]
    FreeTextInStructured(String),
    #[error("unstructured payload carries no free-text value")]
    NoFreeText,
    #[error("field key `{0}` is outside the vocabulary")]
    UnknownFieldKey(String),
}

/// One timestamped, anchored observation from an infrastructure source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source_id: String,
    pub modality: Modality,
    pub timestamp_us: i64,
    pub anchor: GeoAnchor,
    pub payload: BTreeMap<String, Value>,
    pub calibration_frame: String,
}

impl RawRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.timestamp_us <= 0 {
            return Err(RecordError::NonPositiveTimestamp(self.timestamp_us));
        }
        if self.payload.is_empty() {
            return Err(RecordError::EmptyPayload);
        }
        self.anchor.validate()?;
        if let Some(key) = self.payload.keys().find(|k| !is_known_field_key(k)) {
            return Err(RecordError::UnknownFieldKey(key.clone()));
        }
        match self.modality {
            Modality::Structured => {
                if let Some((key, _)) = self.payload.iter().find(|(_, v)| v.is_free_text()) {
                    return Err(RecordError::FreeTextInStructured(key.clone()));
                }
            }
            Modality::ImageSemantic | Modality::LidarSummary => {
                if !self.payload.values().any(Value::is_free_text) {
                    return Err(RecordError::NoFreeText);
                }
            }
        }
        Ok(())
    }
}

/// The three logical partitions of the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Partition {
    Static,
    #[serde(rename = "SF")]
    Sf,
    #[serde(rename = "HF")]
    Hf,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Static, Partition::Hf, Partition::Sf];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Static => "Static",
            Partition::Hf => "HF",
            Partition::Sf => "SF",
        }
    }

    /// Rank by dynamism: Static < SF < HF.
    pub fn dynamism(self) -> u8 {
        match self {
            Partition::Static => 0,
            Partition::Sf => 1,
            Partition::Hf => 2,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown partition `{0}`")]
pub struct UnknownPartition(pub String);

impl FromStr for Partition {
    type Err = UnknownPartition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(Partition::Static),
            "hf" | "high_freq" => Ok(Partition::Hf),
            "sf" | "lf" | "low_freq" => Ok(Partition::Sf),
            _ => Err(UnknownPartition(s.into())),
        }
    }
}

/// Lazily computed entry embedding, tagged with its dimension.
#[derive(Default)]
pub struct EmbeddingCache(OnceBox<(usize, Vec<f64>)>);

impl EmbeddingCache {
    pub fn get(&self, dim: usize) -> Option<&[f64]> {
        self.0.get().filter(|(d, _)| *d == dim).map(|(_, v)| v.as_slice())
    }

    /// Returns the cached vector, computing it at most once. Racing
    /// initializers produce identical vectors; one of them wins.
    pub fn get_or_init(&self, dim: usize, f: impl FnOnce() -> Vec<f64>) -> Option<&[f64]> {
        let (d, v) = self.0.get_or_init(|| Box::new((dim, f())));
        (*d == dim).then_some(v.as_slice())
    }

    pub fn is_set(&self) -> bool {
        self.0.get().is_some()
    }
}

impl Clone for EmbeddingCache {
    fn clone(&self) -> Self {
        let out = EmbeddingCache::default();
        if let Some(v) = self.0.get() {
            let _ = out.0.set(Box::new(v.clone()));
        }
        out
    }
}

impl fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0.get() {
            Some((d, _)) => write!(f, "EmbeddingCache(d={d})"),
            None => f.write_str("EmbeddingCache(empty)"),
        }
    }
}

/// A language-based pool row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: u64,
    pub anchor: GeoAnchor,
    pub timestamp_us: i64,
    pub fields: BTreeMap<String, Value>,
    pub reason: String,
    pub prediction: String,
    #[serde(default)]
    pub partition: Option<Partition>,
    #[serde(skip)]
    pub embedding: EmbeddingCache,
}

impl PartialEq for KnowledgeEntry {
    fn eq(&self, other: &Self) -> bool {
        self.entry_id == other.entry_id
            && self.anchor == other.anchor
            && self.timestamp_us == other.timestamp_us
            && self.fields == other.fields
            && self.reason == other.reason
            && self.prediction == other.prediction
            && self.partition == other.partition
    }
}

impl KnowledgeEntry {
    pub fn new(entry_id: u64, anchor: GeoAnchor, timestamp_us: i64) -> Self {
        KnowledgeEntry {
            entry_id,
            anchor,
            timestamp_us,
            fields: BTreeMap::new(),
            reason: String::new(),
            prediction: String::new(),
            partition: None,
            embedding: EmbeddingCache::default(),
        }
    }

    pub fn with_field(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub fn with_text(mut self, reason: impl Into<String>, prediction: impl Into<String>) -> Self {
        self.reason = reason.into();
        self.prediction = prediction.into();
        self
    }

    pub fn with_partition(mut self, partition: Partition) -> Self {
        self.partition = Some(partition);
        self
    }

    pub fn has_field(&self, key: &str) -> bool {
        self.fields.contains_key(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn record(modality: Modality, key: &str, value: Value) -> RawRecord {
        let mut payload = BTreeMap::new();
        payload.insert(key.to_string(), value);
        RawRecord {
            source_id: "rsu-1".into(),
            modality,
            timestamp_us: 1,
            anchor: GeoAnchor::new("int-1", 0.0, 0.0),
            payload,
            calibration_frame: UNIFIED_FRAME.into(),
        }
    }

    #[test]
    fn anchor_bounds() {
        assert!(GeoAnchor::new("a", 10_000.0, -10_000.0).validate().is_ok());
        assert_eq!(
            GeoAnchor::new("", 0.0, 0.0).validate(),
            Err(AnchorError::EmptyIntersection)
        );
        assert!(GeoAnchor::new("a", 10_000.1, 0.0).validate().is_err());
        assert!(GeoAnchor::new("a", f64::NAN, 0.0).validate().is_err());
    }

    #[test]
    fn modality_payload_rules() {
        assert!(record(Modality::Structured, "signal_state", "red".into()).validate().is_ok());
        assert_eq!(
            record(Modality::Structured, "objects", "two pedestrians".into()).validate(),
            Err(RecordError::FreeTextInStructured("objects".into()))
        );
        assert_eq!(
            record(Modality::ImageSemantic, "density", Value::Number(3.0)).validate(),
            Err(RecordError::NoFreeText)
        );
        assert_eq!(
            record(Modality::Structured, "speed", Value::Number(3.0)).validate(),
            Err(RecordError::UnknownFieldKey("speed".into()))
        );
        assert!(record(Modality::Structured, "x_lane_count", Value::Number(3.0)).validate().is_ok());
        let mut r = record(Modality::Structured, "density", Value::Number(3.0));
        r.timestamp_us = 0;
        assert_eq!(r.validate(), Err(RecordError::NonPositiveTimestamp(0)));
    }

    #[test]
    fn partition_parsing() {
        assert_eq!("hf".parse::<Partition>(), Ok(Partition::Hf));
        assert_eq!("Static".parse::<Partition>(), Ok(Partition::Static));
        assert_eq!("SF".parse::<Partition>(), Ok(Partition::Sf));
        assert!("XF".parse::<Partition>().is_err());
        assert!(Partition::Hf.dynamism() > Partition::Sf.dynamism());
    }

    #[test]
    fn value_json_shapes() {
        let v: Value = serde_json::from_str("12.5").unwrap();
        assert_eq!(v, Value::Number(12.5));
        let v: Value = serde_json::from_str(r#"{"value":3.0,"unit":"m/s"}"#).unwrap();
        assert_eq!(v.as_number(), Some(3.0));
        let v: Value = serde_json::from_str(r#""red""#).unwrap();
        assert_eq!(v.as_text(), Some("red"));
    }

    #[test]
    fn embedding_cache_is_write_once() {
        let cache = EmbeddingCache::default();
        assert!(cache.get(4).is_none());
        let v = cache.get_or_init(4, || alloc::vec![1.0, 0.0, 0.0, 0.0]).unwrap().to_vec();
        let again = cache.get_or_init(4, || alloc::vec![0.0; 4]).unwrap();
        assert_eq!(v, again);
        assert!(cache.get_or_init(8, || alloc::vec![0.0; 8]).is_none());
        assert_eq!(cache.clone().get(4), Some(v.as_slice()));
    }
}
