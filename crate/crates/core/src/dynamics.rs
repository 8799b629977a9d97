//! Change-rate estimation and Static / HF / SF routing.
//!
//! Each `(intersection, field)` pair keeps a bounded window of samples. For
//! numeric fields the rate is the mean absolute slope after min-max
//! normalizing the window; for text fields it is the number of value changes
//! per second. Together with the window's sampling frequency this decides
//! the partition:
//!
//! * HF when `rate >= eps_high` and `freq >= hf_freq_hz`
//! * SF when `rate >= eps_low` and the HF clause does not hold
//! * Static when `rate < eps_low`

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::format_number;
use crate::types::{GeoAnchor, KnowledgeEntry, Partition, Value};

pub const DEFAULT_WINDOW_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("timestamp {got} us does not advance past {last} us")]
    NonIncreasing { last: i64, got: i64 },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub eps_low: f64,
    pub eps_high: f64,
    pub horizon_s: f64,
    pub hf_freq_hz: f64,
    pub lf_freq_hz: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eps_low: 0.05,
            eps_high: 0.5,
            horizon_s: 4.5,
            hf_freq_hz: 10.0,
            lf_freq_hz: 1.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.eps_low > 0.0 && self.eps_low < self.eps_high) {
            return Err(DynamicsError::InvalidThresholds("require 0 < eps_low < eps_high"));
        }
        if !(self.horizon_s > 0.0) {
            return Err(DynamicsError::InvalidThresholds("horizon_s must be positive"));
        }
        if !(self.lf_freq_hz > 0.0 && self.lf_freq_hz < self.hf_freq_hz) {
            return Err(DynamicsError::InvalidThresholds("require 0 < lf_freq_hz < hf_freq_hz"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sample {
    Numeric(f64),
    Text(String),
}

impl Sample {
    fn from_value(v: &Value) -> Self {
        match v {
            Value::Number(x) | Value::Quantity { value: x, .. } => Sample::Numeric(*x),
            Value::Text(s) => Sample::Text(s.clone()),
        }
    }

    fn render(&self) -> String {
        match self {
            Sample::Numeric(x) => format_number(*x),
            Sample::Text(s) => s.clone(),
        }
    }
}

/// Running change-rate estimate for one `(anchor, field_key)` stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsProfile {
    pub anchor: GeoAnchor,
    pub field_key: String,
    capacity: usize,
    window: VecDeque<(i64, Sample)>,
    rate_estimate: f64,
    sample_freq_hz: f64,
    /// `None` until the stream has been classified from at least two samples.
    pub last_partition: Option<Partition>,
}

impl DynamicsProfile {
    pub fn new(anchor: GeoAnchor, field_key: impl Into<String>, capacity: usize) -> Self {
        assert!(capacity >= 2, "window capacity must hold at least two samples");
        DynamicsProfile {
            anchor,
            field_key: field_key.into(),
            capacity,
            window: VecDeque::with_capacity(capacity),
            rate_estimate: 0.0,
            sample_freq_hz: 0.0,
            last_partition: None,
        }
    }

    /// Normalized change per second.
    pub fn rate_estimate(&self) -> f64 {
        self.rate_estimate
    }

    pub fn sample_freq_hz(&self) -> f64 {
        self.sample_freq_hz
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.window.back().map(|(t, _)| *t)
    }

    /// Appends a sample, evicting the oldest at capacity. A timestamp that
    /// does not advance is rejected and leaves the profile untouched.
    pub fn update(&mut self, timestamp_us: i64, value: &Value) -> Result<(), DynamicsError> {
        if let Some(last) = self.last_timestamp() {
            if timestamp_us <= last {
                return Err(DynamicsError::NonIncreasing {
                    last,
                    got: timestamp_us,
                });
            }
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back((timestamp_us, Sample::from_value(value)));
        self.recompute();
        Ok(())
    }

    fn recompute(&mut self) {
        let n = self.window.len();
        if n < 2 {
            self.rate_estimate = 0.0;
            self.sample_freq_hz = 0.0;
            return;
        }
        let first = self.window.front().map(|(t, _)| *t).unwrap_or_default();
        let last = self.window.back().map(|(t, _)| *t).unwrap_or_default();
        let duration_us = (last - first) as f64;
        self.sample_freq_hz = (n - 1) as f64 * 1e6 / duration_us;

        let numeric: Option<alloc::vec::Vec<f64>> = self
            .window
            .iter()
            .map(|(_, s)| match s {
                Sample::Numeric(x) if x.is_finite() => Some(*x),
                _ => None,
            })
            .collect();

        self.rate_estimate = match numeric {
            Some(values) => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = hi - lo;
                if span == 0.0 {
                    0.0
                } else {
                    let sum: f64 = self
                        .window
                        .iter()
                        .zip(self.window.iter().skip(1))
                        .zip(values.iter().zip(values.iter().skip(1)))
                        .map(|(((t0, _), (t1, _)), (v0, v1))| {
                            let dt_s = (t1 - t0) as f64 / 1e6;
                            ((v1 - v0) / span).abs() / dt_s
                        })
                        .sum();
                    sum / (n - 1) as f64
                }
            }
            None => {
                let rendered: alloc::vec::Vec<String> = self.window.iter().map(|(_, s)| s.render()).collect();
                let changes = rendered.windows(2).filter(|w| w[0] != w[1]).count();
                changes as f64 * 1e6 / duration_us
            }
        };
    }
}

/// Partition for a profile under `th`. Fewer than two samples yields the
/// profile's previous class, or Static on cold start.
pub fn classify(profile: &DynamicsProfile, th: &Thresholds) -> Partition {
    if profile.len() < 2 {
        return profile.last_partition.unwrap_or(Partition::Static);
    }
    let rate = profile.rate_estimate;
    if rate >= th.eps_high && profile.sample_freq_hz >= th.hf_freq_hz {
        Partition::Hf
    } else if rate >= th.eps_low {
        // Fast change observed at a low sampling rate also lands here.
        Partition::Sf
    } else {
        Partition::Static
    }
}

/// Owns every dynamics profile and routes entries to partitions.
#[derive(Debug, Clone)]
pub struct ClassifierState {
    pub thresholds: Thresholds,
    capacity: usize,
    profiles: BTreeMap<(String, String), DynamicsProfile>,
}

impl Default for ClassifierState {
    fn default() -> Self {
        ClassifierState::new(Thresholds::default(), DEFAULT_WINDOW_CAPACITY)
    }
}

impl ClassifierState {
    pub fn new(thresholds: Thresholds, capacity: usize) -> Self {
        ClassifierState {
            thresholds,
            capacity,
            profiles: BTreeMap::new(),
        }
    }

    pub fn profile(&self, intersection_id: &str, field_key: &str) -> Option<&DynamicsProfile> {
        self.profiles.get(&(intersection_id.into(), field_key.into()))
    }

    pub fn profile_count(&self) -> usize {
        self.profiles.len()
    }

    /// Classifies one field observation, updating its profile.
    ///
    /// Several entries in one batch can share a key and a timestamp; only the
    /// first of them updates the profile, the rest reuse its current class.
    pub fn observe(&mut self, anchor: &GeoAnchor, field_key: &str, timestamp_us: i64, value: &Value) -> Partition {
        let capacity = self.capacity;
        let profile = self
            .profiles
            .entry((anchor.intersection_id.clone(), field_key.into()))
            .or_insert_with(|| DynamicsProfile::new(anchor.clone(), field_key, capacity));
        let _ = profile.update(timestamp_us, value);
        let class = classify(profile, &self.thresholds);
        if profile.len() >= 2 {
            profile.last_partition = Some(class);
        }
        class
    }

    /// Tags `entry` with the class of its most dynamic field (HF > SF > Static).
    pub fn route(&mut self, mut entry: KnowledgeEntry) -> KnowledgeEntry {
        let mut partition = Partition::Static;
        for (key, value) in &entry.fields {
            let class = self.observe(&entry.anchor, key, entry.timestamp_us, value);
            if class.dynamism() > partition.dynamism() {
                partition = class;
            }
        }
        entry.partition = Some(partition);
        entry
    }
}
