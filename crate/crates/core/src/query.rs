//! Requirement encoding, per-partition search and byte-budgeted fusion.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::encode::{self, DEFAULT_DIM};
use crate::pool::{PoolError, PoolReader, WindowQuery};
use crate::types::{GeoAnchor, KnowledgeEntry, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequirement {
    pub ego_anchor: GeoAnchor,
    pub intent: String,
    #[serde(default)]
    pub perception_summary: String,
    pub t_now_us: i64,
    pub horizon_s: f64,
}

impl QueryRequirement {
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.intent.trim().is_empty() && self.perception_summary.trim().is_empty() {
            return Err(QueryError::InvalidRequirement("intent and perception summary are both empty"));
        }
        if !(self.horizon_s > 0.0) || !self.horizon_s.is_finite() {
            return Err(QueryError::InvalidRequirement("horizon_s must be positive"));
        }
        self.ego_anchor
            .validate()
            .map_err(|_| QueryError::InvalidRequirement("malformed ego anchor"))
    }

    pub fn text(&self) -> String {
        let mut s = self.intent.clone();
        s.push(' ');
        s.push_str(&self.perception_summary);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub values: Vec<f64>,
}

impl QueryVector {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|x| *x == 0.0)
    }
}

/// Retrieval knobs. Times are seconds, distances meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub dim: usize,
    pub k_static: usize,
    pub k_sf: usize,
    pub k_hf: usize,
    pub tau_hf_s: f64,
    pub tau_sf_s: f64,
    pub rho_m: f64,
    pub lookback_hf_s: f64,
    pub lookback_sf_s: f64,
    pub budget_bytes: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            dim: DEFAULT_DIM,
            k_static: 4,
            k_sf: 4,
            k_hf: 8,
            tau_hf_s: 0.5,
            tau_sf_s: 5.0,
            rho_m: 100.0,
            lookback_hf_s: 2.0,
            lookback_sf_s: 60.0,
            budget_bytes: 4096,
        }
    }
}

impl RetrievalParams {
    pub fn k(&self, p: Partition) -> usize {
        match p {
            Partition::Static => self.k_static,
            Partition::Sf => self.k_sf,
            Partition::Hf => self.k_hf,
        }
    }

    /// Window start for `p` at `t_now_us`; static looks back forever.
    pub fn window_start(&self, p: Partition, t_now_us: i64) -> i64 {
        let secs = match p {
            Partition::Static => return i64::MIN,
            Partition::Sf => self.lookback_sf_s,
            Partition::Hf => self.lookback_hf_s,
        };
        t_now_us.saturating_sub(libm::round(secs * 1e6) as i64)
    }

    pub fn decay(&self, p: Partition, dt_s: f64) -> f64 {
        let dt = if dt_s > 0.0 { dt_s } else { 0.0 };
        match p {
            Partition::Static => 1.0,
            Partition::Sf => libm::exp(-dt / self.tau_sf_s),
            Partition::Hf => libm::exp(-dt / self.tau_hf_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("invalid requirement: {0}")]
    InvalidRequirement(&'static str),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("budget of {budget} bytes cannot hold the {needed}-byte empty envelope")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error(transparent)]
    Pool(#[from] PoolError),
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::InvalidRequirement(_) => "invalid_requirement",
            QueryError::InvalidK => "invalid_k",
            QueryError::BudgetTooSmall { .. } => "budget_too_small",
            QueryError::Pool(e) => e.code(),
        }
    }
}

/// Feature-hashes intent and perception summary into a unit (or zero) vector.
pub fn encode(r: &QueryRequirement, dim: usize) -> QueryVector {
    QueryVector {
        values: encode::hash_text(&r.text(), dim),
    }
}

#[derive(Debug, Clone)]
pub struct ScoredEntry {
    pub entry: Arc<KnowledgeEntry>,
    pub partition: Partition,
    pub score: f64,
}

/// Total order used everywhere a ranking is needed: score descending, then
/// newer timestamp, then smaller entry id.
pub fn rank_order(a: &ScoredEntry, b: &ScoredEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.entry.timestamp_us.cmp(&a.entry.timestamp_us))
        .then(a.entry.entry_id.cmp(&b.entry.entry_id))
}

/// `max(0, cos) × decay × gate` for one candidate.
pub fn score(q: &QueryVector, e: &KnowledgeEntry, partition: Partition, r: &QueryRequirement, params: &RetrievalParams) -> f64 {
    if r.ego_anchor.distance_to(&e.anchor) > params.rho_m {
        return 0.0;
    }
    let cos = encode::with_entry_embedding(e, params.dim, |v| encode::cosine(&q.values, v));
    let cos = cos.clamp(0.0, 1.0);
    let dt_s = (r.t_now_us - e.timestamp_us) as f64 / 1e6;
    cos * params.decay(partition, dt_s)
}

/// Top-`k` entries of one partition by score, zero scores excluded.
pub fn search<P: PoolReader + ?Sized>(
    pool: &P,
    q: &QueryVector,
    partition: Partition,
    r: &QueryRequirement,
    k: usize,
    params: &RetrievalParams,
) -> Result<Vec<ScoredEntry>, QueryError> {
    if k == 0 {
        return Err(QueryError::InvalidK);
    }
    let window = WindowQuery::new(
        partition,
        r.ego_anchor.intersection_id.clone(),
        params.window_start(partition, r.t_now_us),
        r.t_now_us,
    );
    let mut scored: Vec<ScoredEntry> = pool
        .query_window(&window)?
        .into_iter()
        .filter_map(|entry| {
            let s = score(q, &entry, partition, r, params);
            (s > 0.0).then_some(ScoredEntry {
                entry,
                partition,
                score: s,
            })
        })
        .collect();
    scored.sort_by(rank_order);
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone)]
pub struct FusedContext {
    pub static_entries: Vec<ScoredEntry>,
    pub low_freq: Vec<ScoredEntry>,
    pub high_freq: Vec<ScoredEntry>,
    pub t_us: i64,
    pub truncated: bool,
    /// Canonical serialization; its length is the transmission cost.
    pub payload: String,
    pub payload_bytes: usize,
}

impl FusedContext {
    pub fn len(&self) -> usize {
        self.static_entries.len() + self.low_freq.len() + self.high_freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &ScoredEntry> {
        self.static_entries.iter().chain(&self.low_freq).chain(&self.high_freq)
    }
}

fn section_index(p: Partition) -> usize {
    match p {
        Partition::Static => 0,
        Partition::Sf => 1,
        Partition::Hf => 2,
    }
}

/// Merges the three result lists into one canonical payload of at most
/// `budget_bytes`. Duplicated ids keep their best score; when the full
/// payload is too large the globally lowest-ranked entries are dropped.
pub fn fuse(
    e_static: &[ScoredEntry],
    e_hf: &[ScoredEntry],
    e_sf: &[ScoredEntry],
    budget_bytes: usize,
    t_us: i64,
) -> Result<FusedContext, QueryError> {
    let needed = canonical::write_payload([], [], [], t_us, true).len();
    if budget_bytes < needed {
        return Err(QueryError::BudgetTooSmall { budget: budget_bytes, needed });
    }

    let mut best: BTreeMap<u64, ScoredEntry> = BTreeMap::new();
    for item in e_static.iter().chain(e_sf).chain(e_hf) {
        match best.get(&item.entry.entry_id) {
            Some(kept) if kept.score >= item.score => {}
            _ => {
                best.insert(item.entry.entry_id, item.clone());
            }
        }
    }
    let mut ranked: Vec<(ScoredEntry, String)> = best
        .into_values()
        .map(|s| {
            let text = canonical::entry_to_string(&s.entry);
            (s, text)
        })
        .collect();
    ranked.sort_by(|a, b| rank_order(&a.0, &b.0));

    // Size of the first m ranked entries: envelope + items + separators.
    let full_size = |m: usize, truncated: bool| -> usize {
        let mut counts = [0usize; 3];
        let mut bytes = canonical::write_payload([], [], [], t_us, truncated).len();
        for (s, text) in &ranked[..m] {
            counts[section_index(s.partition)] += 1;
            bytes += text.len();
        }
        bytes + counts.iter().map(|c| c.saturating_sub(1)).sum::<usize>()
    };

    let (keep, truncated) = if full_size(ranked.len(), false) <= budget_bytes {
        (ranked.len(), false)
    } else {
        let mut m = 0;
        while m < ranked.len() && full_size(m + 1, true) <= budget_bytes {
            m += 1;
        }
        (m, true)
    };
    ranked.truncate(keep);

    let mut sections: [Vec<(ScoredEntry, String)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for item in ranked {
        sections[section_index(item.0.partition)].push(item);
    }
    let payload = canonical::write_payload(
        sections[0].iter().map(|(_, t)| t.as_str()),
        sections[1].iter().map(|(_, t)| t.as_str()),
        sections[2].iter().map(|(_, t)| t.as_str()),
        t_us,
        truncated,
    );
    let [s, l, h] = sections;
    let strip = |v: Vec<(ScoredEntry, String)>| v.into_iter().map(|(e, _)| e).collect::<Vec<_>>();
    Ok(FusedContext {
        static_entries: strip(s),
        low_freq: strip(l),
        high_freq: strip(h),
        t_us,
        truncated,
        payload_bytes: payload.len(),
        payload,
    })
}

/// Encode, search every partition and fuse.
pub fn retrieve<P: PoolReader + ?Sized>(
    pool: &P,
    r: &QueryRequirement,
    params: &RetrievalParams,
) -> Result<FusedContext, QueryError> {
    r.validate()?;
    let q = encode(r, params.dim);
    let mut lists: [Vec<ScoredEntry>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for p in Partition::ALL {
        lists[section_index(p)] = search(pool, &q, p, r, params.k(p), params)?;
    }
    fuse(&lists[0], &lists[2], &lists[1], params.budget_bytes, r.t_now_us)
}
