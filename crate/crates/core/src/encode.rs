//! Deterministic feature-hashing encoder.
//!
//! Text is lowercased, split on non-alphanumeric characters, and tokens
//! shorter than two characters are dropped. Each remaining token lands in
//! bucket `fnv1a64(token) % d` with sign taken from the top hash bit; the
//! accumulated vector is L2-normalized.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::types::KnowledgeEntry;

pub const DEFAULT_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Incremental FNV-1a, used for stable ids over several parts.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(FNV_OFFSET)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for b in bytes {
            self.0 = (self.0 ^ u64::from(*b)).wrapping_mul(FNV_PRIME);
        }
        self
    }

    /// Writes `bytes` followed by a 0xff separator so adjacent parts cannot alias.
    pub fn part(&mut self, bytes: &[u8]) -> &mut Self {
        self.write(bytes).write(&[0xff])
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_lowercase())
        .collect()
}

fn bucket_and_sign(token: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a64(token.as_bytes());
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

/// Hashes `text` into a unit vector of dimension `dim`, or the zero vector
/// when nothing survives tokenization (or all tokens cancel).
pub fn hash_text(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let (bucket, sign) = bucket_and_sign(&token, dim);
        v[bucket] += sign;
    }
    normalize(&mut v);
    v
}

pub fn normalize(v: &mut [f64]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Text the entry is embedded from: field keys, text values, reason, prediction.
pub fn entry_text(e: &KnowledgeEntry) -> String {
    let mut text = String::new();
    let mut push = |s: &str| {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(s);
    };
    for (key, value) in &e.fields {
        push(key);
        if let Some(t) = value.as_text() {
            push(t);
        }
    }
    push(&e.reason);
    push(&e.prediction);
    text
}

/// Embeds an entry, caching the vector on the entry itself.
pub fn embed_entry(e: &KnowledgeEntry, dim: usize) -> Vec<f64> {
    match e.embedding.get_or_init(dim, || hash_text(&entry_text(e), dim)) {
        Some(v) => v.to_vec(),
        None => hash_text(&entry_text(e), dim),
    }
}

/// Like [`embed_entry`] but hands the cached slice to `f` without copying.
pub fn with_entry_embedding<R>(e: &KnowledgeEntry, dim: usize, f: impl FnOnce(&[f64]) -> R) -> R {
    match e.embedding.get_or_init(dim, || hash_text(&entry_text(e), dim)) {
        Some(v) => f(v),
        None => f(&hash_text(&entry_text(e), dim)),
    }
}
