//! Flat TOML configuration with `UNIPOOL_*` environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use unipool_core::query::RetrievalParams;
use unipool_core::Thresholds;

use crate::store::StoreOptions;

pub const ENV_PREFIX: &str = "UNIPOOL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub bind: String,
    pub store: PathBuf,
    pub sync_window_us: i64,
    /// Seconds between background compactions of the dynamic partitions; 0 disables.
    pub compact_interval_s: f64,
    #[serde(flatten)]
    pub store_options: StoreOptions,
    #[serde(flatten)]
    pub thresholds: Thresholds,
    #[serde(flatten)]
    pub retrieval: RetrievalParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: "127.0.0.1:7878".into(),
            store: PathBuf::from("unipool-data"),
            sync_window_us: unipool_core::ingest::DEFAULT_SYNC_WINDOW_US,
            compact_interval_s: 10.0,
            store_options: StoreOptions::default(),
            thresholds: Thresholds::default(),
            retrieval: RetrievalParams::default(),
        }
    }
}

fn known_keys() -> Vec<String> {
    match toml::Value::try_from(Config::default()) {
        Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Reads an override as a TOML scalar, falling back to a plain string.
fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl Config {
    /// Merges defaults, an optional TOML document and `UNIPOOL_<KEY>` variables.
    pub fn from_sources<I>(file: Option<&str>, env: I) -> anyhow::Result<Config>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let known = known_keys();
        let mut table = match file {
            Some(text) => toml::from_str::<toml::Table>(text).context("config is not valid TOML")?,
            None => toml::Table::new(),
        };
        if let Some(bad) = table.keys().find(|k| !known.contains(k)) {
            bail!("unknown config key `{bad}`");
        }
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            if known.contains(&key) {
                table.insert(key, parse_scalar(&raw));
            }
        }
        let cfg: Config = toml::Value::Table(table).try_into().context("invalid config value")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        Self::from_sources(text.as_deref(), std::env::vars())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.thresholds.validate()?;
        let r = &self.retrieval;
        if r.dim == 0 || r.k_static == 0 || r.k_sf == 0 || r.k_hf == 0 {
            bail!("dim and every k must be positive");
        }
        if !(r.tau_hf_s > 0.0 && r.tau_sf_s > 0.0 && r.rho_m >= 0.0 && r.lookback_hf_s >= 0.0 && r.lookback_sf_s >= 0.0) {
            bail!("decay constants must be positive and lookbacks non-negative");
        }
        let s = &self.store_options;
        if !(s.retention_hf_s > 0.0 && s.retention_sf_s > 0.0) {
            bail!("retention must be positive");
        }
        if self.sync_window_us <= 0 || !(self.compact_interval_s >= 0.0) {
            bail!("sync_window_us must be positive and compact_interval_s non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&Config::default()).unwrap();
        let back = Config::from_sources(Some(&text), std::iter::empty()).unwrap();
        assert_eq!(back, Config::default());
    }

    #[test]
    fn integer_literal_accepted_for_real_key() {
        let cfg = Config::from_sources(Some("tau_hf_s = 2"), std::iter::empty()).unwrap();
        assert_eq!(cfg.retrieval.tau_hf_s, 2.0);
    }
}
