#![allow(dead_code)]

use std::sync::Arc;

use unipool::client::Client;
use unipool::config::Config;
use unipool::pipeline::Ingestor;
use unipool::server::{BackgroundServer, Service};
use unipool::{PoolStore, StoreOptions};
use unipool_core::query::QueryRequirement;
use unipool_core::types::UNIFIED_FRAME;
use unipool_core::{GeoAnchor, Modality, Partition, RawRecord, Thresholds, Value};

pub fn structured(iid: &str, t_us: i64, key: &str, value: f64) -> RawRecord {
    RawRecord {
        source_id: format!("rsu-{iid}"),
        modality: Modality::Structured,
        timestamp_us: t_us,
        anchor: GeoAnchor::new(iid, 3.0, 4.0),
        payload: [(key.to_string(), Value::Number(value))].into_iter().collect(),
        calibration_frame: UNIFIED_FRAME.into(),
    }
}

pub fn memory_service() -> Arc<Service> {
    Arc::new(Service::new(Arc::new(PoolStore::in_memory(StoreOptions::default())), &Config::default()))
}

pub fn start(service: Arc<Service>) -> BackgroundServer {
    BackgroundServer::start(service, "127.0.0.1:0").expect("bind test server")
}

pub struct StressOutcome {
    pub messages: usize,
    pub protocol_errors: usize,
    pub live_total: usize,
    pub matches_replay: bool,
}

/// Four clients, each on its own intersection, send `per_client` messages:
/// three ingests to one query. The final store is compared with a
/// single-threaded replay of every acknowledged ingest.
pub fn stress(per_client: usize) -> StressOutcome {
    let service = memory_service();
    let server = start(service.clone());
    let addr = server.addr();
    let handles: Vec<_> = (0..4)
        .map(|c| {
            std::thread::spawn(move || {
                let iid = format!("int-c{c}");
                let mut client = Client::connect(addr).unwrap();
                let mut log = Vec::new();
                let mut errors = 0usize;
                for i in 0..per_client {
                    let t = 100_000 * (i as i64 + 1);
                    if i % 4 == 3 {
                        let r = QueryRequirement {
                            ego_anchor: GeoAnchor::new(iid.as_str(), 0.0, 0.0),
                            intent: "proceed through intersection".into(),
                            perception_summary: "density signal state".into(),
                            t_now_us: t,
                            horizon_s: 4.5,
                        };
                        match client.query(&r) {
                            Ok(reply) if serde_json::from_str::<serde_json::Value>(&reply.payload).is_ok() => {}
                            _ => errors += 1,
                        }
                        continue;
                    }
                    let mut rec = structured(&iid, t, "density", (i % 5) as f64);
                    if i % 2 == 1 {
                        rec.payload.clear();
                        rec.payload
                            .insert("signal_state".into(), Value::text(if i % 3 == 0 { "red" } else { "green" }));
                    }
                    match client.ingest(std::slice::from_ref(&rec)) {
                        Ok(rep) if rep.errors.is_empty() && rep.stored == 1 => log.push(rec),
                        _ => errors += 1,
                    }
                }
                (errors, log)
            })
        })
        .collect();
    let mut protocol_errors = 0;
    let mut logs = Vec::new();
    for h in handles {
        let (errors, log) = h.join().unwrap();
        protocol_errors += errors;
        logs.push(log);
    }
    server.shutdown().unwrap();

    let replay = Arc::new(PoolStore::in_memory(StoreOptions::default()));
    let ing = Ingestor::new(replay.clone(), Thresholds::default());
    for rec in logs.into_iter().flatten() {
        ing.ingest(vec![rec]);
    }
    let live = service.store();
    let rows = |s: &PoolStore, p| s.scan(p).iter().map(|e| (e.entry_id, e.partition)).collect::<Vec<_>>();
    let matches_replay =
        live.stats() == replay.stats() && Partition::ALL.iter().all(|&p| rows(live, p) == rows(&replay, p));
    StressOutcome {
        messages: 4 * per_client,
        protocol_errors,
        live_total: live.stats().total,
        matches_replay,
    }
}
