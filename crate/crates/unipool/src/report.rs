//! Corpus evaluation with and without retrieval, and the report tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use unipool_core::canonical::empty_envelope;
use unipool_core::evaluator::{
    collides, comfort_score_to, integrate_plan, l2_error, ComfortCoefficients, MetricsReport, ScenarioFailure,
    ScenarioRow, DEFAULT_COLLISION_RADIUS_M, HORIZONS_S,
};
use unipool_core::query::{retrieve, QueryRequirement, RetrievalParams};
use unipool_core::reasoner::{fuse_vehicle_context, fuse_vehicle_payload, plan};
use unipool_core::sim::{Scenario, RED_LIGHT_INTENT, RED_LIGHT_PERCEPTION};
use unipool_core::{Planner, Thresholds};

use crate::pipeline::Ingestor;
use crate::store::{PoolStore, StoreOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Arms {
    On,
    Off,
    Both,
}

impl Arms {
    pub fn flags(self) -> &'static [bool] {
        match self {
            Arms::On => &[true],
            Arms::Off => &[false],
            Arms::Both => &[true, false],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub thresholds: Thresholds,
    pub params: RetrievalParams,
    pub comfort: ComfortCoefficients,
    pub collision_radius_m: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            thresholds: Thresholds::default(),
            params: RetrievalParams::default(),
            comfort: ComfortCoefficients::default(),
            collision_radius_m: DEFAULT_COLLISION_RADIUS_M,
        }
    }
}

const PLAN_HORIZON_S: f64 = HORIZONS_S[HORIZONS_S.len() - 1];

/// Replays the scenario's records up to the planning tick into a fresh
/// pool, plans once and scores the plan at every horizon.
pub fn evaluate_scenario(s: &Scenario, retrieval: bool, planner: &dyn Planner, opts: &EvalOptions) -> anyhow::Result<ScenarioRow> {
    let vehicle = s.vehicle_state();
    let t_plan = s.plan_time_us();
    let (ctx, transmission_bytes) = if retrieval {
        let store = Arc::new(PoolStore::in_memory(StoreOptions::default()));
        let ingestor = Ingestor::new(store.clone(), opts.thresholds);
        let records: Vec<_> = s.emit_records().take_while(|r| r.timestamp_us <= t_plan).collect();
        ingestor.ingest(records);
        let req = QueryRequirement {
            ego_anchor: vehicle.ego_anchor.clone(),
            intent: RED_LIGHT_INTENT.into(),
            perception_summary: RED_LIGHT_PERCEPTION.into(),
            t_now_us: t_plan,
            horizon_s: PLAN_HORIZON_S,
        };
        let fused = retrieve(&*store, &req, &opts.params).context("retrieval")?;
        (fuse_vehicle_context(&vehicle, &fused)?, fused.payload_bytes as u64)
    } else {
        // Nothing is transmitted on the retrieval-off arm.
        (fuse_vehicle_payload(&vehicle, &empty_envelope(t_plan))?, 0)
    };

    let p = plan(&ctx, planner, PLAN_HORIZON_S)?;
    let pred = integrate_plan(&vehicle, &p);
    let gt = s.ego_future(PLAN_HORIZON_S);
    let mut row = ScenarioRow {
        scenario_id: s.id().to_string(),
        l2_m: [0.0; 3],
        collided: [false; 3],
        comfort: [0.0; 3],
        stop_line_violation: s.stop_line_violation(&pred, PLAN_HORIZON_S),
        transmission_bytes,
    };
    for (i, &h) in HORIZONS_S.iter().enumerate() {
        row.l2_m[i] = l2_error(&pred, &gt, h)?;
        row.collided[i] = collides(&pred, &s.agent_futures(h), h, opts.collision_radius_m);
        row.comfort[i] = comfort_score_to(&pred, h, &opts.comfort)?;
    }
    Ok(row)
}

pub fn run_report(corpus: &[Scenario], retrieval: bool, planner: &dyn Planner, opts: &EvalOptions) -> MetricsReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for s in corpus {
        match evaluate_scenario(s, retrieval, planner, opts) {
            Ok(r) => rows.push(r),
            Err(e) => failures.push(ScenarioFailure {
                scenario_id: s.id().to_string(),
                error: format!("{e:#}"),
            }),
        }
    }
    MetricsReport::aggregate(retrieval, rows, failures)
}

fn arm_name(retrieval: bool) -> &'static str {
    if retrieval {
        "with retrieval"
    } else {
        "without retrieval"
    }
}

fn horizon_cells(out: &mut String, map: &std::collections::BTreeMap<String, f64>, prec: usize) {
    for h in HORIZONS_S {
        let _ = write!(out, " {:>7.prec$}", MetricsReport::at(map, h));
    }
    let _ = write!(out, " {:>7.prec$} |", MetricsReport::avg(map));
}

/// Aligned table: L2, collision and comfort at 2.5/3.5/4.5 s plus Avg,
/// then transmission cost and stop-line violations.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let hz = "    2.5s    3.5s    4.5s     Avg |";
    let _ = writeln!(out, "{:<18} | {:^33}| {:^33}| {:^33}| {:>10} | {:>10} | {:>3}", "", "L2 (m)", "Collision (%)", "Comfort", "Tx (bytes)", "Violations", "n");
    let _ = writeln!(out, "{:<18} |{hz}{hz}{hz} {:>10} | {:>10} | {:>3}", "Method", "", "", "");
    for r in reports {
        let _ = write!(out, "{:<18} |", arm_name(r.retrieval));
        horizon_cells(&mut out, &r.l2_m, 2);
        horizon_cells(&mut out, &r.collision_pct_by_horizon, 1);
        horizon_cells(&mut out, &r.comfort, 3);
        let _ = writeln!(out, " {:>10} | {:>10} | {:>3}", r.transmission_bytes, r.stop_line_violations, r.n_scenarios);
    }
    for r in reports {
        for f in &r.failures {
            let _ = writeln!(out, "failed ({}): {}: {}", arm_name(r.retrieval), f.scenario_id, f.error);
        }
    }
    out
}

/// Side-by-side comparison of the two arms.
pub fn render_diff(on: &MetricsReport, off: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>14} {:>14} {:>14}", "Metric", "with", "without", "with-without");
    let mut line = |name: &str, a: f64, b: f64| {
        let _ = writeln!(out, "{name:<24} {a:>14.3} {b:>14.3} {:>14.3}", a - b);
    };
    for h in HORIZONS_S {
        line(&format!("L2 {h}s (m)"), MetricsReport::at(&on.l2_m, h), MetricsReport::at(&off.l2_m, h));
    }
    line("L2 Avg (m)", MetricsReport::avg(&on.l2_m), MetricsReport::avg(&off.l2_m));
    for h in HORIZONS_S {
        line(
            &format!("Collision {h}s (%)"),
            MetricsReport::at(&on.collision_pct_by_horizon, h),
            MetricsReport::at(&off.collision_pct_by_horizon, h),
        );
    }
    for h in HORIZONS_S {
        line(&format!("Comfort {h}s"), MetricsReport::at(&on.comfort, h), MetricsReport::at(&off.comfort, h));
    }
    line("Transmission (bytes)", on.transmission_bytes as f64, off.transmission_bytes as f64);
    line("Stop-line violations", on.stop_line_violations as f64, off.stop_line_violations as f64);
    out
}

/// Writes `report_on.json` / `report_off.json`, `table.txt` and, for both
/// arms, `diff.txt`. Returns the written paths.
pub fn write_reports(dir: &Path, reports: &[MetricsReport]) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> anyhow::Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    for r in reports {
        let name = if r.retrieval { "report_on.json" } else { "report_off.json" };
        put(name, serde_json::to_string_pretty(r)? + "\n")?;
    }
    put("table.txt", render_table(reports))?;
    let on = reports.iter().find(|r| r.retrieval);
    let off = reports.iter().find(|r| !r.retrieval);
    if let (Some(on), Some(off)) = (on, off) {
        put("diff.txt", render_diff(on, off))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use unipool_core::sim::{generate, red_light_corpus, ScenarioConfig};
    use unipool_core::RulePlanner;

    #[test]
    fn red_light_scenario_separates_the_arms() {
        let s = &red_light_corpus(1, 3)[0];
        let opts = EvalOptions::default();
        let on = evaluate_scenario(s, true, &RulePlanner, &opts).unwrap();
        let off = evaluate_scenario(s, false, &RulePlanner, &opts).unwrap();
        assert!(!on.stop_line_violation);
        assert!(off.stop_line_violation);
        assert!(on.transmission_bytes > 0 && off.transmission_bytes == 0);
    }

    #[test]
    fn table_has_one_row_per_arm() {
        let corpus = vec![generate(&ScenarioConfig::default())];
        let reports: Vec<_> = [true, false]
            .iter()
            .map(|&on| run_report(&corpus, on, &RulePlanner, &EvalOptions::default()))
            .collect();
        let t = render_table(&reports);
        assert!(t.contains("with retrieval") && t.contains("without retrieval"));
        assert_eq!(reports[0].n_scenarios + reports[0].failures.len(), 1);
    }
}
