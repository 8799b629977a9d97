//! Deterministic synthetic 4-way intersection scenarios.
//!
//! Each approach is a straight lane through the center. A body on approach
//! `u` at arc position `σ` sits at `σ·u + LANE_OFFSET·r` with `r` the right
//! normal of `u`, so eastbound traffic uses `y = -1.75`. Stop lines are at
//! `σ = STOP_SIGMA`.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::format_number;
use crate::evaluator::{line_crossing_time, Trajectory2D};
use crate::reasoner::{VehicleState, STOP_LINE_FIELD};
use crate::types::{GeoAnchor, KnowledgeEntry, Modality, RawRecord, Value};

pub const TICK_US: i64 = 100_000;
pub const CONTEXT_PERIOD_US: i64 = 1_000_000;
pub const DT_S: f64 = 0.1;
pub const LANE_OFFSET_M: f64 = 1.75;
pub const STOP_SIGMA: f64 = -6.0;
pub const DEFAULT_START_US: i64 = 1_700_000_000_000_000;

const MIN_BRAKE: f64 = 2.0;
const MAX_BRAKE: f64 = 6.0;
const LAUNCH_ACCEL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalPhase {
    Green,
    Yellow,
    Red,
}

impl SignalPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalPhase::Green => "green",
            SignalPhase::Yellow => "yellow",
            SignalPhase::Red => "red",
        }
    }
}

/// Direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Eastbound,
    Westbound,
    Northbound,
    Southbound,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::Eastbound,
        Approach::Westbound,
        Approach::Northbound,
        Approach::Southbound,
    ];

    pub fn direction(self) -> (f64, f64) {
        match self {
            Approach::Eastbound => (1.0, 0.0),
            Approach::Westbound => (-1.0, 0.0),
            Approach::Northbound => (0.0, 1.0),
            Approach::Southbound => (0.0, -1.0),
        }
    }

    pub fn heading(self) -> f64 {
        let (ux, uy) = self.direction();
        libm::atan2(uy, ux)
    }

    pub fn position(self, sigma: f64) -> (f64, f64) {
        let (ux, uy) = self.direction();
        (sigma * ux + LANE_OFFSET_M * uy, sigma * uy - LANE_OFFSET_M * ux)
    }

    pub fn stop_line(self) -> (f64, f64) {
        self.position(STOP_SIGMA)
    }

    fn east_west(self) -> bool {
        matches!(self, Approach::Eastbound | Approach::Westbound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub approach: Approach,
    pub start_sigma: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    pub approach: Approach,
    pub start_sigma: f64,
    pub speed: f64,
}

impl Default for EgoSpec {
    fn default() -> Self {
        EgoSpec {
            approach: Approach::Eastbound,
            start_sigma: -40.0,
            speed: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub n_agents: usize,
    pub duration_s: f64,
    pub intersection_id: String,
    /// East-west phases, cycled. North-south is green exactly when east-west is red.
    pub signal_plan: Vec<(SignalPhase, f64)>,
    pub include_construction: bool,
    pub include_abnormal_event: bool,
    pub plan_at_s: f64,
    pub start_us: i64,
    pub jitter_us: i64,
    pub ego: EgoSpec,
    pub scripted_agents: Vec<AgentSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            seed: 0,
            n_agents: 4,
            duration_s: 10.0,
            intersection_id: "int-0".into(),
            signal_plan: vec![(SignalPhase::Green, 4.0), (SignalPhase::Yellow, 1.0), (SignalPhase::Red, 5.0)],
            include_construction: true,
            include_abnormal_event: true,
            plan_at_s: 3.0,
            start_us: DEFAULT_START_US,
            jitter_us: 0,
            ego: EgoSpec::default(),
            scripted_agents: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.duration_s > 0.0) {
            return Err("duration_s must be positive");
        }
        if self.signal_plan.is_empty() || self.signal_plan.iter().any(|(_, d)| !(*d > 0.0)) {
            return Err("signal phases need positive durations");
        }
        if self.intersection_id.is_empty() {
            return Err("intersection_id is empty");
        }
        if self.start_us <= 0 || self.jitter_us < 0 {
            return Err("start_us must be positive and jitter_us non-negative");
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        libm::round(self.duration_s / DT_S) as usize
    }

    /// East-west phase and seconds until it changes.
    pub fn east_west_phase(&self, t_s: f64) -> (SignalPhase, f64) {
        let cycle: f64 = self.signal_plan.iter().map(|p| p.1).sum();
        let mut t = libm::fmod(t_s, cycle);
        if t < 0.0 {
            t += cycle;
        }
        for &(phase, d) in &self.signal_plan {
            if t < d - 1e-9 {
                return (phase, d - t);
            }
            t -= d;
        }
        let last = self.signal_plan[self.signal_plan.len() - 1];
        (last.0, 0.0)
    }

    pub fn phase_for(&self, approach: Approach, t_s: f64) -> SignalPhase {
        let (ew, _) = self.east_west_phase(t_s);
        if approach.east_west() {
            ew
        } else if ew == SignalPhase::Red {
            SignalPhase::Green
        } else {
            SignalPhase::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub approach: Approach,
    pub cruise_speed: f64,
    /// Whether the agent ever braked for a signal.
    pub braked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub static_elements: Vec<KnowledgeEntry>,
    pub agent_truth: BTreeMap<String, Trajectory2D>,
    pub agent_meta: BTreeMap<String, AgentMeta>,
    /// East-west phase at every tick, absolute timestamps.
    pub signal_truth: Vec<(i64, SignalPhase)>,
    pub ego_truth: Trajectory2D,
    pub ego_speeds: Vec<f64>,
    /// Density at every 1 Hz context tick.
    pub density: Vec<f64>,
}

struct Body {
    approach: Approach,
    sigma: f64,
    v: f64,
    cruise: f64,
    brake: Option<f64>,
    braked: bool,
}

impl Body {
    fn new(approach: Approach, sigma: f64, speed: f64) -> Self {
        Body {
            approach,
            sigma,
            v: speed,
            cruise: speed,
            brake: None,
            braked: false,
        }
    }

    fn pose(&self) -> (f64, f64, f64) {
        let (x, y) = self.approach.position(self.sigma);
        (x, y, self.approach.heading())
    }

    /// Advances one tick under the light shown at the start of the tick.
    fn step(&mut self, green: bool) {
        if green {
            self.brake = None;
        } else if self.brake.is_none() && self.sigma < STOP_SIGMA && self.v > 0.0 {
            let a = self.v * self.v / (2.0 * (STOP_SIGMA - self.sigma));
            if (MIN_BRAKE..=MAX_BRAKE).contains(&a) {
                self.brake = Some(a);
                self.braked = true;
            }
        }
        match self.brake {
            Some(a) => {
                if self.v - a * DT_S > 0.0 {
                    self.sigma += self.v * DT_S - 0.5 * a * DT_S * DT_S;
                    self.v -= a * DT_S;
                } else if self.v > 0.0 {
                    self.sigma += self.v * self.v / (2.0 * a);
                    self.v = 0.0;
                }
            }
            None if self.v < self.cruise => {
                let v1 = (self.v + LAUNCH_ACCEL * DT_S).min(self.cruise);
                self.sigma += 0.5 * (self.v + v1) * DT_S;
                self.v = v1;
            }
            None => self.sigma += self.v * DT_S,
        }
    }
}

fn simulate(cfg: &ScenarioConfig, mut body: Body) -> (Trajectory2D, Vec<f64>, bool) {
    let n = cfg.ticks();
    let mut points = Vec::with_capacity(n + 1);
    let mut speeds = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * DT_S;
        let (x, y, h) = body.pose();
        points.push((t, x, y, h));
        speeds.push(body.v);
        if k < n {
            body.step(cfg.phase_for(body.approach, t) == SignalPhase::Green);
        }
    }
    (Trajectory2D { points, dt_s: DT_S }, speeds, body.braked)
}

fn static_elements(cfg: &ScenarioConfig) -> Vec<KnowledgeEntry> {
    let id = &cfg.intersection_id;
    let items: [(&str, (f64, f64), &str); 4] = [
        ("road_geometry", (0.0, 0.0), "4-way intersection with one lane per approach"),
        ("lane_markings", (-12.0, -1.75), "solid stop line and dashed center line on each approach"),
        ("traffic_signs", (-8.0, -4.0), "signal ahead sign and no u-turn sign"),
        ("map_feature", (-4.0, 4.0), "crosswalk on every approach"),
    ];
    items
        .iter()
        .enumerate()
        .map(|(i, (key, (x, y), text))| {
            KnowledgeEntry::new(i as u64 + 1, GeoAnchor::new(id.as_str(), *x, *y), cfg.start_us)
                .with_field(*key, *text)
                .with_text("surveyed map element", "unchanged over the planning horizon")
        })
        .collect()
}

/// Builds a scenario; identical configs give bit-identical scenarios.
pub fn generate(cfg: &ScenarioConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut specs = cfg.scripted_agents.clone();
    for i in 0..cfg.n_agents {
        let approach = Approach::ALL[rng.gen_range(0..4)];
        specs.push(AgentSpec {
            id: format!("agent-{i}"),
            approach,
            start_sigma: rng.gen_range(-60.0..-15.0),
            speed: rng.gen_range(5.0..12.0),
        });
    }
    let mut agent_truth = BTreeMap::new();
    let mut agent_meta = BTreeMap::new();
    for spec in &specs {
        let (traj, _, braked) = simulate(cfg, Body::new(spec.approach, spec.start_sigma, spec.speed));
        agent_truth.insert(spec.id.clone(), traj);
        agent_meta.insert(
            spec.id.clone(),
            AgentMeta {
                approach: spec.approach,
                cruise_speed: spec.speed,
                braked,
            },
        );
    }
    let (ego_truth, ego_speeds, _) = simulate(cfg, Body::new(cfg.ego.approach, cfg.ego.start_sigma, cfg.ego.speed));

    let n = cfg.ticks();
    let signal_truth = (0..n)
        .map(|k| (cfg.start_us + k as i64 * TICK_US, cfg.east_west_phase(k as f64 * DT_S).0))
        .collect();
    let mut density = Vec::new();
    let mut d: f64 = rng.gen_range(5..30) as f64;
    for _ in (0..n).step_by(10) {
        density.push(d);
        d = if rng.gen_bool(0.5) || d < 1.0 { d + 1.0 } else { d - 1.0 };
    }
    Scenario {
        config: cfg.clone(),
        static_elements: static_elements(cfg),
        agent_truth,
        agent_meta,
        signal_truth,
        ego_truth,
        ego_speeds,
        density,
    }
}

impl Scenario {
    pub fn id(&self) -> &str {
        &self.config.name
    }

    pub fn plan_index(&self) -> usize {
        libm::round(self.config.plan_at_s / DT_S) as usize
    }

    pub fn plan_time_us(&self) -> i64 {
        self.config.start_us + self.plan_index() as i64 * TICK_US
    }

    /// Ego state at the planning tick with the last second of speed history.
    pub fn vehicle_state(&self) -> VehicleState {
        let k = self.plan_index().min(self.ego_truth.points.len() - 1);
        let p = self.ego_truth.points[k];
        let from = k.saturating_sub(10);
        let at = |i: usize| self.config.start_us + i as i64 * TICK_US;
        VehicleState {
            ego_anchor: GeoAnchor::new(self.config.intersection_id.as_str(), p.1, p.2),
            heading_rad: p.3,
            speed_history: (from..=k).map(|i| (at(i), self.ego_speeds[i])).collect(),
            curvature_history: (from..=k).map(|i| (at(i), 0.0)).collect(),
        }
    }

    /// Ground-truth ego future from the planning tick.
    pub fn ego_future(&self, horizon_s: f64) -> Trajectory2D {
        self.ego_truth.window(self.config.plan_at_s, horizon_s)
    }

    pub fn agent_futures(&self, horizon_s: f64) -> Vec<Trajectory2D> {
        self.agent_truth
            .values()
            .map(|t| t.window(self.config.plan_at_s, horizon_s))
            .collect()
    }

    /// Whether `traj` (starting at the planning tick) crosses the ego stop
    /// line while the ego light is not green.
    pub fn stop_line_violation(&self, traj: &Trajectory2D, horizon_s: f64) -> bool {
        let approach = self.config.ego.approach;
        match line_crossing_time(traj, approach.stop_line(), approach.direction(), horizon_s) {
            Some(t) => self.config.phase_for(approach, self.config.plan_at_s + t) != SignalPhase::Green,
            None => false,
        }
    }

    /// Pull-based record stream in timestamp order.
    pub fn emit_records(&self) -> RecordStream<'_> {
        RecordStream {
            scenario: self,
            tick: 0,
            buffer: VecDeque::new(),
            jitter: ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x6a17_7e55),
        }
    }
}

pub struct RecordStream<'a> {
    scenario: &'a Scenario,
    tick: usize,
    buffer: VecDeque<RawRecord>,
    jitter: ChaCha8Rng,
}

fn record(source: &str, modality: Modality, t_us: i64, anchor: GeoAnchor, payload: Vec<(&str, Value)>) -> RawRecord {
    RawRecord {
        source_id: source.into(),
        modality,
        timestamp_us: t_us,
        anchor,
        payload: payload.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        calibration_frame: crate::types::UNIFIED_FRAME.into(),
    }
}

impl RecordStream<'_> {
    fn fill(&mut self, k: usize) {
        let s = self.scenario;
        let cfg = &s.config;
        let iid = cfg.intersection_id.as_str();
        let t_us = cfg.start_us + k as i64 * TICK_US;
        let t_s = k as f64 * DT_S;

        if k == 0 {
            for e in &s.static_elements {
                let payload = e.fields.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                self.buffer
                    .push_back(record("rsu-camera", Modality::ImageSemantic, t_us, e.anchor.clone(), payload));
            }
        }

        let (phase, remaining) = cfg.east_west_phase(t_s);
        let (sx, sy) = cfg.ego.approach.stop_line();
        let stop_line = format!("{},{}", format_number(sx), format_number(sy));
        self.buffer.push_back(record(
            "rsu-signal",
            Modality::Structured,
            t_us,
            GeoAnchor::new(iid, sx, sy),
            vec![
                ("signal_state", Value::text(phase.as_str())),
                ("x_time_to_change", Value::text(&format!("{remaining:.1}s"))),
                (STOP_LINE_FIELD, Value::text(&stop_line)),
            ],
        ));

        for (id, traj) in &s.agent_truth {
            let p = traj.points[k];
            let speed = if k + 1 < traj.points.len() {
                libm::hypot(traj.points[k + 1].1 - p.1, traj.points[k + 1].2 - p.2) / DT_S
            } else {
                s.agent_meta[id].cruise_speed
            };
            self.buffer.push_back(record(
                &format!("rsu-track-{id}"),
                Modality::Structured,
                t_us,
                GeoAnchor::new(iid, p.1, p.2),
                vec![
                    ("object_type", Value::text("car")),
                    (
                        "velocity",
                        Value::Quantity {
                            value: speed,
                            unit: "m/s".into(),
                        },
                    ),
                    ("trajectory", Value::text(&format!("{},{}", format_number(p.1), format_number(p.2)))),
                ],
            ));
        }

        if k % 10 == 0 {
            let anchor = GeoAnchor::new(iid, 12.0, 12.0);
            let levels = ["light", "moderate", "heavy"];
            let d = s.density[k / 10];
            self.buffer.push_back(record(
                "rsu-env",
                Modality::Structured,
                t_us,
                anchor.clone(),
                vec![
                    ("density", Value::Number(d)),
                    ("weather", Value::text("clear")),
                    ("traffic_conditions", Value::text(levels[(d as usize / 10).min(2)])),
                ],
            ));
            let mut events = Vec::new();
            if cfg.include_construction {
                events.push(("construction", Value::text("right shoulder closed for road works")));
            }
            if cfg.include_abnormal_event {
                events.push(("abnormal_event", Value::text("stalled truck near north crosswalk")));
            }
            if !events.is_empty() {
                self.buffer
                    .push_back(record("rsu-camera", Modality::ImageSemantic, t_us, anchor, events));
            }
        }

        if cfg.jitter_us > 0 {
            for r in self.buffer.iter_mut() {
                r.timestamp_us += self.jitter.gen_range(0..cfg.jitter_us);
            }
        }
    }
}

impl Iterator for RecordStream<'_> {
    type Item = RawRecord;

    fn next(&mut self) -> Option<RawRecord> {
        while self.buffer.is_empty() {
            if self.tick >= self.scenario.config.ticks() {
                return None;
            }
            let k = self.tick;
            self.tick += 1;
            self.fill(k);
        }
        self.buffer.pop_front()
    }
}

/// Intent used when planning on the red-light corpus.
pub const RED_LIGHT_INTENT: &str = "proceed through intersection";
pub const RED_LIGHT_PERCEPTION: &str = "approaching signal stop line; signal state not visible";

/// Scenarios where the ego faces a red light it cannot see locally and a
/// cross-traffic vehicle reaches the conflict point exactly when a
/// speed-holding ego would.
pub fn red_light_corpus(n: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let plan_at_s = 3.0;
            let v: f64 = rng.gen_range(10.0..12.5);
            // Far enough for a 3 m/s² stop, near enough that holding speed crosses
            // the line and reaches the conflict point inside 4.5 s.
            let d_min = v * v / 4.0 + 1.0;
            let d_max = (4.5 * v - 9.75).min(48.0);
            let d = rng.gen_range(d_min..d_max);
            let ego_start = STOP_SIGMA - d - plan_at_s * v;

            let conflict_sigma_ego = LANE_OFFSET_M;
            let t_conflict = plan_at_s + (d + (conflict_sigma_ego - STOP_SIGMA)) / v;
            let u: f64 = rng.gen_range(8.0..12.0);
            // Northbound lane crosses the eastbound lane at σ = -1.75.
            let cross_start = -LANE_OFFSET_M - u * t_conflict;

            let cfg = ScenarioConfig {
                name: format!("red-light-{i:03}"),
                seed: rng.gen(),
                n_agents: 0,
                signal_plan: vec![(SignalPhase::Red, 30.0), (SignalPhase::Green, 20.0)],
                include_construction: false,
                include_abnormal_event: false,
                plan_at_s,
                ego: EgoSpec {
                    approach: Approach::Eastbound,
                    start_sigma: ego_start,
                    speed: v,
                },
                scripted_agents: vec![AgentSpec {
                    id: "cross-0".into(),
                    approach: Approach::Northbound,
                    start_sigma: cross_start,
                    speed: u,
                }],
                ..ScenarioConfig::default()
            };
            generate(&cfg)
        })
        .collect()
}
