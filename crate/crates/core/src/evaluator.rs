//! Planning metrics: displacement error, collisions, comfort and
//! transmission cost.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::FusedContext;
use crate::reasoner::{PlanOutput, VehicleState, PLAN_DT_S};

pub const HORIZONS_S: [f64; 3] = [2.5, 3.5, 4.5];
pub const DEFAULT_COLLISION_RADIUS_M: f64 = 2.0;

const T_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectory invalid: {0}")]
    InvalidTrajectory(String),
    #[error("horizon {horizon_s} s exceeds trajectory coverage of {covered_s} s")]
    HorizonNotCovered { horizon_s: f64, covered_s: f64 },
    #[error("need at least 4 points up to the horizon, have {0}")]
    TooFewPoints(usize),
    #[error("scenario list is empty")]
    NoScenarios,
    #[error("collision radius must be positive")]
    InvalidRadius,
}

/// Points `(t_offset_s, x, y, heading_rad)` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub points: Vec<(f64, f64, f64, f64)>,
    pub dt_s: f64,
}

impl Trajectory2D {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.points.len() < 2 {
            return Err(EvalError::InvalidTrajectory("fewer than two points".into()));
        }
        if !(self.dt_s > 0.0) {
            return Err(EvalError::InvalidTrajectory("dt must be positive".into()));
        }
        let t0 = self.points[0].0;
        for (i, p) in self.points.iter().enumerate() {
            if (p.0 - (t0 + self.dt_s * i as f64)).abs() > T_EPS {
                return Err(EvalError::InvalidTrajectory(format!("point {i} is off the time grid")));
            }
        }
        Ok(())
    }

    pub fn covered_s(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Points with `0 < t <= horizon_s` relative to the first point.
    fn upto(&self, horizon_s: f64, include_start: bool) -> impl Iterator<Item = &(f64, f64, f64, f64)> {
        let t0 = self.points.first().map_or(0.0, |p| p.0);
        self.points.iter().filter(move |p| {
            let t = p.0 - t0;
            (include_start || t > T_EPS) && t <= horizon_s + T_EPS
        })
    }

    /// Sub-trajectory starting at `start_s`, re-based so it begins at t = 0.
    pub fn window(&self, start_s: f64, duration_s: f64) -> Trajectory2D {
        let points = self
            .points
            .iter()
            .filter(|p| p.0 >= start_s - T_EPS && p.0 <= start_s + duration_s + T_EPS)
            .map(|p| (p.0 - start_s, p.1, p.2, p.3))
            .collect();
        Trajectory2D {
            points,
            dt_s: self.dt_s,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Trajectory2D {
        Trajectory2D {
            points: self.points.iter().map(|p| (p.0, p.1 + dx, p.2 + dy, p.3)).collect(),
            dt_s: self.dt_s,
        }
    }
}

/// Unicycle integration from the ego pose, heading updated before position.
/// The start pose is included at t = 0.
pub fn integrate_plan(v: &VehicleState, p: &PlanOutput) -> Trajectory2D {
    let dt = PLAN_DT_S;
    let (mut x, mut y, mut h) = (v.ego_anchor.x_m, v.ego_anchor.y_m, v.heading_rad);
    let mut points = Vec::with_capacity(p.frames.len() + 1);
    points.push((0.0, x, y, h));
    for (k, &(_, speed, curvature)) in p.frames.iter().enumerate() {
        h += curvature * speed * dt;
        let (s, c) = libm::sincos(h);
        x += speed * c * dt;
        y += speed * s * dt;
        points.push((dt * (k + 1) as f64, x, y, h));
    }
    Trajectory2D { points, dt_s: dt }
}

fn check_cover(t: &Trajectory2D, horizon_s: f64) -> Result<(), EvalError> {
    if t.covered_s() + T_EPS < horizon_s {
        return Err(EvalError::HorizonNotCovered {
            horizon_s,
            covered_s: t.covered_s(),
        });
    }
    Ok(())
}

/// Mean displacement over frames with `0 < t <= horizon_s`.
pub fn l2_error(pred: &Trajectory2D, gt: &Trajectory2D, horizon_s: f64) -> Result<f64, EvalError> {
    check_cover(pred, horizon_s)?;
    check_cover(gt, horizon_s)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pred.upto(horizon_s, false).zip(gt.upto(horizon_s, false)) {
        sum += libm::hypot(a.1 - b.1, a.2 - b.2);
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Whether ego comes within `radius_m` of any agent at a shared frame with
/// `t <= horizon_s`.
pub fn collides(ego: &Trajectory2D, agents: &[Trajectory2D], horizon_s: f64, radius_m: f64) -> bool {
    agents.iter().any(|agent| {
        ego.upto(horizon_s, true)
            .zip(agent.upto(horizon_s, true))
            .any(|(e, a)| libm::hypot(e.1 - a.1, e.2 - a.2) < radius_m)
    })
}

/// Percentage of scenarios with at least one collision.
pub fn collision_rate(
    scenarios: &[(Trajectory2D, Vec<Trajectory2D>)],
    horizon_s: f64,
    radius_m: f64,
) -> Result<f64, EvalError> {
    if !(radius_m > 0.0) {
        return Err(EvalError::InvalidRadius);
    }
    if scenarios.is_empty() {
        return Err(EvalError::NoScenarios);
    }
    let hits = scenarios
        .iter()
        .filter(|(ego, agents)| collides(ego, agents, horizon_s, radius_m))
        .count();
    Ok(100.0 * hits as f64 / scenarios.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ComfortCoefficients {
    fn default() -> Self {
        ComfortCoefficients {
            alpha: 1.0,
            beta: 2.0,
            gamma: 0.5,
        }
    }
}

/// Mean absolute acceleration, jerk and yaw acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComfortTerms {
    pub accel: f64,
    pub jerk: f64,
    pub yaw_accel: f64,
}

fn wrap_angle(a: f64) -> f64 {
    // Into (-pi, pi].
    let mut w = libm::fmod(a + PI, 2.0 * PI);
    if w <= 0.0 {
        w += 2.0 * PI;
    }
    w - PI
}

/// Mean terms below this are finite-difference rounding noise and count as zero.
pub const COMFORT_NOISE_FLOOR: f64 = 1e-9;

fn mean_abs(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len() as f64;
    if m < COMFORT_NOISE_FLOOR {
        0.0
    } else {
        m
    }
}

pub fn comfort_terms(traj: &Trajectory2D, horizon_s: f64) -> Result<ComfortTerms, EvalError> {
    let pts: Vec<&(f64, f64, f64, f64)> = traj.upto(horizon_s, true).collect();
    if pts.len() < 4 {
        return Err(EvalError::TooFewPoints(pts.len()));
    }
    let dt = traj.dt_s;
    let speeds: Vec<f64> = pts.windows(2).map(|w| libm::hypot(w[1].1 - w[0].1, w[1].2 - w[0].2) / dt).collect();
    let m = speeds.len();
    let accel: Vec<f64> = (0..m)
        .map(|k| match k {
            0 => (speeds[1] - speeds[0]) / dt,
            k if k == m - 1 => (speeds[m - 1] - speeds[m - 2]) / dt,
            k => (speeds[k + 1] - speeds[k - 1]) / (2.0 * dt),
        })
        .collect();
    let jerk: Vec<f64> = accel.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let yaw_rate: Vec<f64> = pts.windows(2).map(|w| wrap_angle(w[1].3 - w[0].3) / dt).collect();
    let yaw_accel: Vec<f64> = yaw_rate.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    Ok(ComfortTerms {
        accel: mean_abs(&accel),
        jerk: mean_abs(&jerk),
        yaw_accel: mean_abs(&yaw_accel),
    })
}

pub fn comfort_from_terms(t: &ComfortTerms, c: &ComfortCoefficients) -> f64 {
    1.0 - libm::tanh(c.alpha * t.accel + c.beta * t.jerk + c.gamma * t.yaw_accel)
}

/// `1 - tanh(α·mean|a| + β·mean|j| + γ·mean|ω̇|)` over the whole trajectory.
pub fn comfort_score(traj: &Trajectory2D, alpha: f64, beta: f64, gamma: f64) -> Result<f64, EvalError> {
    comfort_score_to(traj, traj.covered_s(), &ComfortCoefficients { alpha, beta, gamma })
}

pub fn comfort_score_to(traj: &Trajectory2D, horizon_s: f64, c: &ComfortCoefficients) -> Result<f64, EvalError> {
    Ok(comfort_from_terms(&comfort_terms(traj, horizon_s)?, c))
}

/// Exact UTF-8 length of the canonical payload.
pub fn transmission_cost(ctx: &FusedContext) -> usize {
    ctx.payload.len()
}

/// First time the trajectory moves past the line through `point` with
/// forward direction `dir`, if it starts behind it.
pub fn line_crossing_time(traj: &Trajectory2D, point: (f64, f64), dir: (f64, f64), horizon_s: f64) -> Option<f64> {
    let ahead = |p: &(f64, f64, f64, f64)| (p.1 - point.0) * dir.0 + (p.2 - point.1) * dir.1;
    let start = traj.points.first()?;
    if ahead(start) > 0.0 {
        return None;
    }
    traj.upto(horizon_s, false).find(|p| ahead(p) > 0.0).map(|p| p.0 - start.0)
}

fn horizon_key(h: f64) -> String {
    format!("{h:.1}")
}

/// Per-scenario metrics, one value per horizon in [`HORIZONS_S`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub l2_m: [f64; 3],
    pub collided: [bool; 3],
    pub comfort: [f64; 3],
    pub stop_line_violation: bool,
    pub transmission_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub scenario_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub retrieval: bool,
    pub n_scenarios: usize,
    pub l2_m: BTreeMap<String, f64>,
    /// Over the longest horizon.
    pub collision_rate_pct: f64,
    pub collision_pct_by_horizon: BTreeMap<String, f64>,
    pub comfort: BTreeMap<String, f64>,
    /// Mean payload bytes per query, rounded.
    pub transmission_bytes: u64,
    pub stop_line_violations: usize,
    pub rows: Vec<ScenarioRow>,
    pub failures: Vec<ScenarioFailure>,
}

impl MetricsReport {
    /// Aggregates rows; `Avg` values are the mean over the three horizons.
    pub fn aggregate(retrieval: bool, mut rows: Vec<ScenarioRow>, mut failures: Vec<ScenarioFailure>) -> MetricsReport {
        rows.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        failures.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        let n = rows.len();
        let mean = |f: &dyn Fn(&ScenarioRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let mut l2_m = BTreeMap::new();
        let mut comfort = BTreeMap::new();
        let mut collision = BTreeMap::new();
        for (i, h) in HORIZONS_S.iter().enumerate() {
            l2_m.insert(horizon_key(*h), mean(&|r| r.l2_m[i]));
            comfort.insert(horizon_key(*h), mean(&|r| r.comfort[i]));
            collision.insert(horizon_key(*h), 100.0 * mean(&|r| if r.collided[i] { 1.0 } else { 0.0 }));
        }
        let transmission_bytes = libm::round(mean(&|r| r.transmission_bytes as f64)) as u64;
        MetricsReport {
            retrieval,
            n_scenarios: n,
            collision_rate_pct: collision[&horizon_key(HORIZONS_S[2])],
            collision_pct_by_horizon: collision,
            l2_m,
            comfort,
            transmission_bytes,
            stop_line_violations: rows.iter().filter(|r| r.stop_line_violation).count(),
            rows,
            failures,
        }
    }

    pub fn avg(map: &BTreeMap<String, f64>) -> f64 {
        if map.is_empty() {
            0.0
        } else {
            map.values().sum::<f64>() / map.len() as f64
        }
    }

    pub fn at(map: &BTreeMap<String, f64>, horizon_s: f64) -> f64 {
        map.get(&horizon_key(horizon_s)).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GeoAnchor;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vehicle(x: f64, y: f64, heading: f64) -> VehicleState {
        VehicleState {
            ego_anchor: GeoAnchor::new("i", x, y),
            heading_rad: heading,
            speed_history: vec![],
            curvature_history: vec![],
        }
    }

    fn plan_const(speed: f64, kappa: f64, n: usize) -> PlanOutput {
        PlanOutput {
            frames: (1..=n).map(|k| (k as f64 / 10.0, speed, kappa)).collect(),
        }
    }

    fn straight(speed: f64, n: usize) -> Trajectory2D {
        integrate_plan(&vehicle(0.0, 0.0, 0.0), &plan_const(speed, 0.0, n))
    }

    #[test]
    fn straight_line_endpoint() {
        let t = straight(10.0, 10);
        let end = t.points.last().unwrap();
        assert!((end.1 - 10.0).abs() < 1e-9 && end.2.abs() < 1e-9);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn zero_speed_stays_put() {
        let t = integrate_plan(&vehicle(3.0, -2.0, 1.0), &plan_const(0.0, 0.2, 20));
        assert!(t.points.iter().all(|p| p.1 == 3.0 && p.2 == -2.0));
    }

    fn circumradius(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> ((f64, f64), f64) {
        let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
        let sq = |p: (f64, f64)| p.0 * p.0 + p.1 * p.1;
        let ux = (sq(a) * (b.1 - c.1) + sq(b) * (c.1 - a.1) + sq(c) * (a.1 - b.1)) / d;
        let uy = (sq(a) * (c.0 - b.0) + sq(b) * (a.0 - c.0) + sq(c) * (b.0 - a.0)) / d;
        ((ux, uy), libm::hypot(a.0 - ux, a.1 - uy))
    }

    #[test]
    fn constant_curvature_traces_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let v = rng.gen_range(1.0..5.0);
            let kappa = rng.gen_range(0.01..0.09);
            let t = integrate_plan(&vehicle(0.0, 0.0, 0.0), &plan_const(v, kappa, 60));
            let p = |i: usize| (t.points[i].1, t.points[i].2);
            // The discrete path is a regular polygon; its vertices share a circumcircle.
            let (center, r) = circumradius(p(1), p(2), p(3));
            assert!((r - 1.0 / kappa).abs() < 1e-3, "r={r} 1/k={}", 1.0 / kappa);
            for i in 1..t.points.len() {
                let d = libm::hypot(p(i).0 - center.0, p(i).1 - center.1);
                assert!((d - r).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn l2_cases() {
        let a = straight(5.0, 45);
        assert_eq!(l2_error(&a, &a, 4.5).unwrap(), 0.0);
        let b = a.translated(3.0, 4.0);
        assert!((l2_error(&a, &b, 2.5).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(l2_error(&a, &b, 5.0), Err(EvalError::HorizonNotCovered { .. })));
    }

    #[test]
    fn l2_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let pts = |rng: &mut ChaCha8Rng| Trajectory2D {
                points: (0..=45).map(|k| (k as f64 / 10.0, rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.0)).collect(),
                dt_s: 0.1,
            };
            let (a, b) = (pts(&mut rng), pts(&mut rng));
            for (h, n) in [(2.5, 25), (3.5, 35), (4.5, 45)] {
                let mut s = 0.0;
                for k in 1..=n {
                    let dx = a.points[k].1 - b.points[k].1;
                    let dy = a.points[k].2 - b.points[k].2;
                    s += libm::sqrt(dx * dx + dy * dy);
                }
                assert!((l2_error(&a, &b, h).unwrap() - s / n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collision_cases() {
        let ego = straight(10.0, 45);
        assert_eq!(collision_rate(&[(ego.clone(), vec![])], 4.5, 2.0).unwrap(), 0.0);
        let parked = Trajectory2D {
            points: (0..=45).map(|k| (k as f64 / 10.0, 20.0, 0.0, 0.0)).collect(),
            dt_s: 0.1,
        };
        assert_eq!(collision_rate(&[(ego.clone(), vec![parked.clone()])], 4.5, 2.0).unwrap(), 100.0);
        // Ego reaches x = 20 only at t = 2 s, so a 1 s horizon misses it.
        assert_eq!(collision_rate(&[(ego.clone(), vec![parked])], 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(collision_rate(&[], 4.5, 2.0), Err(EvalError::NoScenarios));
        assert_eq!(collision_rate(&[(ego, vec![])], 4.5, 0.0), Err(EvalError::InvalidRadius));
    }

    fn random_traj(rng: &mut ChaCha8Rng) -> Trajectory2D {
        let (mut x, mut y) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let (vx, vy) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        Trajectory2D {
            points: (0..=45)
                .map(|k| {
                    let p = (k as f64 / 10.0, x, y, 0.0);
                    x += vx * 0.1;
                    y += vy * 0.1;
                    p
                })
                .collect(),
            dt_s: 0.1,
        }
    }

    #[test]
    fn collision_matches_frame_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scenarios: Vec<(Trajectory2D, Vec<Trajectory2D>)> = (0..50)
            .map(|_| {
                let ego = random_traj(&mut rng);
                let agents = (0..rng.gen_range(0..4)).map(|_| random_traj(&mut rng)).collect();
                (ego, agents)
            })
            .collect();
        for h in HORIZONS_S {
            let mut hits = 0;
            for (ego, agents) in &scenarios {
                let mut hit = false;
                for agent in agents {
                    for k in 0..ego.points.len() {
                        if ego.points[k].0 <= h + 1e-9 {
                            let d = libm::hypot(ego.points[k].1 - agent.points[k].1, ego.points[k].2 - agent.points[k].2);
                            hit |= d < 2.0;
                        }
                    }
                }
                hits += hit as usize;
            }
            assert_eq!(collision_rate(&scenarios, h, 2.0).unwrap(), 100.0 * hits as f64 / 50.0);
        }
    }

    #[test]
    fn comfort_closed_forms() {
        let c = ComfortCoefficients::default();
        assert_eq!((c.alpha, c.beta, c.gamma), (1.0, 2.0, 0.5));
        assert_eq!(comfort_score(&straight(8.0, 45), 1.0, 2.0, 0.5).unwrap(), 1.0);

        let accel = PlanOutput {
            frames: (1..=45).map(|k| (k as f64 / 10.0, 2.0 + 0.1 * k as f64, 0.0)).collect(),
        };
        let t = integrate_plan(&vehicle(0.0, 0.0, 0.0), &accel);
        let s = comfort_score(&t, 1.0, 2.0, 0.5).unwrap();
        assert!((s - (1.0 - libm::tanh(1.0))).abs() < 1e-4, "{s}");
        assert!((s - 0.23841).abs() < 1e-4);

        assert_eq!(comfort_score(&straight(1.0, 2), 1.0, 2.0, 0.5), Err(EvalError::TooFewPoints(3)));
    }

    #[test]
    fn heading_wrap_has_no_spike() {
        let t = Trajectory2D {
            points: (0..10).map(|k| (k as f64 / 10.0, k as f64, 0.0, if k % 2 == 0 { PI - 1e-3 } else { -PI + 1e-3 })).collect(),
            dt_s: 0.1,
        };
        let terms = comfort_terms(&t, 1.0).unwrap();
        assert!(terms.yaw_accel < 1.0);
    }

    #[test]
    fn line_crossing() {
        let t = straight(10.0, 45);
        let tc = line_crossing_time(&t, (20.0, 0.0), (1.0, 0.0), 4.5).unwrap();
        assert!((tc - 2.1).abs() < 1e-9);
        assert!(line_crossing_time(&t, (50.0, 0.0), (1.0, 0.0), 4.5).is_none());
    }

    #[test]
    fn report_roundtrip_and_avg() {
        let row = ScenarioRow {
            scenario_id: "s1".into(),
            l2_m: [0.0; 3],
            collided: [false, false, true],
            comfort: [1.0, 0.9, 0.8],
            stop_line_violation: false,
            transmission_bytes: 2740,
        };
        let r = MetricsReport::aggregate(true, vec![row], vec![]);
        assert_eq!(r.collision_rate_pct, 100.0);
        assert!((MetricsReport::avg(&r.comfort) - 0.9).abs() < 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn comfort_bounds(speeds in proptest::collection::vec(0.0f64..3.0, 45), kappas in proptest::collection::vec(-0.05f64..0.05, 45)) {
            let p = PlanOutput { frames: (0..45).map(|k| ((k + 1) as f64 / 10.0, speeds[k], kappas[k])).collect() };
            let t = integrate_plan(&vehicle(0.0, 0.0, 0.0), &p);
            let terms = comfort_terms(&t, 4.5).unwrap();
            let s = comfort_from_terms(&terms, &ComfortCoefficients::default());
            prop_assert!(s <= 1.0 && s >= 0.0);
            let all_zero = terms.accel == 0.0 && terms.jerk == 0.0 && terms.yaw_accel == 0.0;
            prop_assert_eq!(s == 1.0, all_zero);
        }

        #[test]
        fn more_jerk_lowers_comfort(a in 0.0f64..1.0, j in 0.0f64..1.0, w in 0.0f64..1.0, extra in 0.01f64..1.0) {
            let c = ComfortCoefficients::default();
            let base = comfort_from_terms(&ComfortTerms { accel: a, jerk: j, yaw_accel: w }, &c);
            let worse = comfort_from_terms(&ComfortTerms { accel: a, jerk: j + extra, yaw_accel: w }, &c);
            prop_assert!(worse < base);
        }

        #[test]
        fn l2_translation_invariant(seed in any::<u64>(), dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_traj(&mut rng), random_traj(&mut rng));
            let base = l2_error(&a, &b, 4.5).unwrap();
            prop_assert!(base >= 0.0);
            let moved = l2_error(&a.translated(dx, dy), &b.translated(dx, dy), 4.5).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn collision_monotone_in_radius(seed in any::<u64>(), r in 0.1f64..5.0, extra in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scenarios: Vec<_> = (0..5).map(|_| (random_traj(&mut rng), vec![random_traj(&mut rng)])).collect();
            prop_assert!(collision_rate(&scenarios, 4.5, r).unwrap() <= collision_rate(&scenarios, 4.5, r + extra).unwrap());
        }
    }
}
