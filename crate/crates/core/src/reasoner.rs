//! Vehicle-side fusion of retrieved context and pluggable planning.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::format_number;
use crate::query::FusedContext;
use crate::types::GeoAnchor;

/// Plan frame spacing.
pub const PLAN_DT_S: f64 = 0.1;
pub const MAX_ABS_CURVATURE: f64 = 1.0;

pub const RED_LIGHT_DECEL: f64 = 3.0;
pub const COLLISION_DECEL: f64 = 5.0;
pub const SIGNAL_RADIUS_M: f64 = 50.0;

/// Field carrying the stop line position of a signal as text `"x,y"`.
pub const STOP_LINE_FIELD: &str = "x_stop_line";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub ego_anchor: GeoAnchor,
    pub heading_rad: f64,
    pub speed_history: Vec<(i64, f64)>,
    pub curvature_history: Vec<(i64, f64)>,
}

impl VehicleState {
    pub fn validate(&self) -> Result<(), ReasonerError> {
        let sorted = |h: &[(i64, f64)]| h.windows(2).all(|w| w[0].0 <= w[1].0);
        if !sorted(&self.speed_history) || !sorted(&self.curvature_history) {
            return Err(ReasonerError::InvalidVehicle("histories must be time-sorted"));
        }
        if self.speed_history.iter().any(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ReasonerError::InvalidVehicle("speeds must be finite and non-negative"));
        }
        if self
            .curvature_history
            .iter()
            .any(|(_, k)| !k.is_finite() || k.abs() > MAX_ABS_CURVATURE)
        {
            return Err(ReasonerError::InvalidVehicle("curvature magnitude exceeds 1/m"));
        }
        if !self.heading_rad.is_finite() {
            return Err(ReasonerError::InvalidVehicle("heading must be finite"));
        }
        Ok(())
    }

    pub fn last_speed(&self) -> f64 {
        self.speed_history.last().map_or(0.0, |s| s.1)
    }

    pub fn last_curvature(&self) -> f64 {
        self.curvature_history.last().map_or(0.0, |c| c.1)
    }
}

/// Frames `(t_offset_s, speed, curvature)` at 10 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub frames: Vec<(f64, f64, f64)>,
}

impl PlanOutput {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.frames.is_empty() {
            return Err(PlanError::Invalid("plan has no frames".into()));
        }
        for (k, &(t, speed, curvature)) in self.frames.iter().enumerate() {
            let expected = PLAN_DT_S * (k + 1) as f64;
            if !((t - expected).abs() <= 1e-6) {
                return Err(PlanError::Invalid(format!("frame {k} at t={t}, expected {expected}")));
            }
            if !(speed >= 0.0) || !speed.is_finite() {
                return Err(PlanError::Invalid(format!("frame {k} has speed {speed}")));
            }
            if !curvature.is_finite() {
                return Err(PlanError::Invalid(format!("frame {k} has non-finite curvature")));
            }
        }
        Ok(())
    }

    pub fn horizon_s(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasonerError {
    #[error("malformed payload in section `{section}`: {detail}")]
    MalformedPayload { section: &'static str, detail: String },
    #[error("invalid vehicle state: {0}")]
    InvalidVehicle(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan rejected: {0}")]
    Invalid(String),
    #[error("planner failed: {0}")]
    Planner(String),
}

/// Facts pulled out of the retrieved payload for planners that do not read prose.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub signal_state: Option<String>,
    pub signal_t_us: Option<i64>,
    pub stop_line: Option<(f64, f64)>,
    pub objects: Vec<String>,
    pub alerts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningContext {
    pub vehicle: VehicleState,
    pub document: String,
    pub summary: ContextSummary,
}

const SECTIONS: [(&str, &str); 3] = [
    ("static", "static context"),
    ("low_freq", "low-freq context"),
    ("high_freq", "high-freq context"),
];

fn render_value(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), format_number),
        serde_json::Value::Object(m) => match (m.get("value").and_then(|x| x.as_f64()), m.get("unit")) {
            (Some(x), Some(serde_json::Value::String(u))) => format!("{} {}", format_number(x), u),
            _ => v.to_string(),
        },
        other => other.to_string(),
    }
}

fn parse_stop_line(text: &str) -> Option<(f64, f64)> {
    let (x, y) = text.split_once(',')?;
    let x: f64 = x.trim().parse().ok()?;
    let y: f64 = y.trim().parse().ok()?;
    (x.is_finite() && y.is_finite()).then_some((x, y))
}

/// Builds the reasoning document and summary from a vehicle state and a
/// serialized payload. Sections appear in a fixed order and empty ones are
/// left out.
pub fn fuse_vehicle_payload(v: &VehicleState, payload: &str) -> Result<ReasoningContext, ReasonerError> {
    v.validate()?;
    let root: serde_json::Value = serde_json::from_str(payload).map_err(|e| ReasonerError::MalformedPayload {
        section: "envelope",
        detail: e.to_string(),
    })?;
    let root = root.as_object().ok_or(ReasonerError::MalformedPayload {
        section: "envelope",
        detail: "payload is not an object".into(),
    })?;

    let mut doc = String::new();
    let _ = writeln!(doc, "[vehicle]");
    let _ = writeln!(
        doc,
        "anchor: {} ({}, {})",
        v.ego_anchor.intersection_id,
        format_number(v.ego_anchor.x_m),
        format_number(v.ego_anchor.y_m)
    );
    let _ = writeln!(doc, "heading_rad: {}", format_number(v.heading_rad));
    let speeds: Vec<String> = v.speed_history.iter().map(|(_, s)| format_number(*s)).collect();
    let curvatures: Vec<String> = v.curvature_history.iter().map(|(_, c)| format_number(*c)).collect();
    let _ = writeln!(doc, "speed_history_mps: [{}]", speeds.join(", "));
    let _ = writeln!(doc, "curvature_history: [{}]", curvatures.join(", "));

    let mut summary = ContextSummary::default();
    for (key, title) in SECTIONS {
        let malformed = |detail: &str| ReasonerError::MalformedPayload {
            section: key,
            detail: detail.into(),
        };
        let items = match root.get(key) {
            None => return Err(malformed("section missing")),
            Some(serde_json::Value::Array(items)) => items,
            Some(_) => return Err(malformed("section is not an array")),
        };
        if items.is_empty() {
            continue;
        }
        let _ = writeln!(doc, "[{title}]");
        for item in items {
            let fields = item
                .get("fields")
                .and_then(|f| f.as_object())
                .ok_or_else(|| malformed("entry without fields object"))?;
            let reason = item.get("reason").and_then(|r| r.as_str()).ok_or_else(|| malformed("entry without reason"))?;
            let prediction = item
                .get("prediction")
                .and_then(|p| p.as_str())
                .ok_or_else(|| malformed("entry without prediction"))?;
            let t_us = item.get("t_us").and_then(|t| t.as_i64()).ok_or_else(|| malformed("entry without t_us"))?;

            let rendered: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={}", render_value(v))).collect();
            let _ = write!(doc, "- t_us={t_us}; {}", rendered.join(", "));
            if !reason.is_empty() {
                let _ = write!(doc, "; reason: {reason}");
            }
            if !prediction.is_empty() {
                let _ = write!(doc, "; prediction: {prediction}");
            }
            doc.push('\n');

            if let Some(state) = fields.get("signal_state").and_then(|s| s.as_str()) {
                if summary.signal_t_us.map_or(true, |t| t_us >= t) {
                    summary.signal_state = Some(state.into());
                    summary.signal_t_us = Some(t_us);
                    summary.stop_line = fields
                        .get(STOP_LINE_FIELD)
                        .and_then(|s| s.as_str())
                        .and_then(parse_stop_line);
                }
            }
            if let Some(o) = fields.get("objects").and_then(|s| s.as_str()) {
                summary.objects.push(o.into());
            }
            for key in ["alert", "abnormal_event"] {
                if let Some(a) = fields.get(key).and_then(|s| s.as_str()) {
                    summary.alerts.push(a.into());
                }
            }
        }
    }
    Ok(ReasoningContext {
        vehicle: v.clone(),
        document: doc,
        summary,
    })
}

pub fn fuse_vehicle_context(v: &VehicleState, e: &FusedContext) -> Result<ReasoningContext, ReasonerError> {
    fuse_vehicle_payload(v, &e.payload)
}

/// Planning backend: the rule baseline or an out-of-process model.
pub trait Planner {
    fn plan(&self, ctx: &ReasoningContext, horizon_s: f64) -> Result<PlanOutput, PlanError>;
}

impl<P: Planner + ?Sized> Planner for &P {
    fn plan(&self, ctx: &ReasoningContext, horizon_s: f64) -> Result<PlanOutput, PlanError> {
        (**self).plan(ctx, horizon_s)
    }
}

/// Runs the planner and rejects any output that breaks plan invariants.
pub fn plan(ctx: &ReasoningContext, planner: &dyn Planner, horizon_s: f64) -> Result<PlanOutput, PlanError> {
    let out = planner.plan(ctx, horizon_s)?;
    out.validate()?;
    if out.horizon_s() + 1e-6 < horizon_s {
        return Err(PlanError::Invalid(format!(
            "plan covers {} s, horizon is {} s",
            out.horizon_s(),
            horizon_s
        )));
    }
    Ok(out)
}

/// Number of 10 Hz frames covering `horizon_s`.
pub fn frame_count(horizon_s: f64) -> usize {
    libm::round(horizon_s / PLAN_DT_S) as usize
}

/// Holds the last speed and curvature, braking for a nearby red signal or
/// a collision alert.
#[derive(Debug, Clone, Copy, Default)]
pub struct RulePlanner;

impl RulePlanner {
    pub fn deceleration(ctx: &ReasoningContext) -> f64 {
        let s = &ctx.summary;
        let mut decel: f64 = 0.0;
        let red = s.signal_state.as_deref().is_some_and(|st| st.eq_ignore_ascii_case("red"));
        if red {
            if let Some((x, y)) = s.stop_line {
                let ego = &ctx.vehicle.ego_anchor;
                if libm::hypot(x - ego.x_m, y - ego.y_m) <= SIGNAL_RADIUS_M {
                    decel = RED_LIGHT_DECEL;
                }
            }
        }
        if s.alerts.iter().any(|a| a.to_lowercase().contains("collision")) {
            decel = decel.max(COLLISION_DECEL);
        }
        decel
    }
}

impl Planner for RulePlanner {
    fn plan(&self, ctx: &ReasoningContext, horizon_s: f64) -> Result<PlanOutput, PlanError> {
        let v0 = ctx.vehicle.last_speed();
        let kappa = ctx.vehicle.last_curvature();
        let a = Self::deceleration(ctx);
        let frames = (1..=frame_count(horizon_s))
            .map(|k| {
                let t = PLAN_DT_S * k as f64;
                ((k as f64) / 10.0, (v0 - a * t).max(0.0), kappa)
            })
            .collect();
        Ok(PlanOutput { frames })
    }
}

/// Parses the external planner response `{"frames": [[t, speed, curvature], ...]}`.
pub fn parse_plan_response(text: &str) -> Result<PlanOutput, PlanError> {
    let out: PlanOutput =
        serde_json::from_str(text.trim()).map_err(|e| PlanError::Planner(format!("unreadable response: {e}")))?;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical;
    use crate::types::KnowledgeEntry;
    use alloc::vec;
    use proptest::prelude::*;

    fn vehicle(speed: f64) -> VehicleState {
        VehicleState {
            ego_anchor: GeoAnchor::new("int-1", 0.0, 0.0),
            heading_rad: 0.0,
            speed_history: vec![(1, speed), (2, speed)],
            curvature_history: vec![(1, 0.0), (2, 0.01)],
        }
    }

    fn payload_with(hf: &[KnowledgeEntry], sf: &[KnowledgeEntry]) -> String {
        let hf: Vec<String> = hf.iter().map(canonical::entry_to_string).collect();
        let sf: Vec<String> = sf.iter().map(canonical::entry_to_string).collect();
        canonical::write_payload([], sf.iter().map(String::as_str), hf.iter().map(String::as_str), 5, false)
    }

    fn red_at(x: f64) -> KnowledgeEntry {
        KnowledgeEntry::new(1, GeoAnchor::new("int-1", x, 0.0), 4)
            .with_field("signal_state", "red")
            .with_field(STOP_LINE_FIELD, format!("{x},0").as_str())
            .with_text("sensor report", "")
    }

    #[test]
    fn empty_context_has_vehicle_section_only() {
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &canonical::empty_envelope(0)).unwrap();
        assert!(ctx.document.starts_with("[vehicle]\n"));
        assert!(!ctx.document.contains("context]"));
        assert_eq!(ctx.summary, ContextSummary::default());
    }

    #[test]
    fn summary_extracts_signal() {
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &payload_with(&[red_at(30.0)], &[])).unwrap();
        assert_eq!(ctx.summary.signal_state.as_deref(), Some("red"));
        assert_eq!(ctx.summary.stop_line, Some((30.0, 0.0)));
        assert!(ctx.document.contains("[high-freq context]\n- t_us=4; signal_state=red"));
    }

    #[test]
    fn newest_signal_wins() {
        let mut green = red_at(30.0);
        green.fields.insert("signal_state".into(), "green".into());
        green.timestamp_us = 9;
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &payload_with(&[red_at(30.0)], &[green])).unwrap();
        assert_eq!(ctx.summary.signal_state.as_deref(), Some("green"));
    }

    #[test]
    fn malformed_payload_names_section() {
        let bad = r#"{"high_freq":[{"fields":1}],"low_freq":[],"static":[],"t_us":0,"truncated":false}"#;
        match fuse_vehicle_payload(&vehicle(1.0), bad) {
            Err(ReasonerError::MalformedPayload { section, .. }) => assert_eq!(section, "high_freq"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            fuse_vehicle_payload(&vehicle(1.0), "{not json"),
            Err(ReasonerError::MalformedPayload { section: "envelope", .. })
        ));
        let missing = r#"{"high_freq":[],"static":[],"t_us":0,"truncated":false}"#;
        assert!(matches!(
            fuse_vehicle_payload(&vehicle(1.0), missing),
            Err(ReasonerError::MalformedPayload { section: "low_freq", .. })
        ));
    }

    #[test]
    fn invalid_vehicle_rejected() {
        let mut v = vehicle(1.0);
        v.curvature_history.push((3, 1.5));
        assert!(v.validate().is_err());
        let mut v = vehicle(1.0);
        v.speed_history = vec![(5, 1.0), (1, 1.0)];
        assert!(v.validate().is_err());
    }

    #[test]
    fn hold_without_context() {
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &canonical::empty_envelope(0)).unwrap();
        let p = plan(&ctx, &RulePlanner, 4.5).unwrap();
        assert_eq!(p.frames.len(), 45);
        assert!(p.frames.iter().all(|f| f.1 == 10.0 && f.2 == 0.01));
        assert!((p.frames[0].0 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn red_light_ramp_closed_form() {
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &payload_with(&[red_at(30.0)], &[])).unwrap();
        let p = plan(&ctx, &RulePlanner, 4.5).unwrap();
        for (i, f) in p.frames.iter().enumerate() {
            let k = (i + 1) as f64;
            let want = (10.0 - 0.3 * k).max(0.0);
            assert!((f.1 - want).abs() < 1e-9, "frame {}", i + 1);
        }
        let first_zero = p.frames.iter().position(|f| f.1 == 0.0).unwrap() + 1;
        assert_eq!(first_zero, libm::ceil(10.0 / 3.0 * 10.0) as usize);
    }

    #[test]
    fn distant_red_light_ignored() {
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &payload_with(&[red_at(200.0)], &[])).unwrap();
        let p = plan(&ctx, &RulePlanner, 2.5).unwrap();
        assert!(p.frames.iter().all(|f| f.1 == 10.0));
    }

    #[test]
    fn collision_alert_brakes_harder() {
        let alert = KnowledgeEntry::new(2, GeoAnchor::new("int-1", 5.0, 0.0), 3)
            .with_field("alert", "Collision ahead in lane 2")
            .with_text("observed", "prepare to brake");
        let ctx = fuse_vehicle_payload(&vehicle(10.0), &payload_with(&[red_at(30.0)], &[alert])).unwrap();
        assert_eq!(RulePlanner::deceleration(&ctx), COLLISION_DECEL);
    }

    #[test]
    fn grounding_changes_the_plan() {
        // Stop line 25 m ahead; without context the hold plan runs through it.
        let v = vehicle(10.0);
        let with = fuse_vehicle_payload(&v, &payload_with(&[red_at(25.0)], &[])).unwrap();
        let without = fuse_vehicle_payload(&v, &canonical::empty_envelope(5)).unwrap();
        let travel = |p: &PlanOutput| p.frames.iter().map(|f| f.1 * PLAN_DT_S).sum::<f64>();
        let p_with = plan(&with, &RulePlanner, 4.5).unwrap();
        let p_without = plan(&without, &RulePlanner, 4.5).unwrap();
        assert_ne!(p_with, p_without);
        assert!(travel(&p_with) < 25.0);
        assert!(travel(&p_without) > 25.0);
    }

    struct Bad(PlanOutput);
    impl Planner for Bad {
        fn plan(&self, _: &ReasoningContext, _: f64) -> Result<PlanOutput, PlanError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn invalid_planner_output_is_an_error() {
        let ctx = fuse_vehicle_payload(&vehicle(1.0), &canonical::empty_envelope(0)).unwrap();
        let negative = Bad(PlanOutput {
            frames: vec![(0.1, -1.0, 0.0)],
        });
        assert!(matches!(plan(&ctx, &negative, 0.1), Err(PlanError::Invalid(_))));
        let gap = Bad(PlanOutput {
            frames: vec![(0.1, 1.0, 0.0), (0.3, 1.0, 0.0)],
        });
        assert!(plan(&ctx, &gap, 0.2).is_err());
        let short = Bad(PlanOutput {
            frames: vec![(0.1, 1.0, 0.0)],
        });
        assert!(plan(&ctx, &short, 1.0).is_err());
    }

    #[test]
    fn response_parsing() {
        let p = parse_plan_response("{\"frames\": [[0.1, 3.0, 0.0], [0.2, 2.5, 0.01]]}\n").unwrap();
        assert_eq!(p.frames[1], (0.2, 2.5, 0.01));
        assert!(parse_plan_response("frames please").is_err());
        assert!(parse_plan_response("{\"frames\": [[0.2, 3.0, 0.0]]}").is_err());
    }

    proptest! {
        #[test]
        fn rule_plans_are_valid_and_deterministic(
            speed in 0.0f64..40.0,
            x in -100.0f64..100.0,
            horizon in 0.1f64..8.0,
            red in any::<bool>(),
        ) {
            let hf = if red { vec![red_at(x)] } else { vec![] };
            let payload = payload_with(&hf, &[]);
            let ctx = fuse_vehicle_payload(&vehicle(speed), &payload).unwrap();
            let again = fuse_vehicle_payload(&vehicle(speed), &payload).unwrap();
            prop_assert_eq!(&ctx, &again);
            let horizon = libm::round(horizon * 10.0) / 10.0;
            let a = plan(&ctx, &RulePlanner, horizon).unwrap();
            prop_assert_eq!(&a, &plan(&again, &RulePlanner, horizon).unwrap());
            prop_assert!(a.validate().is_ok());
        }
    }
}
