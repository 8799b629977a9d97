//! Out-of-process planner: the reasoning document goes to the child's
//! stdin followed by a blank line; one plan JSON object comes back on stdout.

use std::io::Write;
use std::process::{Command, Stdio};

use unipool_core::reasoner::{parse_plan_response, PlanError};
use unipool_core::{PlanOutput, Planner, ReasoningContext};

/// The child sees the requested horizon in this variable.
pub const HORIZON_ENV: &str = "UNIPOOL_HORIZON_S";

#[derive(Debug, Clone)]
pub struct ProcessPlanner {
    program: String,
    args: Vec<String>,
}

impl ProcessPlanner {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        ProcessPlanner {
            program: program.into(),
            args,
        }
    }

    /// Splits a command line on whitespace.
    pub fn from_command_line(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

impl Planner for ProcessPlanner {
    fn plan(&self, ctx: &ReasoningContext, horizon_s: f64) -> Result<PlanOutput, PlanError> {
        let fail = |what: &str, e: &dyn std::fmt::Display| PlanError::Planner(format!("{}: {what}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .env(HORIZON_ENV, horizon_s.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail("spawn", &e))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            let mut request = ctx.document.clone();
            if !request.ends_with('\n') {
                request.push('\n');
            }
            request.push('\n');
            // A planner may exit without reading everything; its reply decides.
            let _ = stdin.write_all(request.as_bytes());
        }
        let out = child.wait_with_output().map_err(|e| fail("wait", &e))?;
        if !out.status.success() {
            return Err(fail("exit", &out.status));
        }
        let text = String::from_utf8(out.stdout).map_err(|e| fail("stdout", &e))?;
        parse_plan_response(&text)
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use unipool_core::reasoner::fuse_vehicle_payload;
    use unipool_core::{GeoAnchor, VehicleState};

    fn ctx() -> ReasoningContext {
        let v = VehicleState {
            ego_anchor: GeoAnchor::new("int-1", 0.0, 0.0),
            heading_rad: 0.0,
            speed_history: vec![(1, 5.0)],
            curvature_history: vec![(1, 0.0)],
        };
        fuse_vehicle_payload(&v, &unipool_core::canonical::empty_envelope(1)).unwrap()
    }

    #[test]
    fn reads_plan_from_child() {
        let script = r#"cat >/dev/null; echo '{"frames":[[0.1,5,0],[0.2,5,0]]}'"#;
        let p = ProcessPlanner::new("sh", vec!["-c".into(), script.into()]);
        let out = p.plan(&ctx(), 0.2).unwrap();
        assert_eq!(out.frames.len(), 2);
    }

    #[test]
    fn child_sees_horizon_and_blank_line() {
        let script = r#"test "$UNIPOOL_HORIZON_S" = 0.1 || exit 3; tail -c 2 | od -c | grep -q '\\n  \\n' || exit 4; echo '{"frames":[[0.1,1,0]]}'"#;
        let p = ProcessPlanner::new("sh", vec!["-c".into(), script.into()]);
        p.plan(&ctx(), 0.1).unwrap();
    }

    #[test]
    fn bad_output_is_an_error() {
        let p = ProcessPlanner::new("sh", vec!["-c".into(), "echo nope".into()]);
        assert!(matches!(p.plan(&ctx(), 0.1), Err(PlanError::Planner(_))));
    }
}
