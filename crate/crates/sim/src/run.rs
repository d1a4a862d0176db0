//! Lockstep closed-loop runs.

use crate::plant::SrbPlant;
use crate::scenario::{Scenario, ScenarioError};
use bilevel_mpc::bilevel::{run_bilevel_loop, BilevelError, CycleRecord, SrbMpc, StageTimes};
use bilevel_mpc::mpc::MpcIterate;
use bilevel_mpc::schedule::ContactSchedule;
use bilevel_mpc::srb::SrbState;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl RunError {
    /// Process exit code: 2 for a rejected scenario, 3 for a solver failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Scenario(_) => 2,
            RunError::Solver(_) => 3,
        }
    }
}

impl From<BilevelError> for RunError {
    fn from(e: BilevelError) -> Self {
        RunError::Solver(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HlEvent {
    None,
    Step {
        grad_norm: f64,
        alpha_star: f64,
        accepted: bool,
    },
}

/// One controller cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub cycle: usize,
    pub t: f64,
    /// Plant state at the start of the cycle.
    pub state: SrbState,
    pub j_a: f64,
    pub event: HlEvent,
    /// Future contact-change times per leg.
    pub schedule: Vec<Vec<f64>>,
    pub eq_residual: f64,
    pub in_residual: f64,
    /// The plan was carried over from the previous cycle after a failed solve.
    pub stale: bool,
    pub hl_error: Option<String>,
    /// Stage wall-times in milliseconds.
    pub times_ms: StageTimes,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TimingStats {
    pub mpc_mean_ms: f64,
    pub mpc_max_ms: f64,
    /// Means over cycles with a high-level step.
    pub gradient_mean_ms: f64,
    pub line_search_mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub bilevel: bool,
    pub recovered: bool,
    pub final_position: [f64; 3],
    pub distance_to_target: f64,
    pub final_momentum_norm: f64,
    pub average_cost: f64,
    pub cycles: usize,
    pub hl_steps: usize,
    pub hl_accepted: usize,
    pub hl_errors: usize,
    pub stale_cycles: usize,
    pub timing: TimingStats,
}

/// Recovery: CoM within this distance of the target at the end.
pub const RECOVERY_DISTANCE: f64 = 0.1;
/// Recovery: linear momentum norm below this at the end.
pub const RECOVERY_MOMENTUM: f64 = 0.5;

pub fn controller(sc: &Scenario) -> SrbMpc {
    SrbMpc {
        cfg: sc.mpc_config(),
        params: sc.robot.clone(),
    }
}

fn future_times(s: &ContactSchedule) -> Vec<Vec<f64>> {
    s.legs
        .iter()
        .map(|l| l.times[l.first_future()..].to_vec())
        .collect()
}

pub fn trace_record(rec: &CycleRecord<'_, MpcIterate>) -> TraceRecord {
    let it = rec.iterate;
    let res = it.qp.residuals(&it.sol.z, &it.sol.lambda, &it.sol.nu);
    let ms = |s: f64| s * 1e3;
    TraceRecord {
        cycle: rec.cycle,
        t: rec.t,
        state: it.meas.x,
        j_a: it.j_a,
        event: match rec.step {
            Some(s) => HlEvent::Step {
                grad_norm: s.grad_norm(),
                alpha_star: s.alpha_star,
                accepted: s.accepted,
            },
            None => HlEvent::None,
        },
        schedule: future_times(rec.schedule),
        eq_residual: res.equality,
        in_residual: res.inequality,
        stale: it.stale,
        hl_error: rec.hl_error.map(|e| e.to_string()),
        times_ms: StageTimes {
            mpc: ms(rec.times.mpc),
            gradient: ms(rec.times.gradient),
            line_search: ms(rec.times.line_search),
        },
    }
}

/// Runs `sc` with the high level on or off, calling `inspect` on every
/// cycle before the plant moves.
pub fn run_with<F>(
    sc: &Scenario,
    bilevel: bool,
    mut inspect: F,
) -> Result<(Vec<TraceRecord>, Summary, SrbState), RunError>
where
    F: FnMut(&CycleRecord<'_, MpcIterate>),
{
    sc.validate()?;
    let low = controller(sc);
    let mut plant = SrbPlant::new(sc);
    let mut trace = Vec::with_capacity(sc.cycles());
    run_bilevel_loop(
        &low,
        &mut plant,
        &sc.initial_schedule(),
        &sc.bilevel,
        bilevel,
        sc.cycles(),
        |rec| {
            inspect(&rec);
            trace.push(trace_record(&rec));
        },
    )?;
    let summary = summarize(sc, bilevel, &trace, &plant.x);
    Ok((trace, summary, plant.x))
}

pub fn run_scenario(sc: &Scenario, bilevel: bool) -> Result<(Vec<TraceRecord>, Summary), RunError> {
    let (trace, summary, _) = run_with(sc, bilevel, |_| {})?;
    Ok((trace, summary))
}

pub fn summarize(sc: &Scenario, bilevel: bool, trace: &[TraceRecord], end: &SrbState) -> Summary {
    let target = sc.target3();
    let distance = (0..3).map(|a| (end.r[a] - target[a]).powi(2)).sum::<f64>().sqrt();
    let momentum = end.l.norm();
    let n = trace.len().max(1) as f64;
    let steps: Vec<&TraceRecord> = trace
        .iter()
        .filter(|r| matches!(r.event, HlEvent::Step { .. }))
        .collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mpc: Vec<f64> = trace.iter().map(|r| r.times_ms.mpc).collect();
    let grad: Vec<f64> = steps.iter().map(|r| r.times_ms.gradient).collect();
    let ls: Vec<f64> = steps.iter().map(|r| r.times_ms.line_search).collect();
    Summary {
        name: sc.name.clone(),
        bilevel,
        recovered: end.is_finite() && distance < RECOVERY_DISTANCE && momentum < RECOVERY_MOMENTUM,
        final_position: [end.r.x, end.r.y, end.r.z],
        distance_to_target: distance,
        final_momentum_norm: momentum,
        average_cost: trace.iter().map(|r| r.j_a).sum::<f64>() / n,
        cycles: trace.len(),
        hl_steps: steps.len(),
        hl_accepted: steps
            .iter()
            .filter(|r| matches!(r.event, HlEvent::Step { accepted: true, .. }))
            .count(),
        hl_errors: trace.iter().filter(|r| r.hl_error.is_some()).count(),
        stale_cycles: trace.iter().filter(|r| r.stale).count(),
        timing: TimingStats {
            mpc_mean_ms: mean(&mpc),
            mpc_max_ms: mpc.iter().cloned().fold(0.0, f64::max),
            gradient_mean_ms: mean(&grad),
            line_search_mean_ms: mean(&ls),
        },
    }
}
