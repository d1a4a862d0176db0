//! High-level optimization of the free contact times: cost gradient through
//! the low-level QP, LP step direction inside the schedule polytope, and a
//! parallel grid line search.

pub mod toy;

use crate::mpc::{self, Measurement, MpcConfig, MpcError, MpcIterate};
use crate::qp::{
    differentiate_cost_with, solve_lp, DegenerateMode, LpError, ParamJacobians, QpProblem, QpSolution,
    SensitivityError, SensitivityOptions, SensitivityResult,
};
use crate::schedule::{ContactSchedule, ScheduleError};
use crate::srb::SrbParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilevelConfig {
    /// High-level period in MPC solves.
    pub k_hl: usize,
    /// Warm-up MPC solves before the first cycle.
    pub k_start: usize,
    pub alphas: Vec<f64>,
    pub n_solves_eval: usize,
    /// Largest `‖p‖∞` per step, in seconds.
    pub trust_radius: f64,
    /// Factor applied to the working radius after a rejected step.
    pub trust_shrink: f64,
    /// Smallest working radius.
    pub trust_min: f64,
    pub barrier_enabled: bool,
    pub barrier_weight: f64,
    pub c1: f64,
    pub c2: f64,
    pub degenerate: DegenerateHandling,
    /// `h` relaxation used when differentiating a degenerate solution.
    pub perturbation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegenerateHandling {
    Reject,
    Perturb,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            k_hl: 1,
            k_start: 5,
            alphas: (1..=10).map(|i| i as f64 / 10.0).collect(),
            n_solves_eval: 1,
            trust_radius: 0.05,
            trust_shrink: 0.5,
            trust_min: 1e-6,
            barrier_enabled: false,
            barrier_weight: 1e-3,
            c1: 1e-4,
            c2: 0.9,
            degenerate: DegenerateHandling::Perturb,
            perturbation: 1e-9,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<(), BilevelError> {
        let bad = |m: &str| Err(BilevelError::Config(m.into()));
        if self.k_hl < 1 {
            return bad("k_hl must be at least 1");
        }
        if self.k_start < 1 {
            return bad("k_start must be positive");
        }
        if !(self.trust_radius > 0.0) || !(self.trust_min > 0.0) || self.trust_min > self.trust_radius {
            return bad("trust radius bounds must satisfy 0 < trust_min <= trust_radius");
        }
        if !(self.trust_shrink > 0.0 && self.trust_shrink < 1.0) {
            return bad("trust_shrink must lie in (0, 1)");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad("alphas must be a nonempty subset of (0, 1]");
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad("Wolfe constants must satisfy 0 < c1 < c2 < 1");
        }
        if self.n_solves_eval < 1 {
            return bad("n_solves_eval must be at least 1");
        }
        if !(self.barrier_weight >= 0.0) || !(self.perturbation > 0.0) {
            return bad("barrier weight must be nonnegative and perturbation positive");
        }
        Ok(())
    }

    fn sensitivity_options(&self) -> SensitivityOptions {
        SensitivityOptions {
            degenerate: match self.degenerate {
                DegenerateHandling::Reject => DegenerateMode::Reject,
                DegenerateHandling::Perturb => DegenerateMode::Perturb,
            },
            perturbation: self.perturbation,
            ..SensitivityOptions::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilevelError {
    #[error("invalid bilevel configuration: {0}")]
    Config(String),
    #[error("sensitivity failed: {0}")]
    Sensitivity(#[from] SensitivityError),
    #[error("barrier undefined: polytope row {row} has slack {slack:e}")]
    BarrierDomain { row: usize, slack: f64 },
    #[error("step LP failed: {0}")]
    Lp(#[from] LpError),
    #[error("schedule update failed: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("low-level solve failed: {0}")]
    LowLevel(String),
    #[error("{got} parameter derivatives for {expected} free entries")]
    Dimension { got: usize, expected: usize },
}

/// `∇B` for `B(θ) = −Σ ln g_j(θ)` over the polytope rows `g = b − aᵀθ ≥ 0`.
pub fn barrier_gradient(sched: &ContactSchedule) -> Result<Vec<f64>, BilevelError> {
    let poly = sched.polytope_rows();
    let theta = sched.free_values();
    let mut g = vec![0.0; poly.dim];
    for (row, (a, &b)) in poly.a_in.iter().zip(&poly.b_in).enumerate() {
        let slack = b - a.iter().zip(&theta).map(|(x, y)| x * y).sum::<f64>();
        if !(slack > 0.0) {
            return Err(BilevelError::BarrierDomain { row, slack });
        }
        for (gk, ak) in g.iter_mut().zip(a) {
            *gk += ak / slack;
        }
    }
    Ok(g)
}

/// `∇_θ J` through the QP sensitivity, plus the weighted barrier gradient
/// when enabled.
pub fn assemble_gradient(
    qp: &QpProblem,
    sol: &QpSolution,
    jac: &ParamJacobians,
    sched: &ContactSchedule,
    cfg: &BilevelConfig,
) -> Result<(Vec<f64>, SensitivityResult), BilevelError> {
    let expected = sched.n_free();
    if jac.len() != expected {
        return Err(BilevelError::Dimension {
            got: jac.len(),
            expected,
        });
    }
    let res = differentiate_cost_with(qp, sol, jac, &cfg.sensitivity_options())?;
    let mut grad = res.gradient.clone();
    if cfg.barrier_enabled {
        let b = barrier_gradient(sched)?;
        for (g, bk) in grad.iter_mut().zip(b) {
            *g += cfg.barrier_weight * bk;
        }
    }
    Ok((grad, res))
}

/// Minimizes `⟨grad, p⟩` subject to `θ + p ∈ 𝒯` and `‖p‖∞ ≤ radius`.
pub fn step_direction(grad: &[f64], sched: &ContactSchedule, radius: f64) -> Result<Vec<f64>, BilevelError> {
    if grad.len() != sched.n_free() {
        return Err(BilevelError::Dimension {
            got: grad.len(),
            expected: sched.n_free(),
        });
    }
    if grad.is_empty() {
        return Ok(Vec::new());
    }
    let mut poly = sched.polytope_rows();
    let theta = sched.free_values();
    for (a, b) in poly.a_in.iter().zip(poly.b_in.iter_mut()) {
        *b -= a.iter().zip(&theta).map(|(x, y)| x * y).sum::<f64>();
    }
    poly.push_box(-radius, radius);
    Ok(solve_lp(grad, &poly)?)
}

/// Outcome of one high-level update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HighLevelStep {
    pub grad: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha_star: f64,
    /// Cost at each grid value; `None` where the evaluation failed.
    pub costs: Vec<Option<f64>>,
    pub baseline: f64,
    pub accepted: bool,
    pub wolfe_armijo_ok: bool,
    pub trust_radius: f64,
    pub degenerate_rows: usize,
}

impl HighLevelStep {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Evaluates `eval` at `θ + α p` for every grid value in parallel and picks
/// the lowest cost, breaking ties toward the smaller α. The step is
/// accepted only when it improves on `baseline` by more than 1e-12.
pub fn line_search<T, F>(
    sched: &ContactSchedule,
    grad: &[f64],
    p: &[f64],
    baseline: f64,
    cfg: &BilevelConfig,
    eval: F,
) -> (HighLevelStep, Option<(ContactSchedule, T)>)
where
    T: Send,
    F: Fn(&ContactSchedule) -> Option<(f64, T)> + Sync,
{
    let moving = p.iter().any(|&v| v != 0.0);
    let mut results: Vec<Option<(f64, ContactSchedule, T)>> = if moving {
        cfg.alphas
            .par_iter()
            .map(|&a| {
                let step: Vec<f64> = p.iter().map(|v| a * v).collect();
                let s = sched.apply_step(&step).ok()?;
                let (c, t) = eval(&s)?;
                c.is_finite().then_some((c, s, t))
            })
            .collect()
    } else {
        cfg.alphas.iter().map(|_| None).collect()
    };
    let costs: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().map(|x| x.0)).collect();
    let mut best: Option<usize> = None;
    for (k, c) in costs.iter().enumerate() {
        let Some(c) = c else { continue };
        let better = match best {
            None => true,
            Some(b) => *c < costs[b].unwrap() || (*c == costs[b].unwrap() && cfg.alphas[k] < cfg.alphas[b]),
        };
        if better {
            best = Some(k);
        }
    }
    let slope: f64 = grad.iter().zip(p).map(|(g, v)| g * v).sum();
    let (alpha_star, best_cost) = match best {
        Some(k) => (cfg.alphas[k], costs[k].unwrap()),
        None => (0.0, f64::INFINITY),
    };
    let accepted = best.is_some() && best_cost < baseline - 1e-12;
    let step = HighLevelStep {
        grad: grad.to_vec(),
        p: p.to_vec(),
        alpha_star,
        costs,
        baseline,
        accepted,
        wolfe_armijo_ok: best_cost <= baseline + cfg.c1 * alpha_star * slope,
        trust_radius: p.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
        degenerate_rows: 0,
    };
    let choice = if accepted {
        best.and_then(|k| results[k].take()).map(|(_, s, t)| (s, t))
    } else {
        None
    };
    (step, choice)
}

/// Low-level controller whose cost the high level differentiates.
pub trait LowLevel: Sync {
    type Iterate: Clone + Send + Sync;
    type Measurement: Sync;

    fn rt_iteration(
        &self,
        sched: &ContactSchedule,
        meas: &Self::Measurement,
        prev: Option<&Self::Iterate>,
    ) -> Result<Self::Iterate, String>;

    fn eval_cost(
        &self,
        sched: &ContactSchedule,
        meas: &Self::Measurement,
        warm: Option<&Self::Iterate>,
        n_solves: usize,
    ) -> Result<Self::Iterate, String>;

    fn cost(&self, it: &Self::Iterate) -> f64;

    fn jacobians(&self, sched: &ContactSchedule, it: &Self::Iterate) -> Result<ParamJacobians, String>;

    fn qp<'a>(&self, it: &'a Self::Iterate) -> (&'a QpProblem, &'a QpSolution);
}

/// Wall-clock seconds spent in each stage of a cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub mpc: f64,
    pub gradient: f64,
    pub line_search: f64,
}

pub struct HighLevelOutcome<I> {
    pub step: Option<HighLevelStep>,
    pub error: Option<BilevelError>,
    pub schedule: ContactSchedule,
    /// Low-level iterate solved under `schedule` from the same warm start,
    /// when one is available.
    pub iterate: Option<I>,
    pub times: StageTimes,
}

/// One high-level iteration at the current time and measurement:
/// baseline evaluation, gradient, LP direction, line search, update.
/// `radius` is the working trust radius, shrunk after rejections and reset
/// after acceptances.
pub fn high_level_iteration<L: LowLevel>(
    low: &L,
    sched: &ContactSchedule,
    meas: &L::Measurement,
    prev: Option<&L::Iterate>,
    cfg: &BilevelConfig,
    radius: &mut f64,
) -> HighLevelOutcome<L::Iterate> {
    let mut times = StageTimes::default();
    let fail = |e: BilevelError, times: StageTimes, it: Option<L::Iterate>| HighLevelOutcome {
        step: None,
        error: Some(e),
        schedule: sched.clone(),
        iterate: it,
        times,
    };
    if sched.n_free() == 0 {
        return HighLevelOutcome {
            step: None,
            error: None,
            schedule: sched.clone(),
            iterate: None,
            times,
        };
    }
    let t0 = Instant::now();
    let base = match low.eval_cost(sched, meas, prev, cfg.n_solves_eval) {
        Ok(b) => b,
        Err(e) => return fail(BilevelError::LowLevel(e), times, None),
    };
    let baseline = low.cost(&base);
    let jac = match low.jacobians(sched, &base) {
        Ok(j) => j,
        Err(e) => return fail(BilevelError::LowLevel(e), times, Some(base)),
    };
    let (qp, sol) = low.qp(&base);
    let (grad, sens) = match assemble_gradient(qp, sol, &jac, sched, cfg) {
        Ok(g) => g,
        Err(e) => return fail(e, times, Some(base)),
    };
    let p = match step_direction(&grad, sched, *radius) {
        Ok(p) => p,
        Err(e) => return fail(e, times, Some(base)),
    };
    times.gradient = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (mut step, choice) = line_search(sched, &grad, &p, baseline, cfg, |s| {
        let it = low.eval_cost(s, meas, prev, cfg.n_solves_eval).ok()?;
        Some((low.cost(&it), it))
    });
    times.line_search = t1.elapsed().as_secs_f64();
    step.degenerate_rows = sens.degenerate_indices.len();
    step.trust_radius = *radius;
    *radius = if step.accepted {
        cfg.trust_radius
    } else {
        (*radius * cfg.trust_shrink).max(cfg.trust_min)
    };
    let (schedule, iterate) = match choice {
        Some((s, it)) => (s, Some(it)),
        None => (sched.clone(), Some(base)),
    };
    HighLevelOutcome {
        step: Some(step),
        error: None,
        schedule,
        iterate,
        times,
    }
}

/// Closed-loop system driven by the low-level plan.
pub trait Plant<L: LowLevel> {
    fn time(&self) -> f64;
    fn measure(&self) -> L::Measurement;
    /// Applies `it` for one control period; may edit the schedule (for
    /// example on an early touchdown).
    fn step(&mut self, it: &L::Iterate, sched: &mut ContactSchedule);
}

/// Per-cycle output of [`run_bilevel_loop`].
pub struct CycleRecord<'a, I> {
    pub cycle: usize,
    pub t: f64,
    pub iterate: &'a I,
    pub schedule: &'a ContactSchedule,
    pub step: Option<&'a HighLevelStep>,
    pub hl_error: Option<&'a BilevelError>,
    pub times: StageTimes,
}

/// Runs the bilevel scheme: `k_start` warm-up solves, then per cycle an
/// optional high-level update (every `k_hl`-th cycle when `hl_enabled`)
/// followed by one real-time iteration under the current schedule.
pub fn run_bilevel_loop<L, P, F>(
    low: &L,
    plant: &mut P,
    sched0: &ContactSchedule,
    cfg: &BilevelConfig,
    hl_enabled: bool,
    n_cycles: usize,
    mut on_cycle: F,
) -> Result<ContactSchedule, BilevelError>
where
    L: LowLevel,
    P: Plant<L>,
    F: FnMut(CycleRecord<'_, L::Iterate>),
{
    cfg.validate()?;
    let mut sched = sched0.advance_time(plant.time())?;
    let meas = plant.measure();
    let mut it: Option<L::Iterate> = None;
    for _ in 0..cfg.k_start {
        it = Some(
            low.rt_iteration(&sched, &meas, it.as_ref())
                .map_err(BilevelError::LowLevel)?,
        );
    }
    let mut radius = cfg.trust_radius;
    for cycle in 0..n_cycles {
        if cycle > 0 {
            sched = sched.advance_time(plant.time())?;
        }
        let meas = plant.measure();
        let mut times = StageTimes::default();
        let mut step = None;
        let mut hl_error = None;
        let mut reuse = None;
        if hl_enabled && cycle % cfg.k_hl == 0 {
            let out = high_level_iteration(low, &sched, &meas, it.as_ref(), cfg, &mut radius);
            times = out.times;
            step = out.step;
            hl_error = out.error;
            sched = out.schedule;
            sched.release_appended();
            // A single evaluation solve is exactly the real-time iteration
            // under the chosen schedule.
            if cfg.n_solves_eval == 1 && hl_error.is_none() {
                reuse = out.iterate;
            }
        }
        let t0 = Instant::now();
        let next = match reuse {
            Some(r) => r,
            None => low
                .rt_iteration(&sched, &meas, it.as_ref())
                .map_err(BilevelError::LowLevel)?,
        };
        times.mpc = t0.elapsed().as_secs_f64();
        on_cycle(CycleRecord {
            cycle,
            t: plant.time(),
            iterate: &next,
            schedule: &sched,
            step: step.as_ref(),
            hl_error: hl_error.as_ref(),
            times,
        });
        plant.step(&next, &mut sched);
        it = Some(next);
    }
    Ok(sched)
}

/// The SRB MPC as a low-level controller.
#[derive(Debug, Clone)]
pub struct SrbMpc {
    pub cfg: MpcConfig,
    pub params: SrbParams,
}

fn mpc_err(e: MpcError) -> String {
    e.to_string()
}

impl LowLevel for SrbMpc {
    type Iterate = MpcIterate;
    type Measurement = Measurement;

    fn rt_iteration(
        &self,
        sched: &ContactSchedule,
        meas: &Measurement,
        prev: Option<&MpcIterate>,
    ) -> Result<MpcIterate, String> {
        mpc::rt_iteration(&self.cfg, &self.params, sched, meas, prev).map_err(mpc_err)
    }

    fn eval_cost(
        &self,
        sched: &ContactSchedule,
        meas: &Measurement,
        warm: Option<&MpcIterate>,
        n_solves: usize,
    ) -> Result<MpcIterate, String> {
        mpc::eval_cost(&self.cfg, &self.params, sched, meas, warm, n_solves).map_err(mpc_err)
    }

    fn cost(&self, it: &MpcIterate) -> f64 {
        it.j_a
    }

    fn jacobians(&self, sched: &ContactSchedule, it: &MpcIterate) -> Result<ParamJacobians, String> {
        mpc::param_jacobians(&self.cfg, &self.params, sched, it).map_err(mpc_err)
    }

    fn qp<'a>(&self, it: &'a MpcIterate) -> (&'a QpProblem, &'a QpSolution) {
        (&it.qp, &it.sol)
    }
}
