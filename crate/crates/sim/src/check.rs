//! Finite-difference checks of the contact-time gradient on closed-loop
//! snapshots.

use crate::run::{controller, run_with, RunError};
use crate::scenario::Scenario;
use bilevel_mpc::bilevel::{assemble_gradient, BilevelConfig, LowLevel};
use bilevel_mpc::mpc::{Measurement, MpcIterate};
use bilevel_mpc::schedule::ContactSchedule;
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::SeedableRng;
use serde::Serialize;

/// Central-difference step in seconds.
pub const FD_STEP: f64 = 1e-6;

/// Why a sample is left out of the error statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Exclusion {
    /// The QP violates strict complementarity; the cost is not
    /// differentiable there.
    Degenerate { rows: usize },
    /// A perturbed solve changed the active set or the problem layout.
    Structural,
    /// A perturbed schedule left the feasible set.
    Boundary,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSample {
    pub cycle: usize,
    pub t: f64,
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `‖g − g_fd‖ / max(‖g_fd‖, 1)`.
    pub rel_error: f64,
    pub grad_norm: f64,
    pub excluded: Option<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    /// Largest error over the samples that were not excluded.
    pub max_rel_error: f64,
    pub degenerate: usize,
    pub excluded: usize,
}

impl GradCheckReport {
    pub fn from_samples(samples: Vec<GradSample>) -> Self {
        let max_rel_error = samples
            .iter()
            .filter(|s| s.excluded.is_none())
            .map(|s| s.rel_error)
            .fold(0.0, f64::max);
        let degenerate = samples
            .iter()
            .filter(|s| matches!(s.excluded, Some(Exclusion::Degenerate { .. })))
            .count();
        let excluded = samples.iter().filter(|s| s.excluded.is_some()).count();
        Self {
            samples,
            max_rel_error,
            degenerate,
            excluded,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let note = match &s.excluded {
                None => String::new(),
                Some(e) => format!(" excluded: {e:?}"),
            };
            out.push_str(&format!(
                "cycle {:4} t {:.3}: |grad| {:.3e}, rel error {:.3e}{note}\n",
                s.cycle, s.t, s.grad_norm, s.rel_error
            ));
        }
        out.push_str(&format!(
            "max rel error {:.3e} over {} samples; {} degenerate, {} excluded\n",
            self.max_rel_error,
            self.samples.len(),
            self.degenerate,
            self.excluded
        ));
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

/// Compares the analytic gradient at `sched` with central differences of
/// `eval_cost`, both started from `warm`. The barrier term is left out.
pub fn compare_gradient<L: LowLevel>(
    low: &L,
    sched: &ContactSchedule,
    meas: &L::Measurement,
    warm: Option<&L::Iterate>,
    cfg: &BilevelConfig,
    h: f64,
) -> (Vec<f64>, Vec<f64>, Option<Exclusion>) {
    let cfg = BilevelConfig {
        barrier_enabled: false,
        ..cfg.clone()
    };
    let n = sched.n_free();
    let fail = |e: String| (Vec::new(), Vec::new(), Some(Exclusion::Failed(e)));
    let base = match low.eval_cost(sched, meas, warm, cfg.n_solves_eval) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let jac = match low.jacobians(sched, &base) {
        Ok(j) => j,
        Err(e) => return fail(e),
    };
    let (qp, sol) = low.qp(&base);
    let (analytic, sens) = match assemble_gradient(qp, sol, &jac, sched, &cfg) {
        Ok(g) => g,
        Err(e) => return fail(e.to_string()),
    };
    let mut excluded = (!sens.degenerate_indices.is_empty()).then(|| Exclusion::Degenerate {
        rows: sens.degenerate_indices.len(),
    });
    let layout = (qp.n_var(), qp.n_eq(), qp.n_in());
    let active = sol.active_set.clone();
    let mut fd = vec![0.0; n];
    for j in 0..n {
        let mut side = [0.0; 2];
        for (k, s) in [1.0, -1.0].into_iter().enumerate() {
            let mut p = vec![0.0; n];
            p[j] = s * h;
            let Ok(moved) = sched.apply_step(&p) else {
                excluded.get_or_insert(Exclusion::Boundary);
                continue;
            };
            match low.eval_cost(&moved, meas, warm, cfg.n_solves_eval) {
                Ok(it) => {
                    let (q, so) = low.qp(&it);
                    if (q.n_var(), q.n_eq(), q.n_in()) != layout || so.active_set != active {
                        excluded.get_or_insert(Exclusion::Structural);
                    }
                    side[k] = low.cost(&it);
                }
                Err(e) => {
                    excluded.get_or_insert(Exclusion::Failed(e));
                }
            }
        }
        fd[j] = (side[0] - side[1]) / (2.0 * h);
    }
    (analytic, fd, excluded)
}

/// Relative error with a unit floor on the reference norm, so that
/// near-zero gradients are compared absolutely.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(fd).max(1.0)
}

/// Snapshot of the closed loop at the start of a cycle.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub cycle: usize,
    pub t: f64,
    pub schedule: ContactSchedule,
    pub meas: Measurement,
    pub iterate: MpcIterate,
}

/// Runs `sc` with the high level on or off and keeps the requested cycles,
/// with every appended schedule entry released for optimization.
pub fn snapshots(sc: &Scenario, bilevel: bool, cycles: &[usize]) -> Result<Vec<Snapshot>, RunError> {
    let mut out = Vec::new();
    run_with(sc, bilevel, |rec| {
        if cycles.contains(&rec.cycle) {
            let mut schedule = rec.schedule.clone();
            schedule.release_appended();
            out.push(Snapshot {
                cycle: rec.cycle,
                t: rec.t,
                schedule,
                meas: rec.iterate.meas.clone(),
                iterate: rec.iterate.clone(),
            });
        }
    })?;
    Ok(out)
}

/// Gradient check on `n_trials` cycles drawn with the scenario seed from the
/// second half of a bilevel-off run.
pub fn grad_check(sc: &Scenario, n_trials: usize) -> Result<GradCheckReport, RunError> {
    sc.validate()?;
    if n_trials == 0 {
        return Err(crate::ScenarioError::Invalid("need at least one trial".into()).into());
    }
    let total = sc.cycles();
    let first = total / 2;
    let pool = total - first;
    let mut rng = StdRng::seed_from_u64(sc.rng_seed);
    let mut cycles: Vec<usize> = sample(&mut rng, pool, n_trials.min(pool))
        .into_iter()
        .map(|k| first + k)
        .collect();
    cycles.sort_unstable();
    let low = controller(sc);
    let samples = snapshots(sc, false, &cycles)?
        .into_iter()
        .map(|s| check_snapshot(&low, &s, &sc.bilevel))
        .collect();
    Ok(GradCheckReport::from_samples(samples))
}

pub fn check_snapshot<L>(low: &L, s: &Snapshot, cfg: &BilevelConfig) -> GradSample
where
    L: LowLevel<Iterate = MpcIterate, Measurement = Measurement>,
{
    let (analytic, fd, excluded) = compare_gradient(low, &s.schedule, &s.meas, Some(&s.iterate), cfg, FD_STEP);
    GradSample {
        cycle: s.cycle,
        t: s.t,
        rel_error: relative_error(&analytic, &fd),
        grad_norm: norm(&analytic),
        analytic,
        finite_difference: fd,
        excluded,
    }
}
