//! Per-leg contact-change times, their feasible polytope, and bookkeeping as
//! time advances.

use crate::qp::Polytope;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactPhase {
    Stance,
    Swing,
}

impl ContactPhase {
    pub fn toggled(self) -> Self {
        match self {
            ContactPhase::Stance => ContactPhase::Swing,
            ContactPhase::Swing => ContactPhase::Stance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeReason {
    /// Already happened.
    Past,
    /// Touchdown ending the swing in progress.
    Touchdown,
    /// Appended this cycle; released after one high-level iteration.
    Appended,
    /// Held fixed by the caller; never released.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaitPattern {
    Stand,
    Trot,
    Pace,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule leaves its polytope (violation {0:e})")]
    PolytopeViolation(f64),
    #[error("step has {got} entries, expected {expected}")]
    StepDimension { got: usize, expected: usize },
    #[error("cannot move time backwards from {now} to {new}")]
    TimeReversal { now: f64, new: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSchedule {
    /// Contact-change times, ascending. Entries alternate lift-off and
    /// touchdown starting from the phase at the first future entry.
    pub times: Vec<f64>,
    pub frozen: Vec<Option<FreezeReason>>,
    /// Phase at `t_now`.
    pub phase0: ContactPhase,
    /// Time at which the current phase began.
    pub phase_start: f64,
    pub stance_period: f64,
    pub swing_period: f64,
}

impl LegSchedule {
    /// Index of the first entry that has not happened yet.
    pub fn first_future(&self) -> usize {
        self.frozen
            .iter()
            .position(|f| *f != Some(FreezeReason::Past))
            .unwrap_or(self.times.len())
    }

    pub fn future_count(&self) -> usize {
        self.times.len() - self.first_future()
    }
}

/// One contact phase of a leg clipped to a time window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpan {
    pub phase: ContactPhase,
    pub start: f64,
    pub end: f64,
    /// Entry index whose time is `start` (None when clipped at the window start).
    pub start_entry: Option<usize>,
    /// Entry index whose time is `end` (None when clipped at the window end).
    pub end_entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSchedule {
    pub legs: Vec<LegSchedule>,
    pub t_now: f64,
    pub k_min: f64,
    pub k_end: f64,
    pub changes_per_leg: usize,
    /// Fraction of the swing after which the touchdown time is frozen.
    pub swing_protect_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub k_min: f64,
    pub k_end: f64,
    pub changes_per_leg: usize,
    pub stance_period: f64,
    pub swing_period: f64,
    pub swing_protect_fraction: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            k_min: 0.1,
            k_end: 1.0,
            changes_per_leg: 4,
            stance_period: 0.35,
            swing_period: 0.25,
            swing_protect_fraction: 0.0,
        }
    }
}

impl ContactSchedule {
    /// Builds a schedule for `pattern` with four legs ordered
    /// front-left, front-right, hind-left, hind-right. `stand_until` places
    /// the first change of a standing pattern beyond the scenario.
    pub fn from_pattern(
        pattern: GaitPattern,
        t0: f64,
        cfg: &ScheduleConfig,
        stand_until: f64,
    ) -> Self {
        let (st, sw) = (cfg.stance_period, cfg.swing_period);
        let first: [f64; 4] = match pattern {
            GaitPattern::Stand => [stand_until; 4],
            // Pairs alternate half a cycle apart; the first pair lifts after
            // half a stance.
            GaitPattern::Trot => {
                let (a, b) = (t0 + 0.5 * st, t0 + 0.5 * st + 0.5 * (st + sw));
                [a, b, b, a]
            }
            GaitPattern::Pace => {
                let (a, b) = (t0 + 0.5 * st, t0 + 0.5 * st + 0.5 * (st + sw));
                [a, b, a, b]
            }
        };
        let legs = first
            .iter()
            .map(|&f| {
                let mut times = vec![f];
                let mut phase = ContactPhase::Swing;
                while times.len() < cfg.changes_per_leg {
                    let gap = if phase == ContactPhase::Swing { sw } else { st };
                    times.push(times.last().unwrap() + gap);
                    phase = phase.toggled();
                }
                LegSchedule {
                    frozen: vec![None; times.len()],
                    times,
                    phase0: ContactPhase::Stance,
                    phase_start: t0,
                    stance_period: st,
                    swing_period: sw,
                }
            })
            .collect();
        let mut s = Self {
            legs,
            t_now: t0,
            k_min: cfg.k_min,
            k_end: cfg.k_end,
            changes_per_leg: cfg.changes_per_leg,
            swing_protect_fraction: cfg.swing_protect_fraction,
        };
        s.refresh_touchdown_locks();
        s
    }

    /// `(leg, entry)` pairs of the optimizable entries, in vector order.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, leg) in self.legs.iter().enumerate() {
            for (j, f) in leg.frozen.iter().enumerate() {
                if f.is_none() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.free_entries()
            .iter()
            .map(|&(i, j)| self.legs[i].times[j])
            .collect()
    }

    pub fn n_free(&self) -> usize {
        self.free_entries().len()
    }

    /// Phase of leg `i` at time `t` (half-open at each change).
    pub fn phase_at(&self, i: usize, t: f64) -> ContactPhase {
        let leg = &self.legs[i];
        let mut phase = leg.phase0;
        for &tj in &leg.times[leg.first_future()..] {
            if t >= tj {
                phase = phase.toggled();
            } else {
                break;
            }
        }
        phase
    }

    /// Phases of leg `i` overlapping `[t_now, t_end]`.
    pub fn leg_phases(&self, i: usize, t_end: f64) -> Vec<PhaseSpan> {
        let leg = &self.legs[i];
        let ff = leg.first_future();
        let mut spans = Vec::new();
        let mut start = self.t_now;
        let mut start_entry = None;
        let mut phase = leg.phase0;
        for j in ff..leg.times.len() {
            let tj = leg.times[j];
            if tj >= t_end {
                break;
            }
            if tj - start <= 1e-9 {
                // A change sitting at the window start takes effect immediately.
                start = tj;
                start_entry = Some(j);
                phase = phase.toggled();
                continue;
            }
            spans.push(PhaseSpan {
                phase,
                start,
                end: tj,
                start_entry,
                end_entry: Some(j),
            });
            start = tj;
            start_entry = Some(j);
            phase = phase.toggled();
        }
        spans.push(PhaseSpan {
            phase,
            start,
            end: t_end,
            start_entry,
            end_entry: None,
        });
        spans
    }

    /// `𝒯` as inequality rows over the free entries.
    pub fn polytope_rows(&self) -> Polytope {
        let free = self.free_entries();
        let dim = free.len();
        let mut col: Vec<Vec<usize>> = self
            .legs
            .iter()
            .map(|l| vec![usize::MAX; l.times.len()])
            .collect();
        for (k, &(i, j)) in free.iter().enumerate() {
            col[i][j] = k;
        }
        let mut poly = Polytope::new(dim);
        for (i, leg) in self.legs.iter().enumerate() {
            let ff = leg.first_future();
            let n = leg.times.len();
            if ff == n {
                continue;
            }
            // a·θ_p + b·θ_q ≤ rhs, with frozen terms moved to the right.
            let mut push = |terms: &[(usize, f64)], rhs: f64| {
                let mut row = vec![0.0; dim];
                let mut r = rhs;
                let mut any = false;
                for &(j, c) in terms {
                    if col[i][j] != usize::MAX {
                        row[col[i][j]] += c;
                        any = true;
                    } else {
                        r -= c * leg.times[j];
                    }
                }
                if any {
                    poly.push_inequality(row, r);
                }
            };
            push(&[(ff, -1.0)], -self.t_now);
            for j in ff..n - 1 {
                push(&[(j, 1.0), (j + 1, -1.0)], -self.k_min);
            }
            if n - ff >= 2 {
                push(&[(n - 1, 1.0), (ff, -1.0)], self.k_end);
            }
        }
        poly
    }

    /// Largest violation of the polytope rows at the current entries.
    pub fn violation(&self) -> f64 {
        self.polytope_rows().violation(&self.free_values())
    }

    /// Adds `p` to the free entries.
    pub fn apply_step(&self, p: &[f64]) -> Result<Self, ScheduleError> {
        let free = self.free_entries();
        if p.len() != free.len() {
            return Err(ScheduleError::StepDimension {
                got: p.len(),
                expected: free.len(),
            });
        }
        let mut out = self.clone();
        for (k, &(i, j)) in free.iter().enumerate() {
            out.legs[i].times[j] += p[k];
        }
        let v = out.violation();
        if v > 1e-9 {
            return Err(ScheduleError::PolytopeViolation(v));
        }
        Ok(out)
    }

    /// Moves the clock to `t_new`: crossed entries become past, phases
    /// toggle, and new entries are appended to keep `changes_per_leg`
    /// future changes per leg.
    pub fn advance_time(&self, t_new: f64) -> Result<Self, ScheduleError> {
        if t_new < self.t_now {
            return Err(ScheduleError::TimeReversal {
                now: self.t_now,
                new: t_new,
            });
        }
        let mut out = self.clone();
        out.t_now = t_new;
        for leg in &mut out.legs {
            let ff = leg.first_future();
            for j in ff..leg.times.len() {
                if leg.times[j] < t_new {
                    leg.frozen[j] = Some(FreezeReason::Past);
                    leg.phase0 = leg.phase0.toggled();
                    leg.phase_start = leg.times[j];
                } else {
                    break;
                }
            }
        }
        let (k_min, k_end, c) = (out.k_min, out.k_end, out.changes_per_leg);
        for leg in &mut out.legs {
            while leg.future_count() < c {
                let ff = leg.first_future();
                let n = leg.times.len();
                // Phase entered at the last entry decides the next gap.
                let entered = if (n - ff) % 2 == 0 {
                    leg.phase0
                } else {
                    leg.phase0.toggled()
                };
                let period = match entered {
                    ContactPhase::Stance => leg.stance_period,
                    ContactPhase::Swing => leg.swing_period,
                };
                let last = leg.times.last().copied().unwrap_or(t_new).max(t_new);
                let t = if n > ff {
                    let spread = last - leg.times[ff];
                    let room = k_end - spread;
                    if room < k_min {
                        break;
                    }
                    last + period.clamp(k_min, room)
                } else {
                    last + period.max(k_min)
                };
                leg.times.push(t);
                leg.frozen.push(Some(FreezeReason::Appended));
            }
        }
        out.refresh_touchdown_locks();
        Ok(out)
    }

    /// Releases entries appended since the last high-level iteration.
    pub fn release_appended(&mut self) {
        for leg in &mut self.legs {
            for f in &mut leg.frozen {
                if *f == Some(FreezeReason::Appended) {
                    *f = None;
                }
            }
        }
    }

    /// Treats an early touchdown (or lift-off) of leg `i` as happening now.
    pub fn force_change_now(&mut self, i: usize) {
        let t = self.t_now;
        let leg = &mut self.legs[i];
        let ff = leg.first_future();
        if ff < leg.times.len() {
            let shift = t - leg.times[ff];
            for tj in &mut leg.times[ff..] {
                *tj += shift;
            }
            leg.frozen[ff] = Some(FreezeReason::Past);
            leg.phase0 = leg.phase0.toggled();
            leg.phase_start = t;
        }
        self.refresh_touchdown_locks();
    }

    fn refresh_touchdown_locks(&mut self) {
        let t = self.t_now;
        let frac = self.swing_protect_fraction;
        for leg in &mut self.legs {
            let ff = leg.first_future();
            for j in ff..leg.times.len() {
                if leg.frozen[j] == Some(FreezeReason::Touchdown) {
                    leg.frozen[j] = None;
                }
            }
            if leg.phase0 == ContactPhase::Swing && ff < leg.times.len() {
                let span = leg.times[ff] - leg.phase_start;
                let progress = if span > 0.0 {
                    (t - leg.phase_start) / span
                } else {
                    1.0
                };
                if progress >= frac {
                    leg.frozen[ff] = Some(FreezeReason::Touchdown);
                }
            }
        }
    }

    /// Durations between consecutive future changes of each leg, starting
    /// from `t_now`, and their sparse derivative `(leg, segment, free column, ±1)`.
    pub fn durations_and_jacobian(&self) -> (Vec<Vec<f64>>, Vec<(usize, usize, usize, f64)>) {
        let free = self.free_entries();
        let mut durations = Vec::with_capacity(self.legs.len());
        let mut jac = Vec::new();
        for (i, leg) in self.legs.iter().enumerate() {
            let ff = leg.first_future();
            let mut d = Vec::new();
            let mut prev = self.t_now;
            for j in ff..leg.times.len() {
                let seg = j - ff;
                d.push(leg.times[j] - prev);
                if let Some(k) = free.iter().position(|&e| e == (i, j)) {
                    jac.push((i, seg, k, 1.0));
                    if j + 1 < leg.times.len() {
                        jac.push((i, seg + 1, k, -1.0));
                    }
                }
                prev = leg.times[j];
            }
            durations.push(d);
        }
        (durations, jac)
    }
}
