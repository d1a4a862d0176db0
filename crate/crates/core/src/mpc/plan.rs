//! Force and foot-position splines of every leg over the planning horizon,
//! with knots that are QP variables or fixed data.

use super::expr::{KnotSrc, Piece, PieceSpline, Src, TimeExpr};
use super::{FootState, ForceSlopeMode};
use crate::schedule::{ContactPhase, ContactSchedule};
use std::collections::HashMap;

/// Stance interval of one leg with the source of its foot position.
#[derive(Debug, Clone, PartialEq)]
pub struct StanceSpan {
    pub start: f64,
    pub end: f64,
    pub foot: [Src; 3],
}

/// Apex location of a swing and the end points it is regularized toward.
#[derive(Debug, Clone, PartialEq)]
pub struct ApexLink {
    pub apex: [usize; 2],
    pub liftoff: [Src; 2],
    pub touchdown: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegPlan {
    pub force: PieceSpline,
    pub foot: PieceSpline,
    pub stance: Vec<StanceSpan>,
    pub apexes: Vec<ApexLink>,
    /// Touchdown variables of the swing in progress at `t_now`.
    pub ongoing_touchdown: Option<[usize; 2]>,
    /// Touchdown variables of the first swing in the plan.
    pub next_touchdown: Option<[usize; 2]>,
    /// Free force knot values and their times.
    pub force_knots: Vec<(f64, [usize; 3])>,
}

impl LegPlan {
    pub fn in_stance(&self, t: f64) -> Option<&StanceSpan> {
        self.stance.iter().find(|s| t >= s.start && t < s.end)
    }
}

pub struct PlanSettings {
    pub t_now: f64,
    pub t_end: f64,
    pub swing_height: f64,
    pub force_slope: ForceSlopeMode,
    pub subsegments: usize,
}

pub struct VarAlloc {
    pub next: usize,
}

impl VarAlloc {
    fn take(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn take3(&mut self) -> [Src; 3] {
        [Src::Var(self.take()), Src::Var(self.take()), Src::Var(self.take())]
    }
}

/// Builds every leg's plan, allocating spline variables from `alloc`.
pub fn build_plans(
    sched: &ContactSchedule,
    feet: &[FootState],
    s: &PlanSettings,
    alloc: &mut VarAlloc,
) -> Vec<LegPlan> {
    let cols: HashMap<(usize, usize), usize> = sched
        .free_entries()
        .into_iter()
        .enumerate()
        .map(|(k, e)| (e, k))
        .collect();
    (0..sched.legs.len())
        .map(|i| build_leg(sched, i, &feet[i], s, &cols, alloc))
        .collect()
}

fn build_leg(
    sched: &ContactSchedule,
    i: usize,
    foot: &FootState,
    s: &PlanSettings,
    cols: &HashMap<(usize, usize), usize>,
    alloc: &mut VarAlloc,
) -> LegPlan {
    let leg = &sched.legs[i];
    let entry = |j: usize| TimeExpr {
        value: leg.times[j],
        grad: cols.get(&(i, j)).map(|&k| vec![(k, 1.0)]).unwrap_or_default(),
    };
    let spans = sched.leg_phases(i, s.t_end);
    // The change ending the last span, possibly beyond the horizon.
    let ext_end = (leg.first_future()..leg.times.len()).find(|&j| leg.times[j] >= s.t_end);

    let mut force = Vec::new();
    let mut feet = Vec::new();
    let mut stance = Vec::new();
    let mut apexes = Vec::new();
    let mut ongoing_touchdown = None;
    let mut next_touchdown = None;
    let mut force_knots = Vec::new();
    let mut pos: [Src; 3] = foot.position.map(Src::Const);

    let n = spans.len();
    for (idx, span) in spans.iter().enumerate() {
        let t0 = span.start_entry.map_or(TimeExpr::constant(s.t_now), entry);
        let t1_clip = span.end_entry.map_or(TimeExpr::constant(s.t_end), entry);
        let t1_full = match (span.end_entry, idx + 1 == n, ext_end) {
            (None, true, Some(j)) => entry(j),
            _ => t1_clip.clone(),
        };
        match span.phase {
            ContactPhase::Stance => {
                force.extend(stance_force(
                    &t0,
                    &t1_clip,
                    span.start_entry.is_some(),
                    span.end_entry.is_some(),
                    s,
                    alloc,
                    &mut force_knots,
                ));
                let k = KnotSrc {
                    value: pos,
                    slope: [Src::Const(0.0); 3],
                };
                feet.push(Piece {
                    t0: t0.clone(),
                    t1: t1_full.clone(),
                    zero: false,
                    k0: k,
                    k1: k,
                });
                stance.push(StanceSpan {
                    start: t0.value,
                    end: if idx + 1 == n { f64::INFINITY } else { t1_full.value },
                    foot: pos,
                });
            }
            ContactPhase::Swing => {
                force.push(Piece {
                    t0: t0.clone(),
                    t1: t1_clip.clone(),
                    zero: true,
                    k0: KnotSrc::zero(),
                    k1: KnotSrc::zero(),
                });
                let ongoing = idx == 0 && span.start_entry.is_none();
                let (k_start, lift) = if ongoing {
                    let k = KnotSrc {
                        value: foot.position.map(Src::Const),
                        slope: foot.velocity.map(Src::Const),
                    };
                    (k, TimeExpr::constant(leg.phase_start))
                } else {
                    let k = KnotSrc {
                        value: pos,
                        slope: [Src::Const(0.0); 3],
                    };
                    (k, t0.clone())
                };
                let (tx, ty) = (alloc.take(), alloc.take());
                let k_td = KnotSrc {
                    value: [Src::Var(tx), Src::Var(ty), Src::Const(0.0)],
                    slope: [Src::Const(0.0); 3],
                };
                let apex_t = TimeExpr::lerp(&lift, &t1_full, 0.5);
                if apex_t.value > t0.value + 1e-3 && apex_t.value < t1_full.value - 1e-3 {
                    let (ax, ay, vx, vy) = (alloc.take(), alloc.take(), alloc.take(), alloc.take());
                    let k_apex = KnotSrc {
                        value: [Src::Var(ax), Src::Var(ay), Src::Const(s.swing_height)],
                        slope: [Src::Var(vx), Src::Var(vy), Src::Const(0.0)],
                    };
                    feet.push(Piece {
                        t0: t0.clone(),
                        t1: apex_t.clone(),
                        zero: false,
                        k0: k_start,
                        k1: k_apex,
                    });
                    feet.push(Piece {
                        t0: apex_t,
                        t1: t1_full.clone(),
                        zero: false,
                        k0: k_apex,
                        k1: k_td,
                    });
                    apexes.push(ApexLink {
                        apex: [ax, ay],
                        liftoff: [k_start.value[0], k_start.value[1]],
                        touchdown: [tx, ty],
                    });
                } else {
                    feet.push(Piece {
                        t0: t0.clone(),
                        t1: t1_full.clone(),
                        zero: false,
                        k0: k_start,
                        k1: k_td,
                    });
                }
                if ongoing {
                    ongoing_touchdown = Some([tx, ty]);
                }
                next_touchdown.get_or_insert([tx, ty]);
                pos = k_td.value;
            }
        }
    }
    LegPlan {
        force: PieceSpline { pieces: force },
        foot: PieceSpline { pieces: feet },
        stance,
        apexes,
        ongoing_touchdown,
        next_touchdown,
        force_knots,
    }
}

/// Force pieces of one stance window. Knots at real contact changes hold
/// zero force; the others are free.
fn stance_force(
    t0: &TimeExpr,
    t1: &TimeExpr,
    pinned_start: bool,
    pinned_end: bool,
    s: &PlanSettings,
    alloc: &mut VarAlloc,
    free_values: &mut Vec<(f64, [usize; 3])>,
) -> Vec<Piece> {
    let n = s.subsegments.max(1);
    let knots: Vec<KnotSrc> = (0..=n)
        .map(|m| {
            let pinned = (m == 0 && pinned_start) || (m == n && pinned_end);
            if pinned {
                KnotSrc {
                    value: [Src::Const(0.0); 3],
                    slope: match s.force_slope {
                        ForceSlopeMode::Pinned => [Src::Const(0.0); 3],
                        ForceSlopeMode::Free => alloc.take3(),
                    },
                }
            } else {
                let value = alloc.take3();
                let t = TimeExpr::lerp(t0, t1, m as f64 / n as f64).value;
                free_values.push((t, value.map(|v| match v {
                    Src::Var(i) => i,
                    Src::Const(_) => unreachable!(),
                })));
                KnotSrc {
                    value,
                    slope: alloc.take3(),
                }
            }
        })
        .collect();
    (0..n)
        .map(|m| Piece {
            t0: TimeExpr::lerp(t0, t1, m as f64 / n as f64),
            t1: TimeExpr::lerp(t0, t1, (m + 1) as f64 / n as f64),
            zero: false,
            k0: knots[m],
            k1: knots[m + 1],
        })
        .collect()
}
