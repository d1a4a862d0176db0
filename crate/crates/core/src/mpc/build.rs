//! Assembly of the low-level QP and its parameter derivatives.

use super::expr::{Lin, Src};
use super::plan::{build_plans, LegPlan, PlanSettings, VarAlloc};
use super::{Guess, Measurement, MpcConfig, MpcError};
use crate::qp::{ParamDerivative, ParamJacobians, QpProblem, Triplets};
use crate::schedule::ContactSchedule;
use crate::srb::{dynamics, linearize, SrbParams, SrbState, Tangent, STATE_DIM};
use nalgebra::UnitQuaternion;

/// Assembled QP together with the plans that give its variables meaning.
#[derive(Debug, Clone)]
pub struct Built {
    pub qp: QpProblem,
    pub jacobians: Option<ParamJacobians>,
    pub plans: Vec<LegPlan>,
    /// Constant part of the cost, left out of the QP objective.
    pub offset: f64,
    pub x_ref: UnitQuaternion<f64>,
}

/// Accumulates QP rows and cost terms given as [`Lin`] expressions, along
/// with their parameter derivatives.
pub(crate) struct Assembler {
    derivs: bool,
    hess: Vec<(usize, usize, f64)>,
    grad: Vec<f64>,
    offset: f64,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    g: Vec<(usize, usize, f64)>,
    h: Vec<f64>,
    jac: Vec<ParamDerivative>,
}

impl Assembler {
    pub(crate) fn new(n: usize, n_theta: usize, derivs: bool) -> Self {
        Self {
            derivs,
            hess: Vec::new(),
            grad: vec![0.0; n],
            offset: 0.0,
            a: Vec::new(),
            b: Vec::new(),
            g: Vec::new(),
            h: Vec::new(),
            jac: vec![ParamDerivative::default(); if derivs { n_theta } else { 0 }],
        }
    }

    /// QP data, parameter derivatives when requested, and the constant
    /// part of the cost.
    pub(crate) fn finish(self) -> (QpProblem, Option<ParamJacobians>, f64) {
        let n = self.grad.len();
        let n_eq = self.b.len();
        let n_in = self.h.len();
        let to_csc = |rows: usize, t: &[(usize, usize, f64)]| {
            let mut m = Triplets::with_capacity(rows, n, t.len());
            for &(r, c, v) in t {
                m.push(r, c, v);
            }
            m.to_csc()
        };
        let qp = QpProblem {
            hess: to_csc(n, &self.hess),
            grad: self.grad,
            a_eq: to_csc(n_eq, &self.a),
            b_eq: self.b,
            g_in: to_csc(n_in, &self.g),
            h_in: self.h,
        };
        let jac = self.derivs.then(|| ParamJacobians { params: self.jac });
        (qp, jac, self.offset)
    }

    /// `e(z) = 0`
    pub(crate) fn eq(&mut self, e: &Lin) {
        let r = self.b.len();
        self.a.extend(e.terms.iter().map(|&(i, v)| (r, i, v)));
        self.b.push(-e.c);
        if self.derivs {
            for &(k, i, v) in &e.dterms {
                self.jac[k].d_a.push((r, i, v));
            }
            for &(k, v) in &e.dc {
                self.jac[k].d_b.push((r, -v));
            }
        }
    }

    /// `e(z) ≤ 0`, skipped when `e` does not involve any variable.
    pub(crate) fn le(&mut self, e: &Lin) {
        if !e.has_vars() {
            return;
        }
        let r = self.h.len();
        self.g.extend(e.terms.iter().map(|&(i, v)| (r, i, v)));
        self.h.push(-e.c);
        if self.derivs {
            for &(k, i, v) in &e.dterms {
                self.jac[k].d_g.push((r, i, v));
            }
            for &(k, v) in &e.dc {
                self.jac[k].d_h.push((r, -v));
            }
        }
    }

    /// Adds `w·e(z)²` to the cost.
    pub(crate) fn square(&mut self, e: &Lin, w: f64) {
        if w == 0.0 {
            return;
        }
        for &(i, vi) in &e.terms {
            for &(j, vj) in &e.terms {
                self.hess.push((i, j, 2.0 * w * (vi * vj)));
            }
            self.grad[i] += 2.0 * w * e.c * vi;
        }
        self.offset += w * e.c * e.c;
        if self.derivs {
            for &(k, i, dv) in &e.dterms {
                for &(j, vj) in &e.terms {
                    let v = 2.0 * w * (dv * vj);
                    self.jac[k].d_hess.push((i, j, v));
                    self.jac[k].d_hess.push((j, i, v));
                }
                self.jac[k].d_grad.push((i, 2.0 * w * e.c * dv));
            }
            for &(k, dc) in &e.dc {
                for &(i, vi) in &e.terms {
                    self.jac[k].d_grad.push((i, 2.0 * w * dc * vi));
                }
            }
        }
    }
}

/// Midpoint-rule samples per interval for the inputs of an Euler step.
pub const INTERVAL_SAMPLES: usize = 4;

fn state_var(k: usize, c: usize) -> usize {
    STATE_DIM * k + c
}

/// Tangent coordinates of `x` with the rotation taken relative to `x_ref`.
pub(crate) fn to_coords(x: &SrbState, x_ref: &UnitQuaternion<f64>) -> Tangent {
    let mut d = Tangent::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&x.r);
    d.fixed_rows_mut::<3>(3).copy_from(&x.l);
    d.fixed_rows_mut::<3>(6).copy_from(&(x_ref.inverse() * x.xi).scaled_axis());
    d.fixed_rows_mut::<3>(9).copy_from(&x.h);
    d
}

pub(crate) fn from_coords(d: &[f64], x_ref: &UnitQuaternion<f64>) -> SrbState {
    let v = |o: usize| nalgebra::Vector3::new(d[o], d[o + 1], d[o + 2]);
    SrbState {
        r: v(0),
        l: v(3),
        xi: x_ref * UnitQuaternion::from_scaled_axis(v(6)),
        h: v(9),
    }
}

/// Builds the QP for the current schedule linearized along `guess`. With
/// `derivs`, also returns the derivative of every data block with respect
/// to each free contact time.
pub fn build_qp(
    cfg: &MpcConfig,
    params: &SrbParams,
    sched: &ContactSchedule,
    meas: &Measurement,
    guess: &Guess,
    derivs: bool,
) -> Result<Built, MpcError> {
    let n_nodes = cfg.nodes;
    let n_legs = params.n_legs();
    if n_nodes < 2 || !(cfg.dt > 0.0) {
        return Err(MpcError::Config("need at least two nodes and a positive step".into()));
    }
    if sched.legs.len() != n_legs || meas.feet.len() != n_legs {
        return Err(MpcError::Config("leg count mismatch".into()));
    }
    if guess.states.len() != n_nodes || guess.inputs.len() != n_nodes {
        return Err(MpcError::Config("guess length does not match the horizon".into()));
    }
    let t_now = sched.t_now;
    let dt = cfg.dt;
    let t_end = t_now + (n_nodes - 1) as f64 * dt;
    let node_t = |k: usize| t_now + k as f64 * dt;
    let x_ref = meas.x.xi;

    let mut alloc = VarAlloc {
        next: STATE_DIM * n_nodes,
    };
    let settings = PlanSettings {
        t_now,
        t_end,
        swing_height: cfg.swing_height,
        force_slope: cfg.force_slope,
        subsegments: cfg.subsegments,
    };
    let plans = build_plans(sched, &meas.feet, &settings, &mut alloc);
    let n = alloc.next;
    let n_theta = sched.n_free();

    let mut asm = Assembler::new(n, n_theta, derivs);

    // Forces and foot positions at each node as expressions in z.
    let forces: Vec<Vec<[Lin; 3]>> = (0..n_nodes)
        .map(|k| plans.iter().map(|p| p.force.eval_lin(node_t(k), derivs)).collect())
        .collect();
    let feet: Vec<Vec<[Lin; 3]>> = (0..n_nodes)
        .map(|k| plans.iter().map(|p| p.foot.eval_lin(node_t(k), derivs)).collect())
        .collect();
    // Inputs driving each Euler step: midpoint-rule averages over the
    // interval, so that forces vanishing exactly at a node still act.
    let interval_mean = |k: usize, eval: &dyn Fn(&LegPlan, f64) -> [Lin; 3]| -> Vec<[Lin; 3]> {
        plans
            .iter()
            .map(|p| {
                let mut acc: [Lin; 3] = Default::default();
                for j in 0..INTERVAL_SAMPLES {
                    let t = node_t(k) + (j as f64 + 0.5) / INTERVAL_SAMPLES as f64 * dt;
                    for (a, e) in eval(p, t).iter().enumerate() {
                        acc[a].add_scaled(e, 1.0 / INTERVAL_SAMPLES as f64);
                    }
                }
                acc
            })
            .collect()
    };
    let step_forces: Vec<Vec<[Lin; 3]>> = (0..n_nodes - 1)
        .map(|k| interval_mean(k, &|p, t| p.force.eval_lin(t, derivs)))
        .collect();
    let step_feet: Vec<Vec<[Lin; 3]>> = (0..n_nodes - 1)
        .map(|k| interval_mean(k, &|p, t| p.foot.eval_lin(t, derivs)))
        .collect();

    // Initial condition.
    let x0 = to_coords(&meas.x, &x_ref);
    for c in 0..STATE_DIM {
        let mut e = Lin::var(state_var(0, c), 1.0);
        e.add_const(-x0[c]);
        asm.eq(&e);
    }

    // Forward-Euler dynamics linearized along the guess.
    for k in 0..n_nodes - 1 {
        let xg = &guess.states[k];
        let ug = &guess.inputs[k];
        let (ac, bc) = linearize(xg, ug, params);
        let f = dynamics(xg, ug, params);
        let xg_c = to_coords(xg, &x_ref);
        let ug_v = ug.to_vector();
        let affine = f - ac * xg_c - &bc * nalgebra::DVector::from_vec(ug_v.clone());
        for r in 0..STATE_DIM {
            let mut e = Lin::var(state_var(k + 1, r), 1.0);
            e.add_var(state_var(k, r), -1.0);
            for c in 0..STATE_DIM {
                let v = ac[(r, c)];
                if v != 0.0 {
                    e.add_var(state_var(k, c), -dt * v);
                }
            }
            for j in 0..6 * n_legs {
                let v = bc[(r, j)];
                if v != 0.0 {
                    let (leg, comp) = (j / 6, j % 6);
                    let u = if comp < 3 {
                        &step_forces[k][leg][comp]
                    } else {
                        &step_feet[k][leg][comp - 3]
                    };
                    e.add_scaled(u, -dt * v);
                }
            }
            e.add_const(-dt * affine[r]);
            asm.eq(&e);
        }
    }

    // Touchdown of a late swing stays where it was last planned.
    for (i, plan) in plans.iter().enumerate() {
        let (Some(vars), Some(target)) = (plan.ongoing_touchdown, guess.touchdown[i]) else {
            continue;
        };
        let leg = &sched.legs[i];
        let ff = leg.first_future();
        let Some(&td) = leg.times.get(ff) else { continue };
        let span = td - leg.phase_start;
        let progress = if span > 0.0 { (t_now - leg.phase_start) / span } else { 1.0 };
        if progress >= cfg.touchdown_lock_fraction {
            for a in 0..2 {
                let mut e = Lin::var(vars[a], 1.0);
                e.add_const(-target[a]);
                asm.eq(&e);
            }
        }
    }

    // Friction pyramid and force bounds on the control points of every force
    // piece in the horizon, which bounds the force at all times in between.
    for plan in &plans {
        let pieces: Vec<_> = plan
            .force
            .pieces
            .iter()
            .filter(|p| !p.zero && p.t1.value > t_now && p.t0.value < t_end)
            .collect();
        for (j, piece) in pieces.iter().enumerate() {
            let shared_end = pieces.get(j + 1).is_some_and(|next| next.k0 == piece.k1);
            let points = piece.control_points(derivs);
            let count = if shared_end { 3 } else { 4 };
            for f in &points[..count] {
                if !(f[0].has_vars() || f[1].has_vars() || f[2].has_vars()) {
                    continue;
                }
                let mut neg_fz = Lin::default();
                neg_fz.add_scaled(&f[2], -1.0);
                asm.le(&neg_fz);
                let mut upper = f[2].clone();
                upper.add_const(-params.f_max);
                asm.le(&upper);
                for a in 0..2 {
                    for s in [1.0, -1.0] {
                        let mut e = Lin::default();
                        e.add_scaled(&f[a], s);
                        e.add_scaled(&f[2], -params.mu);
                        asm.le(&e);
                    }
                }
            }
        }
    }

    // Horizontal leg boxes for planned footholds in stance.
    let lb = &params.leg_box;
    for k in 1..n_nodes {
        let t = node_t(k);
        for (i, plan) in plans.iter().enumerate() {
            let Some(st) = plan.in_stance(t) else { continue };
            if !st.foot.iter().any(|s| matches!(s, Src::Var(_))) {
                continue;
            }
            for a in 0..2 {
                let mut rel = feet[k][i][a].clone();
                rel.add_var(state_var(k, a), -1.0);
                rel.add_const(-lb.hips[i][a]);
                let mut up = rel.clone();
                up.add_const(-lb.upper[a]);
                asm.le(&up);
                let mut lo = Lin::default();
                lo.add_scaled(&rel, -1.0);
                lo.add_const(lb.lower[a]);
                asm.le(&lo);
            }
        }
    }

    // Tracking cost.
    let w = &cfg.weights;
    let target = cfg.target_coords(&x_ref);
    let state_w: [f64; STATE_DIM] = [
        w.position[0], w.position[1], w.position[2],
        w.momentum[0], w.momentum[1], w.momentum[2],
        w.orientation[0], w.orientation[1], w.orientation[2],
        w.angular_momentum[0], w.angular_momentum[1], w.angular_momentum[2],
    ];
    for k in 1..n_nodes {
        for c in 0..STATE_DIM {
            let mut e = Lin::var(state_var(k, c), 1.0);
            e.add_const(-target[c]);
            asm.square(&e, state_w[c]);
        }
    }
    // Small force magnitudes; with the support fixed by the dynamics this
    // spreads the weight evenly over the stance legs.
    for fk in &forces {
        for f in fk {
            for e in f {
                asm.square(e, w.force);
            }
        }
    }
    // Planned footholds stay near the hips.
    for k in 1..n_nodes {
        let t = node_t(k);
        for (i, plan) in plans.iter().enumerate() {
            let Some(st) = plan.in_stance(t) else { continue };
            if !st.foot.iter().any(|s| matches!(s, Src::Var(_))) {
                continue;
            }
            for a in 0..2 {
                let mut e = Lin::default();
                match st.foot[a] {
                    Src::Var(v) => e.add_var(v, 1.0),
                    Src::Const(c) => e.add_const(c),
                }
                e.add_var(state_var(k, a), -1.0);
                e.add_const(-lb.hips[i][a]);
                asm.square(&e, w.foot);
            }
        }
    }
    for plan in &plans {
        for ap in &plan.apexes {
            for a in 0..2 {
                let mut e = Lin::var(ap.apex[a], 1.0);
                e.add_var(ap.touchdown[a], -0.5);
                match ap.liftoff[a] {
                    Src::Var(v) => e.add_var(v, -0.5),
                    Src::Const(c) => e.add_const(-0.5 * c),
                }
                asm.square(&e, w.apex);
            }
        }
    }
    // Force knot values get the same penalty, which keeps knots between
    // nodes determined; the remaining spline variables get a small ridge.
    let mut ridge = vec![true; n];
    for plan in &plans {
        for &(_, vars) in &plan.force_knots {
            for v in vars {
                ridge[v] = false;
                asm.square(&Lin::var(v, 1.0), w.force);
            }
        }
    }
    for i in STATE_DIM * n_nodes..n {
        if ridge[i] {
            asm.square(&Lin::var(i, 1.0), w.regularization);
        }
    }

    let (qp, jacobians, offset) = asm.finish();
    Ok(Built {
        qp,
        jacobians,
        plans,
        offset,
        x_ref,
    })
}
