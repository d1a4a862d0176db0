//! One-dimensional double integrator driven to the origin by a two-segment
//! Hermite acceleration profile that must pass through zero at a single
//! free switching time `θ`. Small enough to compare the bilevel machinery
//! against a dense closed form.

use super::{LowLevel, Plant};
use crate::mpc::build::Assembler;
use crate::mpc::expr::{KnotSrc, Lin, Piece, PieceSpline, Src, TimeExpr};
use crate::qp::{solve_qp, ParamJacobians, QpProblem, QpSolution};
use crate::schedule::{ContactPhase, ContactSchedule, FreezeReason, LegSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub nodes: usize,
    pub dt: f64,
    /// Initial position and velocity.
    pub x0: [f64; 2],
    pub q_pos: f64,
    pub q_vel: f64,
    pub rho: f64,
    /// Ridge on the spline knot variables.
    pub ridge: f64,
    /// Bound on `|u|` at the nodes.
    pub u_max: f64,
    pub theta0: f64,
    /// Frozen second change bounding `θ` from above.
    pub theta_last: f64,
    pub k_min: f64,
    pub k_end: f64,
}

impl Default for ToyProblem {
    fn default() -> Self {
        Self {
            nodes: 20,
            dt: 0.05,
            x0: [1.0, 0.0],
            q_pos: 10.0,
            q_vel: 1.0,
            rho: 0.01,
            ridge: 1e-6,
            u_max: 50.0,
            theta0: 0.55,
            theta_last: 0.95,
            k_min: 0.1,
            k_end: 0.8,
        }
    }
}

/// Variable layout: `(p_k, v_k)` per node, then `y0, s0, s1, y2, s2`.
pub const SPLINE_VARS: usize = 5;

#[derive(Debug, Clone)]
pub struct ToyIterate {
    pub qp: QpProblem,
    pub sol: QpSolution,
    pub cost: f64,
    pub theta: f64,
}

impl ToyProblem {
    pub fn horizon(&self) -> f64 {
        (self.nodes - 1) as f64 * self.dt
    }

    pub fn schedule(&self) -> ContactSchedule {
        ContactSchedule {
            legs: vec![LegSchedule {
                times: vec![self.theta0, self.theta_last],
                frozen: vec![None, Some(FreezeReason::Fixed)],
                phase0: ContactPhase::Stance,
                phase_start: 0.0,
                stance_period: self.theta0,
                swing_period: self.theta_last - self.theta0,
            }],
            t_now: 0.0,
            k_min: self.k_min,
            k_end: self.k_end,
            changes_per_leg: 2,
            swing_protect_fraction: 1.0,
        }
    }

    /// Acceleration spline for switching time `θ` (free column 0).
    pub fn control_spline(&self, theta: f64) -> PieceSpline {
        let base = 2 * self.nodes;
        let v = |k: usize| Src::Var(base + k);
        let zero = Src::Const(0.0);
        let knot = |value: Src, slope: Src| KnotSrc {
            value: [value, zero, zero],
            slope: [slope, zero, zero],
        };
        let t_switch = TimeExpr {
            value: theta,
            grad: vec![(0, 1.0)],
        };
        PieceSpline {
            pieces: vec![
                Piece {
                    t0: TimeExpr::constant(0.0),
                    t1: t_switch.clone(),
                    zero: false,
                    k0: knot(v(0), v(1)),
                    k1: knot(zero, v(2)),
                },
                Piece {
                    t0: t_switch,
                    t1: TimeExpr::constant(self.horizon()),
                    zero: false,
                    k0: knot(zero, v(2)),
                    k1: knot(v(3), v(4)),
                },
            ],
        }
    }

    pub fn build(&self, sched: &ContactSchedule, derivs: bool) -> (QpProblem, Option<ParamJacobians>, f64) {
        let theta = sched.legs[0].times[0];
        let n_nodes = self.nodes;
        let n = 2 * n_nodes + SPLINE_VARS;
        let pos = |k: usize| 2 * k;
        let vel = |k: usize| 2 * k + 1;
        let spline = self.control_spline(theta);
        let u: Vec<Lin> = (0..n_nodes)
            .map(|k| {
                let [ux, _, _] = spline.eval_lin(k as f64 * self.dt, derivs);
                ux
            })
            .collect();
        let mut asm = Assembler::new(n, sched.n_free(), derivs);
        for (var, x0) in [(pos(0), self.x0[0]), (vel(0), self.x0[1])] {
            let mut e = Lin::var(var, 1.0);
            e.add_const(-x0);
            asm.eq(&e);
        }
        for k in 0..n_nodes - 1 {
            let mut e = Lin::var(pos(k + 1), 1.0);
            e.add_var(pos(k), -1.0);
            e.add_var(vel(k), -self.dt);
            asm.eq(&e);
            let mut e = Lin::var(vel(k + 1), 1.0);
            e.add_var(vel(k), -1.0);
            e.add_scaled(&u[k], -self.dt);
            asm.eq(&e);
        }
        for uk in &u {
            let mut hi = uk.clone();
            hi.add_const(-self.u_max);
            asm.le(&hi);
            let mut lo = Lin::default();
            lo.add_scaled(uk, -1.0);
            lo.add_const(-self.u_max);
            asm.le(&lo);
        }
        for k in 1..n_nodes {
            asm.square(&Lin::var(pos(k), 1.0), self.q_pos);
            asm.square(&Lin::var(vel(k), 1.0), self.q_vel);
        }
        for uk in &u {
            asm.square(uk, self.rho);
        }
        for j in 0..SPLINE_VARS {
            asm.square(&Lin::var(2 * n_nodes + j, 1.0), self.ridge);
        }
        asm.finish()
    }

    fn solve(&self, sched: &ContactSchedule, warm: Option<&ToyIterate>) -> Result<ToyIterate, String> {
        let (qp, _, offset) = self.build(sched, false);
        let sol = solve_qp(&qp, warm.map(|w| &w.sol)).map_err(|e| e.to_string())?;
        Ok(ToyIterate {
            cost: sol.cost + offset,
            theta: sched.legs[0].times[0],
            qp,
            sol,
        })
    }
}

impl LowLevel for ToyProblem {
    type Iterate = ToyIterate;
    type Measurement = ();

    fn rt_iteration(&self, sched: &ContactSchedule, _: &(), prev: Option<&ToyIterate>) -> Result<ToyIterate, String> {
        self.solve(sched, prev)
    }

    fn eval_cost(
        &self,
        sched: &ContactSchedule,
        _: &(),
        warm: Option<&ToyIterate>,
        n_solves: usize,
    ) -> Result<ToyIterate, String> {
        let mut it = self.solve(sched, warm)?;
        for _ in 1..n_solves {
            it = self.solve(sched, Some(&it))?;
        }
        Ok(it)
    }

    fn cost(&self, it: &ToyIterate) -> f64 {
        it.cost
    }

    fn jacobians(&self, sched: &ContactSchedule, _: &ToyIterate) -> Result<ParamJacobians, String> {
        Ok(self.build(sched, true).1.expect("derivatives requested"))
    }

    fn qp<'a>(&self, it: &'a ToyIterate) -> (&'a QpProblem, &'a QpSolution) {
        (&it.qp, &it.sol)
    }
}

/// The toy problem has no dynamics between cycles: time stays at zero.
pub struct StaticPlant;

impl Plant<ToyProblem> for StaticPlant {
    fn time(&self) -> f64 {
        0.0
    }

    fn measure(&self) {}

    fn step(&mut self, _: &ToyIterate, _: &mut ContactSchedule) {}
}
