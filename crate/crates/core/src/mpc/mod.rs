//! Real-time-iteration MPC over the single-rigid-body model with force and
//! foot-position splines shaped by a contact schedule.

pub(crate) mod build;
pub mod expr;
pub mod plan;

pub use build::{build_qp, Built};

use crate::qp::{solve_qp_with, ParamJacobians, QpError, QpProblem, QpSettings, QpSolution};
use crate::schedule::{ContactPhase, ContactSchedule};
use crate::srb::{SrbInput, SrbParams, SrbState, Tangent};
use build::from_coords;
use nalgebra::{UnitQuaternion, Vector3};
use plan::LegPlan;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("low-level QP is infeasible")]
    Infeasible,
    #[error("low-level QP failed: {0}")]
    Solver(QpError),
}

/// Whether force slopes at contact changes are pinned to zero with the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForceSlopeMode {
    Pinned,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub position: [f64; 3],
    pub momentum: [f64; 3],
    pub orientation: [f64; 3],
    pub angular_momentum: [f64; 3],
    pub force: f64,
    /// Planned stance footholds relative to the hips.
    pub foot: f64,
    /// Swing apex relative to the midpoint of its end points.
    pub apex: f64,
    pub regularization: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            position: [50.0, 50.0, 200.0],
            momentum: [0.5, 0.5, 0.5],
            orientation: [50.0, 50.0, 50.0],
            angular_momentum: [1.0, 1.0, 1.0],
            force: 1e-5,
            foot: 5.0,
            apex: 1.0,
            regularization: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub nodes: usize,
    pub dt: f64,
    pub weights: CostWeights,
    /// Target CoM position; the target orientation is level and momenta zero.
    pub target: [f64; 3],
    pub swing_height: f64,
    /// Swing progress after which the touchdown location is held fixed.
    pub touchdown_lock_fraction: f64,
    pub force_slope: ForceSlopeMode,
    /// Hermite segments per stance force window.
    pub subsegments: usize,
    #[serde(skip)]
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            nodes: 20,
            dt: 0.05,
            weights: CostWeights::default(),
            target: [0.0, 0.0, 0.3],
            swing_height: 0.08,
            touchdown_lock_fraction: 0.5,
            force_slope: ForceSlopeMode::Pinned,
            subsegments: 3,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn horizon(&self) -> f64 {
        (self.nodes.max(1) - 1) as f64 * self.dt
    }

    fn target_coords(&self, x_ref: &UnitQuaternion<f64>) -> Tangent {
        let mut d = Tangent::zeros();
        for a in 0..3 {
            d[a] = self.target[a];
        }
        d.fixed_rows_mut::<3>(6).copy_from(&x_ref.inverse().scaled_axis());
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

/// Measured state at the start of a control cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub x: SrbState,
    pub feet: Vec<FootState>,
}

/// Linearization trajectory and touchdown targets carried between cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Guess {
    pub states: Vec<SrbState>,
    pub inputs: Vec<SrbInput>,
    pub touchdown: Vec<Option<[f64; 2]>>,
}

impl Guess {
    /// Standing still at the measured state with weight shared by the legs
    /// in stance at each node.
    pub fn hover(cfg: &MpcConfig, params: &SrbParams, sched: &ContactSchedule, meas: &Measurement) -> Self {
        let n_legs = params.n_legs();
        let mut inputs = Vec::with_capacity(cfg.nodes);
        for k in 0..cfg.nodes {
            let t = sched.t_now + k as f64 * cfg.dt;
            let stance: Vec<usize> = (0..n_legs)
                .filter(|&i| sched.phase_at(i, t) == ContactPhase::Stance)
                .collect();
            let mut u = SrbInput::zeros(n_legs);
            for (i, f) in meas.feet.iter().enumerate() {
                u.feet[i] = Vector3::from(f.position);
            }
            for &i in &stance {
                u.forces[i] = params.mass * params.gravity / stance.len() as f64;
            }
            inputs.push(u);
        }
        Self {
            states: vec![meas.x; cfg.nodes],
            inputs,
            touchdown: vec![None; n_legs],
        }
    }

    /// Previous iterate shifted to the current node times; node 0 is the
    /// measurement.
    pub fn shifted(prev: &MpcIterate, cfg: &MpcConfig, t_now: f64, meas: &Measurement) -> Self {
        let states = (0..cfg.nodes)
            .map(|k| {
                if k == 0 {
                    meas.x
                } else {
                    prev.state_at(t_now + k as f64 * cfg.dt)
                }
            })
            .collect();
        let inputs = (0..cfg.nodes)
            .map(|k| prev.mean_input(t_now + k as f64 * cfg.dt, cfg.dt))
            .collect();
        let touchdown = prev
            .plans
            .iter()
            .map(|p| {
                p.ongoing_touchdown
                    .or(p.next_touchdown)
                    .map(|v| [prev.sol.z[v[0]], prev.sol.z[v[1]]])
            })
            .collect();
        Self {
            states,
            inputs,
            touchdown,
        }
    }
}

/// One solved low-level problem.
#[derive(Debug, Clone)]
pub struct MpcIterate {
    pub t0: f64,
    pub dt: f64,
    /// Predicted states at the nodes.
    pub x: Vec<SrbState>,
    /// Planned inputs at the nodes.
    pub u: Vec<SrbInput>,
    pub qp: QpProblem,
    pub sol: QpSolution,
    /// Low-level cost: QP objective plus its constant part.
    pub j_a: f64,
    pub offset: f64,
    pub theta_snapshot: Vec<f64>,
    pub plans: Vec<LegPlan>,
    pub x_ref: UnitQuaternion<f64>,
    pub guess: Guess,
    pub meas: Measurement,
    /// Set when this iterate was carried over after a failed solve.
    pub stale: bool,
}

impl MpcIterate {
    /// Planned forces and foot positions at `t` (no external force).
    pub fn input_at(&self, t: f64) -> SrbInput {
        let mut u = SrbInput::zeros(self.plans.len());
        for (i, p) in self.plans.iter().enumerate() {
            u.forces[i] = Vector3::from(p.force.eval_numeric(t, &self.sol.z).0);
            u.feet[i] = Vector3::from(p.foot.eval_numeric(t, &self.sol.z).0);
        }
        u
    }

    /// Midpoint-rule average of the planned input over `[t, t + dt]`, as
    /// seen by one Euler step of the model.
    pub fn mean_input(&self, t: f64, dt: f64) -> SrbInput {
        let m = build::INTERVAL_SAMPLES;
        let mut u = SrbInput::zeros(self.plans.len());
        for j in 0..m {
            let s = self.input_at(t + (j as f64 + 0.5) / m as f64 * dt);
            for i in 0..self.plans.len() {
                u.forces[i] += s.forces[i] / m as f64;
                u.feet[i] += s.feet[i] / m as f64;
            }
        }
        u
    }

    pub fn foot_state_at(&self, i: usize, t: f64) -> FootState {
        let (position, velocity) = self.plans[i].foot.eval_numeric(t, &self.sol.z);
        FootState { position, velocity }
    }

    /// Predicted state at `t`, interpolated between nodes and held past the
    /// last node.
    pub fn state_at(&self, t: f64) -> SrbState {
        let s = ((t - self.t0) / self.dt).max(0.0);
        let k = s.floor() as usize;
        if k + 1 >= self.x.len() {
            return *self.x.last().expect("iterate has nodes");
        }
        let w = s - k as f64;
        let (a, b) = (&self.x[k], &self.x[k + 1]);
        SrbState {
            r: a.r.lerp(&b.r, w),
            l: a.l.lerp(&b.l, w),
            xi: a.xi.slerp(&b.xi, w),
            h: a.h.lerp(&b.h, w),
        }
    }
}

fn solve(
    cfg: &MpcConfig,
    params: &SrbParams,
    sched: &ContactSchedule,
    meas: &Measurement,
    guess: Guess,
    warm: Option<&QpSolution>,
) -> Result<MpcIterate, MpcError> {
    let built = build_qp(cfg, params, sched, meas, &guess, false)?;
    let warm = warm.filter(|w| {
        w.z.len() == built.qp.n_var() && w.lambda.len() == built.qp.n_in() && w.nu.len() == built.qp.n_eq()
    });
    let sol = solve_qp_with(&built.qp, warm, &cfg.qp).map_err(|e| match e {
        QpError::Infeasible => MpcError::Infeasible,
        e => MpcError::Solver(e),
    })?;
    let x = (0..cfg.nodes)
        .map(|k| from_coords(&sol.z[12 * k..12 * k + 12], &built.x_ref))
        .collect();
    let mut it = MpcIterate {
        t0: sched.t_now,
        dt: cfg.dt,
        x,
        u: Vec::new(),
        j_a: sol.cost + built.offset,
        offset: built.offset,
        qp: built.qp,
        sol,
        theta_snapshot: sched.free_values(),
        plans: built.plans,
        x_ref: built.x_ref,
        guess,
        meas: meas.clone(),
        stale: false,
    };
    it.u = (0..cfg.nodes)
        .map(|k| it.input_at(sched.t_now + k as f64 * cfg.dt))
        .collect();
    Ok(it)
}

/// One real-time iteration: linearize along the previous plan (or a hover
/// guess), build, and solve a single QP warm-started from `prev`. When the
/// QP fails and a previous iterate exists, that iterate is returned marked
/// stale.
pub fn rt_iteration(
    cfg: &MpcConfig,
    params: &SrbParams,
    sched: &ContactSchedule,
    meas: &Measurement,
    prev: Option<&MpcIterate>,
) -> Result<MpcIterate, MpcError> {
    let guess = match prev {
        Some(p) => Guess::shifted(p, cfg, sched.t_now, meas),
        None => Guess::hover(cfg, params, sched, meas),
    };
    match solve(cfg, params, sched, meas, guess, prev.map(|p| &p.sol)) {
        Ok(it) => Ok(it),
        Err(MpcError::Config(m)) => Err(MpcError::Config(m)),
        Err(e) => match prev {
            Some(p) => {
                let mut stale = p.clone();
                stale.stale = true;
                Ok(stale)
            }
            None => Err(e),
        },
    }
}

/// Low-level cost after `n_solves` real-time iterations starting from
/// `warm`, all at the current time and measurement.
pub fn eval_cost(
    cfg: &MpcConfig,
    params: &SrbParams,
    sched: &ContactSchedule,
    meas: &Measurement,
    warm: Option<&MpcIterate>,
    n_solves: usize,
) -> Result<MpcIterate, MpcError> {
    let mut it: Option<MpcIterate> = None;
    for _ in 0..n_solves.max(1) {
        let prev = it.as_ref().or(warm);
        let guess = match prev {
            Some(p) => Guess::shifted(p, cfg, sched.t_now, meas),
            None => Guess::hover(cfg, params, sched, meas),
        };
        it = Some(solve(cfg, params, sched, meas, guess, prev.map(|p| &p.sol))?);
    }
    Ok(it.expect("at least one solve"))
}

/// Derivatives of the QP data of `it` with respect to the free contact
/// times of `sched`, rebuilt along the same linearization.
pub fn param_jacobians(
    cfg: &MpcConfig,
    params: &SrbParams,
    sched: &ContactSchedule,
    it: &MpcIterate,
) -> Result<ParamJacobians, MpcError> {
    let built = build_qp(cfg, params, sched, &it.meas, &it.guess, true)?;
    if built.qp.n_var() != it.qp.n_var() || built.qp.n_eq() != it.qp.n_eq() || built.qp.n_in() != it.qp.n_in() {
        return Err(MpcError::Config("schedule structure differs from the iterate".into()));
    }
    Ok(built.jacobians.expect("derivatives requested"))
}
