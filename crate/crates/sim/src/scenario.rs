//! Scenario files: initial condition, gait, target, pushes, and every
//! controller configuration.

use bilevel_mpc::bilevel::BilevelConfig;
use bilevel_mpc::mpc::{FootState, MpcConfig};
use bilevel_mpc::schedule::{ContactSchedule, GaitPattern, ScheduleConfig};
use bilevel_mpc::srb::{SrbParams, SrbState};
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialState {
    pub position: [f64; 3],
    pub momentum: [f64; 3],
    /// Roll, pitch, yaw in radians.
    pub rpy: [f64; 3],
    pub angular_momentum: [f64; 3],
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, 0.3],
            momentum: [0.0; 3],
            rpy: [0.0; 3],
            angular_momentum: [0.0; 3],
        }
    }
}

impl InitialState {
    pub fn to_state(&self) -> SrbState {
        SrbState {
            r: Vector3::from(self.position),
            l: Vector3::from(self.momentum),
            xi: UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]),
            h: Vector3::from(self.angular_momentum),
        }
    }
}

/// Force applied at the CoM on `[t_start, t_start + duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub t_start: f64,
    pub duration: f64,
    pub force: [f64; 3],
}

impl Disturbance {
    pub fn active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_start + self.duration
    }
}

fn default_pattern() -> GaitPattern {
    GaitPattern::Trot
}

fn default_sim_dt() -> f64 {
    0.005
}

fn default_reach_margin() -> Option<f64> {
    Some(0.05)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_pattern")]
    pub pattern: GaitPattern,
    /// Target CoM position on the ground plane; the height comes from `mpc.target`.
    pub target: [f64; 2],
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default = "default_sim_dt")]
    pub sim_dt: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Slack beyond the leg box within which a stance foot can
    /// still push; `null` lets every stance foot push.
    #[serde(default = "default_reach_margin")]
    pub reach_margin: Option<f64>,
    /// Move a swinging foot's touchdown to the moment it reaches the ground.
    #[serde(default)]
    pub early_touchdown: bool,
    #[serde(default)]
    pub robot: SrbParams,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub bilevel: BilevelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.sim_dt > 0.0) || self.sim_dt > self.mpc.dt + 1e-12 {
            return bad(format!(
                "sim_dt must lie in (0, {}], got {}",
                self.mpc.dt, self.sim_dt
            ));
        }
        let ratio = self.mpc.dt / self.sim_dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad("mpc.dt must be a whole multiple of sim_dt".into());
        }
        if self.mpc.nodes < 2 || !(self.mpc.dt > 0.0) {
            return bad("mpc needs at least two nodes and a positive dt".into());
        }
        for (k, d) in self.disturbances.iter().enumerate() {
            if d.t_start < 0.0 || d.duration < 0.0 || d.t_start + d.duration > self.duration + 1e-9 {
                return bad(format!("disturbance {k} is outside [0, {}]", self.duration));
            }
            if d.force.iter().any(|f| !f.is_finite()) {
                return bad(format!("disturbance {k} has a non-finite force"));
            }
        }
        if self.target.iter().chain(&self.mpc.target).any(|v| !v.is_finite()) {
            return bad("target must be finite".into());
        }
        self.robot.validate().map_err(ScenarioError::Invalid)?;
        self.bilevel
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if self.robot.n_legs() != 4 {
            return bad("gait patterns need four legs".into());
        }
        Ok(())
    }

    /// Number of controller cycles.
    pub fn cycles(&self) -> usize {
        (self.duration / self.mpc.dt).round() as usize
    }

    /// Plant steps per controller cycle.
    pub fn substeps(&self) -> usize {
        (self.mpc.dt / self.sim_dt).round() as usize
    }

    /// Full target `[x, y, z]`.
    pub fn target3(&self) -> [f64; 3] {
        [self.target[0], self.target[1], self.mpc.target[2]]
    }

    /// MPC configuration with the scenario target.
    pub fn mpc_config(&self) -> MpcConfig {
        let mut cfg = self.mpc.clone();
        cfg.target = self.target3();
        cfg
    }

    pub fn initial_schedule(&self) -> ContactSchedule {
        // A standing pattern changes only well after the scenario ends.
        let stand_until = self.duration + self.mpc.horizon() + self.schedule.k_end + 1.0;
        ContactSchedule::from_pattern(self.pattern, 0.0, &self.schedule, stand_until)
    }

    /// Feet on the ground below the hips of the initial pose.
    pub fn initial_feet(&self) -> Vec<FootState> {
        let x = self.initial_state.to_state();
        self.robot
            .leg_box
            .hips
            .iter()
            .map(|hip| {
                let p = x.r + x.xi * hip;
                FootState {
                    position: [p.x, p.y, 0.0],
                    velocity: [0.0; 3],
                }
            })
            .collect()
    }
}
