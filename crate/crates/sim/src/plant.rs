//! SRB plant driven directly by the planned ground-reaction forces.

use crate::scenario::{Disturbance, Scenario};
use bilevel_mpc::bilevel::{Plant, SrbMpc};
use bilevel_mpc::mpc::{FootState, Measurement, MpcIterate};
use bilevel_mpc::schedule::{ContactPhase, ContactSchedule};
use bilevel_mpc::srb::{integrate, LegBox, SrbInput, SrbParams, SrbState};
use nalgebra::Vector3;

/// Massless feet placed where the plan puts them; forces are held constant
/// over each `sim_dt` and integrated with RK4.
#[derive(Debug, Clone)]
pub struct SrbPlant {
    pub params: SrbParams,
    pub x: SrbState,
    pub feet: Vec<FootState>,
    pub disturbances: Vec<Disturbance>,
    pub sim_dt: f64,
    pub substeps: usize,
    /// Slack beyond the leg box within which a stance foot can
    /// still push; `None` disables the reach check.
    pub reach_margin: Option<f64>,
    pub early_touchdown: bool,
    /// Plant steps taken so far.
    steps: usize,
}

impl SrbPlant {
    pub fn new(sc: &Scenario) -> Self {
        Self {
            params: sc.robot.clone(),
            x: sc.initial_state.to_state(),
            feet: sc.initial_feet(),
            disturbances: sc.disturbances.clone(),
            sim_dt: sc.sim_dt,
            substeps: sc.substeps(),
            reach_margin: sc.reach_margin,
            early_touchdown: sc.early_touchdown,
            steps: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.steps as f64 * self.sim_dt
    }

    pub fn external_force(&self, t: f64) -> Vector3<f64> {
        self.disturbances
            .iter()
            .filter(|d| d.active(t))
            .fold(Vector3::zeros(), |acc, d| acc + Vector3::from(d.force))
    }

    /// Integrates one `sim_dt` under a constant input.
    pub fn advance(&mut self, u: &SrbInput) {
        let t = self.t();
        self.x = integrate(&self.x, |_| u.clone(), &self.params, t, self.sim_dt);
        self.steps += 1;
    }

    /// Foot inside the horizontal leg box and no further below the hip than
    /// the leg can extend, both widened by the margin.
    fn within_reach(&self, lb: &LegBox, i: usize, foot: &Vector3<f64>) -> bool {
        let Some(margin) = self.reach_margin else { return true };
        let rel = foot - self.x.r - lb.hips[i];
        (0..2).all(|a| rel[a] >= lb.lower[a] - margin && rel[a] <= lb.upper[a] + margin)
            && rel.z >= lb.lower.z - margin
    }

    /// Input applied over the step starting at `t`: planned forces of legs in
    /// stance that can reach their foot, plus the disturbance.
    pub fn applied_input(&self, it: &MpcIterate, sched: &ContactSchedule, t: f64) -> SrbInput {
        let mut u = it.input_at(t);
        for i in 0..u.forces.len() {
            let stance = sched.phase_at(i, t) == ContactPhase::Stance;
            if !stance || !self.within_reach(&self.params.leg_box, i, &u.feet[i]) {
                u.forces[i] = Vector3::zeros();
            }
        }
        u.external = self.external_force(t);
        u
    }
}

impl Plant<SrbMpc> for SrbPlant {
    fn time(&self) -> f64 {
        self.t()
    }

    fn measure(&self) -> Measurement {
        Measurement {
            x: self.x,
            feet: self.feet.clone(),
        }
    }

    fn step(&mut self, it: &MpcIterate, sched: &mut ContactSchedule) {
        for _ in 0..self.substeps {
            let u = self.applied_input(it, sched, self.t());
            self.advance(&u);
            let t = self.t();
            for (i, f) in self.feet.iter_mut().enumerate() {
                *f = it.foot_state_at(i, t);
                if sched.phase_at(i, t) == ContactPhase::Stance {
                    f.velocity = [0.0; 3];
                }
            }
        }
        if self.early_touchdown {
            self.touch_down_early(sched);
        }
    }
}

impl SrbPlant {
    /// Swinging feet that already reached the ground past mid-swing touch
    /// down now.
    fn touch_down_early(&self, sched: &mut ContactSchedule) {
        let t = self.t();
        let Ok(advanced) = sched.advance_time(t) else { return };
        *sched = advanced;
        for i in 0..self.feet.len() {
            let leg = &sched.legs[i];
            let ff = leg.first_future();
            if leg.phase0 != ContactPhase::Swing || ff >= leg.times.len() {
                continue;
            }
            let progress = (t - leg.phase_start) / (leg.times[ff] - leg.phase_start).max(1e-9);
            let f = &self.feet[i];
            if progress > 0.5 && f.position[2] <= 1e-3 && f.velocity[2] <= 0.0 {
                sched.force_change_now(i);
            }
        }
    }
}
