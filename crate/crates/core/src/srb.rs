//! Single-rigid-body quadruped dynamics on `R³ × R³ × SO(3) × R³`.
//!
//! State is `(r, l, ξ, h)` with `h = I_R ζ` the body-frame angular momentum.
//! Orientation perturbations act on the right: `ξ ⊗ exp(δ/2)`, so the
//! tangent velocity of `ξ` is the body angular velocity `ζ`.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 12;
pub type Tangent = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrbState {
    pub r: Vector3<f64>,
    pub l: Vector3<f64>,
    pub xi: UnitQuaternion<f64>,
    pub h: Vector3<f64>,
}

impl SrbState {
    pub fn at_rest(r: Vector3<f64>) -> Self {
        Self {
            r,
            l: Vector3::zeros(),
            xi: UnitQuaternion::identity(),
            h: Vector3::zeros(),
        }
    }

    /// `x ⊞ δ`: additive on the vector parts, right-multiplicative on ξ.
    pub fn retract(&self, d: &Tangent) -> Self {
        let dq = UnitQuaternion::from_scaled_axis(Vector3::new(d[6], d[7], d[8]));
        Self {
            r: self.r + Vector3::new(d[0], d[1], d[2]),
            l: self.l + Vector3::new(d[3], d[4], d[5]),
            xi: UnitQuaternion::new_normalize((self.xi * dq).into_inner()),
            h: self.h + Vector3::new(d[9], d[10], d[11]),
        }
    }

    /// `y ⊟ x`, the inverse of [`SrbState::retract`].
    pub fn difference(&self, base: &SrbState) -> Tangent {
        let dq = (base.xi.inverse() * self.xi).scaled_axis();
        let mut d = Tangent::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&(self.r - base.r));
        d.fixed_rows_mut::<3>(3).copy_from(&(self.l - base.l));
        d.fixed_rows_mut::<3>(6).copy_from(&dq);
        d.fixed_rows_mut::<3>(9).copy_from(&(self.h - base.h));
        d
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.l.iter()).chain(self.h.iter()).all(|v| v.is_finite())
            && self.xi.coords.iter().all(|v| v.is_finite())
    }
}

/// Kinematic box for each foot relative to the CoM: `lower ≤ e − r − hip ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegBox {
    pub hips: Vec<Vector3<f64>>,
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrbParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    /// Gravitational acceleration; the momentum equation subtracts `m·g`.
    pub gravity: Vector3<f64>,
    pub mu: f64,
    pub f_max: f64,
    pub leg_box: LegBox,
}

impl Default for SrbParams {
    fn default() -> Self {
        Self {
            mass: 13.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.07, 0.26, 0.24)),
            gravity: Vector3::new(0.0, 0.0, 9.81),
            mu: 0.7,
            f_max: 250.0,
            leg_box: LegBox {
                hips: vec![
                    Vector3::new(0.19, 0.11, 0.0),
                    Vector3::new(0.19, -0.11, 0.0),
                    Vector3::new(-0.19, 0.11, 0.0),
                    Vector3::new(-0.19, -0.11, 0.0),
                ],
                lower: Vector3::new(-0.15, -0.12, -0.45),
                upper: Vector3::new(0.15, 0.12, -0.15),
            },
        }
    }
}

impl SrbParams {
    pub fn n_legs(&self) -> usize {
        self.leg_box.hips.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err("mass must be positive".into());
        }
        if !(self.mu > 0.0) || !(self.f_max > 0.0) {
            return Err("friction coefficient and force bound must be positive".into());
        }
        let asym = (self.inertia - self.inertia.transpose()).amax();
        if asym > 1e-12 * self.inertia.amax() || self.inertia.cholesky().is_none() {
            return Err("inertia must be symmetric positive definite".into());
        }
        Ok(())
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().expect("inertia is positive definite")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrbInput {
    pub forces: Vec<Vector3<f64>>,
    pub feet: Vec<Vector3<f64>>,
    /// Force applied at the CoM by the environment.
    pub external: Vector3<f64>,
}

impl SrbInput {
    pub fn zeros(n_legs: usize) -> Self {
        Self {
            forces: vec![Vector3::zeros(); n_legs],
            feet: vec![Vector3::zeros(); n_legs],
            external: Vector3::zeros(),
        }
    }

    /// Inputs stacked per leg as `[F_i; e_i]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(6 * self.forces.len());
        for (f, e) in self.forces.iter().zip(&self.feet) {
            u.extend(f.iter());
            u.extend(e.iter());
        }
        u
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Tangent-space time derivative `(ṙ, l̇, ζ, ḣ)`.
pub fn dynamics(x: &SrbState, u: &SrbInput, p: &SrbParams) -> Tangent {
    let zeta = p.inertia_inv() * x.h;
    let rot_t = x.xi.to_rotation_matrix().into_inner().transpose();
    let mut force = u.external - p.mass * p.gravity;
    let mut torque = Vector3::zeros();
    for (f, e) in u.forces.iter().zip(&u.feet) {
        force += f;
        torque += (e - x.r).cross(f);
    }
    let hdot = -zeta.cross(&x.h) + rot_t * torque;
    let mut d = Tangent::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&(x.l / p.mass));
    d.fixed_rows_mut::<3>(3).copy_from(&force);
    d.fixed_rows_mut::<3>(6).copy_from(&zeta);
    d.fixed_rows_mut::<3>(9).copy_from(&hdot);
    d
}

/// Continuous-time Jacobians of [`dynamics`] with respect to the tangent
/// state and the stacked inputs `[F_i; e_i]`.
pub fn linearize(x: &SrbState, u: &SrbInput, p: &SrbParams) -> (StateMatrix, nalgebra::DMatrix<f64>) {
    let n_legs = u.forces.len();
    let i_inv = p.inertia_inv();
    let zeta = i_inv * x.h;
    let rot_t = x.xi.to_rotation_matrix().into_inner().transpose();
    let mut torque = Vector3::zeros();
    let mut force_sum = Vector3::zeros();
    for (f, e) in u.forces.iter().zip(&u.feet) {
        torque += (e - x.r).cross(f);
        force_sum += f;
    }
    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() / p.mass));
    a.fixed_view_mut::<3, 3>(6, 9).copy_from(&i_inv);
    a.fixed_view_mut::<3, 3>(9, 0)
        .copy_from(&(rot_t * skew(&force_sum)));
    a.fixed_view_mut::<3, 3>(9, 6)
        .copy_from(&skew(&(rot_t * torque)));
    a.fixed_view_mut::<3, 3>(9, 9)
        .copy_from(&(skew(&x.h) * i_inv - skew(&zeta)));

    let mut b = nalgebra::DMatrix::zeros(STATE_DIM, 6 * n_legs);
    for (i, (f, e)) in u.forces.iter().zip(&u.feet).enumerate() {
        let c = 6 * i;
        b.fixed_view_mut::<3, 3>(3, c).copy_from(&Matrix3::identity());
        b.fixed_view_mut::<3, 3>(9, c)
            .copy_from(&(rot_t * skew(&(e - x.r))));
        b.fixed_view_mut::<3, 3>(9, c + 3)
            .copy_from(&(-rot_t * skew(f)));
    }
    (a, b)
}

/// One RK4 step of length `dt` from time `t`, with stage inputs supplied by
/// `input(t)`. Each stage retracts through the exponential map and the
/// quaternion is renormalized.
pub fn integrate<F>(x: &SrbState, input: F, p: &SrbParams, t: f64, dt: f64) -> SrbState
where
    F: Fn(f64) -> SrbInput,
{
    let u0 = input(t);
    let um = input(t + 0.5 * dt);
    let u1 = input(t + dt);
    let k1 = dynamics(x, &u0, p);
    let k2 = dynamics(&x.retract(&(k1 * (0.5 * dt))), &um, p);
    let k3 = dynamics(&x.retract(&(k2 * (0.5 * dt))), &um, p);
    let k4 = dynamics(&x.retract(&(k3 * dt)), &u1, p);
    x.retract(&((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

/// Rotational kinetic energy `½ hᵀ I⁻¹ h`.
pub fn rotational_energy(x: &SrbState, p: &SrbParams) -> f64 {
    0.5 * x.h.dot(&(p.inertia_inv() * x.h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_foot_torque() {
        let p = SrbParams::default();
        let x = SrbState::at_rest(Vector3::zeros());
        let mut u = SrbInput::zeros(1);
        u.feet[0] = Vector3::new(1.0, 0.0, 0.0);
        u.forces[0] = Vector3::new(0.0, 0.0, 10.0);
        let d = dynamics(&x, &u, &p);
        assert!((d[10] + 10.0).abs() < 1e-14);
        assert_eq!(d[9], 0.0);
        assert_eq!(d[11], 0.0);
    }

    #[test]
    fn retract_difference_round_trip() {
        let x = SrbState {
            r: Vector3::new(0.1, 0.2, 0.3),
            l: Vector3::new(1.0, -1.0, 0.5),
            xi: UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            h: Vector3::new(0.01, 0.02, -0.03),
        };
        let d = Tangent::from_fn(|i, _| 0.01 * (i as f64 - 5.0));
        let y = x.retract(&d);
        assert!((y.difference(&x) - d).amax() < 1e-12);
    }
}
