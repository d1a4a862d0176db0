//! Dense closed form for the toy double-integrator problem: the dynamics are
//! eliminated so the cost is a 5×5 quadratic in the spline knots, minimized
//! by one linear solve, and the θ-gradient follows from the envelope theorem.
#![allow(dead_code)]

use bilevel_mpc::bilevel::toy::ToyProblem;
use nalgebra::{DMatrix, DVector};

/// Cubic Hermite weights of `(y0, ẏ0, y1, ẏ1)` at local time `tau` of a
/// segment of length `dur`, and their derivatives in `dur` and `tau`.
fn hermite(dur: f64, tau: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let s = tau / dur;
    let w = [
        2.0 * s.powi(3) - 3.0 * s * s + 1.0,
        dur * (s.powi(3) - 2.0 * s * s + s),
        -2.0 * s.powi(3) + 3.0 * s * s,
        dur * (s.powi(3) - s * s),
    ];
    // d/ds of each weight (without the dur factor on the slope weights).
    let ds = [
        6.0 * s * s - 6.0 * s,
        3.0 * s * s - 4.0 * s + 1.0,
        -6.0 * s * s + 6.0 * s,
        3.0 * s * s - 2.0 * s,
    ];
    let d_tau = [ds[0] / dur, ds[1], ds[2] / dur, ds[3]];
    // s = tau/dur, so ds/d(dur) = -s/dur.
    let d_dur = [
        -ds[0] * s / dur,
        (s.powi(3) - 2.0 * s * s + s) - ds[1] * s,
        -ds[2] * s / dur,
        (s.powi(3) - s * s) - ds[3] * s,
    ];
    (w, d_dur, d_tau)
}

/// Rows mapping the knots `(y0, s0, s1, y2, s2)` to `u(t_k)` and their
/// θ-derivatives.
fn control_rows(p: &ToyProblem, theta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = p.nodes;
    let th = p.horizon();
    let mut w = DMatrix::zeros(n, 5);
    let mut dw = DMatrix::zeros(n, 5);
    for k in 0..n {
        let t = k as f64 * p.dt;
        if t < theta {
            let (v, d_dur, _) = hermite(theta, t);
            // Knots (y0, s0) and (0, s1).
            for (col, m) in [(0, 0), (1, 1), (2, 3)] {
                w[(k, col)] = v[m];
                dw[(k, col)] = d_dur[m];
            }
        } else {
            let (v, d_dur, d_tau) = hermite(th - theta, t - theta);
            for (col, m) in [(2, 1), (3, 2), (4, 3)] {
                w[(k, col)] = v[m];
                dw[(k, col)] = -d_dur[m] - d_tau[m];
            }
        }
    }
    (w, dw)
}

/// Positions and velocities at every node as affine maps of the knots.
fn rollout(p: &ToyProblem, w: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = p.nodes;
    let mut pm = DMatrix::zeros(n, 5);
    let mut vm = DMatrix::zeros(n, 5);
    let mut p0 = DVector::zeros(n);
    let mut v0 = DVector::zeros(n);
    p0[0] = p.x0[0];
    v0[0] = p.x0[1];
    for k in 0..n - 1 {
        let pk = pm.row(k) + vm.row(k) * p.dt;
        pm.set_row(k + 1, &pk);
        p0[k + 1] = p0[k] + p.dt * v0[k];
        let vk = vm.row(k) + w.row(k) * p.dt;
        vm.set_row(k + 1, &vk);
        v0[k + 1] = v0[k];
    }
    (pm, p0, vm, v0)
}

pub struct ToyTruth {
    pub cost: f64,
    pub grad: f64,
    pub knots: DVector<f64>,
    pub max_u: f64,
}

/// Optimal cost and its exact θ-derivative.
pub fn toy_truth(p: &ToyProblem, theta: f64) -> ToyTruth {
    let (w, dw) = control_rows(p, theta);
    let (pm, p0, vm, v0) = rollout(p, &w);
    let (dpm, _, dvm, _) = rollout(p, &dw);
    // Drop node 0 from the state cost.
    let sel = |m: &DMatrix<f64>| m.rows(1, p.nodes - 1).into_owned();
    let selv = |v: &DVector<f64>| v.rows(1, p.nodes - 1).into_owned();
    let (pm1, vm1, p01, v01) = (sel(&pm), sel(&vm), selv(&p0), selv(&v0));
    let hess = pm1.transpose() * &pm1 * p.q_pos
        + vm1.transpose() * &vm1 * p.q_vel
        + w.transpose() * &w * p.rho
        + DMatrix::identity(5, 5) * p.ridge;
    let lin = pm1.transpose() * &p01 * p.q_pos + vm1.transpose() * &v01 * p.q_vel;
    let c = p01.norm_squared() * p.q_pos + v01.norm_squared() * p.q_vel;
    let y = -hess.clone().lu().solve(&lin).expect("toy Hessian is nonsingular");
    let cost = c + lin.dot(&y);
    // Envelope theorem: differentiate at fixed knots.
    let pos = &pm1 * &y + &p01;
    let vel = &vm1 * &y + &v01;
    let u = &w * &y;
    let dpos = sel(&dpm) * &y;
    let dvel = sel(&dvm) * &y;
    let du = &dw * &y;
    let grad = 2.0 * (p.q_pos * pos.dot(&dpos) + p.q_vel * vel.dot(&dvel) + p.rho * u.dot(&du));
    ToyTruth {
        cost,
        grad,
        max_u: u.amax(),
        knots: y,
    }
}
