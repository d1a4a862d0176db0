//! Independent references for QP tests: exhaustive active-set enumeration,
//! random problem generators, and envelope-theorem gradients.
#![allow(dead_code)]

use bilevel_mpc::qp::{solve_qp, CscMatrix, ParamDerivative, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn dense(a: &CscMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows, a.ncols);
    for (i, j, v) in a.iter() {
        m[(i, j)] += v;
    }
    m
}

/// Exhaustive active-set enumeration with dense linear algebra.
pub fn brute_force(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = p.n_var();
    let m = p.n_in();
    let pe = p.n_eq();
    let q = dense(&p.hess);
    let a = dense(&p.a_eq);
    let g = dense(&p.g_in);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let dim = n + pe + act.len();
        let mut k = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        k.view_mut((0, 0), (n, n)).copy_from(&q);
        for r in 0..pe {
            for c in 0..n {
                k[(n + r, c)] = a[(r, c)];
                k[(c, n + r)] = a[(r, c)];
            }
            rhs[n + r] = p.b_eq[r];
        }
        for (r, &i) in act.iter().enumerate() {
            for c in 0..n {
                k[(n + pe + r, c)] = g[(i, c)];
                k[(c, n + pe + r)] = g[(i, c)];
            }
            rhs[n + pe + r] = p.h_in[i];
        }
        for c in 0..n {
            rhs[c] = -p.grad[c];
        }
        let Some(x) = k.clone().lu().solve(&rhs) else {
            continue;
        };
        if (&k * &x - &rhs).amax() > 1e-8 {
            continue;
        }
        let z = x.rows(0, n).into_owned();
        let feasible = (&g * &z - DVector::from_column_slice(&p.h_in)).iter().all(|v| *v <= 1e-9);
        let dual_ok = (0..act.len()).all(|r| x[n + pe + r] >= -1e-9);
        if feasible && dual_ok {
            let cost = 0.5 * z.dot(&(&q * &z)) + DVector::from_column_slice(&p.grad).dot(&z);
            if best.as_ref().map_or(true, |(_, c)| cost < *c) {
                best = Some((z, cost));
            }
        }
    }
    best
}

pub fn random_matrix(rng: &mut StdRng, r: usize, c: usize, density: f64) -> Vec<Vec<f64>> {
    (0..r)
        .map(|_| {
            (0..c)
                .map(|_| {
                    if rng.gen::<f64>() < density {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Strictly convex QP that is feasible by construction.
pub fn random_qp(seed: u64, n: usize, pe: usize, m: usize) -> QpProblem {
    let mut rng = StdRng::seed_from_u64(seed);
    let mf = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = mf.transpose() * &mf + DMatrix::identity(n, n) * 0.5;
    let q_rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| q[(i, j)]).collect()).collect();
    let z0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = random_matrix(&mut rng, pe, n, 1.0);
    let g = random_matrix(&mut rng, m, n, 0.8);
    let b: Vec<f64> = a.iter().map(|r| r.iter().zip(&z0).map(|(x, y)| x * y).sum()).collect();
    let h: Vec<f64> = g
        .iter()
        .map(|r| r.iter().zip(&z0).map(|(x, y)| x * y).sum::<f64>() + rng.gen_range(0.0..0.5))
        .collect();
    QpProblem::new(
        CscMatrix::from_dense(&q_rows, n),
        (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        CscMatrix::from_dense(&a, n),
        b,
        CscMatrix::from_dense(&g, n),
        h,
    )
    .unwrap()
}

pub fn random_derivative(rng: &mut StdRng, p: &QpProblem) -> ParamDerivative {
    let n = p.n_var();
    let mut d = ParamDerivative::default();
    let i = rng.gen_range(0..n);
    let j = rng.gen_range(0..n);
    let v = rng.gen_range(-0.3..0.3);
    d.d_hess.push((i, j, v));
    if i != j {
        d.d_hess.push((j, i, v));
    } else {
        d.d_hess[0].2 = v.abs();
    }
    d.d_grad.push((rng.gen_range(0..n), rng.gen_range(-1.0..1.0)));
    if p.n_eq() > 0 {
        let r = rng.gen_range(0..p.n_eq());
        d.d_a.push((r, rng.gen_range(0..n), rng.gen_range(-0.5..0.5)));
        d.d_b.push((r, rng.gen_range(-0.5..0.5)));
    }
    for (i, _, _) in p.g_in.iter().take(3) {
        d.d_g.push((i, rng.gen_range(0..n), rng.gen_range(-0.5..0.5)));
        d.d_h.push((i, rng.gen_range(-0.5..0.5)));
    }
    d
}

pub fn fd_gradient(p: &QpProblem, d: &ParamDerivative, eps: f64) -> f64 {
    let plus = solve_qp(&d.perturb(p, eps), None).unwrap().cost;
    let minus = solve_qp(&d.perturb(p, -eps), None).unwrap().cost;
    (plus - minus) / (2.0 * eps)
}

/// Envelope-theorem value of dJ/dω, which needs no linear solve at all.
pub fn envelope(p: &QpProblem, d: &ParamDerivative, z: &[f64], lam: &[f64], nu: &[f64]) -> f64 {
    let _ = p;
    let mut v = 0.0;
    for &(i, j, x) in &d.d_hess {
        v += 0.5 * z[i] * x * z[j];
    }
    for &(i, x) in &d.d_grad {
        v += x * z[i];
    }
    for &(i, j, x) in &d.d_a {
        v += nu[i] * x * z[j];
    }
    for &(i, x) in &d.d_b {
        v -= nu[i] * x;
    }
    for &(i, j, x) in &d.d_g {
        v += lam[i] * x * z[j];
    }
    for &(i, x) in &d.d_h {
        v -= lam[i] * x;
    }
    v
}
