//! First-order sensitivity of the optimal QP cost with respect to parameters.
//!
//! Both paths factor the implicit-function matrix
//!
//! ```text
//! K = [ Q        Gᵀ          Aᵀ ]
//!     [ D(λ)G    D(Gz − h)   0  ]
//!     [ A        0           0  ]
//! ```
//!
//! once. The forward path solves one system per parameter; the adjoint path
//! solves a single transposed system and contracts the resulting cost
//! gradient with each parameter derivative.

use super::ipm::solve_qp;
use super::lu::{ColumnOrdering, LuError, SparseLu};
use super::problem::{dot, QpError, QpProblem, QpSolution, QpStatus};
use super::sparse::{CscMatrix, Triplets};
use thiserror::Error;

/// Derivative of the QP data with respect to one scalar parameter, as sparse
/// entries. `d_hess` holds both triangles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamDerivative {
    pub d_hess: Vec<(usize, usize, f64)>,
    pub d_grad: Vec<(usize, f64)>,
    pub d_a: Vec<(usize, usize, f64)>,
    pub d_b: Vec<(usize, f64)>,
    pub d_g: Vec<(usize, usize, f64)>,
    pub d_h: Vec<(usize, f64)>,
}

impl ParamDerivative {
    pub fn is_empty(&self) -> bool {
        self.d_hess.is_empty()
            && self.d_grad.is_empty()
            && self.d_a.is_empty()
            && self.d_b.is_empty()
            && self.d_g.is_empty()
            && self.d_h.is_empty()
    }

    /// Problem data moved by `eps` along this derivative.
    pub fn perturb(&self, p: &QpProblem, eps: f64) -> QpProblem {
        let shift = |m: &CscMatrix, d: &[(usize, usize, f64)]| {
            let mut t: Vec<(usize, usize, f64)> = m.iter().collect();
            t.extend(d.iter().map(|&(i, j, v)| (i, j, eps * v)));
            CscMatrix::from_triplets(m.nrows, m.ncols, &t)
        };
        let shift_vec = |v: &[f64], d: &[(usize, f64)]| {
            let mut out = v.to_vec();
            for &(i, dv) in d {
                out[i] += eps * dv;
            }
            out
        };
        QpProblem {
            hess: shift(&p.hess, &self.d_hess),
            grad: shift_vec(&p.grad, &self.d_grad),
            a_eq: shift(&p.a_eq, &self.d_a),
            b_eq: shift_vec(&p.b_eq, &self.d_b),
            g_in: shift(&p.g_in, &self.d_g),
            h_in: shift_vec(&p.h_in, &self.d_h),
        }
    }

    fn check_bounds(&self, p: &QpProblem) -> bool {
        let n = p.n_var();
        let ok2 = |d: &[(usize, usize, f64)], r: usize| d.iter().all(|&(i, j, _)| i < r && j < n);
        let ok1 = |d: &[(usize, f64)], r: usize| d.iter().all(|&(i, _)| i < r);
        ok2(&self.d_hess, n)
            && ok1(&self.d_grad, n)
            && ok2(&self.d_a, p.n_eq())
            && ok1(&self.d_b, p.n_eq())
            && ok2(&self.d_g, p.n_in())
            && ok1(&self.d_h, p.n_in())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamJacobians {
    pub params: Vec<ParamDerivative>,
}

impl ParamJacobians {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateMode {
    /// Refuse to differentiate when strict complementarity fails.
    Reject,
    /// Relax `h` on the offending rows by `perturbation`, re-solve, and
    /// differentiate the perturbed problem.
    Perturb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostGradient {
    /// One forward solve per parameter.
    Forward,
    /// One transposed solve for all parameters.
    Adjoint,
}

#[derive(Debug, Clone)]
pub struct SensitivityOptions {
    pub degenerate: DegenerateMode,
    pub perturbation: f64,
    pub path: CostGradient,
    pub pivot_tol: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            degenerate: DegenerateMode::Reject,
            perturbation: 1e-9,
            path: CostGradient::Adjoint,
            pivot_tol: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    /// `dJ/dω_j` for every parameter.
    pub gradient: Vec<f64>,
    /// Number of KKT factorizations performed (always 1 on success).
    pub factorizations: usize,
    pub linear_solves: usize,
    /// Cheap reciprocal condition estimate of the factored KKT matrix.
    pub rcond: f64,
    /// `dz*/dω_j` per parameter, produced by the forward path.
    pub dz_dtheta: Option<Vec<Vec<f64>>>,
    /// Rows violating strict complementarity (relaxed before differentiating).
    pub degenerate_indices: Vec<usize>,
    /// Re-solved solution when rows were relaxed.
    pub resolved: Option<QpSolution>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("solution status {0:?} cannot be differentiated")]
    NotOptimal(QpStatus),
    #[error("strict complementarity fails on rows {0:?}")]
    Degenerate(Vec<usize>),
    #[error("KKT matrix is singular: {0}")]
    Singular(#[from] LuError),
    #[error("parameter derivative {0} indexes outside the problem")]
    OutOfBounds(usize),
    #[error("solution does not match the problem dimensions")]
    DimensionMismatch,
    #[error("re-solve after relaxing degenerate rows failed: {0}")]
    Resolve(#[from] QpError),
}

pub fn differentiate_cost(
    problem: &QpProblem,
    solution: &QpSolution,
    jacobians: &ParamJacobians,
) -> Result<SensitivityResult, SensitivityError> {
    differentiate_cost_with(problem, solution, jacobians, &SensitivityOptions::default())
}

pub fn differentiate_cost_with(
    problem: &QpProblem,
    solution: &QpSolution,
    jacobians: &ParamJacobians,
    options: &SensitivityOptions,
) -> Result<SensitivityResult, SensitivityError> {
    if solution.z.len() != problem.n_var()
        || solution.lambda.len() != problem.n_in()
        || solution.nu.len() != problem.n_eq()
    {
        return Err(SensitivityError::DimensionMismatch);
    }
    for (j, d) in jacobians.params.iter().enumerate() {
        if !d.check_bounds(problem) {
            return Err(SensitivityError::OutOfBounds(j));
        }
    }
    match solution.status {
        QpStatus::Optimal => {
            let kkt = KktFactor::new(problem, solution, options.pivot_tol, 0.0)?;
            Ok(kkt.gradient(problem, jacobians, options.path, vec![], None))
        }
        QpStatus::Degenerate => match options.degenerate {
            DegenerateMode::Reject => {
                Err(SensitivityError::Degenerate(solution.weakly_active.clone()))
            }
            DegenerateMode::Perturb => {
                let rows = solution.weakly_active.clone();
                let mut relaxed = problem.clone();
                for &i in &rows {
                    relaxed.h_in[i] += options.perturbation;
                }
                let resolved = solve_qp(&relaxed, Some(solution))?;
                let mut out = KktFactor::new(&relaxed, &resolved, options.pivot_tol, options.perturbation)?
                    .gradient(&relaxed, jacobians, options.path, rows, None);
                out.resolved = Some(resolved);
                Ok(out)
            }
        },
        s => Err(SensitivityError::NotOptimal(s)),
    }
}

/// Primal-dual derivatives `(dz, dλ, dν)` for every parameter.
pub fn solution_derivatives(
    problem: &QpProblem,
    solution: &QpSolution,
    jacobians: &ParamJacobians,
) -> Result<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>, SensitivityError> {
    let kkt = KktFactor::new(problem, solution, 1.0, 0.0)?;
    Ok(jacobians
        .params
        .iter()
        .map(|d| {
            let x = kkt.forward(d);
            let (n, m) = (kkt.n, kkt.m);
            (x[..n].to_vec(), x[n..n + m].to_vec(), x[n + m..].to_vec())
        })
        .collect())
}

struct KktFactor<'a> {
    sol: &'a QpSolution,
    lu: SparseLu,
    n: usize,
    m: usize,
    pe: usize,
}

impl<'a> KktFactor<'a> {
    /// Rows with a zero multiplier and a slack below `slack_floor` are treated
    /// as inactive by exactly that slack.
    fn new(
        p: &QpProblem,
        sol: &'a QpSolution,
        pivot_tol: f64,
        slack_floor: f64,
    ) -> Result<Self, SensitivityError> {
        let n = p.n_var();
        let m = p.n_in();
        let pe = p.n_eq();
        let dim = n + m + pe;
        let gz = p.g_in.mul_vec(&sol.z);
        let mut t = Triplets::with_capacity(
            dim,
            dim,
            p.hess.nnz() + 2 * p.g_in.nnz() + 2 * p.a_eq.nnz() + dim,
        );
        for (i, j, v) in p.hess.iter() {
            t.push(i, j, v);
        }
        for i in 0..n {
            t.push(i, i, sol.hess_shift);
        }
        for (i, j, v) in p.g_in.iter() {
            t.push(j, n + i, v);
            t.push(n + i, j, sol.lambda[i] * v);
        }
        for i in 0..m {
            let mut r = gz[i] - p.h_in[i];
            if sol.lambda[i] == 0.0 && r > -slack_floor {
                r = -slack_floor;
            }
            t.push(n + i, n + i, r);
        }
        for (i, j, v) in p.a_eq.iter() {
            t.push(j, n + m + i, v);
            t.push(n + m + i, j, v);
        }
        for i in n + m..dim {
            t.push(i, i, 0.0);
        }
        let k = t.to_csc();
        let ordering = ColumnOrdering::amd(&k)?;
        let lu = SparseLu::factor(&k, &ordering, pivot_tol)?;
        Ok(Self { sol, lu, n, m, pe })
    }

    /// `[dz; dλ; dν] = −K⁻¹ r` for one parameter derivative.
    fn forward(&self, d: &ParamDerivative) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let z = &self.sol.z;
        let lam = &self.sol.lambda;
        let nu = &self.sol.nu;
        let mut r = vec![0.0; n + m + self.pe];
        for &(i, j, v) in &d.d_hess {
            r[i] += v * z[j];
        }
        for &(i, v) in &d.d_grad {
            r[i] += v;
        }
        for &(i, j, v) in &d.d_g {
            r[j] += v * lam[i];
            r[n + i] += lam[i] * v * z[j];
        }
        for &(i, v) in &d.d_h {
            r[n + i] -= lam[i] * v;
        }
        for &(i, j, v) in &d.d_a {
            r[j] += v * nu[i];
            r[n + m + i] += v * z[j];
        }
        for &(i, v) in &d.d_b {
            r[n + m + i] -= v;
        }
        let mut x = self.lu.solve(&r);
        x.iter_mut().for_each(|v| *v = -*v);
        x
    }

    fn gradient(
        &self,
        p: &QpProblem,
        jac: &ParamJacobians,
        path: CostGradient,
        perturbed_rows: Vec<usize>,
        resolved: Option<QpSolution>,
    ) -> SensitivityResult {
        let n = self.n;
        let z = &self.sol.z;
        let mut g = p.hess.mul_vec(z);
        for (gi, qi) in g.iter_mut().zip(&p.grad) {
            *gi += qi;
        }
        let direct = |d: &ParamDerivative| {
            let mut v = 0.0;
            for &(i, j, dq) in &d.d_hess {
                v += 0.5 * z[i] * dq * z[j];
            }
            for &(i, dq) in &d.d_grad {
                v += dq * z[i];
            }
            v
        };
        let (gradient, linear_solves, dz_dtheta) = match path {
            CostGradient::Forward => {
                let mut dz = Vec::with_capacity(jac.len());
                let grad = jac
                    .params
                    .iter()
                    .map(|d| {
                        let x = self.forward(d);
                        let v = dot(&g, &x[..n]) + direct(d);
                        dz.push(x[..n].to_vec());
                        v
                    })
                    .collect();
                (grad, jac.len(), Some(dz))
            }
            CostGradient::Adjoint => {
                let mut rhs = vec![0.0; n + self.m + self.pe];
                rhs[..n].copy_from_slice(&g);
                let y = self.lu.solve_transpose(&rhs);
                let adj = AdjointGradient {
                    z: z.clone(),
                    lambda: self.sol.lambda.clone(),
                    nu: self.sol.nu.clone(),
                    y_z: y[..n].to_vec(),
                    y_lambda: y[n..n + self.m].to_vec(),
                    y_nu: y[n + self.m..].to_vec(),
                };
                (jac.params.iter().map(|d| adj.contract(d)).collect(), 1, None)
            }
        };
        SensitivityResult {
            gradient,
            factorizations: 1,
            linear_solves,
            rcond: self.lu.rcond_estimate(),
            dz_dtheta,
            degenerate_indices: perturbed_rows,
            resolved,
        }
    }
}

/// Gradient of the optimal cost with respect to every entry of the QP data,
/// evaluated lazily from the adjoint solution.
#[derive(Debug, Clone)]
pub struct AdjointGradient {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub y_z: Vec<f64>,
    pub y_lambda: Vec<f64>,
    pub y_nu: Vec<f64>,
}

impl AdjointGradient {
    pub fn d_hess(&self, i: usize, j: usize) -> f64 {
        0.5 * self.z[i] * self.z[j] - 0.5 * (self.y_z[i] * self.z[j] + self.z[i] * self.y_z[j])
    }

    pub fn d_grad(&self, i: usize) -> f64 {
        self.z[i] - self.y_z[i]
    }

    pub fn d_g(&self, i: usize, k: usize) -> f64 {
        -self.lambda[i] * self.y_z[k] - self.lambda[i] * self.y_lambda[i] * self.z[k]
    }

    pub fn d_h(&self, i: usize) -> f64 {
        self.lambda[i] * self.y_lambda[i]
    }

    pub fn d_a(&self, i: usize, k: usize) -> f64 {
        -self.nu[i] * self.y_z[k] - self.y_nu[i] * self.z[k]
    }

    pub fn d_b(&self, i: usize) -> f64 {
        self.y_nu[i]
    }

    pub fn contract(&self, d: &ParamDerivative) -> f64 {
        let mut v = 0.0;
        for &(i, j, x) in &d.d_hess {
            v += x * self.d_hess(i, j);
        }
        for &(i, x) in &d.d_grad {
            v += x * self.d_grad(i);
        }
        for &(i, j, x) in &d.d_a {
            v += x * self.d_a(i, j);
        }
        for &(i, x) in &d.d_b {
            v += x * self.d_b(i);
        }
        for &(i, j, x) in &d.d_g {
            v += x * self.d_g(i, j);
        }
        for &(i, x) in &d.d_h {
            v += x * self.d_h(i);
        }
        v
    }
}
