use super::ipm::solve_qp_with;
use super::problem::{QpError, QpProblem, QpSettings};
use super::sparse::CscMatrix;
use thiserror::Error;

/// `{p : A_in p ≤ b_in, A_eq p = b_eq}` with dense rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Polytope {
    pub dim: usize,
    pub a_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

impl Polytope {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push_inequality(&mut self, row: Vec<f64>, rhs: f64) {
        debug_assert_eq!(row.len(), self.dim);
        self.a_in.push(row);
        self.b_in.push(rhs);
    }

    pub fn push_equality(&mut self, row: Vec<f64>, rhs: f64) {
        debug_assert_eq!(row.len(), self.dim);
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    /// Adds `lo ≤ p_k ≤ hi` for every coordinate.
    pub fn push_box(&mut self, lo: f64, hi: f64) {
        for k in 0..self.dim {
            let mut row = vec![0.0; self.dim];
            row[k] = 1.0;
            self.push_inequality(row.clone(), hi);
            row[k] = -1.0;
            self.push_inequality(row, -lo);
        }
    }

    /// Largest violation of any row at `p`.
    pub fn violation(&self, p: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        let mut worst = 0.0f64;
        for (r, b) in self.a_in.iter().zip(&self.b_in) {
            worst = worst.max(dot(r) - b);
        }
        for (r, b) in self.a_eq.iter().zip(&self.b_eq) {
            worst = worst.max((dot(r) - b).abs());
        }
        worst
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        self.violation(p) <= tol
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("solver failure: {0}")]
    Solver(QpError),
}

const LP_REG: f64 = 1e-10;

/// Minimizes `cᵀp` over the polytope. A `1e-10‖p‖²` term selects the
/// minimum-norm point when the optimal face is not a vertex.
pub fn solve_lp(objective: &[f64], polytope: &Polytope) -> Result<Vec<f64>, LpError> {
    let n = polytope.dim;
    if objective.len() != n
        || polytope.a_in.iter().chain(&polytope.a_eq).any(|r| r.len() != n)
        || polytope.a_in.len() != polytope.b_in.len()
        || polytope.a_eq.len() != polytope.b_eq.len()
    {
        return Err(LpError::DimensionMismatch);
    }
    let settings = QpSettings::default();
    let build = |rhs_in: Vec<f64>, rhs_eq: Vec<f64>, extra_box: bool| {
        let mut rows_in = polytope.a_in.clone();
        let mut b_in = rhs_in;
        if extra_box {
            for k in 0..n {
                let mut r = vec![0.0; n];
                r[k] = 1.0;
                rows_in.push(r.clone());
                b_in.push(1.0);
                r[k] = -1.0;
                rows_in.push(r);
                b_in.push(1.0);
            }
        }
        QpProblem {
            hess: {
                let mut h = CscMatrix::identity(n);
                h.values.iter_mut().for_each(|v| *v = 2.0 * LP_REG);
                h
            },
            grad: objective.to_vec(),
            a_eq: CscMatrix::from_dense(&polytope.a_eq, n),
            b_eq: rhs_eq,
            g_in: CscMatrix::from_dense(&rows_in, n),
            h_in: b_in,
        }
    };

    let main = build(polytope.b_in.clone(), polytope.b_eq.clone(), false);
    let recession = build(
        vec![0.0; polytope.b_in.len()],
        vec![0.0; polytope.b_eq.len()],
        true,
    );
    let rec = solve_qp_with(&recession, None, &settings).map_err(LpError::Solver)?;
    let rec_value: f64 = objective.iter().zip(&rec.z).map(|(c, d)| c * d).sum();
    // A genuine ray inside the unit box decreases the objective by O(‖c‖).
    let c_norm = objective.iter().map(|c| c * c).sum::<f64>().sqrt();
    let unbounded = rec_value < -1e-6 * (1.0 + c_norm);

    match solve_qp_with(&main, None, &settings) {
        Ok(_) if unbounded => Err(LpError::Unbounded),
        Ok(sol) => Ok(sol.z),
        Err(QpError::Infeasible) => Err(LpError::Infeasible),
        Err(e) => Err(LpError::Solver(e)),
    }
}
