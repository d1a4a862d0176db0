use super::sparse::CscMatrix;
use serde_json::json;
use thiserror::Error;

/// Quadratic program data. `hess` is stored with both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hess: CscMatrix,
    pub grad: Vec<f64>,
    pub a_eq: CscMatrix,
    pub b_eq: Vec<f64>,
    pub g_in: CscMatrix,
    pub h_in: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost Hessian is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("problem is primal infeasible")]
    Infeasible,
    #[error("iteration limit reached after {iterations} iterations (residuals {residuals:?})")]
    MaxIter {
        iterations: usize,
        residuals: QpResiduals,
    },
    #[error("KKT factorization failed: {0}")]
    Factorization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    /// Optimal, but some constraint is active with a (near-)zero multiplier.
    Degenerate,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QpResiduals {
    /// ‖Qz + q + Aᵀν + Gᵀλ‖∞
    pub stationarity: f64,
    /// ‖Az − b‖∞
    pub equality: f64,
    /// max(Gz − h)₊
    pub inequality: f64,
    /// max |λᵢ (Gz − h)ᵢ|
    pub complementarity: f64,
    /// min λᵢ (0 when there are no inequalities)
    pub min_multiplier: f64,
}

impl QpResiduals {
    pub fn max_violation(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.complementarity)
            .max((-self.min_multiplier).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub cost: f64,
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: QpResiduals,
    /// Indices violating strict complementarity at `tol_strict`.
    pub weakly_active: Vec<usize>,
    pub polished: bool,
    /// Diagonal shift added to Q when it was not numerically positive definite.
    pub hess_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub tol_kkt: f64,
    pub max_iter: usize,
    pub tol_act: f64,
    pub tol_strict: f64,
    pub psd_floor: f64,
    pub psd_shift: f64,
    pub polish: bool,
    /// μ below which polishing is attempted.
    pub polish_trigger: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-9,
            max_iter: 200,
            tol_act: 1e-9,
            tol_strict: 1e-7,
            psd_floor: 1e-10,
            psd_shift: 1e-8,
            polish: true,
            polish_trigger: 1e-5,
        }
    }
}

impl QpProblem {
    pub fn new(
        hess: CscMatrix,
        grad: Vec<f64>,
        a_eq: CscMatrix,
        b_eq: Vec<f64>,
        g_in: CscMatrix,
        h_in: Vec<f64>,
    ) -> Result<Self, QpError> {
        let p = Self {
            hess,
            grad,
            a_eq,
            b_eq,
            g_in,
            h_in,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unconstrained problem with the given cost.
    pub fn unconstrained(hess: CscMatrix, grad: Vec<f64>) -> Self {
        let n = grad.len();
        Self {
            hess,
            grad,
            a_eq: CscMatrix::zeros(0, n),
            b_eq: vec![],
            g_in: CscMatrix::zeros(0, n),
            h_in: vec![],
        }
    }

    pub fn n_var(&self) -> usize {
        self.grad.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_in(&self) -> usize {
        self.h_in.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_var();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(QpError::DimensionMismatch(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        dim("Q", (self.hess.nrows, self.hess.ncols), (n, n))?;
        dim("A", (self.a_eq.nrows, self.a_eq.ncols), (self.b_eq.len(), n))?;
        dim("G", (self.g_in.nrows, self.g_in.ncols), (self.h_in.len(), n))?;
        let asym = self.hess.asymmetry();
        if asym > 1e-12 {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let qz = self.hess.mul_vec(z);
        0.5 * dot(z, &qz) + dot(&self.grad, z)
    }

    pub fn residuals(&self, z: &[f64], lambda: &[f64], nu: &[f64]) -> QpResiduals {
        let mut r = self.hess.mul_vec(z);
        for (ri, qi) in r.iter_mut().zip(&self.grad) {
            *ri += qi;
        }
        self.a_eq.mul_t_acc(nu, 1.0, &mut r);
        self.g_in.mul_t_acc(lambda, 1.0, &mut r);
        let az = self.a_eq.mul_vec(z);
        let gz = self.g_in.mul_vec(z);
        let equality = az
            .iter()
            .zip(&self.b_eq)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let mut inequality = 0.0f64;
        let mut complementarity = 0.0f64;
        for i in 0..self.n_in() {
            let slack = gz[i] - self.h_in[i];
            inequality = inequality.max(slack);
            complementarity = complementarity.max((lambda[i] * slack).abs());
        }
        QpResiduals {
            stationarity: norm_inf(&r),
            equality,
            inequality,
            complementarity,
            min_multiplier: if lambda.is_empty() {
                0.0
            } else {
                lambda.iter().copied().fold(f64::INFINITY, f64::min)
            },
        }
    }

    /// Debug dump with dense row-major arrays.
    pub fn to_debug_json(&self) -> serde_json::Value {
        json!({
            "Q": self.hess.to_dense(),
            "q": self.grad,
            "A": self.a_eq.to_dense(),
            "b": self.b_eq,
            "G": self.g_in.to_dense(),
            "h": self.h_in,
        })
    }

    pub fn from_debug_json(v: &serde_json::Value) -> Result<Self, QpError> {
        let bad = |k: &str| QpError::DimensionMismatch(format!("missing or malformed key {k}"));
        let vecf = |k: &str| -> Result<Vec<f64>, QpError> {
            serde_json::from_value(v.get(k).cloned().ok_or_else(|| bad(k))?).map_err(|_| bad(k))
        };
        let mat = |k: &str, ncols: usize| -> Result<CscMatrix, QpError> {
            let rows: Vec<Vec<f64>> =
                serde_json::from_value(v.get(k).cloned().ok_or_else(|| bad(k))?)
                    .map_err(|_| bad(k))?;
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(bad(k));
            }
            Ok(CscMatrix::from_dense(&rows, ncols))
        };
        let grad = vecf("q")?;
        let n = grad.len();
        Self::new(
            mat("Q", n)?,
            grad,
            mat("A", n)?,
            vecf("b")?,
            mat("G", n)?,
            vecf("h")?,
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
