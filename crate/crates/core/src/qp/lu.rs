//! Left-looking sparse LU with threshold partial pivoting (Gilbert–Peierls).
//!
//! Columns are pre-ordered with approximate minimum degree on the pattern of
//! `A + Aᵀ`; rows are chosen by partial pivoting, preferring the diagonal
//! entry whenever it is within `pivot_tol` of the column maximum.

use super::sparse::CscMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LuError {
    #[error("matrix is structurally or numerically singular at column {0}")]
    Singular(usize),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("fill-reducing ordering failed")]
    Ordering,
}

/// Column permutation reused across matrices sharing a sparsity pattern.
#[derive(Debug, Clone)]
pub struct ColumnOrdering {
    pub perm: Vec<usize>,
}

impl ColumnOrdering {
    pub fn natural(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
        }
    }

    pub fn amd(a: &CscMatrix) -> Result<Self, LuError> {
        if a.nrows != a.ncols {
            return Err(LuError::NotSquare(a.nrows, a.ncols));
        }
        let n = a.ncols;
        if n == 0 {
            return Ok(Self::natural(0));
        }
        let ap: Vec<i64> = a.col_ptr.iter().map(|&p| p as i64).collect();
        let ai: Vec<i64> = a.row_idx.iter().map(|&i| i as i64).collect();
        let (p, _, _) = amd::order::<i64>(n as i64, &ap, &ai, &amd::Control::default())
            .map_err(|_| LuError::Ordering)?;
        Ok(Self {
            perm: p.into_iter().map(|v| v as usize).collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    // L is unit lower triangular; its first entry per column is the unit diagonal.
    l: CscMatrix,
    // U's last entry per column is the diagonal.
    u: CscMatrix,
    pinv: Vec<usize>,
    q: Vec<usize>,
}

struct Workspace {
    x: Vec<f64>,
    xi: Vec<usize>,
    stack: Vec<usize>,
    resume: Vec<usize>,
    mark: Vec<usize>,
    stamp: usize,
}

impl SparseLu {
    pub fn factor(a: &CscMatrix, ordering: &ColumnOrdering, pivot_tol: f64) -> Result<Self, LuError> {
        if a.nrows != a.ncols {
            return Err(LuError::NotSquare(a.nrows, a.ncols));
        }
        let n = a.ncols;
        let q = ordering.perm.clone();
        let cap = 4 * a.nnz() + n;
        let mut lp = vec![0usize; n + 1];
        let mut li: Vec<usize> = Vec::with_capacity(cap);
        let mut lx: Vec<f64> = Vec::with_capacity(cap);
        let mut up = vec![0usize; n + 1];
        let mut ui: Vec<usize> = Vec::with_capacity(cap);
        let mut ux: Vec<f64> = Vec::with_capacity(cap);
        let mut pinv = vec![usize::MAX; n];
        let mut ws = Workspace {
            x: vec![0.0; n],
            xi: vec![0; n],
            stack: vec![0; n],
            resume: vec![0; n],
            mark: vec![0; n],
            stamp: 0,
        };

        for k in 0..n {
            lp[k] = li.len();
            up[k] = ui.len();
            let col = q[k];
            let top = spsolve_lower(&lp, &li, &lx, a, col, &pinv, &mut ws);

            let mut ipiv = usize::MAX;
            let mut amax = -1.0f64;
            for p in top..n {
                let i = ws.xi[p];
                if pinv[i] == usize::MAX {
                    let t = ws.x[i].abs();
                    if t > amax {
                        amax = t;
                        ipiv = i;
                    }
                } else {
                    ui.push(pinv[i]);
                    ux.push(ws.x[i]);
                }
            }
            if ipiv == usize::MAX || amax <= 0.0 || !amax.is_finite() {
                return Err(LuError::Singular(k));
            }
            if pinv[col] == usize::MAX && ws.x[col].abs() >= amax * pivot_tol {
                ipiv = col;
            }
            let pivot = ws.x[ipiv];
            if pivot == 0.0 {
                return Err(LuError::Singular(k));
            }
            ui.push(k);
            ux.push(pivot);
            pinv[ipiv] = k;
            li.push(ipiv);
            lx.push(1.0);
            for p in top..n {
                let i = ws.xi[p];
                if pinv[i] == usize::MAX {
                    li.push(i);
                    lx.push(ws.x[i] / pivot);
                }
                ws.x[i] = 0.0;
            }
        }
        lp[n] = li.len();
        up[n] = ui.len();
        for r in li.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self {
            n,
            l: CscMatrix {
                nrows: n,
                ncols: n,
                col_ptr: lp,
                row_idx: li,
                values: lx,
            },
            u: CscMatrix {
                nrows: n,
                ncols: n,
                col_ptr: up,
                row_idx: ui,
                values: ux,
            },
            pinv,
            q,
        })
    }

    /// Pivots `U_kk` in elimination order.
    pub fn pivots(&self) -> Vec<f64> {
        (0..self.n)
            .map(|k| self.u.values[self.u.col_ptr[k + 1] - 1])
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn fill(&self) -> usize {
        self.l.nnz() + self.u.nnz()
    }

    /// Smallest |U_kk| divided by the largest; a cheap reciprocal-condition proxy.
    pub fn rcond_estimate(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..self.n {
            let d = self.u.values[self.u.col_ptr[k + 1] - 1].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if self.n == 0 {
            1.0
        } else if hi == 0.0 {
            0.0
        } else {
            lo / hi
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.pinv[i]] = b[i];
        }
        // L x = x
        for j in 0..n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.l.col_ptr[j] + 1..self.l.col_ptr[j + 1] {
                x[self.l.row_idx[p]] -= self.l.values[p] * xj;
            }
        }
        // U x = x
        for j in (0..n).rev() {
            let last = self.u.col_ptr[j + 1] - 1;
            x[j] /= self.u.values[last];
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.u.col_ptr[j]..last {
                x[self.u.row_idx[p]] -= self.u.values[p] * xj;
            }
        }
        for k in 0..n {
            b[self.q[k]] = x[k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `Aᵀ y = c` in place using the same factors.
    pub fn solve_transpose_in_place(&self, c: &mut [f64]) {
        let n = self.n;
        let mut w: Vec<f64> = (0..n).map(|k| c[self.q[k]]).collect();
        // Uᵀ w = w (forward)
        for j in 0..n {
            let last = self.u.col_ptr[j + 1] - 1;
            let mut s = w[j];
            for p in self.u.col_ptr[j]..last {
                s -= self.u.values[p] * w[self.u.row_idx[p]];
            }
            w[j] = s / self.u.values[last];
        }
        // Lᵀ w = w (backward)
        for j in (0..n).rev() {
            let mut s = w[j];
            for p in self.l.col_ptr[j] + 1..self.l.col_ptr[j + 1] {
                s -= self.l.values[p] * w[self.l.row_idx[p]];
            }
            w[j] = s;
        }
        for i in 0..n {
            c[i] = w[self.pinv[i]];
        }
    }

    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let mut y = c.to_vec();
        self.solve_transpose_in_place(&mut y);
        y
    }
}

/// Sparse triangular solve `x = L \ A(:, col)` over the partially built L.
/// Returns `top`; the nonzero pattern of x is `xi[top..n]` in topological order.
fn spsolve_lower(
    lp: &[usize],
    li: &[usize],
    lx: &[f64],
    a: &CscMatrix,
    col: usize,
    pinv: &[usize],
    ws: &mut Workspace,
) -> usize {
    let n = a.ncols;
    ws.stamp += 1;
    let stamp = ws.stamp;
    let mut top = n;
    for p in a.col_ptr[col]..a.col_ptr[col + 1] {
        let i = a.row_idx[p];
        if ws.mark[i] != stamp {
            top = dfs(i, lp, li, top, pinv, ws, stamp);
        }
    }
    for p in top..n {
        ws.x[ws.xi[p]] = 0.0;
    }
    for p in a.col_ptr[col]..a.col_ptr[col + 1] {
        ws.x[a.row_idx[p]] = a.values[p];
    }
    for px in top..n {
        let j = ws.xi[px];
        let jcol = pinv[j];
        if jcol == usize::MAX {
            continue;
        }
        let xj = ws.x[j];
        for p in lp[jcol] + 1..lp[jcol + 1] {
            ws.x[li[p]] -= lx[p] * xj;
        }
    }
    top
}

fn dfs(
    start: usize,
    lp: &[usize],
    li: &[usize],
    mut top: usize,
    pinv: &[usize],
    ws: &mut Workspace,
    stamp: usize,
) -> usize {
    let mut head = 0usize;
    ws.stack[0] = start;
    loop {
        let j = ws.stack[head];
        let jcol = pinv[j];
        if ws.mark[j] != stamp {
            ws.mark[j] = stamp;
            ws.resume[head] = if jcol == usize::MAX { 0 } else { lp[jcol] + 1 };
        }
        let end = if jcol == usize::MAX { 0 } else { lp[jcol + 1] };
        let mut descended = false;
        let mut p = ws.resume[head];
        while p < end {
            let i = li[p];
            p += 1;
            if ws.mark[i] == stamp {
                continue;
            }
            ws.resume[head] = p;
            head += 1;
            ws.stack[head] = i;
            descended = true;
            break;
        }
        if !descended {
            top -= 1;
            ws.xi[top] = j;
            if head == 0 {
                break;
            }
            head -= 1;
        }
    }
    top
}

/// True when the symmetric matrix `a − floor·I` admits a symmetric elimination
/// with strictly positive pivots, i.e. `λ_min(a) > floor`.
pub fn is_positive_definite(a: &CscMatrix, floor: f64) -> bool {
    let n = a.nrows;
    let mut t: Vec<(usize, usize, f64)> = a.iter().collect();
    for i in 0..n {
        t.push((i, i, -floor));
    }
    let shifted = CscMatrix::from_triplets(n, n, &t);
    let Ok(ord) = ColumnOrdering::amd(&shifted) else {
        return false;
    };
    match SparseLu::factor(&shifted, &ord, 0.0) {
        Ok(lu) => lu.pivots().iter().all(|&d| d > 0.0 && d.is_finite()),
        Err(_) => false,
    }
}
