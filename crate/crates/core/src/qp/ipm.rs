use super::lu::{is_positive_definite, ColumnOrdering, SparseLu};
use super::problem::{dot, norm_inf, QpError, QpProblem, QpSettings, QpSolution, QpStatus};
use super::sparse::{CscMatrix, Triplets};

pub fn solve_qp(problem: &QpProblem, warm_start: Option<&QpSolution>) -> Result<QpSolution, QpError> {
    solve_qp_with(problem, warm_start, &QpSettings::default())
}

/// Mehrotra predictor-corrector interior-point method followed by an
/// active-set polish that recovers an exactly complementary solution.
///
/// A warm start contributes its active set: if the equality-constrained
/// system built from it already satisfies the KKT conditions the IPM is
/// skipped entirely.
pub fn solve_qp_with(
    problem: &QpProblem,
    warm_start: Option<&QpSolution>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.n_var();
    let m = problem.n_in();

    let (hess, hess_shift) = if is_positive_definite(&problem.hess, settings.psd_floor) {
        (problem.hess.clone(), 0.0)
    } else {
        (add_diagonal(&problem.hess, settings.psd_shift), settings.psd_shift)
    };
    let ctx = Context {
        p: problem,
        hess: &hess,
        settings,
        hess_shift,
        scale: 1.0
            + norm_inf(&problem.grad)
                .max(norm_inf(&problem.b_eq))
                .max(norm_inf(&problem.h_in)),
    };

    if let Some(ws) = warm_start {
        if ws.z.len() == n && ws.lambda.len() == m && ws.nu.len() == problem.n_eq() {
            if let Some(sol) = ctx.polish(&ws.active_set, 0) {
                return Ok(sol);
            }
        }
    }
    if m == 0 {
        return match ctx.polish(&[], 0) {
            Some(sol) => Ok(sol),
            None => Err(QpError::Infeasible),
        };
    }
    ctx.interior_point()
}

fn add_diagonal(a: &CscMatrix, delta: f64) -> CscMatrix {
    let mut t: Vec<(usize, usize, f64)> = a.iter().collect();
    t.extend((0..a.nrows).map(|i| (i, i, delta)));
    CscMatrix::from_triplets(a.nrows, a.ncols, &t)
}

fn position(a: &CscMatrix, row: usize, col: usize) -> usize {
    let start = a.col_ptr[col];
    let end = a.col_ptr[col + 1];
    start
        + a.row_idx[start..end]
            .binary_search(&row)
            .expect("entry missing from precomputed pattern")
}

/// Diagonal shift making the Newton matrix quasi-definite.
const QUASI_DEFINITE_SHIFT: f64 = 1e-8;

/// Reduced Newton matrix `[Q + GᵀDG, Aᵀ; A, 0]` with a fixed pattern.
struct ReducedKkt {
    mat: CscMatrix,
    base: Vec<(usize, f64)>,
    gtg: Vec<(usize, usize, f64)>,
    diag: Vec<usize>,
    n: usize,
    ordering: ColumnOrdering,
    /// Iterative-refinement sweeps per solve.
    refine: usize,
}

impl ReducedKkt {
    fn new(hess: &CscMatrix, a: &CscMatrix, g: &CscMatrix) -> Result<Self, QpError> {
        let n = hess.ncols;
        let pe = a.nrows;
        let dim = n + pe;
        let gt = g.transpose();
        let mut keys: Vec<(usize, usize)> = Vec::new();
        let mut base_vals = Vec::new();
        for (i, j, v) in hess.iter() {
            keys.push((i, j));
            base_vals.push(v);
        }
        for (i, j, v) in a.iter() {
            keys.push((n + i, j));
            base_vals.push(v);
            keys.push((j, n + i));
            base_vals.push(v);
        }
        let nbase = keys.len();
        let mut gtg_src = Vec::new();
        for row in 0..g.nrows {
            let entries: Vec<(usize, f64)> = gt.col(row).collect();
            for &(k, gk) in &entries {
                for &(l, gl) in &entries {
                    keys.push((k, l));
                    gtg_src.push((row, gk * gl));
                }
            }
        }
        let ndiag_start = keys.len();
        for i in 0..dim {
            keys.push((i, i));
        }
        let mut t = Triplets::with_capacity(dim, dim, keys.len());
        for &(r, c) in &keys {
            t.push(r, c, 0.0);
        }
        let mat = t.to_csc();
        let pos: Vec<usize> = keys.iter().map(|&(r, c)| position(&mat, r, c)).collect();
        let base = (0..nbase).map(|k| (pos[k], base_vals[k])).collect();
        let gtg = gtg_src
            .iter()
            .enumerate()
            .map(|(k, &(row, coef))| (pos[nbase + k], row, coef))
            .collect();
        let diag = pos[ndiag_start..].to_vec();
        let ordering =
            ColumnOrdering::amd(&mat).map_err(|e| QpError::Factorization(e.to_string()))?;
        Ok(Self {
            mat,
            base,
            gtg,
            diag,
            n,
            ordering,
            refine: 1,
        })
    }

    fn assemble(&mut self, d: &[f64], reg_primal: f64, reg_dual: f64) {
        self.mat.values.iter_mut().for_each(|v| *v = 0.0);
        for &(p, v) in &self.base {
            self.mat.values[p] += v;
        }
        for &(p, row, coef) in &self.gtg {
            self.mat.values[p] += d[row] * coef;
        }
        for (i, &p) in self.diag.iter().enumerate() {
            self.mat.values[p] += if i < self.n { reg_primal } else { -reg_dual };
        }
    }

    /// Factors the Newton matrix. The first attempt shifts it into a
    /// quasi-definite matrix and pivots on the diagonal, which keeps the fill
    /// predicted by the ordering; threshold pivoting is the fallback. `mat`
    /// is left unshifted so that refinement targets the true system.
    fn factor(&mut self, d: &[f64]) -> Result<SparseLu, QpError> {
        let mut last = None;
        for (reg, tol) in [(QUASI_DEFINITE_SHIFT, 0.0), (0.0, 0.1), (1e-8, 0.1), (1e-6, 0.1)] {
            self.assemble(d, reg, reg);
            match SparseLu::factor(&self.mat, &self.ordering, tol) {
                Ok(lu) if lu.pivots().iter().all(|p| p.is_finite()) => {
                    self.refine = if tol == 0.0 { 3 } else { 1 };
                    if reg != 0.0 {
                        self.assemble(d, 0.0, 0.0);
                    }
                    return Ok(lu);
                }
                Ok(_) => {}
                Err(e) => last = Some(e),
            }
        }
        Err(QpError::Factorization(last.map(|e| e.to_string()).unwrap_or_default()))
    }

    fn solve(&self, lu: &SparseLu, rhs: &[f64]) -> Vec<f64> {
        let mut x = lu.solve(rhs);
        for _ in 0..self.refine {
            let mut r = rhs.to_vec();
            self.mat.mul_acc(&x, -1.0, &mut r);
            let corr = lu.solve(&r);
            for (xi, ci) in x.iter_mut().zip(&corr) {
                *xi += ci;
            }
        }
        x
    }
}

struct Context<'a> {
    p: &'a QpProblem,
    hess: &'a CscMatrix,
    settings: &'a QpSettings,
    hess_shift: f64,
    scale: f64,
}

struct Newton<'a> {
    kkt: &'a ReducedKkt,
    lu: &'a SparseLu,
    g: &'a CscMatrix,
    d: &'a [f64],
    s: &'a [f64],
    lambda: &'a [f64],
}

impl Newton<'_> {
    /// Solves the linearized KKT system for residuals `(r_d, r_e, r_i, r_c)`.
    fn step(
        &self,
        r_d: &[f64],
        r_e: &[f64],
        r_i: &[f64],
        r_c: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = r_d.len();
        let pe = r_e.len();
        let m = r_i.len();
        let mut w = vec![0.0; m];
        for i in 0..m {
            w[i] = self.d[i] * r_i[i] - r_c[i] / self.s[i];
        }
        let mut rhs = vec![0.0; n + pe];
        for k in 0..n {
            rhs[k] = -r_d[k];
        }
        self.g.mul_t_acc(&w, -1.0, &mut rhs[..n]);
        for k in 0..pe {
            rhs[n + k] = -r_e[k];
        }
        let sol = self.kkt.solve(self.lu, &rhs);
        let dz = sol[..n].to_vec();
        let dnu = sol[n..].to_vec();
        let gdz = self.g.mul_vec(&dz);
        let mut dl = vec![0.0; m];
        let mut ds = vec![0.0; m];
        for i in 0..m {
            dl[i] = self.d[i] * (gdz[i] + r_i[i]) - r_c[i] / self.s[i];
            ds[i] = -(r_c[i] + self.s[i] * dl[i]) / self.lambda[i];
        }
        (dz, dnu, dl, ds)
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = 1.0f64;
    for (x, dx) in v.iter().zip(dv) {
        if *dx < 0.0 {
            a = a.min(-x / dx);
        }
    }
    a
}

impl Context<'_> {
    fn interior_point(&self) -> Result<QpSolution, QpError> {
        let p = self.p;
        let n = p.n_var();
        let pe = p.n_eq();
        let m = p.n_in();
        let mut kkt = ReducedKkt::new(self.hess, &p.a_eq, &p.g_in)?;

        // Initial point from the problem with unit scaling (cf. cvxopt).
        let ones = vec![1.0; m];
        let lu = kkt.factor(&ones)?;
        let mut rhs = vec![0.0; n + pe];
        for k in 0..n {
            rhs[k] = -p.grad[k];
        }
        p.g_in.mul_t_acc(&p.h_in, 1.0, &mut rhs[..n]);
        rhs[n..].copy_from_slice(&p.b_eq);
        let sol = kkt.solve(&lu, &rhs);
        let mut z = sol[..n].to_vec();
        let mut nu = sol[n..].to_vec();
        let gz = p.g_in.mul_vec(&z);
        let mut s: Vec<f64> = (0..m).map(|i| p.h_in[i] - gz[i]).collect();
        let mut lambda: Vec<f64> = s.iter().map(|v| -v).collect();
        for v in [&mut s, &mut lambda] {
            let worst = v.iter().fold(f64::NEG_INFINITY, |a, x| a.max(-x));
            if worst >= 0.0 {
                v.iter_mut().for_each(|x| *x += 1.0 + worst);
            }
        }

        let mut r_d = vec![0.0; n];
        let mut r_e = vec![0.0; pe];
        let mut r_i = vec![0.0; m];
        let mut best_residual = f64::INFINITY;
        let mut stalled = 0usize;
        let mut last_residual = Default::default();

        for iter in 0..self.settings.max_iter {
            // Residuals.
            r_d.copy_from_slice(&p.grad);
            self.hess.mul_acc(&z, 1.0, &mut r_d);
            p.a_eq.mul_t_acc(&nu, 1.0, &mut r_d);
            p.g_in.mul_t_acc(&lambda, 1.0, &mut r_d);
            r_e.iter_mut().zip(&p.b_eq).for_each(|(r, b)| *r = -b);
            p.a_eq.mul_acc(&z, 1.0, &mut r_e);
            for i in 0..m {
                r_i[i] = s[i] - p.h_in[i];
            }
            p.g_in.mul_acc(&z, 1.0, &mut r_i);
            let mu = dot(&s, &lambda) / m as f64;
            let res = norm_inf(&r_d).max(norm_inf(&r_e)).max(norm_inf(&r_i));
            last_residual = p.residuals(&z, &lambda, &nu);

            if self.settings.polish && mu < self.settings.polish_trigger && res < self.settings.polish_trigger * self.scale {
                let guess: Vec<usize> = (0..m).filter(|&i| lambda[i] > s[i]).collect();
                if let Some(sol) = self.polish(&guess, iter) {
                    return Ok(sol);
                }
            }
            let tol = self.settings.tol_kkt * self.scale;
            if mu <= tol && res <= tol {
                return Ok(self.finish(z, lambda, nu, iter, false));
            }
            if self.certifies_infeasible(&lambda, &nu) {
                return Err(QpError::Infeasible);
            }
            if res + mu < 0.5 * best_residual {
                best_residual = res + mu;
                stalled = 0;
            } else {
                stalled += 1;
            }
            if stalled > 30 {
                break;
            }

            let d: Vec<f64> = (0..m).map(|i| lambda[i] / s[i]).collect();
            let lu = kkt.factor(&d)?;
            let newton = Newton {
                kkt: &kkt,
                lu: &lu,
                g: &p.g_in,
                d: &d,
                s: &s,
                lambda: &lambda,
            };

            // Predictor.
            let r_c: Vec<f64> = (0..m).map(|i| s[i] * lambda[i]).collect();
            let (_, _, dl_a, ds_a) = newton.step(&r_d, &r_e, &r_i, &r_c);
            let alpha_a = max_step(&s, &ds_a).min(max_step(&lambda, &dl_a));
            let mu_a = (0..m)
                .map(|i| (s[i] + alpha_a * ds_a[i]) * (lambda[i] + alpha_a * dl_a[i]))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_a / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let r_c: Vec<f64> = (0..m)
                .map(|i| s[i] * lambda[i] + ds_a[i] * dl_a[i] - sigma * mu)
                .collect();
            let (dz, dnu, dl, ds) = newton.step(&r_d, &r_e, &r_i, &r_c);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lambda, &dl))).min(1.0);

            for k in 0..n {
                z[k] += alpha * dz[k];
            }
            for k in 0..pe {
                nu[k] += alpha * dnu[k];
            }
            for i in 0..m {
                s[i] = (s[i] + alpha * ds[i]).max(1e-300);
                lambda[i] = (lambda[i] + alpha * dl[i]).max(1e-300);
            }
        }
        if self.settings.polish {
            let gz = p.g_in.mul_vec(&z);
            let guess: Vec<usize> = (0..m).filter(|&i| lambda[i] > p.h_in[i] - gz[i]).collect();
            if let Some(sol) = self.polish(&guess, self.settings.max_iter) {
                return Ok(sol);
            }
        }
        Err(QpError::MaxIter {
            iterations: self.settings.max_iter,
            residuals: last_residual,
        })
    }

    /// Farkas-type certificate: `Aᵀν + Gᵀλ ≈ 0` with `hᵀλ + bᵀν < 0`, λ ≥ 0.
    fn certifies_infeasible(&self, lambda: &[f64], nu: &[f64]) -> bool {
        let p = self.p;
        let mag = norm_inf(lambda).max(norm_inf(nu));
        if mag < 1e6 {
            return false;
        }
        let gap = dot(&p.h_in, lambda) + dot(&p.b_eq, nu);
        if gap >= 0.0 {
            return false;
        }
        let mut r = p.a_eq.mul_t_vec(nu);
        p.g_in.mul_t_acc(lambda, 1.0, &mut r);
        norm_inf(&r) <= 1e-6 * (-gap)
    }

    /// Solves the equality-constrained KKT system for a guessed active set
    /// and accepts it only if the full optimality conditions hold.
    fn polish(&self, active: &[usize], iterations: usize) -> Option<QpSolution> {
        let p = self.p;
        let n = p.n_var();
        let pe = p.n_eq();
        let na = active.len();
        let dim = n + pe + na;
        let ga = p.g_in.select_rows(active);
        let mut t = Triplets::with_capacity(dim, dim, p.hess.nnz() + 2 * (p.a_eq.nnz() + ga.nnz()) + dim);
        for (i, j, v) in p.hess.iter() {
            t.push(i, j, v);
        }
        for (i, j, v) in p.a_eq.iter() {
            t.push(n + i, j, v);
            t.push(j, n + i, v);
        }
        for (i, j, v) in ga.iter() {
            t.push(n + pe + i, j, v);
            t.push(j, n + pe + i, v);
        }
        for i in 0..dim {
            t.push(i, i, 0.0);
        }
        let exact = t.to_csc();
        let mut rhs = vec![0.0; dim];
        for k in 0..n {
            rhs[k] = -p.grad[k];
        }
        rhs[n..n + pe].copy_from_slice(&p.b_eq);
        for (k, &i) in active.iter().enumerate() {
            rhs[n + pe + k] = p.h_in[i];
        }
        let ordering = ColumnOrdering::amd(&exact).ok()?;

        // Quasi-definite diagonal pivoting first; accepted only when
        // refinement against the exact matrix drives the residual down.
        let rhs_scale = 1.0 + norm_inf(&rhs);
        for (reg, tol) in [(1e-9, 0.0), (0.0, 0.1), (1e-12, 0.1), (1e-10, 0.1)] {
            let mat = if reg == 0.0 {
                exact.clone()
            } else {
                let mut m = exact.clone();
                for i in 0..dim {
                    let pos = position(&m, i, i);
                    m.values[pos] += if i < n { reg } else { -reg };
                }
                m
            };
            let Ok(lu) = SparseLu::factor(&mat, &ordering, tol) else {
                continue;
            };
            let mut sol = lu.solve(&rhs);
            let mut best = f64::INFINITY;
            for _ in 0..10 {
                let mut r = rhs.clone();
                exact.mul_acc(&sol, -1.0, &mut r);
                let rn = norm_inf(&r);
                if !(rn < 0.5 * best) || rn == 0.0 {
                    best = best.min(rn);
                    break;
                }
                best = rn;
                let c = lu.solve(&r);
                sol.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            if tol == 0.0 && !(best <= 1e-13 * rhs_scale) {
                continue;
            }
            if sol.iter().all(|v| v.is_finite()) {
                // Degenerate active sets admit several multiplier splits; a
                // rejected split may still have a valid sibling.
                if let Some(s) = self.accept_polish(&sol, active, iterations) {
                    return Some(s);
                }
            }
        }
        None
    }

    fn accept_polish(&self, x: &[f64], active: &[usize], iterations: usize) -> Option<QpSolution> {
        let p = self.p;
        let n = p.n_var();
        let pe = p.n_eq();
        let tol = self.settings.tol_kkt * self.scale;
        let z = x[..n].to_vec();
        let nu = x[n..n + pe].to_vec();
        let mut lambda = vec![0.0; p.n_in()];
        for (k, &i) in active.iter().enumerate() {
            let l = x[n + pe + k];
            if l < -tol {
                return None;
            }
            lambda[i] = l.max(0.0);
        }
        let gz = p.g_in.mul_vec(&z);
        if gz.iter().zip(&p.h_in).any(|(g, h)| g - h > tol) {
            return None;
        }
        let sol = self.finish(z, lambda, nu, iterations, true);
        let r = &sol.residuals;
        if r.stationarity.max(r.equality) > tol {
            return None;
        }
        Some(sol)
    }

    fn finish(
        &self,
        z: Vec<f64>,
        lambda: Vec<f64>,
        nu: Vec<f64>,
        iterations: usize,
        polished: bool,
    ) -> QpSolution {
        let p = self.p;
        let gz = p.g_in.mul_vec(&z);
        let mut active_set = Vec::new();
        let mut weakly_active = Vec::new();
        for i in 0..p.n_in() {
            let slack = p.h_in[i] - gz[i];
            if slack <= self.settings.tol_act.max(self.settings.tol_kkt * self.scale) {
                active_set.push(i);
            }
            if slack <= self.settings.tol_strict && lambda[i] <= self.settings.tol_strict {
                weakly_active.push(i);
            }
        }
        let status = if weakly_active.is_empty() {
            QpStatus::Optimal
        } else {
            QpStatus::Degenerate
        };
        let residuals = p.residuals(&z, &lambda, &nu);
        QpSolution {
            cost: p.objective(&z),
            z,
            lambda,
            nu,
            active_set,
            status,
            iterations,
            residuals,
            weakly_active,
            polished,
            hess_shift: self.hess_shift,
        }
    }
}
