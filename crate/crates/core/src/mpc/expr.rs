//! Affine expressions in the QP variables whose coefficients carry sparse
//! first derivatives with respect to the free contact times.

use crate::spline::{basis, basis_d_duration};

/// Sparse vector over parameter columns.
pub type Grad = Vec<(usize, f64)>;

fn axpy_grad(dst: &mut Grad, src: &[(usize, f64)], s: f64) {
    for &(k, v) in src {
        match dst.iter_mut().find(|e| e.0 == k) {
            Some(e) => e.1 += s * v,
            None => dst.push((k, s * v)),
        }
    }
}

/// `c + Σ coef·z[var]`, with `∂c/∂θ` and `∂coef/∂θ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lin {
    pub c: f64,
    pub dc: Grad,
    pub terms: Vec<(usize, f64)>,
    pub dterms: Vec<(usize, usize, f64)>,
}

impl Lin {
    pub fn constant(c: f64) -> Self {
        Self {
            c,
            ..Default::default()
        }
    }

    pub fn var(i: usize, coef: f64) -> Self {
        Self {
            terms: vec![(i, coef)],
            ..Default::default()
        }
    }

    pub fn has_vars(&self) -> bool {
        self.terms.iter().any(|t| t.1 != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.c == 0.0 && self.dc.is_empty() && self.terms.is_empty() && self.dterms.is_empty()
    }

    pub fn add_scaled(&mut self, o: &Lin, s: f64) {
        if s == 0.0 {
            return;
        }
        self.c += s * o.c;
        axpy_grad(&mut self.dc, &o.dc, s);
        for &(i, v) in &o.terms {
            match self.terms.iter_mut().find(|e| e.0 == i) {
                Some(e) => e.1 += s * v,
                None => self.terms.push((i, s * v)),
            }
        }
        for &(k, i, v) in &o.dterms {
            match self.dterms.iter_mut().find(|e| e.0 == k && e.1 == i) {
                Some(e) => e.2 += s * v,
                None => self.dterms.push((k, i, s * v)),
            }
        }
    }

    pub fn add_const(&mut self, c: f64) {
        self.c += c;
    }

    pub fn add_var(&mut self, i: usize, coef: f64) {
        self.add_scaled(&Lin::var(i, coef), 1.0);
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.c + self.terms.iter().map(|&(i, v)| v * z[i]).sum::<f64>()
    }

    /// Adds `weight·src` where `weight` has gradient `dweight`.
    fn add_weighted(&mut self, src: Src, weight: f64, dweight: &[(usize, f64)]) {
        match src {
            Src::Const(v) => {
                if v != 0.0 {
                    self.c += weight * v;
                    axpy_grad(&mut self.dc, dweight, v);
                }
            }
            Src::Var(i) => {
                match self.terms.iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.1 += weight,
                    None => self.terms.push((i, weight)),
                }
                for &(k, dv) in dweight {
                    match self.dterms.iter_mut().find(|e| e.0 == k && e.1 == i) {
                        Some(e) => e.2 += dv,
                        None => self.dterms.push((k, i, dv)),
                    }
                }
            }
        }
    }
}

/// A time that is affine in the free contact times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeExpr {
    pub value: f64,
    pub grad: Grad,
}

impl TimeExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: Vec::new(),
        }
    }

    /// `(1 − s)·a + s·b`
    pub fn lerp(a: &TimeExpr, b: &TimeExpr, s: f64) -> Self {
        let mut grad = Vec::new();
        axpy_grad(&mut grad, &a.grad, 1.0 - s);
        axpy_grad(&mut grad, &b.grad, s);
        grad.retain(|e| e.1 != 0.0);
        Self {
            value: (1.0 - s) * a.value + s * b.value,
            grad,
        }
    }
}

/// Value source of a spline knot component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Src {
    Const(f64),
    Var(usize),
}

impl Src {
    pub fn value(self, z: &[f64]) -> f64 {
        match self {
            Src::Const(v) => v,
            Src::Var(i) => z[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotSrc {
    pub value: [Src; 3],
    pub slope: [Src; 3],
}

impl KnotSrc {
    pub fn constant(p: [f64; 3]) -> Self {
        Self {
            value: p.map(Src::Const),
            slope: [Src::Const(0.0); 3],
        }
    }

    pub fn zero() -> Self {
        Self::constant([0.0; 3])
    }
}

/// One Hermite segment of a 3-D spline whose knots are QP variables or data.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub t0: TimeExpr,
    pub t1: TimeExpr,
    /// Identically zero (no force at a distance).
    pub zero: bool,
    pub k0: KnotSrc,
    pub k1: KnotSrc,
}

impl Piece {
    /// Expressions for the three components at global time `t`.
    pub fn eval_lin(&self, t: f64, derivs: bool) -> [Lin; 3] {
        let mut out: [Lin; 3] = Default::default();
        if self.zero {
            return out;
        }
        let dur = self.t1.value - self.t0.value;
        let tau = (t - self.t0.value).clamp(0.0, dur);
        let (w, dw_dtau) = basis(dur, tau);
        let dw_ddur = basis_d_duration(dur, tau);
        // Gradients of each weight through duration and local time.
        let mut dw: [Grad; 4] = Default::default();
        if derivs {
            let mut cols: Vec<usize> = self.t0.grad.iter().chain(&self.t1.grad).map(|e| e.0).collect();
            cols.sort_unstable();
            cols.dedup();
            for k in cols {
                let g0 = self.t0.grad.iter().find(|e| e.0 == k).map_or(0.0, |e| e.1);
                let g1 = self.t1.grad.iter().find(|e| e.0 == k).map_or(0.0, |e| e.1);
                let d_dur = g1 - g0;
                let d_tau = -g0;
                for m in 0..4 {
                    let v = dw_ddur[m] * d_dur + dw_dtau[m] * d_tau;
                    if v != 0.0 {
                        dw[m].push((k, v));
                    }
                }
            }
        }
        for (a, lin) in out.iter_mut().enumerate() {
            let srcs = [self.k0.value[a], self.k0.slope[a], self.k1.value[a], self.k1.slope[a]];
            for m in 0..4 {
                lin.add_weighted(srcs[m], w[m], &dw[m]);
            }
        }
        out
    }

    /// Bernstein control points `y0, y0 + T·ẏ0/3, y1 − T·ẏ1/3, y1` per
    /// component. The segment stays in the convex hull of these four points.
    pub fn control_points(&self, derivs: bool) -> [[Lin; 3]; 4] {
        let mut out: [[Lin; 3]; 4] = Default::default();
        if self.zero {
            return out;
        }
        let third = (self.t1.value - self.t0.value) / 3.0;
        let mut dthird = Grad::new();
        if derivs {
            axpy_grad(&mut dthird, &self.t1.grad, 1.0 / 3.0);
            axpy_grad(&mut dthird, &self.t0.grad, -1.0 / 3.0);
            dthird.retain(|e| e.1 != 0.0);
        }
        let neg: Grad = dthird.iter().map(|&(k, v)| (k, -v)).collect();
        for a in 0..3 {
            out[0][a].add_weighted(self.k0.value[a], 1.0, &[]);
            out[1][a].add_weighted(self.k0.value[a], 1.0, &[]);
            out[1][a].add_weighted(self.k0.slope[a], third, &dthird);
            out[2][a].add_weighted(self.k1.value[a], 1.0, &[]);
            out[2][a].add_weighted(self.k1.slope[a], -third, &neg);
            out[3][a].add_weighted(self.k1.value[a], 1.0, &[]);
        }
        out
    }

    /// Numeric value and time derivative at `t`.
    pub fn eval_numeric(&self, t: f64, z: &[f64]) -> ([f64; 3], [f64; 3]) {
        if self.zero {
            return ([0.0; 3], [0.0; 3]);
        }
        let dur = self.t1.value - self.t0.value;
        let tau = (t - self.t0.value).clamp(0.0, dur);
        let (w, dw) = basis(dur, tau);
        let mut v = [0.0; 3];
        let mut d = [0.0; 3];
        for a in 0..3 {
            let s = [
                self.k0.value[a].value(z),
                self.k0.slope[a].value(z),
                self.k1.value[a].value(z),
                self.k1.slope[a].value(z),
            ];
            for m in 0..4 {
                v[a] += w[m] * s[m];
                d[a] += dw[m] * s[m];
            }
        }
        (v, d)
    }
}

/// Consecutive pieces covering at least the planning horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PieceSpline {
    pub pieces: Vec<Piece>,
}

impl PieceSpline {
    /// Piece containing `t`; half-open intervals, times past the end map to
    /// the last piece and times before the start to the first.
    pub fn locate(&self, t: f64) -> &Piece {
        for p in &self.pieces {
            if t < p.t1.value {
                return p;
            }
        }
        self.pieces.last().expect("spline has at least one piece")
    }

    pub fn eval_lin(&self, t: f64, derivs: bool) -> [Lin; 3] {
        self.locate(t).eval_lin(t, derivs)
    }

    pub fn eval_numeric(&self, t: f64, z: &[f64]) -> ([f64; 3], [f64; 3]) {
        self.locate(t).eval_numeric(t, z)
    }
}
