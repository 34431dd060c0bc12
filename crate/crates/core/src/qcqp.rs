//! Convex quadratic subproblems with ball and convex quadratic constraints.
//!
//! A [`QuadraticProgram`] minimizes a weighted sum of squared affine
//! residuals over a set of complex matrix variables. Internally every
//! variable is flattened to reals as `[Re vec(X); Im vec(X)]` and variables
//! are concatenated in declaration order; Euclidean norms, and hence ball
//! radii, are unchanged by this flattening.
//!
//! The objective is stored in Gram form `xᵀPx + 2qᵀx + r`. Two solution
//! strategies are available:
//!
//! * [`Method::DualNewton`] (default) eliminates the unconstrained variables
//!   exactly through a Schur complement and solves the remaining problem by
//!   projected Newton on the Lagrange dual. With only a handful of
//!   constraints the dual is tiny, and the method reaches machine precision
//!   even on the badly scaled programs the optimizer produces.
//! * [`Method::ProjectedGradient`] is accelerated projected gradient (FISTA
//!   with adaptive restart) on the full stacked vector, with closed-form
//!   projections for balls and per-row balls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{c64, CMat};

pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Default subproblem tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap per subproblem.
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Name and shape of one complex matrix variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
        }
    }

    /// Number of real coordinates.
    pub fn real_len(&self) -> usize {
        2 * self.rows * self.cols
    }
}

/// Ordered collection of variables and their offsets in the stacked vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    vars: Vec<VariableSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(vars: Vec<VariableSpec>) -> Self {
        let mut offsets = Vec::with_capacity(vars.len());
        let mut total = 0;
        for v in &vars {
            offsets.push(total);
            total += v.real_len();
        }
        Self { vars, offsets, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn vars(&self) -> &[VariableSpec] {
        &self.vars
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    /// Range of real coordinates owned by variable `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.vars[k].real_len()
    }

    /// Real coordinates (real part, imaginary part) of entry `(i, j)` of variable `k`.
    pub fn entry(&self, k: usize, i: usize, j: usize) -> (usize, usize) {
        let v = &self.vars[k];
        let idx = j * v.rows + i;
        let half = v.rows * v.cols;
        (self.offsets[k] + idx, self.offsets[k] + half + idx)
    }

    /// Flattens matrices (one per variable, in order) into a real vector.
    pub fn pack(&self, mats: &[CMat]) -> RVec {
        assert_eq!(mats.len(), self.vars.len(), "one matrix per variable");
        let mut x = RVec::zeros(self.total);
        for (k, m) in mats.iter().enumerate() {
            let v = &self.vars[k];
            assert_eq!(m.shape(), (v.rows, v.cols), "shape of variable {}", v.name);
            let half = v.rows * v.cols;
            for (idx, z) in m.as_slice().iter().enumerate() {
                x[self.offsets[k] + idx] = z.re;
                x[self.offsets[k] + half + idx] = z.im;
            }
        }
        x
    }

    /// Inverse of [`Layout::pack`].
    pub fn unpack(&self, x: &RVec) -> Vec<CMat> {
        assert_eq!(x.len(), self.total);
        self.vars
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let half = v.rows * v.cols;
                let o = self.offsets[k];
                CMat::from_fn(v.rows, v.cols, |i, j| {
                    let idx = j * v.rows + i;
                    c64(x[o + idx], x[o + half + idx])
                })
            })
            .collect()
    }
}

fn flatten(m: &CMat) -> RVec {
    let len = m.len();
    let mut v = RVec::zeros(2 * len);
    for (i, z) in m.as_slice().iter().enumerate() {
        v[i] = z.re;
        v[len + i] = z.im;
    }
    v
}

/// Real matrix of a real-linear map from the stacked variables to a complex
/// matrix, whose output is flattened as `[Re vec(Y); Im vec(Y)]`.
pub fn linear_jacobian<F>(layout: &Layout, map: F) -> RMat
where
    F: Fn(&[CMat]) -> CMat,
{
    let n = layout.len();
    let base = flatten(&map(&layout.unpack(&RVec::zeros(n))));
    let mut jac = RMat::zeros(base.len(), n);
    let mut e = RVec::zeros(n);
    for col in 0..n {
        e[col] = 1.0;
        jac.set_column(col, &(flatten(&map(&layout.unpack(&e))) - &base));
        e[col] = 0.0;
    }
    jac
}

/// A convex constraint on the stacked vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `‖(X_k)_{k ∈ vars}‖_F ≤ radius`.
    Ball { vars: Vec<usize>, radius: f64 },
    /// `‖row_l(X_var)‖ ≤ radii[l]` for every row `l`.
    RowBalls { var: usize, radii: Vec<f64> },
    /// `‖map · x‖² + offset ≤ bound`, with `map` acting on the full stacked vector.
    Quadratic { map: RMat, offset: f64, bound: f64 },
}

/// One weighted affine residual `w ‖A x + b‖²` in real form.
#[derive(Debug, Clone)]
pub struct ResidualTerm {
    pub weight: f64,
    pub jacobian: RMat,
    pub offset: RVec,
}

/// `minimize xᵀPx + 2qᵀx + r` subject to a list of convex constraints.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub layout: Layout,
    pub p: RMat,
    pub q: RVec,
    pub r: f64,
    pub constraints: Vec<Constraint>,
}

/// Outcome classification of [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Solution per variable, in layout order.
    pub solution: Vec<CMat>,
    /// Stacked real solution.
    pub x: RVec,
    pub objective: f64,
    pub iterations: usize,
    /// Norm of the Lagrangian gradient plus complementarity slack.
    pub kkt_residual: f64,
    pub status: SolveStatus,
    /// Lagrange multipliers, one per scalar constraint (row balls expand to one per row).
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    DualNewton,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    /// Ridge weight relative to the mean diagonal of `P`; the ridge is centred
    /// on the warm start when one is given, so the true objective can only
    /// decrease relative to it.
    pub ridge: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            method: Method::DualNewton,
            ridge: 1e-12,
        }
    }
}

impl QuadraticProgram {
    /// Assembles the Gram form from explicit residual terms.
    pub fn from_terms(layout: Layout, terms: &[ResidualTerm], constraints: Vec<Constraint>) -> Self {
        let n = layout.len();
        let mut p = RMat::zeros(n, n);
        let mut q = RVec::zeros(n);
        let mut r = 0.0;
        for t in terms {
            assert_eq!(t.jacobian.ncols(), n, "residual jacobian width");
            let wa = &t.jacobian * t.weight;
            p += wa.transpose() * &t.jacobian;
            q += wa.transpose() * &t.offset;
            r += t.weight * t.offset.norm_squared();
        }
        let p = (&p + p.transpose()) * 0.5;
        Self {
            layout,
            p,
            q,
            r,
            constraints,
        }
    }

    /// Builds the program from a residual function that is affine in the variables.
    ///
    /// `eval` maps one matrix per variable to a list of complex residual
    /// matrices; `weights[k]` multiplies `‖residual_k‖²`. The real Jacobian is
    /// recovered exactly by probing unit vectors, which is valid because the
    /// map is affine (it may involve conjugates and transposes).
    pub fn from_affine<F>(layout: Layout, weights: &[f64], eval: F, constraints: Vec<Constraint>) -> Self
    where
        F: Fn(&[CMat]) -> Vec<CMat>,
    {
        let n = layout.len();
        let flat = |res: &[CMat]| -> Vec<RVec> { res.iter().map(flatten).collect() };
        let base = flat(&eval(&layout.unpack(&RVec::zeros(n))));
        assert_eq!(base.len(), weights.len(), "one weight per residual");
        let mut jac: Vec<RMat> = base.iter().map(|b| RMat::zeros(b.len(), n)).collect();
        let mut e = RVec::zeros(n);
        for col in 0..n {
            e[col] = 1.0;
            let probe = flat(&eval(&layout.unpack(&e)));
            for (k, pr) in probe.iter().enumerate() {
                jac[k].set_column(col, &(pr - &base[k]));
            }
            e[col] = 0.0;
        }
        let terms: Vec<ResidualTerm> = jac
            .into_iter()
            .zip(base)
            .zip(weights)
            .map(|((jacobian, offset), &weight)| ResidualTerm {
                weight,
                jacobian,
                offset,
            })
            .collect();
        Self::from_terms(layout, &terms, constraints)
    }

    pub fn objective(&self, x: &RVec) -> f64 {
        (x.dot(&(&self.p * x)) + 2.0 * self.q.dot(x) + self.r).max(0.0)
    }

    pub fn gradient(&self, x: &RVec) -> RVec {
        (&self.p * x + &self.q) * 2.0
    }

    /// Expands every constraint into scalar convex quadratics `xᵀQx + c ≤ 0`,
    /// with `Q` given through a factor `B` (so `Q = BᵀB`).
    fn scalar_constraints(&self) -> Vec<ScalarConstraint> {
        let n = self.layout.len();
        let mut out = Vec::new();
        for c in &self.constraints {
            match c {
                Constraint::Ball { vars, radius } => {
                    let idx: Vec<usize> = vars.iter().flat_map(|&k| self.layout.range(k)).collect();
                    out.push(ScalarConstraint::selector(n, idx, -radius * radius));
                }
                Constraint::RowBalls { var, radii } => {
                    let v = &self.layout.vars()[*var];
                    assert_eq!(radii.len(), v.rows, "one radius per row");
                    for (l, r) in radii.iter().enumerate() {
                        let mut idx = Vec::with_capacity(2 * v.cols);
                        for j in 0..v.cols {
                            let (re, im) = self.layout.entry(*var, l, j);
                            idx.push(re);
                            idx.push(im);
                        }
                        out.push(ScalarConstraint::selector(n, idx, -r * r));
                    }
                }
                Constraint::Quadratic { map, offset, bound } => {
                    assert_eq!(map.ncols(), n, "quadratic constraint width");
                    out.push(ScalarConstraint::dense(map.clone(), offset - bound));
                }
            }
        }
        out
    }

    /// Largest constraint value `xᵀQx + c` over all scalar constraints (≤ 0 when feasible).
    pub fn max_violation(&self, x: &RVec) -> f64 {
        self.scalar_constraints()
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `xᵀ Q x + c ≤ 0` with `Q = BᵀB`, where `B` is a coordinate selector or a dense map.
#[derive(Debug, Clone)]
struct ScalarConstraint {
    factor: Factor,
    c: f64,
}

#[derive(Debug, Clone)]
enum Factor {
    Select(Vec<usize>),
    Dense(RMat),
}

impl ScalarConstraint {
    fn selector(_n: usize, idx: Vec<usize>, c: f64) -> Self {
        Self {
            factor: Factor::Select(idx),
            c,
        }
    }

    fn dense(b: RMat, c: f64) -> Self {
        Self {
            factor: Factor::Dense(b),
            c,
        }
    }

    fn quad(&self, x: &RVec) -> f64 {
        match &self.factor {
            Factor::Select(idx) => idx.iter().map(|&i| x[i] * x[i]).sum(),
            Factor::Dense(b) => (b * x).norm_squared(),
        }
    }

    fn value(&self, x: &RVec) -> f64 {
        self.quad(x) + self.c
    }

    /// `Q x`.
    fn apply(&self, x: &RVec) -> RVec {
        match &self.factor {
            Factor::Select(idx) => {
                let mut out = RVec::zeros(x.len());
                for &i in idx {
                    out[i] = x[i];
                }
                out
            }
            Factor::Dense(b) => b.transpose() * (b * x),
        }
    }

    fn dense_q(&self, n: usize) -> RMat {
        match &self.factor {
            Factor::Select(idx) => {
                let mut q = RMat::zeros(n, n);
                for &i in idx {
                    q[(i, i)] = 1.0;
                }
                q
            }
            Factor::Dense(b) => b.transpose() * b,
        }
    }

    /// Coordinates on which the constraint depends.
    fn support(&self) -> Vec<usize> {
        match &self.factor {
            Factor::Select(idx) => idx.clone(),
            Factor::Dense(b) => (0..b.ncols())
                .filter(|&j| b.column(j).iter().any(|&v| v != 0.0))
                .collect(),
        }
    }

    fn restrict(&self, keep: &[usize], n_full: usize) -> ScalarConstraint {
        let mut pos = vec![usize::MAX; n_full];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let factor = match &self.factor {
            Factor::Select(idx) => Factor::Select(idx.iter().map(|&i| pos[i]).collect()),
            Factor::Dense(b) => Factor::Dense(RMat::from_fn(b.nrows(), keep.len(), |r, k| b[(r, keep[k])])),
        };
        ScalarConstraint { factor, c: self.c }
    }
}

fn mean_diag(p: &RMat) -> f64 {
    let n = p.nrows().max(1);
    (0..p.nrows()).map(|i| p[(i, i)].abs()).sum::<f64>() / n as f64
}

/// Cholesky solve with escalating diagonal jitter for nearly singular Gram matrices.
fn spd_solve(p: &RMat, b: &RVec) -> RVec {
    let n = p.nrows();
    let scale = mean_diag(p).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..20 {
        let mut m = p.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(b);
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    p.clone().pseudo_inverse(1e-14 * scale).expect("pseudo-inverse") * b
}

fn spd_inverse(p: &RMat) -> RMat {
    let n = p.nrows();
    let scale = mean_diag(p).max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..20 {
        let mut m = p.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return ch.inverse();
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    p.clone().pseudo_inverse(1e-14 * scale).expect("pseudo-inverse")
}

/// Solves the program.
///
/// The warm start, when given, centres the ridge and seeds the
/// projected-gradient iteration; it never needs to be feasible.
pub fn solve(qp: &QuadraticProgram, opts: &SolveOptions, warm_start: Option<&RVec>) -> SolveReport {
    let n = qp.layout.len();
    let mut p = qp.p.clone();
    let mut q = qp.q.clone();
    let ridge = opts.ridge * mean_diag(&qp.p);
    if ridge > 0.0 {
        for i in 0..n {
            p[(i, i)] += ridge;
        }
        if let Some(x0) = warm_start {
            q -= x0 * ridge;
        }
    }
    let reg = QuadraticProgram {
        layout: qp.layout.clone(),
        p,
        q,
        r: 0.0,
        constraints: qp.constraints.clone(),
    };
    let cons = qp.scalar_constraints();
    if cons.iter().any(|c| c.c > 0.0) {
        let x = RVec::zeros(n);
        return finish(qp, &cons, x, vec![0.0; cons.len()], 0, SolveStatus::Infeasible);
    }
    match opts.method {
        Method::DualNewton => solve_dual_newton(qp, &reg, &cons, opts),
        Method::ProjectedGradient => solve_projected_gradient(qp, &reg, &cons, opts, warm_start),
    }
}

fn finish(
    qp: &QuadraticProgram,
    cons: &[ScalarConstraint],
    x: RVec,
    mu: Vec<f64>,
    iterations: usize,
    status: SolveStatus,
) -> SolveReport {
    let mut grad = qp.gradient(&x);
    let mut slack = 0.0;
    for (c, &m) in cons.iter().zip(&mu) {
        if m > 0.0 {
            grad += c.apply(&x) * (2.0 * m);
            slack += (m * c.value(&x)).abs();
        }
    }
    SolveReport {
        solution: qp.layout.unpack(&x),
        objective: qp.objective(&x),
        kkt_residual: grad.norm() + slack,
        x,
        iterations,
        status,
        multipliers: mu,
    }
}

/// Shrinks `x` toward the origin until every constraint holds; the origin is
/// strictly feasible so bisection on the scale always succeeds.
fn scale_into_feasible(cons: &[ScalarConstraint], x: &RVec) -> RVec {
    let worst = |y: &RVec| cons.iter().map(|c| c.value(y)).fold(f64::NEG_INFINITY, f64::max);
    if cons.is_empty() || worst(x) <= 0.0 {
        return x.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if worst(&(x * mid)) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-17 {
            break;
        }
    }
    x * lo
}

fn solve_dual_newton(
    qp: &QuadraticProgram,
    reg: &QuadraticProgram,
    cons: &[ScalarConstraint],
    opts: &SolveOptions,
) -> SolveReport {
    let n = reg.layout.len();
    if cons.is_empty() {
        let x = spd_solve(&reg.p, &(-&reg.q));
        return finish(qp, cons, x, vec![], 1, SolveStatus::Converged);
    }
    // Partition coordinates into constrained and free ones.
    let mut in_c = vec![false; n];
    for c in cons {
        for i in c.support() {
            in_c[i] = true;
        }
    }
    let ci: Vec<usize> = (0..n).filter(|&i| in_c[i]).collect();
    let ui: Vec<usize> = (0..n).filter(|&i| !in_c[i]).collect();
    let sub = |rows: &[usize], cols: &[usize]| RMat::from_fn(rows.len(), cols.len(), |r, c| reg.p[(rows[r], cols[c])]);
    let subv = |rows: &[usize]| RVec::from_fn(rows.len(), |r, _| reg.q[rows[r]]);
    let p_cc = sub(&ci, &ci);
    let q_c = subv(&ci);
    let (s, sv, elim) = if ui.is_empty() {
        (p_cc, q_c, None)
    } else {
        let p_uu_inv = spd_inverse(&sub(&ui, &ui));
        let p_uc = sub(&ui, &ci);
        let q_u = subv(&ui);
        let t = &p_uu_inv * &p_uc;
        let s = &p_cc - p_uc.transpose() * &t;
        let sv = &q_c - t.transpose() * &q_u;
        (s, sv, Some((p_uu_inv, p_uc, q_u)))
    };
    let s = (&s + s.transpose()) * 0.5;
    let rc: Vec<ScalarConstraint> = cons.iter().map(|c| c.restrict(&ci, n)).collect();
    let m = ci.len();
    let qmats: Vec<RMat> = rc.iter().map(|c| c.dense_q(m)).collect();

    let primal = |mu: &[f64]| -> (RVec, RMat) {
        let mut k = s.clone();
        for (qm, &w) in qmats.iter().zip(mu) {
            if w > 0.0 {
                k += qm * w;
            }
        }
        let kinv = spd_inverse(&k);
        let x = -(&kinv * &sv);
        (x, kinv)
    };
    let dual_value = |x: &RVec, mu: &[f64]| -> f64 {
        let mut v = x.dot(&(&s * x)) + 2.0 * sv.dot(x);
        for (c, &w) in rc.iter().zip(mu) {
            v += w * c.value(x);
        }
        v
    };

    let mut mu = vec![0.0; rc.len()];
    let (mut xc, mut kinv) = primal(&mu);
    let mut iterations = 0;
    let mut status = SolveStatus::Converged;
    let scale: Vec<f64> = rc.iter().map(|c| 1.0 + c.c.abs()).collect();
    let stop = (opts.tol * 1e-4).min(1e-12);
    if rc.iter().any(|c| c.value(&xc) > 0.0) {
        status = SolveStatus::MaxIter;
        for it in 0..opts.max_iter.min(500) {
            iterations = it + 1;
            let grad: Vec<f64> = rc.iter().map(|c| c.value(&xc)).collect();
            // Bound-active set: multipliers at zero whose constraint is slack.
            let free: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0 || grad[i] > 0.0).collect();
            let converged = (0..mu.len()).all(|i| {
                if mu[i] > 0.0 {
                    grad[i].abs() <= stop * scale[i]
                } else {
                    grad[i] <= stop * scale[i]
                }
            });
            if converged {
                status = SolveStatus::Converged;
                break;
            }
            let qx: Vec<RVec> = free.iter().map(|&i| &qmats[i] * &xc).collect();
            let kq: Vec<RVec> = qx.iter().map(|v| &kinv * v).collect();
            let nf = free.len();
            // Negated dual Hessian: 4 (Q_i x)ᵀ K⁻¹ (Q_j x), positive semidefinite.
            let mut h = RMat::from_fn(nf, nf, |a, b| 4.0 * qx[a].dot(&kq[b]));
            let hscale = (0..nf).map(|i| h[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for i in 0..nf {
                h[(i, i)] += 1e-13 * hscale;
            }
            let gfree = RVec::from_fn(nf, |a, _| grad[free[a]]);
            let step = spd_solve(&h, &gfree);
            let base = dual_value(&xc, &mu);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = mu.clone();
                for (a, &i) in free.iter().enumerate() {
                    trial[i] = (mu[i] + t * step[a]).max(0.0);
                }
                let (xt, kt) = primal(&trial);
                let val = dual_value(&xt, &trial);
                let lin: f64 = free.iter().map(|&i| grad[i] * (trial[i] - mu[i])).sum();
                if val >= base + 1e-4 * lin.min(0.0).abs().min(lin.abs()) - 1e-15 * base.abs() || t < 1e-12 {
                    mu = trial;
                    xc = xt;
                    kinv = kt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    let xc = scale_into_feasible(&rc, &xc);
    let mut x = RVec::zeros(n);
    for (k, &i) in ci.iter().enumerate() {
        x[i] = xc[k];
    }
    if let Some((p_uu_inv, p_uc, q_u)) = elim {
        let xu = -(&p_uu_inv * (&q_u + &p_uc * &xc));
        for (k, &i) in ui.iter().enumerate() {
            x[i] = xu[k];
        }
    }
    finish(qp, cons, x, mu, iterations, status)
}

/// Euclidean projection of `y` onto `{‖z‖ ≤ R} ∩ {‖z_l‖ ≤ r_l}` for a
/// partition of the coordinates into groups `z_l`.
///
/// The KKT conditions give `z_l = min(1/(1+μ), r_l/‖y_l‖) y_l` for the
/// Frobenius multiplier `μ ≥ 0`, which is found by bisection.
pub fn project_ball_and_groups(y: &[f64], groups: &[Vec<usize>], group_radii: &[f64], radius: Option<f64>) -> Vec<f64> {
    let norms: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt())
        .collect();
    let apply = |mu: f64| -> Vec<f64> {
        let mut z = y.to_vec();
        for (g, (&nm, &r)) in groups.iter().zip(norms.iter().zip(group_radii)) {
            let f = if nm > 0.0 { (1.0 / (1.0 + mu)).min(r / nm) } else { 0.0 };
            for &i in g {
                z[i] = y[i] * f;
            }
        }
        if groups.is_empty() {
            for v in z.iter_mut() {
                *v /= 1.0 + mu;
            }
        }
        z
    };
    let norm = |z: &[f64]| z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let z0 = apply(0.0);
    match radius {
        Some(r) if norm(&z0) > r => {
            let mut hi = 1.0;
            while norm(&apply(hi)) > r {
                hi *= 2.0;
                if hi > 1e300 {
                    break;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if norm(&apply(mid)) > r {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            apply(hi)
        }
        _ => z0,
    }
}

/// Projection onto the feasible set: closed form for balls and row balls,
/// a small dual-Newton QP for anything involving quadratic constraints.
fn project(qp: &QuadraticProgram, cons: &[ScalarConstraint], y: &RVec) -> RVec {
    let has_quadratic = qp.constraints.iter().any(|c| matches!(c, Constraint::Quadratic { .. }));
    if has_quadratic {
        let n = y.len();
        let proj = QuadraticProgram {
            layout: qp.layout.clone(),
            p: RMat::identity(n, n),
            q: -y,
            r: 0.0,
            constraints: qp.constraints.clone(),
        };
        let opts = SolveOptions {
            ridge: 0.0,
            ..SolveOptions::default()
        };
        let _ = cons;
        return solve_dual_newton(&proj, &proj, &proj.scalar_constraints(), &opts).x;
    }
    let sets = projection_sets(qp);
    let project_all = |z: &mut [f64]| {
        for set in &sets {
            set.project(z);
        }
    };
    let mut z = y.as_slice().to_vec();
    let overlapping = {
        let mut seen = vec![false; y.len()];
        sets.iter().any(|s| {
            s.support().into_iter().any(|i| std::mem::replace(&mut seen[i], true))
        })
    };
    if !overlapping {
        project_all(&mut z);
        return RVec::from_vec(z);
    }
    // Dykstra's alternating projections converge to the projection onto
    // the intersection when the supports overlap.
    let mut increments = vec![vec![0.0; y.len()]; sets.len()];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for (set, inc) in sets.iter().zip(increments.iter_mut()) {
            let shifted: Vec<f64> = z.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
            let mut next = shifted.clone();
            set.project(&mut next);
            for i in 0..z.len() {
                inc[i] = shifted[i] - next[i];
                change = change.max((next[i] - z[i]).abs());
            }
            z = next;
        }
        let scale = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if change <= 1e-14 * (1.0 + scale) {
            break;
        }
    }
    RVec::from_vec(z)
}

/// A constraint set with a closed-form projection.
enum ProjectionSet {
    /// Frobenius ball and/or row balls on one matrix variable.
    Variable {
        range: Vec<usize>,
        groups: Vec<Vec<usize>>,
        radii: Vec<f64>,
        frob: Option<f64>,
    },
    /// Ball over the stacked coordinates of several variables.
    Joint { idx: Vec<usize>, radius: f64 },
}

impl ProjectionSet {
    fn support(&self) -> Vec<usize> {
        match self {
            ProjectionSet::Variable { range, .. } => range.clone(),
            ProjectionSet::Joint { idx, .. } => idx.clone(),
        }
    }

    fn project(&self, z: &mut [f64]) {
        match self {
            ProjectionSet::Variable {
                range,
                groups,
                radii,
                frob,
            } => {
                let local: Vec<f64> = range.iter().map(|&i| z[i]).collect();
                let proj = project_ball_and_groups(&local, groups, radii, *frob);
                for (a, &i) in range.iter().enumerate() {
                    z[i] = proj[a];
                }
            }
            ProjectionSet::Joint { idx, radius } => {
                let nm = idx.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt();
                if nm > *radius {
                    for &i in idx {
                        z[i] *= radius / nm;
                    }
                }
            }
        }
    }
}

/// Balls and row balls on the same variable are merged into one set, whose
/// projection is exact; balls spanning several variables stay separate.
fn projection_sets(qp: &QuadraticProgram) -> Vec<ProjectionSet> {
    let mut sets = Vec::new();
    for k in 0..qp.layout.vars().len() {
        let mut frob: Option<f64> = None;
        let mut rows: Option<&Vec<f64>> = None;
        for c in &qp.constraints {
            match c {
                Constraint::Ball { vars, radius } if vars.len() == 1 && vars[0] == k => {
                    frob = Some(frob.map_or(*radius, |r: f64| r.min(*radius)));
                }
                Constraint::RowBalls { var, radii } if *var == k => rows = Some(radii),
                _ => {}
            }
        }
        if frob.is_none() && rows.is_none() {
            continue;
        }
        let (groups, radii) = match rows {
            Some(radii) => {
                let v = &qp.layout.vars()[k];
                let off = qp.layout.range(k).start;
                let groups: Vec<Vec<usize>> = (0..v.rows)
                    .map(|l| {
                        (0..v.cols)
                            .flat_map(|j| {
                                let (re, im) = qp.layout.entry(k, l, j);
                                [re - off, im - off]
                            })
                            .collect()
                    })
                    .collect();
                (groups, radii.clone())
            }
            None => (vec![], vec![]),
        };
        sets.push(ProjectionSet::Variable {
            range: qp.layout.range(k).collect(),
            groups,
            radii,
            frob,
        });
    }
    for c in &qp.constraints {
        if let Constraint::Ball { vars, radius } = c {
            if vars.len() > 1 {
                sets.push(ProjectionSet::Joint {
                    idx: vars.iter().flat_map(|&k| qp.layout.range(k)).collect(),
                    radius: *radius,
                });
            }
        }
    }
    sets
}

fn largest_eigenvalue(p: &RMat) -> f64 {
    p.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

fn solve_projected_gradient(
    qp: &QuadraticProgram,
    reg: &QuadraticProgram,
    cons: &[ScalarConstraint],
    opts: &SolveOptions,
    warm_start: Option<&RVec>,
) -> SolveReport {
    let n = reg.layout.len();
    let f = |x: &RVec| x.dot(&(&reg.p * x)) + 2.0 * reg.q.dot(x);
    let grad = |x: &RVec| (&reg.p * x + &reg.q) * 2.0;
    let g0 = grad(&RVec::zeros(n)).norm();
    let mut step = 1.0 / (2.0 * largest_eigenvalue(&reg.p)).max(f64::MIN_POSITIVE);
    let mut x = project(reg, cons, &warm_start.cloned().unwrap_or_else(|| RVec::zeros(n)));
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut fx = f(&x);
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let gy = grad(&y);
        let fy = f(&y);
        // Backtracking on the quadratic upper bound.
        let mut xn;
        loop {
            xn = project(reg, cons, &(&y - &gy * step));
            let d = &xn - &y;
            if f(&xn) <= fy + gy.dot(&d) + d.norm_squared() / (2.0 * step) + 1e-15 * fy.abs() {
                break;
            }
            step *= 0.5;
        }
        let fxn = f(&xn);
        // Monotone variant with restart; the allowance keeps rounding noise
        // near the optimum from restarting every step.
        let (x_next, restart) = if fxn <= fx + 1e-14 * fx.abs() {
            (xn.clone(), false)
        } else {
            (x.clone(), true)
        };
        let pg = (&xn - &y).norm() / step;
        let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        y = if restart {
            x_next.clone()
        } else {
            &x_next + (&xn - &x) * ((t - 1.0) / t_next)
        };
        x = x_next;
        fx = f(&x);
        t = t_next;
        if pg <= opts.tol * (1.0 + g0) && !restart {
            status = SolveStatus::Converged;
            break;
        }
    }
    // Multipliers are not tracked by the first-order method; estimate none.
    finish(qp, cons, scale_into_feasible(cons, &x), vec![0.0; cons.len()], iterations, status)
}

/// Problem dimensions entering the interior-point complexity bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityDims {
    /// Real variable count of the canonical conic program.
    pub n_tilde: usize,
    /// Number of second-order-cone constraints.
    pub m_tilde: usize,
    /// Dimension of each cone.
    pub l: Vec<usize>,
}

/// Interior-point arithmetic cost `(1+M̃)^{1/2} Ñ (Ñ² + M̃ + Σ l_m²) · digits`
/// with the leading constant taken as one.
pub fn complexity_bound(n_tilde: usize, m_tilde: usize, l: &[usize], digits: f64) -> f64 {
    let n = n_tilde as f64;
    let m = m_tilde as f64;
    let l2: f64 = l.iter().map(|&v| (v * v) as f64).sum();
    (1.0 + m).sqrt() * n * (n * n + m + l2) * digits
}

/// Canonical-form dimensions of the first block update.
pub fn block1_dims(cfg: &crate::system::SystemConfig) -> ComplexityDims {
    let (ns, nr, mr, md, d) = (cfg.n_s, cfg.n_r, cfg.m_r, cfg.m_d, cfg.d);
    ComplexityDims {
        n_tilde: 4 * d * (ns + md) + 2 * (nr * mr + nr * nr + mr * mr + md * md + d * d + d * (2 * md + mr)),
        m_tilde: 3,
        l: shared_cone_dims(cfg),
    }
}

/// Canonical-form dimensions of the second block update.
///
/// The constraint count is one while three cone dimensions are listed;
/// the complexity report flags the mismatch.
pub fn block2_dims(cfg: &crate::system::SystemConfig) -> ComplexityDims {
    let (ns, nr, mr, md, d) = (cfg.n_s, cfg.n_r, cfg.m_r, cfg.m_d, cfg.d);
    ComplexityDims {
        n_tilde: 2 * d * (2 * md + mr + ns + d) + 2 * (nr * nr + mr * mr + md * md),
        m_tilde: 1,
        l: shared_cone_dims(cfg),
    }
}

fn shared_cone_dims(cfg: &crate::system::SystemConfig) -> Vec<usize> {
    let (ns, nr, mr, md, d) = (cfg.n_s, cfg.n_r, cfg.m_r, cfg.m_d, cfg.d);
    vec![
        2 * d * ns,
        2 * nr * nr,
        2 * d * (ns + md + d) + 2 * (nr * nr + mr * mr + md * md),
    ]
}
