//! Alternating linear solvers (ALS, MALS) for `A x = b` in QTT format.
//!
//! The iterate is kept in mixed-canonical form around the active site, so the
//! local problem is the projection of the global one onto the current frame.
//! Two formulations are available: Galerkin projection of `A` itself, and the
//! least-squares projection of `A^T A` with right-hand side `A^T b`. The
//! latter minimizes the true residual at every local step.

use std::time::{Duration, Instant};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{QttError, Result};
use crate::tt::linalg::{reshape, solve_dense, solve_dense_multi, split, thin_qr, thin_svd, truncation_rank};
use crate::tt::operator::merge_cores;
use crate::tt::{QttOperator, QttVector, TruncationPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolveMode {
    Als,
    Mals,
    /// MALS for the first `mals_sweeps` sweeps, ALS afterwards.
    MalsThenAls { mals_sweeps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Galerkin,
    NormalEquations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LocalSolver {
    Direct,
    Iterative { max_iters: usize, tol: f64 },
    /// Direct up to `direct_max` unknowns, iterative beyond.
    Auto { direct_max: usize, max_iters: usize, tol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub sweeps: usize,
    pub mode: SolveMode,
    pub formulation: Formulation,
    pub local_solver: LocalSolver,
    pub mals_truncation: TruncationPolicy,
    pub residual_check_interval: usize,
    /// Stop once the relative residual drops below this value.
    pub tolerance: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            sweeps: 2,
            mode: SolveMode::Als,
            formulation: Formulation::Galerkin,
            local_solver: LocalSolver::Auto {
                direct_max: 768,
                max_iters: 200,
                tol: 1e-10,
            },
            mals_truncation: TruncationPolicy::relative(1e-10),
            residual_check_interval: 1,
            tolerance: 1e-12,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(QttError::Invalid("solver sweeps must be >= 1".into()));
        }
        match self.local_solver {
            LocalSolver::Iterative { max_iters, tol } | LocalSolver::Auto { max_iters, tol, .. } => {
                if max_iters == 0 || !(tol > 0.0) {
                    return Err(QttError::Invalid(
                        "iterative local solver needs max_iters >= 1 and tol > 0".into(),
                    ));
                }
            }
            LocalSolver::Direct => {}
        }
        if self.residual_check_interval == 0 {
            return Err(QttError::Invalid("residual_check_interval must be >= 1".into()));
        }
        self.mals_truncation.validate()
    }

    fn mals_in_sweep(&self, sweep: usize) -> bool {
        match self.mode {
            SolveMode::Als => false,
            SolveMode::Mals => true,
            SolveMode::MalsThenAls { mals_sweeps } => sweep < mals_sweeps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub relative_residual: f64,
    pub max_bond: usize,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub history: Vec<SweepRecord>,
    pub bond_profile: Vec<usize>,
    pub wall_time_s: f64,
    pub direct_solves: usize,
    pub iterative_solves: usize,
    pub iterative_unconverged: usize,
    pub regularized_solves: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str = "sweep,relative_residual,max_bond,elapsed_s";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.history {
            s.push_str(&format!(
                "{},{:.6e},{},{:.6}\n",
                r.sweep, r.relative_residual, r.max_bond, r.elapsed_s
            ));
        }
        s
    }

    pub fn merge(&mut self, other: &SolveReport) {
        self.direct_solves += other.direct_solves;
        self.iterative_solves += other.iterative_solves;
        self.iterative_unconverged += other.iterative_unconverged;
        self.regularized_solves += other.regularized_solves;
        self.wall_time_s += other.wall_time_s;
    }
}

/// Relative residual `||A x - b|| / ||b||`, or the absolute residual (flag
/// set) when `b = 0`.
pub fn residual(a: &QttOperator, x: &QttVector, b: &QttVector) -> Result<(f64, bool)> {
    let ax = a.apply(x)?;
    let r = ax.sub(b)?.round(TruncationPolicy::relative(1e-10))?;
    let rn = r.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return Ok((rn, true));
    }
    Ok((rn / bn, false))
}

/// Left environment update: `L'[b', R', k'] = sum L[b, R, k] Y[b, n, b'] W[R, n, m, R'] X[k, m, k']`.
fn env_left(l: &Array3<f64>, y: &Array3<f64>, w: &Array4<f64>, x: &Array3<f64>) -> Array3<f64> {
    let (rb, rw, rk) = l.dim();
    let (_, n, rb2) = y.dim();
    let (_, _, m, rw2) = w.dim();
    let rk2 = x.dim().2;
    let t1 = reshape(l, (rb * rw, rk)).dot(&reshape(x, (rk, m * rk2)));
    let t1 = reshape(&t1, (rb, rw, m, rk2)).permuted_axes([0, 3, 1, 2]);
    let t2 = reshape(&t1, (rb * rk2, rw * m)).dot(&reshape(&w.view().permuted_axes([0, 2, 1, 3]), (rw * m, n * rw2)));
    let t2 = reshape(&t2, (rb, rk2, n, rw2)).permuted_axes([0, 2, 3, 1]);
    let out = reshape(y, (rb * n, rb2)).t().dot(&reshape(&t2, (rb * n, rw2 * rk2)));
    reshape(&out, (rb2, rw2, rk2))
}

/// Right environment update: `R[b, R, k] = sum Y[b, n, b'] W[R, n, m, R'] X[k, m, k'] R'[b', R', k']`.
fn env_right(r: &Array3<f64>, y: &Array3<f64>, w: &Array4<f64>, x: &Array3<f64>) -> Array3<f64> {
    let (rb2, rw2, rk2) = r.dim();
    let (rb, n, _) = y.dim();
    let (rw, _, m, _) = w.dim();
    let rk = x.dim().0;
    let t1 = reshape(x, (rk * m, rk2)).dot(&reshape(&r.view().permuted_axes([2, 0, 1]), (rk2, rb2 * rw2)));
    let t1 = reshape(&t1, (rk, m, rb2, rw2)).permuted_axes([0, 2, 1, 3]);
    let t2 = reshape(&t1, (rk * rb2, m * rw2)).dot(&reshape(&w.view().permuted_axes([2, 3, 0, 1]), (m * rw2, rw * n)));
    let t2 = reshape(&t2, (rk, rb2, rw, n)).permuted_axes([3, 1, 2, 0]);
    let out = reshape(y, (rb, n * rb2)).dot(&reshape(&t2, (n * rb2, rw * rk)));
    reshape(&out, (rb, rw, rk))
}

/// Local matrix-vector product `y[a', n, b'] = sum L[a', R, a] W[R, n, m, R'] x[a, m, b] R[b', R', b]`.
fn local_apply(l: &Array3<f64>, w: &Array4<f64>, r: &Array3<f64>, x: &Array3<f64>) -> Array3<f64> {
    let op = LocalOp::new(l, w, r);
    let x = x.as_standard_layout();
    let y = op.apply(x.as_slice().expect("standard layout"));
    reshape(&y, (op.ra2, op.n, op.rb2))
}

/// The three factors of a local operator, laid out once for repeated products.
struct LocalOp {
    /// `(a' R, a)`
    l: Array2<f64>,
    /// `(n R', R m)`
    w: Array2<f64>,
    /// `(b', R' b)`
    r: Array2<f64>,
    ra2: usize,
    rw: usize,
    ra: usize,
    n: usize,
    m: usize,
    rw2: usize,
    rb2: usize,
    rb: usize,
}

impl LocalOp {
    fn new(l: &Array3<f64>, w: &Array4<f64>, r: &Array3<f64>) -> Self {
        let (ra2, rw, ra) = l.dim();
        let (_, n, m, rw2) = w.dim();
        let (rb2, _, rb) = r.dim();
        LocalOp {
            l: reshape(l, (ra2 * rw, ra)),
            w: reshape(&w.view().permuted_axes([1, 3, 0, 2]), (n * rw2, rw * m)),
            r: reshape(r, (rb2, rw2 * rb)),
            ra2,
            rw,
            ra,
            n,
            m,
            rw2,
            rb2,
            rb,
        }
    }

    /// `x` is laid out as `(a, m, b)`, the result as `(a', n, b')`.
    fn apply(&self, x: &[f64]) -> Array1<f64> {
        let xv = ArrayView2::from_shape((self.ra, self.m * self.rb), x).expect("local vector size");
        // (a', R, m, b): every a' owns a contiguous (R m, b) block
        let t1 = self.l.dot(&xv);
        let t1 = t1.as_slice().expect("fresh product is contiguous");
        let block_in = self.rw * self.m * self.rb;
        let rows_out = self.n * self.rw2;
        let mut t2 = Array2::<f64>::zeros((self.ra2 * rows_out, self.rb));
        for a in 0..self.ra2 {
            let blk = ArrayView2::from_shape((self.rw * self.m, self.rb), &t1[a * block_in..(a + 1) * block_in]).expect("block");
            let mut out = t2.slice_mut(ndarray::s![a * rows_out..(a + 1) * rows_out, ..]);
            general_mat_mul(1.0, &self.w, &blk, 0.0, &mut out);
        }
        // (a', n, R', b) -> (a' n, R' b)
        let t2 = ArrayView2::from_shape((self.ra2 * self.n, self.rw2 * self.rb), t2.as_slice().expect("contiguous")).expect("regroup");
        let out = t2.dot(&self.r.t());
        let len = out.len();
        out.into_shape_with_order(len).expect("contiguous")
    }
}

/// `(||A x||^2, <b, A x>)` by exact contraction, without forming `A x`.
fn residual_terms(a: &QttOperator, x: &QttVector, b: &QttVector) -> (f64, f64) {
    let mut cross = Array3::<f64>::ones((1, 1, 1));
    let mut gram = ndarray::Array4::<f64>::ones((1, 1, 1, 1));
    for ((w, xk), bk) in a.cores().iter().zip(x.cores()).zip(b.cores()) {
        cross = env_left(&cross, bk, w, xk);
        gram = gram_step(&gram, w, xk);
    }
    (gram.iter().sum(), cross.iter().sum())
}

/// `E'[r1', R1', R2', r2'] = sum E[r1, R1, R2, r2] X[r1, m1, r1'] W[R1, n, m1, R1'] W[R2, n, m2, R2'] X[r2, m2, r2']`.
fn gram_step(e: &Array4<f64>, w: &Array4<f64>, x: &Array3<f64>) -> Array4<f64> {
    let (r1, q1, q2, r2) = e.dim();
    let (_, n, m, qq) = w.dim();
    let rr = x.dim().2;
    // (R1 R2 r2, m1 r1')
    let t1 = reshape(&e.view().permuted_axes([1, 2, 3, 0]), (q1 * q2 * r2, r1)).dot(&reshape(x, (r1, m * rr)));
    // (R2 r2 r1', R1 m1) x (R1 m1, n R1')
    let t1 = reshape(&t1, ndarray::IxDyn(&[q1, q2, r2, m, rr])).permuted_axes(ndarray::IxDyn(&[1, 2, 4, 0, 3]));
    let wv = reshape(&w.view().permuted_axes([0, 2, 1, 3]), (q1 * m, n * qq));
    let t2 = reshape(&t1, (q2 * r2 * rr, q1 * m)).dot(&wv);
    // (r2 r1' R1', R2 n) x (R2 n, m2 R2')
    let t2 = reshape(&t2, ndarray::IxDyn(&[q2, r2, rr, n, qq])).permuted_axes(ndarray::IxDyn(&[1, 2, 4, 0, 3]));
    let t3 = reshape(&t2, (r2 * rr * qq, q2 * n)).dot(&reshape(w, (q2 * n, m * qq)));
    // (r1' R1' R2', r2 m2) x (r2 m2, r2')
    let t3 = reshape(&t3, ndarray::IxDyn(&[r2, rr, qq, m, qq])).permuted_axes(ndarray::IxDyn(&[1, 2, 4, 0, 3]));
    let out = reshape(&t3, (rr * qq * qq, r2 * m)).dot(&reshape(x, (r2 * m, rr)));
    reshape(&out, (rr, qq, qq, rr))
}

/// Dense local matrix with row index `(a', n, b')` and column index `(a, m, b)`.
fn local_matrix(l: &Array3<f64>, w: &Array4<f64>, r: &Array3<f64>) -> Array2<f64> {
    let (ra2, rw, ra) = l.dim();
    let (_, n, m, rw2) = w.dim();
    let (rb2, _, rb) = r.dim();
    let t = reshape(&l.view().permuted_axes([0, 2, 1]), (ra2 * ra, rw)).dot(&reshape(w, (rw, n * m * rw2)));
    let g = reshape(&t, (ra2 * ra * n * m, rw2)).dot(&reshape(&r.view().permuted_axes([1, 0, 2]), (rw2, rb2 * rb)));
    let g = reshape(&g, ndarray::IxDyn(&[ra2, ra, n, m, rb2, rb])).permuted_axes(ndarray::IxDyn(&[0, 2, 4, 1, 3, 5]));
    reshape(&g, (ra2 * n * rb2, ra * m * rb))
}

struct LocalStats {
    direct: usize,
    iterative: usize,
    unconverged: usize,
    regularized: usize,
}

fn dot(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b)
}

fn cg<F: Fn(&Array1<f64>) -> Array1<f64>>(apply: F, rhs: &Array1<f64>, x0: Array1<f64>, max_iters: usize, tol: f64) -> (Array1<f64>, bool) {
    let bn = rhs.dot(rhs).sqrt();
    if bn == 0.0 {
        return (Array1::zeros(rhs.len()), true);
    }
    let mut x = x0;
    let mut r = rhs - &apply(&x);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..max_iters {
        if rr.sqrt() <= tol * bn {
            return (x, true);
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rr_new = dot(&r, &r);
        p = &r + &(&p * (rr_new / rr));
        rr = rr_new;
    }
    let ok = rr.sqrt() <= tol * bn;
    (x, ok)
}

/// Right-Jacobi preconditioner: for every right rank index `b` the block of the local
/// operator that couples `(a, m, b)` to `(a', n, b)` is inverted exactly.
struct BlockJacobi {
    inverses: Vec<Array2<f64>>,
    block: usize,
}

impl BlockJacobi {
    fn new(l: &Array3<f64>, w: &Array4<f64>, r: &Array3<f64>) -> Option<Self> {
        let (ra2, rw, ra) = l.dim();
        let (_, n, m, rw2) = w.dim();
        let rb = r.dim().0;
        if ra2 != ra || n != m {
            return None;
        }
        let block = ra * n;
        let t = reshape(&l.view().permuted_axes([0, 2, 1]), (ra * ra, rw)).dot(&reshape(w, (rw, n * m * rw2)));
        let t = reshape(&t, (ra * ra * n * m, rw2));
        let mut inverses = Vec::with_capacity(rb);
        let eye = Array2::<f64>::eye(block);
        for b in 0..rb {
            let d = r.slice(ndarray::s![b, .., b]).to_owned();
            let g = reshape(&t.dot(&d), ndarray::IxDyn(&[ra, ra, n, m])).permuted_axes(ndarray::IxDyn(&[0, 2, 1, 3]));
            let g = reshape(&g, (block, block));
            inverses.push(solve_dense_multi(&g, &eye).ok()?);
        }
        Some(BlockJacobi { inverses, block })
    }

    fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        let rb = self.inverses.len();
        let x = reshape(v, (self.block, rb));
        let mut out = Array2::<f64>::zeros((self.block, rb));
        for (b, inv) in self.inverses.iter().enumerate() {
            out.column_mut(b).assign(&inv.dot(&x.column(b)));
        }
        reshape(&out, self.block * rb)
    }
}

const GMRES_RESTART: usize = 40;

/// Restarted, right-preconditioned GMRES. `max_iters` counts inner iterations over all cycles.
fn gmres<F, P>(apply: F, precond: P, rhs: &Array1<f64>, x0: Array1<f64>, max_iters: usize, tol: f64) -> (Array1<f64>, bool)
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
    P: Fn(&Array1<f64>) -> Array1<f64>,
{
    let bn = rhs.dot(rhs).sqrt();
    if bn == 0.0 {
        return (Array1::zeros(rhs.len()), true);
    }
    let mut x = x0;
    let mut budget = max_iters;
    loop {
        let r0 = rhs - &apply(&x);
        let beta = r0.dot(&r0).sqrt();
        if beta <= tol * bn {
            return (x, true);
        }
        if budget == 0 {
            return (x, false);
        }
        let k = budget.min(GMRES_RESTART).min(rhs.len());
        budget -= k;
        let mut v: Vec<Array1<f64>> = vec![&r0 / beta];
        let mut h = Array2::<f64>::zeros((k + 1, k));
        let mut cs = vec![0.0; k];
        let mut sn = vec![0.0; k];
        let mut g = vec![0.0; k + 1];
        g[0] = beta;
        let mut used = 0;
        let mut done = false;
        for j in 0..k {
            let mut w = apply(&precond(&v[j]));
            for _ in 0..2 {
                for i in 0..=j {
                    let c = w.dot(&v[i]);
                    h[[i, j]] += c;
                    w.scaled_add(-c, &v[i]);
                }
            }
            let wn = w.dot(&w).sqrt();
            h[[j + 1, j]] = wn;
            for i in 0..j {
                let t = cs[i] * h[[i, j]] + sn[i] * h[[i + 1, j]];
                h[[i + 1, j]] = -sn[i] * h[[i, j]] + cs[i] * h[[i + 1, j]];
                h[[i, j]] = t;
            }
            let denom = (h[[j, j]] * h[[j, j]] + h[[j + 1, j]] * h[[j + 1, j]]).sqrt();
            if denom == 0.0 {
                done = true;
                break;
            }
            cs[j] = h[[j, j]] / denom;
            sn[j] = h[[j + 1, j]] / denom;
            h[[j, j]] = denom;
            h[[j + 1, j]] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= tol * bn || wn == 0.0 {
                done = true;
                break;
            }
            v.push(&w / wn);
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for p in i + 1..used {
                s -= h[[i, p]] * y[p];
            }
            y[i] = s / h[[i, i]];
        }
        let mut z = Array1::<f64>::zeros(rhs.len());
        for (i, yi) in y.iter().enumerate() {
            z.scaled_add(*yi, &v[i]);
        }
        x = x + precond(&z);
        if done {
            let r = rhs - &apply(&x);
            return (x, r.dot(&r).sqrt() <= tol * bn * 10.0);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn local_solve(
    l: &Array3<f64>,
    w: &Array4<f64>,
    r: &Array3<f64>,
    rhs: &Array3<f64>,
    guess: &Array3<f64>,
    cfg: &SolveConfig,
    spd: bool,
    stats: &mut LocalStats,
) -> Result<Array3<f64>> {
    let shape = rhs.dim();
    let size = shape.0 * shape.1 * shape.2;
    let f = reshape(rhs, size);
    let (direct, max_iters, tol) = match cfg.local_solver {
        LocalSolver::Direct => (true, 0, 0.0),
        LocalSolver::Iterative { max_iters, tol } => (false, max_iters, tol),
        LocalSolver::Auto { direct_max, max_iters, tol } => (size <= direct_max, max_iters, tol),
    };
    if direct {
        stats.direct += 1;
        let g = local_matrix(l, w, r);
        let y = match solve_dense(&g, &f) {
            Ok(y) => y,
            Err(_) => {
                stats.regularized += 1;
                let scale = g.diag().iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
                let mut gr = g.clone();
                for i in 0..size {
                    gr[[i, i]] += 1e-12 * scale;
                }
                solve_dense(&gr, &f)?
            }
        };
        return Ok(reshape(&y, shape));
    }
    stats.iterative += 1;
    let op = LocalOp::new(l, w, r);
    let apply = |v: &Array1<f64>| op.apply(v.as_slice().expect("contiguous"));
    let x0 = reshape(guess, size);
    let (y, ok) = if spd {
        cg(apply, &f, x0, max_iters, tol)
    } else {
        match BlockJacobi::new(l, w, r) {
            Some(p) => gmres(apply, |v| p.apply(v), &f, x0, max_iters, tol),
            None => gmres(apply, |v| v.clone(), &f, x0, max_iters, tol),
        }
    };
    if !ok {
        stats.unconverged += 1;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(QttError::NonFinite("local iterative solve"));
    }
    Ok(reshape(&y, shape))
}

fn merge_vec_cores(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (ra, n1, r) = a.dim();
    let (_, n2, rb) = b.dim();
    let p = reshape(a, (ra * n1, r)).dot(&reshape(b, (r, n2 * rb)));
    reshape(&p, (ra, n1 * n2, rb))
}

/// Solve `A x = b` by alternating optimization, starting from `x0` (or `b`).
pub fn solve(a: &QttOperator, b: &QttVector, x0: Option<&QttVector>, cfg: &SolveConfig) -> Result<(QttVector, SolveReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let modes = b.mode_sizes();
    if a.row_modes() != modes || a.col_modes() != modes {
        return Err(QttError::Shape("operator must be square on the right-hand side's index set".into()));
    }
    if let Some(x) = x0 {
        if x.mode_sizes() != modes {
            return Err(QttError::Shape("initial guess modes differ".into()));
        }
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        let report = SolveReport {
            bond_profile: vec![1; modes.len() + 1],
            converged: true,
            ..Default::default()
        };
        return Ok((QttVector::zeros(&modes), report));
    }
    let (op, rhs_op, spd) = match cfg.formulation {
        Formulation::Galerkin => (a.clone(), QttOperator::identity(&modes), false),
        Formulation::NormalEquations => {
            let ata = a.transpose().compose(a)?.round(TruncationPolicy::relative(1e-13))?;
            (ata, a.transpose(), true)
        }
    };
    let mut solver = Sweeper::new(&op, &rhs_op, b, x0.unwrap_or(b), spd)?;
    let mut report = SolveReport::default();
    let mut best: Option<(f64, QttVector)> = None;
    let mut stats = LocalStats {
        direct: 0,
        iterative: 0,
        unconverged: 0,
        regularized: 0,
    };
    for sweep in 0..cfg.sweeps {
        let energy = if cfg.mals_in_sweep(sweep) {
            solver.mals_sweep(cfg, &mut stats)?
        } else {
            solver.als_sweep(cfg, &mut stats)?
        };
        let last = sweep + 1 == cfg.sweeps;
        if (sweep + 1) % cfg.residual_check_interval == 0 || last {
            let x = solver.current()?;
            let mut rel = match (cfg.formulation, energy) {
                (Formulation::NormalEquations, Some(e)) => (b_norm * b_norm + e).max(0.0).sqrt() / b_norm,
                _ => {
                    let (axx, bax) = residual_terms(a, &x, b);
                    (axx - 2.0 * bax + b_norm * b_norm).max(0.0).sqrt() / b_norm
                }
            };
            // the expanded form loses digits to cancellation once the residual is small
            if !(rel > 1e-6) {
                rel = residual(a, &x, b)?.0;
            }
            report.history.push(SweepRecord {
                sweep: sweep + 1,
                relative_residual: rel,
                max_bond: x.max_bond(),
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            let better = best.as_ref().map(|(r, _)| rel < *r).unwrap_or(true);
            if better {
                best = Some((rel, x));
            }
            if rel <= cfg.tolerance {
                break;
            }
        }
    }
    let (final_residual, x) = best.expect("at least one residual check");
    report.bond_profile = x.bond_dims();
    report.wall_time_s = elapsed(start);
    report.direct_solves = stats.direct;
    report.iterative_solves = stats.iterative;
    report.iterative_unconverged = stats.unconverged;
    report.regularized_solves = stats.regularized;
    report.final_residual = final_residual;
    report.converged = final_residual <= cfg.tolerance;
    Ok((x, report))
}

fn elapsed(t: Instant) -> f64 {
    Duration::as_secs_f64(&t.elapsed())
}

pub fn als_solve(a: &QttOperator, b: &QttVector, x0: &QttVector, cfg: &SolveConfig) -> Result<(QttVector, SolveReport)> {
    let cfg = SolveConfig { mode: SolveMode::Als, ..*cfg };
    solve(a, b, Some(x0), &cfg)
}

pub fn mals_solve(a: &QttOperator, b: &QttVector, x0: &QttVector, cfg: &SolveConfig) -> Result<(QttVector, SolveReport)> {
    let cfg = SolveConfig {
        mode: match cfg.mode {
            SolveMode::Als => SolveMode::Mals,
            m => m,
        },
        ..*cfg
    };
    solve(a, b, Some(x0), &cfg)
}

struct Sweeper<'a> {
    op: &'a QttOperator,
    rhs_op: &'a QttOperator,
    b: &'a QttVector,
    cores: Vec<Array3<f64>>,
    lenv: Vec<Array3<f64>>,
    renv: Vec<Array3<f64>>,
    lrhs: Vec<Array3<f64>>,
    rrhs: Vec<Array3<f64>>,
    spd: bool,
}

impl<'a> Sweeper<'a> {
    fn new(op: &'a QttOperator, rhs_op: &'a QttOperator, b: &'a QttVector, x0: &QttVector, spd: bool) -> Result<Self> {
        let n = x0.num_cores();
        let mut cores = x0.cores().to_vec();
        crate::tt::vector::right_orthogonalize(&mut cores)?;
        let one = Array3::<f64>::ones((1, 1, 1));
        let mut s = Sweeper {
            op,
            rhs_op,
            b,
            cores,
            lenv: vec![one.clone(); n + 1],
            renv: vec![one.clone(); n + 1],
            lrhs: vec![one.clone(); n + 1],
            rrhs: vec![one; n + 1],
            spd,
        };
        for k in (1..n).rev() {
            s.update_right(k);
        }
        Ok(s)
    }

    fn n(&self) -> usize {
        self.cores.len()
    }

    fn update_left(&mut self, k: usize) {
        self.lenv[k + 1] = env_left(&self.lenv[k], &self.cores[k], &self.op.cores()[k], &self.cores[k]);
        self.lrhs[k + 1] = env_left(&self.lrhs[k], &self.cores[k], &self.rhs_op.cores()[k], &self.b.cores()[k]);
    }

    fn update_right(&mut self, k: usize) {
        self.renv[k] = env_right(&self.renv[k + 1], &self.cores[k], &self.op.cores()[k], &self.cores[k]);
        self.rrhs[k] = env_right(&self.rrhs[k + 1], &self.cores[k], &self.rhs_op.cores()[k], &self.b.cores()[k]);
    }

    fn current(&self) -> Result<QttVector> {
        QttVector::from_cores(self.cores.clone())
    }

    /// Local solve at site `k`; returns the new core and the local energy
    /// `y^T G y - 2 y^T f`.
    fn solve_site(&self, k: usize, cfg: &SolveConfig, stats: &mut LocalStats) -> Result<(Array3<f64>, f64)> {
        let w = &self.op.cores()[k];
        let f = local_apply(&self.lrhs[k], &self.rhs_op.cores()[k], &self.rrhs[k + 1], &self.b.cores()[k]);
        let y = local_solve(&self.lenv[k], w, &self.renv[k + 1], &f, &self.cores[k], cfg, self.spd, stats)?;
        let gy = local_apply(&self.lenv[k], w, &self.renv[k + 1], &y);
        let energy = (&y * &gy).sum() - 2.0 * (&y * &f).sum();
        Ok((y, energy))
    }

    fn als_sweep(&mut self, cfg: &SolveConfig, stats: &mut LocalStats) -> Result<Option<f64>> {
        let n = self.n();
        let mut energy = None;
        for k in 0..n {
            let (y, e) = self.solve_site(k, cfg, stats)?;
            energy = Some(e);
            if k + 1 < n {
                let (r, m, rr) = y.dim();
                let (q, rm) = thin_qr(&reshape(&y, (r * m, rr)))?;
                let kk = q.ncols();
                self.cores[k] = reshape(&q, (r, m, kk));
                let (_, m2, r2) = self.cores[k + 1].dim();
                let next = rm.dot(&reshape(&self.cores[k + 1], (rr, m2 * r2)));
                self.cores[k + 1] = reshape(&next, (kk, m2, r2));
                self.update_left(k);
            } else {
                self.cores[k] = y;
            }
        }
        for k in (0..n).rev() {
            let (y, e) = self.solve_site(k, cfg, stats)?;
            energy = Some(e);
            if k > 0 {
                let (r, m, rr) = y.dim();
                let (q, rm) = thin_qr(&reshape(&y, (r, m * rr)).t().to_owned())?;
                let kk = q.ncols();
                self.cores[k] = reshape(&q.t(), (kk, m, rr));
                let (a, m0, _) = self.cores[k - 1].dim();
                let prev = reshape(&self.cores[k - 1], (a * m0, r)).dot(&rm.t());
                self.cores[k - 1] = reshape(&prev, (a, m0, kk));
                self.update_right(k);
            } else {
                self.cores[k] = y;
            }
        }
        Ok(energy)
    }

    fn solve_pair(&self, k: usize, cfg: &SolveConfig, stats: &mut LocalStats) -> Result<(Array3<f64>, f64)> {
        let w = merge_cores(&self.op.cores()[k], &self.op.cores()[k + 1]);
        let wb = merge_cores(&self.rhs_op.cores()[k], &self.rhs_op.cores()[k + 1]);
        let bb = merge_vec_cores(&self.b.cores()[k], &self.b.cores()[k + 1]);
        let guess = merge_vec_cores(&self.cores[k], &self.cores[k + 1]);
        let f = local_apply(&self.lrhs[k], &wb, &self.rrhs[k + 2], &bb);
        let y = local_solve(&self.lenv[k], &w, &self.renv[k + 2], &f, &guess, cfg, self.spd, stats)?;
        let gy = local_apply(&self.lenv[k], &w, &self.renv[k + 2], &y);
        let energy = (&y * &gy).sum() - 2.0 * (&y * &f).sum();
        Ok((y, energy))
    }

    fn split_pair(&self, k: usize, y: &Array3<f64>, cfg: &SolveConfig, left_orth: bool) -> Result<(Array3<f64>, Array3<f64>)> {
        let (ra, _, rb) = y.dim();
        let n1 = self.cores[k].dim().1;
        let n2 = self.cores[k + 1].dim().1;
        let m = reshape(y, (ra * n1, n2 * rb));
        let (u, s, vt) = thin_svd(&m)?;
        let nrm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rank = truncation_rank(&s, cfg.mals_truncation.rel_tol * nrm, cfg.mals_truncation.max_rank);
        if left_orth {
            let (u, svt) = split(&u, &s, &vt, rank);
            Ok((reshape(&u, (ra, n1, rank)), reshape(&svt, (rank, n2, rb))))
        } else {
            let mut us = u.slice(ndarray::s![.., ..rank]).to_owned();
            for (mut col, sv) in us.columns_mut().into_iter().zip(s.iter()) {
                col *= *sv;
            }
            let v = vt.slice(ndarray::s![..rank, ..]).to_owned();
            Ok((reshape(&us, (ra, n1, rank)), reshape(&v, (rank, n2, rb))))
        }
    }

    fn mals_sweep(&mut self, cfg: &SolveConfig, stats: &mut LocalStats) -> Result<Option<f64>> {
        let n = self.n();
        if n < 2 {
            return self.als_sweep(cfg, stats);
        }
        let mut energy = None;
        for k in 0..n - 1 {
            let (y, e) = self.solve_pair(k, cfg, stats)?;
            energy = Some(e);
            let (left, right) = self.split_pair(k, &y, cfg, true)?;
            self.cores[k] = left;
            self.cores[k + 1] = right;
            if k + 2 < n {
                self.update_left(k);
            }
        }
        for k in (0..n - 1).rev() {
            let (y, e) = self.solve_pair(k, cfg, stats)?;
            energy = Some(e);
            let (left, right) = self.split_pair(k, &y, cfg, false)?;
            self.cores[k] = left;
            self.cores[k + 1] = right;
            self.update_right(k + 1);
        }
        Ok(energy)
    }
}
