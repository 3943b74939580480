//! Black-box TT approximation by alternating maxvol cross interpolation.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QttError, Result};
use crate::tt::linalg::{reshape, solve_dense_multi, thin_qr};
use crate::tt::{QttVector, TruncationPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossConfig {
    pub max_rank: usize,
    pub sweeps: usize,
    /// Maxvol stops once no entry of the interpolation matrix exceeds `1 + pivot_tolerance`.
    pub pivot_tolerance: f64,
    pub validation_sample_count: usize,
    pub seed: u64,
    /// Applied after the cross to recompress the result.
    pub truncation: TruncationPolicy,
}

impl Default for CrossConfig {
    fn default() -> Self {
        CrossConfig {
            max_rank: 80,
            sweeps: 4,
            pivot_tolerance: 0.05,
            validation_sample_count: 4096,
            seed: 0,
            truncation: TruncationPolicy::relative(1e-10).with_cap(40),
        }
    }
}

impl CrossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rank == 0 {
            return Err(QttError::Invalid("cross max_rank must be >= 1".into()));
        }
        if self.sweeps == 0 {
            return Err(QttError::Invalid("cross sweeps must be >= 1".into()));
        }
        if !(self.pivot_tolerance >= 0.0) || !self.pivot_tolerance.is_finite() {
            return Err(QttError::Invalid("pivot_tolerance must be finite and >= 0".into()));
        }
        self.truncation.validate()
    }
}

/// Function of a multi-index. `eval_fiber` may be overridden with a batched
/// implementation; the default calls `eval` entry by entry.
pub trait Evaluator: Sync {
    fn eval(&self, digits: &[usize]) -> f64;

    /// Values on `left × {0..n} × right` at core `k`, as a matrix with row
    /// index `a * n + i` and column index `b`.
    fn eval_fiber(&self, left: &[Vec<usize>], k: usize, n: usize, right: &[Vec<usize>]) -> Array2<f64> {
        let mut out = Array2::zeros((left.len() * n, right.len()));
        let mut idx = Vec::new();
        for (a, l) in left.iter().enumerate() {
            debug_assert_eq!(l.len(), k);
            for i in 0..n {
                for (b, r) in right.iter().enumerate() {
                    idx.clear();
                    idx.extend_from_slice(l);
                    idx.push(i);
                    idx.extend_from_slice(r);
                    out[[a * n + i, b]] = self.eval(&idx);
                }
            }
        }
        out
    }
}

/// Adapter turning a closure into an [`Evaluator`].
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&[usize]) -> f64 + Sync> Evaluator for FnEvaluator<F> {
    fn eval(&self, digits: &[usize]) -> f64 {
        (self.0)(digits)
    }
}

/// Pointwise function of several QTT inputs sharing one index space.
/// Fibers are evaluated through partial contractions instead of entry by entry.
pub struct PointwiseMap<'a, F> {
    inputs: Vec<&'a QttVector>,
    f: F,
}

impl<'a, F: Fn(&[f64]) -> f64 + Sync> PointwiseMap<'a, F> {
    pub fn new(inputs: Vec<&'a QttVector>, f: F) -> Result<Self> {
        let first = inputs
            .first()
            .ok_or_else(|| QttError::Invalid("pointwise map needs at least one input".into()))?;
        let modes = first.mode_sizes();
        if inputs.iter().any(|x| x.mode_sizes() != modes) {
            return Err(QttError::Shape("pointwise map inputs differ in modes".into()));
        }
        Ok(PointwiseMap { inputs, f })
    }

    pub fn modes(&self) -> Vec<usize> {
        self.inputs[0].mode_sizes()
    }
}

fn left_partial(x: &QttVector, prefix: &[usize]) -> Array1<f64> {
    let mut v = Array1::<f64>::ones(1);
    for (c, &d) in x.cores().iter().zip(prefix) {
        v = v.dot(&c.index_axis(Axis(1), d));
    }
    v
}

fn right_partial(x: &QttVector, start: usize, suffix: &[usize]) -> Array1<f64> {
    let mut v = Array1::<f64>::ones(1);
    for (c, &d) in x.cores()[start..].iter().zip(suffix).rev() {
        v = c.index_axis(Axis(1), d).dot(&v);
    }
    v
}

impl<'a, F: Fn(&[f64]) -> f64 + Sync> Evaluator for PointwiseMap<'a, F> {
    fn eval(&self, digits: &[usize]) -> f64 {
        let vals: Vec<f64> = self
            .inputs
            .iter()
            .map(|x| x.eval_at(digits).unwrap_or(f64::NAN))
            .collect();
        (self.f)(&vals)
    }

    fn eval_fiber(&self, left: &[Vec<usize>], k: usize, n: usize, right: &[Vec<usize>]) -> Array2<f64> {
        let rows = left.len() * n;
        let mut per_input: Vec<Array2<f64>> = Vec::with_capacity(self.inputs.len());
        for x in &self.inputs {
            let core = &x.cores()[k];
            let (r, _, rr) = core.dim();
            let mut lm = Array2::<f64>::zeros((left.len(), r));
            for (a, l) in left.iter().enumerate() {
                lm.row_mut(a).assign(&left_partial(x, l));
            }
            let mut rm = Array2::<f64>::zeros((rr, right.len()));
            for (b, s) in right.iter().enumerate() {
                rm.column_mut(b).assign(&right_partial(x, k + 1, s));
            }
            let mut vals = Array2::<f64>::zeros((rows, right.len()));
            for i in 0..n {
                let block = lm.dot(&core.index_axis(Axis(1), i)).dot(&rm);
                for a in 0..left.len() {
                    vals.row_mut(a * n + i).assign(&block.row(a));
                }
            }
            per_input.push(vals);
        }
        let mut buf = vec![0.0; self.inputs.len()];
        Array2::from_shape_fn((rows, right.len()), |(p, b)| {
            for (q, v) in per_input.iter().enumerate() {
                buf[q] = v[[p, b]];
            }
            (self.f)(&buf)
        })
    }
}

#[derive(Clone, Debug)]
pub struct CrossOutput {
    pub tensor: QttVector,
    pub validation_mse: f64,
    pub evaluations: usize,
    pub sweeps: usize,
    /// Set when a pivot submatrix was numerically singular and had to be regularized.
    pub regularized: bool,
}

/// Greedy maxvol row selection on a tall matrix. Returns the pivot rows and
/// the interpolation matrix `B = A A[p]^{-1}`, so that `B[p] = I`.
pub fn maxvol(a: &Array2<f64>, tolerance: f64, max_iters: usize) -> Result<(Vec<usize>, Array2<f64>, bool)> {
    let (m, r) = a.dim();
    if r == 0 || m < r {
        return Err(QttError::Shape(format!("maxvol needs a tall matrix, got {}x{}", m, r)));
    }
    let mut work = a.clone();
    let mut used = vec![false; m];
    let mut piv = Vec::with_capacity(r);
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut regularized = false;
    for j in 0..r {
        let mut best = usize::MAX;
        let mut best_val = -1.0;
        for i in 0..m {
            if !used[i] && work[[i, j]].abs() > best_val {
                best_val = work[[i, j]].abs();
                best = i;
            }
        }
        used[best] = true;
        piv.push(best);
        if best_val <= 1e-14 * scale {
            regularized = true;
            continue;
        }
        let pivot_row = work.row(best).to_owned();
        let pv = pivot_row[j];
        for i in 0..m {
            if used[i] {
                continue;
            }
            let f = work[[i, j]] / pv;
            if f != 0.0 {
                for jj in j..r {
                    work[[i, jj]] -= f * pivot_row[jj];
                }
            }
        }
    }
    let mut sub = a.select(Axis(0), &piv);
    if regularized {
        let lambda = 1e-12 * scale;
        for j in 0..r {
            sub[[j, j]] += lambda;
        }
    }
    // B = A sub^{-1}  <=>  sub^T B^T = A^T
    let sub_t = sub.t().to_owned();
    let at = a.t().to_owned();
    let bt = match solve_dense_multi(&sub_t, &at) {
        Ok(bt) => bt,
        Err(_) => {
            regularized = true;
            let mut reg = sub_t.clone();
            for j in 0..r {
                reg[[j, j]] += 1e-10 * scale;
            }
            solve_dense_multi(&reg, &at)?
        }
    };
    let mut b = bt.t().to_owned();
    for _ in 0..max_iters {
        let mut best = (0, 0);
        let mut best_val = 0.0;
        for ((i, j), v) in b.indexed_iter() {
            if v.abs() > best_val {
                best_val = v.abs();
                best = (i, j);
            }
        }
        if best_val <= 1.0 + tolerance {
            break;
        }
        let (i, j) = best;
        let bij = b[[i, j]];
        let col = b.column(j).to_owned();
        let mut row = b.row(i).to_owned();
        row[j] -= 1.0;
        for p in 0..m {
            let f = col[p] / bij;
            if f != 0.0 {
                for q in 0..r {
                    b[[p, q]] -= f * row[q];
                }
            }
        }
        piv[j] = i;
    }
    for (j, &p) in piv.iter().enumerate() {
        for q in 0..r {
            b[[p, q]] = if q == j { 1.0 } else { 0.0 };
        }
    }
    Ok((piv, b, regularized))
}

fn check_finite(m: &Array2<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(QttError::NonFinite("cross evaluator output"));
    }
    Ok(())
}

fn bond_caps(modes: &[usize], chi: usize) -> Vec<usize> {
    let n = modes.len();
    let mut caps = vec![1; n + 1];
    for k in 1..n {
        let left = modes[..k].iter().try_fold(1usize, |a, &m| a.checked_mul(m)).unwrap_or(usize::MAX);
        let right = modes[k..].iter().try_fold(1usize, |a, &m| a.checked_mul(m)).unwrap_or(usize::MAX);
        caps[k] = chi.min(left).min(right);
    }
    caps
}

fn random_right_sets(modes: &[usize], caps: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<usize>>> {
    let n = modes.len();
    let mut sets = vec![Vec::new(); n + 1];
    sets[n] = vec![Vec::new()];
    for k in 1..n {
        let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(caps[k]);
        let mut tries = 0;
        while chosen.len() < caps[k] {
            let cand: Vec<usize> = modes[k..].iter().map(|&m| rng.gen_range(0..m)).collect();
            tries += 1;
            if !chosen.contains(&cand) || tries > 50 * caps[k] {
                chosen.push(cand);
            }
        }
        sets[k] = chosen;
    }
    sets
}

/// Right index sets read off a right-orthogonalized QTT by maxvol, padded
/// with random indices up to the bond caps.
fn right_sets_from(
    x: &QttVector,
    caps: &[usize],
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Vec<usize>>>> {
    let modes = x.mode_sizes();
    let n = x.num_cores();
    let mut cores: Vec<Array3<f64>> = x.cores().to_vec();
    crate::tt::vector::right_orthogonalize(&mut cores)?;
    let mut sets = vec![Vec::new(); n + 1];
    sets[n] = vec![Vec::new()];
    for k in (1..n).rev() {
        let (r, m, _) = cores[k].dim();
        let jn = sets[k + 1].len();
        let mut fiber = Array2::<f64>::zeros((m * jn, r));
        let prev: &Vec<Vec<usize>> = &sets[k + 1];
        // Row (i, b) of the core restricted to the chosen right indices of the next bond.
        let right_vals = restrict_right(&cores, k + 1, prev);
        for i in 0..m {
            let g = cores[k].index_axis(Axis(1), i);
            let block = g.dot(&right_vals);
            for b in 0..jn {
                fiber.row_mut(i * jn + b).assign(&block.column(b));
            }
        }
        let want = caps[k].min(r).min(fiber.nrows());
        let (q, _) = thin_qr(&fiber)?;
        let q = q.slice(ndarray::s![.., ..want.min(q.ncols())]).to_owned();
        let (piv, _, _) = maxvol(&q, tol, 100)?;
        let mut set: Vec<Vec<usize>> = piv
            .iter()
            .map(|&row| {
                let mut idx = vec![row / jn];
                idx.extend_from_slice(&prev[row % jn]);
                idx
            })
            .collect();
        set.truncate(caps[k]);
        let mut tries = 0;
        while set.len() < caps[k] && tries < 50 * caps[k] {
            tries += 1;
            let cand: Vec<usize> = modes[k..].iter().map(|&m| rng.gen_range(0..m)).collect();
            if !set.contains(&cand) {
                set.push(cand);
            }
        }
        sets[k] = set;
    }
    Ok(sets)
}

fn restrict_right(cores: &[Array3<f64>], start: usize, set: &[Vec<usize>]) -> Array2<f64> {
    if start >= cores.len() {
        return Array2::ones((1, 1));
    }
    let r = cores[start].dim().0;
    let mut out = Array2::<f64>::zeros((r, set.len()));
    for (b, s) in set.iter().enumerate() {
        let mut v = Array1::<f64>::ones(1);
        for (c, &d) in cores[start..].iter().zip(s).rev() {
            v = c.index_axis(Axis(1), d).dot(&v);
        }
        out.column_mut(b).assign(&v);
    }
    out
}

/// Seeded validation indices.
pub fn validation_indices(modes: &[usize], count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ca11);
    (0..count)
        .map(|_| modes.iter().map(|&m| rng.gen_range(0..m)).collect())
        .collect()
}

/// Empirical mean squared error of `x` against `f` on a seeded sample.
pub fn validation_mse<E: Evaluator + ?Sized>(f: &E, x: &QttVector, count: usize, seed: u64) -> Result<f64> {
    if count == 0 {
        return Ok(0.0);
    }
    let idx = validation_indices(&x.mode_sizes(), count, seed);
    let mut acc = 0.0;
    for i in &idx {
        let want = f.eval(i);
        if !want.is_finite() {
            return Err(QttError::NonFinite("cross evaluator output"));
        }
        let got = x.eval_at(i)?;
        acc += (got - want) * (got - want);
    }
    Ok(acc / idx.len() as f64)
}

/// TT-cross approximation of `f` over a tensor with the given mode sizes.
pub fn tt_cross<E: Evaluator + ?Sized>(
    f: &E,
    modes: &[usize],
    cfg: &CrossConfig,
    warm_start: Option<&QttVector>,
) -> Result<CrossOutput> {
    cfg.validate()?;
    if modes.is_empty() || modes.contains(&0) {
        return Err(QttError::Shape("cross needs positive mode sizes".into()));
    }
    let n = modes.len();
    let caps = bond_caps(modes, cfg.max_rank);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut right = match warm_start {
        Some(x) if x.mode_sizes() == modes => right_sets_from(x, &caps, cfg.pivot_tolerance, &mut rng)?,
        Some(_) => return Err(QttError::Shape("warm start modes differ".into())),
        None => random_right_sets(modes, &caps, &mut rng),
    };
    let mut left: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n + 1];
    left[0] = vec![Vec::new()];
    let mut cores: Vec<Array3<f64>> = vec![Array3::zeros((1, 1, 1)); n];
    let mut evaluations = 0usize;
    let mut regularized = false;
    let mut previous: Option<Vec<f64>> = None;
    let probes = validation_indices(modes, 64, cfg.seed.wrapping_add(17));
    let mut sweeps_done = 0;

    if n == 1 {
        let fib = f.eval_fiber(&left[0], 0, modes[0], &right[1]);
        check_finite(&fib)?;
        let tensor = QttVector::from_cores(vec![reshape(&fib, (1, modes[0], 1))])?;
        let mse = validation_mse(f, &tensor, cfg.validation_sample_count, cfg.seed)?;
        return Ok(CrossOutput {
            tensor,
            validation_mse: mse,
            evaluations: modes[0],
            sweeps: 1,
            regularized: false,
        });
    }

    for _ in 0..cfg.sweeps {
        sweeps_done += 1;
        for k in 0..n - 1 {
            let m = modes[k];
            let fib = f.eval_fiber(&left[k], k, m, &right[k + 1]);
            check_finite(&fib)?;
            evaluations += fib.len();
            let (q, _) = thin_qr(&fib)?;
            let (piv, b, reg) = maxvol(&q, cfg.pivot_tolerance, 100)?;
            regularized |= reg;
            let rank = q.ncols();
            cores[k] = reshape(&b, (left[k].len(), m, rank));
            left[k + 1] = piv
                .iter()
                .map(|&row| {
                    let mut idx = left[k][row / m].clone();
                    idx.push(row % m);
                    idx
                })
                .collect();
        }
        for k in (1..n).rev() {
            let m = modes[k];
            let fib = f.eval_fiber(&left[k], k, m, &right[k + 1]);
            check_finite(&fib)?;
            evaluations += fib.len();
            let rows = left[k].len();
            let jn = right[k + 1].len();
            let mat = reshape(&fib, (rows, m * jn)).t().to_owned();
            let (q, _) = thin_qr(&mat)?;
            let (piv, b, reg) = maxvol(&q, cfg.pivot_tolerance, 100)?;
            regularized |= reg;
            let rank = q.ncols();
            cores[k] = reshape(&b.t(), (rank, m, jn));
            right[k] = piv
                .iter()
                .map(|&col| {
                    let mut idx = vec![col / jn];
                    idx.extend_from_slice(&right[k + 1][col % jn]);
                    idx
                })
                .collect();
        }
        let fib = f.eval_fiber(&left[0], 0, modes[0], &right[1]);
        check_finite(&fib)?;
        evaluations += fib.len();
        cores[0] = reshape(&fib, (1, modes[0], right[1].len()));

        let current = QttVector::from_cores(cores.clone())?;
        let vals: Vec<f64> = probes.iter().map(|p| current.eval_at(p).unwrap_or(f64::NAN)).collect();
        if let Some(prev) = &previous {
            let num: f64 = vals.iter().zip(prev).map(|(a, b)| (a - b) * (a - b)).sum();
            let den: f64 = vals.iter().map(|a| a * a).sum::<f64>().max(f64::MIN_POSITIVE);
            if (num / den).sqrt() < 1e-12 {
                break;
            }
        }
        previous = Some(vals);
    }

    let tensor = QttVector::from_cores(cores)?.round(cfg.truncation)?;
    let mse = validation_mse(f, &tensor, cfg.validation_sample_count, cfg.seed)?;
    Ok(CrossOutput {
        tensor,
        validation_mse: mse,
        evaluations,
        sweeps: sweeps_done,
        regularized,
    })
}

pub enum Floor<'a> {
    Scalar(f64),
    Vector(&'a QttVector),
}

/// `max(x, floor)` entrywise via cross, warm-started from `x`.
pub fn elementwise_max(x: &QttVector, floor: Floor<'_>, cfg: &CrossConfig) -> Result<CrossOutput> {
    let modes = x.mode_sizes();
    match floor {
        Floor::Scalar(v) => {
            let map = PointwiseMap::new(vec![x], move |a: &[f64]| a[0].max(v))?;
            tt_cross(&map, &modes, cfg, Some(x))
        }
        Floor::Vector(g) => {
            let map = PointwiseMap::new(vec![x, g], |a: &[f64]| a[0].max(a[1]))?;
            tt_cross(&map, &modes, cfg, Some(x))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::{exp_qtt, Interval};
    use proptest::prelude::*;

    fn cfg(rank: usize) -> CrossConfig {
        CrossConfig {
            max_rank: rank,
            sweeps: 4,
            truncation: TruncationPolicy::relative(1e-13),
            ..CrossConfig::default()
        }
    }

    #[test]
    fn maxvol_on_identity_block() {
        let a = ndarray::array![[0.1, 0.2], [3.0, 0.1], [0.2, -4.0], [0.5, 0.5]];
        let (piv, b, reg) = maxvol(&a, 0.0, 50).unwrap();
        assert!(!reg);
        let mut p = piv.clone();
        p.sort();
        assert_eq!(p, vec![1, 2]);
        let back = b.dot(&a.select(Axis(0), &piv));
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_exponential_is_recovered() {
        let xs = exp_qtt(1.0, Interval::new(0.0, 1.0).unwrap(), 8).unwrap();
        let f = FnEvaluator(|d: &[usize]| {
            let i = d[..8].iter().fold(0, |a, &b| 2 * a + b) as f64 / 256.0;
            let j = d[8..].iter().fold(0, |a, &b| 2 * a + b) as f64 / 256.0;
            (i + j).exp()
        });
        let out = tt_cross(&f, &[2; 16], &cfg(2), None).unwrap();
        assert!(out.validation_mse <= 1e-10, "mse {}", out.validation_mse);
        assert!(out.tensor.max_bond() <= 2);
        let want = xs.concat(&xs).to_dense().unwrap();
        let got = out.tensor.to_dense().unwrap();
        let err = want.iter().zip(got.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn non_finite_evaluator_is_rejected() {
        let f = FnEvaluator(|d: &[usize]| if d[0] == 1 { f64::NAN } else { 1.0 });
        assert!(matches!(tt_cross(&f, &[2; 4], &cfg(2), None), Err(QttError::NonFinite(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let f = FnEvaluator(|d: &[usize]| {
            let k = d.iter().fold(0, |a, &b| 2 * a + b) as f64 / 1024.0;
            (1.0 - 3.0 * k).max(0.0)
        });
        let a = tt_cross(&f, &[2; 10], &cfg(4), None).unwrap();
        let b = tt_cross(&f, &[2; 10], &cfg(4), None).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_eq!(a.validation_mse, b.validation_mse);
    }

    #[test]
    fn max_with_zero() {
        let x = exp_qtt(1.0, Interval::new(0.0, 2.0).unwrap(), 10)
            .unwrap()
            .add(&QttVector::ones(&[2; 10]).scale(-3.0))
            .unwrap();
        let out = elementwise_max(&x, Floor::Scalar(0.0), &cfg(8)).unwrap();
        let xd = x.to_dense().unwrap();
        let got = out.tensor.to_dense().unwrap();
        let mse: f64 = xd.iter().zip(got.iter()).map(|(a, b)| (a.max(0.0) - b).powi(2)).sum::<f64>() / 1024.0;
        assert!(mse < 1e-8, "mse {}", mse);
        let again = elementwise_max(&out.tensor, Floor::Scalar(0.0), &cfg(8)).unwrap();
        let twice = again.tensor.to_dense().unwrap();
        let diff: f64 = got.iter().zip(twice.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1024.0;
        assert!(diff <= mse.max(out.validation_mse) * 4.0 + 1e-14);
    }

    #[test]
    fn warm_start_reproduces_low_rank_input() {
        let a = exp_qtt(0.5, Interval::new(0.0, 1.0).unwrap(), 12).unwrap();
        let b = exp_qtt(-1.5, Interval::new(0.0, 1.0).unwrap(), 12).unwrap();
        let x = a.add(&b).unwrap();
        let out = elementwise_max(&x, Floor::Scalar(-1.0), &cfg(3)).unwrap();
        assert!(out.validation_mse < 1e-20);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn low_rank_sums_recovered(seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let iv = Interval::new(-1.0, 1.0).unwrap();
            let x = exp_qtt(a, iv, 6).unwrap().concat(&exp_qtt(b, iv, 6).unwrap());
            let y = exp_qtt(b, iv, 6).unwrap().concat(&exp_qtt(-a, iv, 6).unwrap());
            let s = x.add(&y).unwrap();
            let f = PointwiseMap::new(vec![&s], |v: &[f64]| v[0]).unwrap();
            let mut c = cfg(2);
            c.seed = seed;
            let out = tt_cross(&f, &[2; 12], &c, None).unwrap();
            prop_assert!(out.validation_mse <= 1e-10);
        }
    }
}
