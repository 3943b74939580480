use ndarray::{s, Array1, Array2, Array3, Axis};

use super::linalg::{frobenius, reshape, split, thin_qr, thin_svd, truncation_rank};
use super::{checked_product, flat_to_digits, TruncationPolicy, DENSE_LIMIT};
use crate::error::{QttError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QttVector {
    cores: Vec<Array3<f64>>,
}

impl QttVector {
    pub fn from_cores(cores: Vec<Array3<f64>>) -> Result<Self> {
        if cores.is_empty() {
            return Err(QttError::Shape("a QTT needs at least one core".into()));
        }
        if cores[0].dim().0 != 1 || cores[cores.len() - 1].dim().2 != 1 {
            return Err(QttError::Shape("boundary bond dimensions must be 1".into()));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].dim().2 != w[1].dim().0 {
                return Err(QttError::Shape(format!(
                    "bond mismatch between cores {} and {}: {} vs {}",
                    k,
                    k + 1,
                    w[0].dim().2,
                    w[1].dim().0
                )));
            }
        }
        for c in &cores {
            let (a, n, b) = c.dim();
            if a == 0 || n == 0 || b == 0 {
                return Err(QttError::Shape("zero-sized core".into()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(QttError::NonFinite("QTT core"));
            }
        }
        Ok(QttVector { cores })
    }

    pub(crate) fn from_cores_unchecked(cores: Vec<Array3<f64>>) -> Self {
        debug_assert!(Self::from_cores(cores.clone()).is_ok());
        QttVector { cores }
    }

    pub fn cores(&self) -> &[Array3<f64>] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<Array3<f64>> {
        self.cores
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().1).collect()
    }

    /// Bond dimensions including the two boundary ones.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut b = vec![1];
        b.extend(self.cores.iter().map(|c| c.dim().2));
        b
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Number of stored parameters.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    pub fn len(&self) -> Option<usize> {
        checked_product(&self.mode_sizes())
    }

    pub fn zeros(modes: &[usize]) -> Self {
        let cores = modes.iter().map(|&n| Array3::zeros((1, n, 1))).collect();
        QttVector { cores }
    }

    pub fn ones(modes: &[usize]) -> Self {
        let cores = modes.iter().map(|&n| Array3::ones((1, n, 1))).collect();
        QttVector { cores }
    }

    /// Canonical basis vector with the given per-core digits.
    pub fn unit(modes: &[usize], digits: &[usize]) -> Result<Self> {
        if modes.len() != digits.len() || digits.iter().zip(modes).any(|(d, n)| d >= n) {
            return Err(QttError::Shape("basis digits out of range".into()));
        }
        let cores = modes
            .iter()
            .zip(digits)
            .map(|(&n, &d)| {
                let mut c = Array3::zeros((1, n, 1));
                c[[0, d, 0]] = 1.0;
                c
            })
            .collect();
        Ok(QttVector { cores })
    }

    /// Rank-1 QTT from one factor vector per core.
    pub fn rank_one(factors: &[Array1<f64>]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|f| reshape(f, (1, f.len(), 1)))
            .collect();
        Self::from_cores(cores)
    }

    /// Sequential SVD compression of a dense row-major tensor.
    pub fn tt_svd(data: &[f64], modes: &[usize], policy: TruncationPolicy) -> Result<Self> {
        policy.validate()?;
        let total = checked_product(modes).ok_or(QttError::DenseTooLarge(usize::MAX))?;
        if modes.is_empty() || modes.contains(&0) {
            return Err(QttError::Shape("mode sizes must be positive".into()));
        }
        if total != data.len() {
            return Err(QttError::Shape(format!(
                "dense length {} does not match mode product {}",
                data.len(),
                total
            )));
        }
        if total > DENSE_LIMIT {
            return Err(QttError::DenseTooLarge(total));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(QttError::NonFinite("tt_svd input"));
        }
        let nrm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return Ok(Self::zeros(modes));
        }
        let delta = policy.per_bond_delta(nrm, modes.len());
        let mut cores = Vec::with_capacity(modes.len());
        let mut rest = Array2::from_shape_vec((1, total), data.to_vec()).unwrap();
        let mut r = 1;
        let mut remaining = total;
        for &n in &modes[..modes.len() - 1] {
            remaining /= n;
            let m = reshape(&rest, (r * n, remaining));
            let (u, sv, vt) = thin_svd(&m)?;
            let rank = truncation_rank(&sv, delta, policy.max_rank);
            let (u, svt) = split(&u, &sv, &vt, rank);
            cores.push(reshape(&u, (r, n, rank)));
            rest = svt;
            r = rank;
        }
        let n = modes[modes.len() - 1];
        cores.push(reshape(&rest, (r, n, 1)));
        Ok(QttVector { cores })
    }

    pub fn to_dense(&self) -> Result<Array1<f64>> {
        let total = self.len().ok_or(QttError::DenseTooLarge(usize::MAX))?;
        if total > DENSE_LIMIT {
            return Err(QttError::DenseTooLarge(total));
        }
        let mut acc = Array2::<f64>::ones((1, 1));
        for c in &self.cores {
            let (r, n, rr) = c.dim();
            let p = acc.nrows();
            let t = acc.dot(&reshape(c, (r, n * rr)));
            acc = reshape(&t, (p * n, rr));
        }
        Ok(acc.column(0).to_owned())
    }

    fn check_same_modes(&self, other: &QttVector) -> Result<()> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(QttError::Shape(format!(
                "mode sizes differ: {:?} vs {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        Ok(())
    }

    /// Exact sum; bond dimensions add.
    pub fn add(&self, other: &QttVector) -> Result<Self> {
        self.check_same_modes(other)?;
        let n_cores = self.cores.len();
        if n_cores == 1 {
            return Ok(QttVector {
                cores: vec![&self.cores[0] + &other.cores[0]],
            });
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .enumerate()
            .map(|(k, (a, b))| {
                let (ra, n, sa) = a.dim();
                let (rb, _, sb) = b.dim();
                if k == 0 {
                    ndarray::concatenate(Axis(2), &[a.view(), b.view()]).unwrap()
                } else if k == n_cores - 1 {
                    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap()
                } else {
                    let mut c = Array3::zeros((ra + rb, n, sa + sb));
                    c.slice_mut(s![..ra, .., ..sa]).assign(a);
                    c.slice_mut(s![ra.., .., sa..]).assign(b);
                    c
                }
            })
            .collect();
        Ok(QttVector { cores })
    }

    pub fn sub(&self, other: &QttVector) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut cores = self.cores.clone();
        cores[0] *= alpha;
        QttVector { cores }
    }

    /// Elementwise product; bond dimensions multiply.
    pub fn hadamard(&self, other: &QttVector) -> Result<Self> {
        self.check_same_modes(other)?;
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| {
                let (ra, n, sa) = a.dim();
                let (rb, _, sb) = b.dim();
                let mut c = Array3::zeros((ra * rb, n, sa * sb));
                for i in 0..n {
                    for p in 0..ra {
                        for q in 0..rb {
                            for u in 0..sa {
                                let av = a[[p, i, u]];
                                if av == 0.0 {
                                    continue;
                                }
                                for v in 0..sb {
                                    c[[p * rb + q, i, u * sb + v]] = av * b[[q, i, v]];
                                }
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Ok(QttVector { cores })
    }

    pub fn dot(&self, other: &QttVector) -> Result<f64> {
        self.check_same_modes(other)?;
        let mut e = Array2::<f64>::ones((1, 1));
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let (_, n, sa) = a.dim();
            let sb = b.dim().2;
            let mut next = Array2::<f64>::zeros((sa, sb));
            for i in 0..n {
                let ai = a.index_axis(Axis(1), i);
                let bi = b.index_axis(Axis(1), i);
                next += &ai.t().dot(&e).dot(&bi);
            }
            e = next;
        }
        Ok(e[[0, 0]])
    }

    pub fn norm(&self) -> f64 {
        let mut cores = self.cores.clone();
        match right_orthogonalize(&mut cores) {
            Ok(()) => frobenius(&cores[0]),
            Err(_) => self.dot(self).unwrap_or(f64::NAN).max(0.0).sqrt(),
        }
    }

    /// SVD recompression: right-to-left orthogonalization followed by a
    /// left-to-right truncation sweep.
    pub fn round(&self, policy: TruncationPolicy) -> Result<Self> {
        policy.validate()?;
        let n_cores = self.cores.len();
        if n_cores == 1 {
            return Ok(self.clone());
        }
        let mut cores = self.cores.clone();
        right_orthogonalize(&mut cores)?;
        let nrm = frobenius(&cores[0]);
        if !nrm.is_finite() {
            return Err(QttError::NonFinite("round"));
        }
        if nrm == 0.0 {
            return Ok(Self::zeros(&self.mode_sizes()));
        }
        let delta = policy.per_bond_delta(nrm, n_cores);
        for k in 0..n_cores - 1 {
            let (r, n, rr) = cores[k].dim();
            let m = reshape(&cores[k], (r * n, rr));
            let (u, sv, vt) = thin_svd(&m)?;
            let rank = truncation_rank(&sv, delta, policy.max_rank);
            let (u, svt) = split(&u, &sv, &vt, rank);
            cores[k] = reshape(&u, (r, n, rank));
            let (_, n2, r2) = cores[k + 1].dim();
            let next = svt.dot(&reshape(&cores[k + 1], (rr, n2 * r2)));
            cores[k + 1] = reshape(&next, (rank, n2, r2));
        }
        Ok(QttVector { cores })
    }

    /// Entry at the given per-core digits.
    pub fn eval_at(&self, digits: &[usize]) -> Result<f64> {
        if digits.len() != self.cores.len() {
            return Err(QttError::Shape(format!(
                "expected {} digits, got {}",
                self.cores.len(),
                digits.len()
            )));
        }
        let mut v = Array1::<f64>::ones(1);
        for (c, &d) in self.cores.iter().zip(digits) {
            if d >= c.dim().1 {
                return Err(QttError::Shape(format!("digit {} out of range", d)));
            }
            v = v.dot(&c.index_axis(Axis(1), d));
        }
        Ok(v[0])
    }

    /// Entry at a flat row-major index.
    pub fn eval_flat(&self, k: usize) -> Result<f64> {
        let modes = self.mode_sizes();
        match checked_product(&modes) {
            Some(total) if k >= total => {
                return Err(QttError::Shape(format!("index {} out of range", k)))
            }
            _ => {}
        }
        self.eval_at(&flat_to_digits(k, &modes))
    }

    /// Tensor product `self ⊗ other`; `self` occupies the leading cores.
    pub fn concat(&self, other: &QttVector) -> Self {
        let mut cores = self.cores.clone();
        cores.extend(other.cores.iter().cloned());
        QttVector { cores }
    }

    /// Contract the leading `k` cores against fixed digits, keeping the rest.
    pub fn fix_leading(&self, digits: &[usize]) -> Result<Self> {
        let k = digits.len();
        if k >= self.cores.len() {
            return Err(QttError::Shape("cannot fix every core".into()));
        }
        let mut v = Array2::<f64>::ones((1, 1));
        for (c, &d) in self.cores.iter().zip(digits) {
            v = v.dot(&c.index_axis(Axis(1), d));
        }
        let mut cores: Vec<Array3<f64>> = self.cores[k..].to_vec();
        let (r, n, rr) = cores[0].dim();
        let first = v.dot(&reshape(&cores[0], (r, n * rr)));
        cores[0] = reshape(&first, (1, n, rr));
        Ok(QttVector { cores })
    }

    /// Contract the leading `k` cores against weight vectors, keeping the rest.
    pub fn contract_leading(&self, weights: &[Array1<f64>]) -> Result<Self> {
        let k = weights.len();
        if k >= self.cores.len() {
            return Err(QttError::Shape("cannot contract every core".into()));
        }
        let mut v = Array2::<f64>::ones((1, 1));
        for (c, w) in self.cores.iter().zip(weights) {
            let (r, n, rr) = c.dim();
            if w.len() != n {
                return Err(QttError::Shape("weight length mismatch".into()));
            }
            let m = reshape(c, (r, n * rr));
            let mut acc = Array2::<f64>::zeros((1, rr));
            for i in 0..n {
                acc = acc + v.dot(&m.slice(s![.., i * rr..(i + 1) * rr])) * w[i];
            }
            v = acc;
        }
        let mut cores: Vec<Array3<f64>> = self.cores[k..].to_vec();
        let (r, n, rr) = cores[0].dim();
        let first = v.dot(&reshape(&cores[0], (r, n * rr)));
        cores[0] = reshape(&first, (1, n, rr));
        Ok(QttVector { cores })
    }
}

/// Make cores `1..N` right-orthogonal; the norm ends up in core 0.
pub(crate) fn right_orthogonalize(cores: &mut [Array3<f64>]) -> Result<()> {
    for k in (1..cores.len()).rev() {
        let (r, n, rr) = cores[k].dim();
        let m = reshape(&cores[k], (r, n * rr));
        let (q, rm) = thin_qr(&m.t().to_owned())?;
        let kk = q.ncols();
        cores[k] = reshape(&q.t(), (kk, n, rr));
        let (a, n2, _) = cores[k - 1].dim();
        let prev = reshape(&cores[k - 1], (a * n2, r)).dot(&rm.t());
        cores[k - 1] = reshape(&prev, (a, n2, kk));
    }
    Ok(())
}
