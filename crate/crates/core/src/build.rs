//! Closed-form QTT constructions: Toeplitz operators, exponentials, masks
//! and register insertion.

use ndarray::{array, Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{QttError, Result};
use crate::tt::{bits_msb, QttOperator, QttVector, TruncationPolicy};

/// Half-open sampling interval: entry `k` of a `c`-core vector sits at
/// `lo + k (hi - lo) / 2^c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(QttError::Invalid(format!("bad interval [{}, {})", lo, hi)));
        }
        Ok(Interval { lo, hi })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisEnd {
    First,
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftDirection {
    /// `(U x)_i = x_{i+1}`
    Upper,
    /// `(L x)_i = x_{i-1}`
    Lower,
}

fn check_cores(c: usize, min: usize) -> Result<()> {
    if c < min || c > 40 {
        return Err(QttError::Invalid(format!(
            "core count {} out of range (need {}..=40)",
            c, min
        )));
    }
    Ok(())
}

fn eye2() -> Array2<f64> {
    Array2::eye(2)
}

fn upper() -> Array2<f64> {
    array![[0.0, 1.0], [0.0, 0.0]]
}

fn lower() -> Array2<f64> {
    array![[0.0, 0.0], [1.0, 0.0]]
}

/// Toeplitz tridiagonal operator `(T x)_j = alpha x_j + beta x_{j+1} + gamma x_{j-1}`
/// on `2^c` points with zero padding outside. Bond dimension 3.
pub fn tridiagonal_mpo(alpha: f64, beta: f64, gamma: f64, c: usize) -> Result<QttOperator> {
    check_cores(c, 2)?;
    let (i, j, jt) = (eye2(), upper(), lower());
    let end = &i * alpha + &j * beta + &jt * gamma;
    let mut cores = Vec::with_capacity(c);
    let mut first = Array4::zeros((1, 2, 2, 3));
    for (k, m) in [&i, &j, &jt].iter().enumerate() {
        first.slice_mut(ndarray::s![0, .., .., k]).assign(*m);
    }
    cores.push(first);
    let mut mid = Array4::zeros((3, 2, 2, 3));
    for (k, m) in [&i, &j, &jt].iter().enumerate() {
        mid.slice_mut(ndarray::s![0, .., .., k]).assign(*m);
    }
    mid.slice_mut(ndarray::s![1, .., .., 1]).assign(&jt);
    mid.slice_mut(ndarray::s![2, .., .., 2]).assign(&j);
    for _ in 1..c - 1 {
        cores.push(mid.clone());
    }
    let mut last = Array4::zeros((3, 2, 2, 1));
    last.slice_mut(ndarray::s![0, .., .., 0]).assign(&end);
    last.slice_mut(ndarray::s![1, .., .., 0]).assign(&(&jt * beta));
    last.slice_mut(ndarray::s![2, .., .., 0]).assign(&(&j * gamma));
    cores.push(last);
    QttOperator::from_cores(cores)
}

pub fn identity_mpo(c: usize) -> Result<QttOperator> {
    tridiagonal_mpo(1.0, 0.0, 0.0, c)
}

pub fn shift_mpo(direction: ShiftDirection, c: usize) -> Result<QttOperator> {
    match direction {
        ShiftDirection::Upper => tridiagonal_mpo(0.0, 1.0, 0.0, c),
        ShiftDirection::Lower => tridiagonal_mpo(0.0, 0.0, 1.0, c),
    }
}

/// Central finite-difference derivative of order 1 or 2 with spacing `dx`.
pub fn derivative_mpo(order: usize, c: usize, dx: f64) -> Result<QttOperator> {
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(QttError::Invalid(format!("grid spacing must be positive, got {}", dx)));
    }
    match order {
        1 => tridiagonal_mpo(0.0, 0.5 / dx, -0.5 / dx, c),
        2 => tridiagonal_mpo(-2.0 / (dx * dx), 1.0 / (dx * dx), 1.0 / (dx * dx), c),
        _ => Err(QttError::Invalid(format!("unsupported derivative order {}", order))),
    }
}

/// Rank-one QTT with entries `exp(alpha (lo + k (hi - lo) / 2^c))`.
pub fn exp_qtt(alpha: f64, interval: Interval, c: usize) -> Result<QttVector> {
    check_cores(c, 1)?;
    let h = (interval.hi - interval.lo) / (1u64 << c) as f64;
    let factors: Vec<Array1<f64>> = (0..c)
        .map(|k| {
            let step = h * (1u64 << (c - 1 - k)) as f64;
            let lead = if k == 0 { (alpha * interval.lo).exp() } else { 1.0 };
            array![lead, lead * (alpha * step).exp()]
        })
        .collect();
    QttVector::rank_one(&factors)
}

/// `|0>` (first) or `|1>` (last) basis vector on `2^c` points.
pub fn basis_qtt(which: BasisEnd, c: usize) -> Result<QttVector> {
    check_cores(c, 1)?;
    let k = match which {
        BasisEnd::First => 0,
        BasisEnd::Last => (1usize << c) - 1,
    };
    QttVector::unit(&vec![2; c], &bits_msb(k, c))
}

fn two_state(c: usize, first: [[f64; 2]; 2], mid: [[[f64; 2]; 2]; 2], last: [[f64; 2]; 2]) -> Result<QttVector> {
    let mut cores = Vec::with_capacity(c);
    let mut f = Array3::zeros((1, 2, 2));
    for bit in 0..2 {
        for r in 0..2 {
            f[[0, bit, r]] = first[bit][r];
        }
    }
    cores.push(f);
    let mut m = Array3::zeros((2, 2, 2));
    for l in 0..2 {
        for bit in 0..2 {
            for r in 0..2 {
                m[[l, bit, r]] = mid[l][bit][r];
            }
        }
    }
    for _ in 1..c - 1 {
        cores.push(m.clone());
    }
    let mut e = Array3::zeros((2, 2, 1));
    for l in 0..2 {
        for bit in 0..2 {
            e[[l, bit, 0]] = last[l][bit];
        }
    }
    cores.push(e);
    QttVector::from_cores(cores)
}

/// Indicator of `j != 0`; bond 2.
pub fn v_left(c: usize) -> Result<QttVector> {
    check_cores(c, 2)?;
    two_state(
        c,
        [[1.0, 0.0], [0.0, 1.0]],
        [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]],
        [[0.0, 1.0], [1.0, 1.0]],
    )
}

/// Indicator of `j != 2^c - 1`; bond 2.
pub fn v_right(c: usize) -> Result<QttVector> {
    check_cores(c, 2)?;
    two_state(
        c,
        [[1.0, 0.0], [0.0, 1.0]],
        [[[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]],
        [[1.0, 1.0], [1.0, 0.0]],
    )
}

/// Pass-through cores that pin `c` binary digits to zero while carrying a
/// bond of size `chi` unchanged.
pub fn square_core_block(c: usize, chi: usize) -> Vec<Array3<f64>> {
    pinned_core_block(c, chi, 0)
}

/// Like [`square_core_block`] with an arbitrary pinned digit.
pub fn pinned_core_block(c: usize, rank: usize, digit: usize) -> Vec<Array3<f64>> {
    (0..c)
        .map(|_| {
            let mut s = Array3::zeros((rank, 2, rank));
            for i in 0..rank {
                s[[i, digit, i]] = 1.0;
            }
            s
        })
        .collect()
}

/// Insert a `c`-core register pinned to all-`digit` before core `position`.
pub fn insert_register(x: &QttVector, position: usize, c: usize, digit: usize) -> Result<QttVector> {
    if position > x.num_cores() || digit > 1 {
        return Err(QttError::Invalid("register position out of range".into()));
    }
    let rank = x.bond_dims()[position];
    let mut cores = x.cores()[..position].to_vec();
    cores.extend(pinned_core_block(c, rank, digit));
    cores.extend(x.cores()[position..].iter().cloned());
    QttVector::from_cores(cores)
}

/// Kronecker product of a sequence of operators; the first is slowest.
pub fn kron_all(ops: &[QttOperator]) -> Result<QttOperator> {
    let mut it = ops.iter();
    let mut acc = it
        .next()
        .ok_or_else(|| QttError::Invalid("empty operator list".into()))?
        .clone();
    for op in it {
        acc = acc.kron(op);
    }
    Ok(acc)
}

/// Embed a single-dimension operator at slot `dim` of a `d`-dimensional grid.
pub fn embed(op: &QttOperator, dim: usize, d: usize, c: usize) -> Result<QttOperator> {
    if dim >= d {
        return Err(QttError::Invalid("dimension out of range".into()));
    }
    let ops: Vec<QttOperator> = (0..d)
        .map(|k| if k == dim { op.clone() } else { QttOperator::identity(&vec![2; c]) })
        .collect();
    kron_all(&ops)
}

/// Diagonal operator that zeroes every node on the boundary of the
/// `d`-dimensional `2^c` grid and keeps the interior.
pub fn eraser_mpo(d: usize, c: usize) -> Result<QttOperator> {
    check_cores(c, 2)?;
    if d == 0 {
        return Err(QttError::Invalid("need at least one dimension".into()));
    }
    let left = QttOperator::from_diagonal(&v_left(c)?);
    let right = QttOperator::from_diagonal(&v_right(c)?);
    let mut e = QttOperator::identity(&vec![2; c * d]);
    for i in 0..d {
        e = e.compose(&embed(&left, i, d, c)?)?;
        e = e.compose(&embed(&right, i, d, c)?)?;
        e = e.round(TruncationPolicy::relative(1e-13))?;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn dense_tridiag(n: usize, a: f64, b: f64, g: f64) -> Array2<f64> {
        let mut m = Array2::zeros((n, n));
        for j in 0..n {
            m[[j, j]] = a;
            if j + 1 < n {
                m[[j, j + 1]] = b;
                m[[j + 1, j]] = g;
            }
        }
        m
    }

    #[test]
    fn tridiagonal_is_exact() {
        assert!(tridiagonal_mpo(1.0, 0.0, 0.0, 1).is_err());
        for c in 2..=6 {
            let (a, b, g) = (-2.5, 1.25, 0.75);
            let t = tridiagonal_mpo(a, b, g, c).unwrap();
            assert!(t.bond_dims()[1..c].iter().all(|&r| r == 3));
            let err = max_abs(&t.to_dense().unwrap(), &dense_tridiag(1 << c, a, b, g));
            assert!(err <= 1e-12, "c={} err={}", c, err);
        }
    }

    #[test]
    fn exp_and_basis() {
        let iv = Interval::new(-1.0, 2.0).unwrap();
        let e = exp_qtt(0.7, iv, 5).unwrap();
        assert_eq!(e.max_bond(), 1);
        let d = e.to_dense().unwrap();
        for k in 0..32 {
            let want = (0.7 * (-1.0 + k as f64 * 3.0 / 32.0)).exp();
            assert!((d[k] - want).abs() <= 1e-12 * want);
        }
        let b = basis_qtt(BasisEnd::Last, 4).unwrap().to_dense().unwrap();
        assert_eq!(b[15], 1.0);
        assert_eq!(b.sum(), 1.0);
        let f = basis_qtt(BasisEnd::First, 2).unwrap().to_dense().unwrap();
        assert_eq!(f.to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        let z = exp_qtt(0.0, iv, 3).unwrap().to_dense().unwrap();
        assert!(z.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn masks_are_exact() {
        assert!(v_left(1).is_err());
        for c in 2..=6 {
            let n = 1 << c;
            let l = v_left(c).unwrap();
            let r = v_right(c).unwrap();
            assert!(l.max_bond() <= 2 && r.max_bond() <= 2);
            let ld = l.to_dense().unwrap();
            let rd = r.to_dense().unwrap();
            for j in 0..n {
                assert_eq!(ld[j], if j == 0 { 0.0 } else { 1.0 });
                assert_eq!(rd[j], if j == n - 1 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn derivatives_on_quadratic() {
        let c = 5;
        let dx = 0.1;
        let x: Array1<f64> = (0..32).map(|j| (j as f64 * dx).powi(2)).collect();
        let d1 = derivative_mpo(1, c, dx).unwrap().to_dense().unwrap().dot(&x);
        let d2 = derivative_mpo(2, c, dx).unwrap().to_dense().unwrap().dot(&x);
        for j in 1..31 {
            assert!((d1[j] - 2.0 * j as f64 * dx).abs() < 1e-10);
            assert!((d2[j] - 2.0).abs() < 1e-9);
        }
        assert!(derivative_mpo(1, c, 0.0).is_err());
        assert!(derivative_mpo(3, c, dx).is_err());
    }

    #[test]
    fn register_insertion_embeds_a_face() {
        let c = 3;
        let face = exp_qtt(1.0, Interval::new(0.0, 1.0).unwrap(), c).unwrap();
        let f = face.to_dense().unwrap();
        let full = insert_register(&face, 0, c, 1).unwrap().to_dense().unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == 7 { f[j] } else { 0.0 };
                assert_eq!(full[i * 8 + j], want);
            }
        }
        let full = insert_register(&face, 3, c, 0).unwrap().to_dense().unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if j == 0 { f[i] } else { 0.0 };
                assert_eq!(full[i * 8 + j], want);
            }
        }
    }

    #[test]
    fn shifts_and_identity() {
        let c = 3;
        let u = shift_mpo(ShiftDirection::Upper, c).unwrap();
        let l = shift_mpo(ShiftDirection::Lower, c).unwrap();
        let e = basis_qtt(BasisEnd::Last, c).unwrap();
        let ue = u.apply(&e).unwrap().to_dense().unwrap();
        assert_eq!(ue[6], 1.0);
        assert_eq!(ue.sum(), 1.0);
        let sum = u.add(&l).unwrap().add(&identity_mpo(c).unwrap().scale(-2.0)).unwrap();
        let want = tridiagonal_mpo(-2.0, 1.0, 1.0, c).unwrap().to_dense().unwrap();
        assert!(max_abs(&sum.to_dense().unwrap(), &want) < 1e-14);
    }

    #[test]
    fn square_block_zero_register() {
        let ones = QttVector::ones(&[2, 2]);
        let mut cores = ones.cores()[..1].to_vec();
        cores.extend(square_core_block(2, 1));
        cores.extend(ones.cores()[1..].iter().cloned());
        let full = QttVector::from_cores(cores).unwrap().to_dense().unwrap();
        for k in 0..16 {
            let mid = (k >> 1) & 0b11;
            assert_eq!(full[k], if mid == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn eraser_zeroes_faces() {
        let e1 = eraser_mpo(1, 2).unwrap().to_dense().unwrap();
        assert_eq!(e1.diag().to_vec(), vec![0.0, 1.0, 1.0, 0.0]);
        let e = eraser_mpo(2, 3).unwrap().to_dense().unwrap();
        assert!(max_abs(&e.dot(&e), &e) < 1e-12);
        for i in 0..8 {
            for j in 0..8 {
                let p = i * 8 + j;
                let inside = (1..7).contains(&i) && (1..7).contains(&j);
                assert!((e[[p, p]] - if inside { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
