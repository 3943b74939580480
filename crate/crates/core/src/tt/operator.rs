use ndarray::{Array2, Array3, Array4, Axis};

use super::linalg::reshape;
use super::{checked_product, QttVector, TruncationPolicy, DENSE_LIMIT};
use crate::error::{QttError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QttOperator {
    cores: Vec<Array4<f64>>,
}

impl QttOperator {
    pub fn from_cores(cores: Vec<Array4<f64>>) -> Result<Self> {
        if cores.is_empty() {
            return Err(QttError::Shape("an operator needs at least one core".into()));
        }
        if cores[0].dim().0 != 1 || cores[cores.len() - 1].dim().3 != 1 {
            return Err(QttError::Shape("boundary bond dimensions must be 1".into()));
        }
        for w in cores.windows(2) {
            if w[0].dim().3 != w[1].dim().0 {
                return Err(QttError::Shape("operator bond mismatch".into()));
            }
        }
        if cores.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(QttError::NonFinite("operator core"));
        }
        Ok(QttOperator { cores })
    }

    pub fn cores(&self) -> &[Array4<f64>] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<Array4<f64>> {
        self.cores
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn row_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().1).collect()
    }

    pub fn col_modes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dim().2).collect()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        let mut b = vec![1];
        b.extend(self.cores.iter().map(|c| c.dim().3));
        b
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn identity(modes: &[usize]) -> Self {
        let cores = modes
            .iter()
            .map(|&n| {
                let mut c = Array4::zeros((1, n, n, 1));
                for i in 0..n {
                    c[[0, i, i, 0]] = 1.0;
                }
                c
            })
            .collect();
        QttOperator { cores }
    }

    /// Diagonal operator `diag(v)`.
    pub fn from_diagonal(v: &QttVector) -> Self {
        let cores = v
            .cores()
            .iter()
            .map(|c| {
                let (a, n, b) = c.dim();
                let mut w = Array4::zeros((a, n, n, b));
                for p in 0..a {
                    for i in 0..n {
                        for q in 0..b {
                            w[[p, i, i, q]] = c[[p, i, q]];
                        }
                    }
                }
                w
            })
            .collect();
        QttOperator { cores }
    }

    /// View the operator as a vector over merged (row, col) modes.
    pub fn to_vector(&self) -> QttVector {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let (a, n, m, b) = c.dim();
                reshape(c, (a, n * m, b))
            })
            .collect();
        QttVector::from_cores_unchecked(cores)
    }

    fn from_vector(v: QttVector, rows: &[usize], cols: &[usize]) -> Self {
        let cores = v
            .into_cores()
            .into_iter()
            .zip(rows.iter().zip(cols))
            .map(|(c, (&n, &m))| {
                let (a, _, b) = c.dim();
                reshape(&c, (a, n, m, b))
            })
            .collect();
        QttOperator { cores }
    }

    pub fn to_dense(&self) -> Result<Array2<f64>> {
        let rows = checked_product(&self.row_modes()).ok_or(QttError::DenseTooLarge(usize::MAX))?;
        let cols = checked_product(&self.col_modes()).ok_or(QttError::DenseTooLarge(usize::MAX))?;
        let total = rows.checked_mul(cols).ok_or(QttError::DenseTooLarge(usize::MAX))?;
        if total > DENSE_LIMIT {
            return Err(QttError::DenseTooLarge(total));
        }
        let mut acc = Array3::<f64>::ones((1, 1, 1));
        for c in &self.cores {
            let (r, n, m, rr) = c.dim();
            let (pr, pc, _) = acc.dim();
            let t = reshape(&acc, (pr * pc, r)).dot(&reshape(c, (r, n * m * rr)));
            let t = reshape(&t, (pr, pc, n, m, rr)).permuted_axes([0, 2, 1, 3, 4]);
            acc = reshape(&t, (pr * n, pc * m, rr));
        }
        Ok(acc.index_axis(Axis(2), 0).to_owned())
    }

    /// Matrix-vector product in QTT format; bonds multiply.
    pub fn apply(&self, x: &QttVector) -> Result<QttVector> {
        if self.col_modes() != x.mode_sizes() {
            return Err(QttError::Shape(format!(
                "operator columns {:?} do not match vector modes {:?}",
                self.col_modes(),
                x.mode_sizes()
            )));
        }
        let cores = self
            .cores
            .iter()
            .zip(x.cores())
            .map(|(w, c)| apply_core(w, c))
            .collect();
        QttVector::from_cores(cores)
    }

    /// Product `self * other`.
    pub fn compose(&self, other: &QttOperator) -> Result<QttOperator> {
        if self.col_modes() != other.row_modes() {
            return Err(QttError::Shape("inner mode sizes differ in compose".into()));
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| {
                let (ra, n, j, ra2) = a.dim();
                let (rb, _, m, rb2) = b.dim();
                let ap = reshape(&a.view().permuted_axes([0, 1, 3, 2]), (ra * n * ra2, j));
                let bp = reshape(&b.view().permuted_axes([1, 0, 2, 3]), (j, rb * m * rb2));
                let p = ap.dot(&bp);
                let p = reshape(&p, ndarray::IxDyn(&[ra, n, ra2, rb, m, rb2]))
                    .permuted_axes(ndarray::IxDyn(&[0, 3, 1, 4, 2, 5]));
                reshape(&p, (ra * rb, n, m, ra2 * rb2))
            })
            .collect();
        QttOperator::from_cores(cores)
    }

    pub fn add(&self, other: &QttOperator) -> Result<QttOperator> {
        if self.row_modes() != other.row_modes() || self.col_modes() != other.col_modes() {
            return Err(QttError::Shape("operator modes differ in add".into()));
        }
        let v = self.to_vector().add(&other.to_vector())?;
        Ok(Self::from_vector(v, &self.row_modes(), &self.col_modes()))
    }

    pub fn sub(&self, other: &QttOperator) -> Result<QttOperator> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, alpha: f64) -> QttOperator {
        let mut cores = self.cores.clone();
        cores[0] *= alpha;
        QttOperator { cores }
    }

    /// Kronecker product `self ⊗ other`; `self` acts on the leading cores.
    pub fn kron(&self, other: &QttOperator) -> QttOperator {
        let mut cores = self.cores.clone();
        cores.extend(other.cores.iter().cloned());
        QttOperator { cores }
    }

    pub fn transpose(&self) -> QttOperator {
        let cores = self
            .cores
            .iter()
            .map(|c| c.view().permuted_axes([0, 2, 1, 3]).as_standard_layout().into_owned())
            .collect();
        QttOperator { cores }
    }

    pub fn round(&self, policy: TruncationPolicy) -> Result<QttOperator> {
        let v = self.to_vector().round(policy)?;
        Ok(Self::from_vector(v, &self.row_modes(), &self.col_modes()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// `y[(R a), i, (R' b)] = sum_j W[R, i, j, R'] x[a, j, b]`.
pub(crate) fn apply_core(w: &Array4<f64>, x: &Array3<f64>) -> Array3<f64> {
    let (rw, n, m, rw2) = w.dim();
    let (a, _, b) = x.dim();
    let wp = reshape(&w.view().permuted_axes([0, 1, 3, 2]), (rw * n * rw2, m));
    let xp = reshape(&x.view().permuted_axes([1, 0, 2]), (m, a * b));
    let p = wp.dot(&xp);
    let p = reshape(&p, (rw, n, rw2, a, b)).permuted_axes([0, 3, 1, 2, 4]);
    reshape(&p, (rw * a, n, rw2 * b))
}

/// Merge two adjacent operator cores into one over the combined mode.
pub(crate) fn merge_cores(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    let (ra, n1, m1, r) = a.dim();
    let (_, n2, m2, rb) = b.dim();
    let p = reshape(a, (ra * n1 * m1, r)).dot(&reshape(b, (r, n2 * m2 * rb)));
    let p = reshape(&p, ndarray::IxDyn(&[ra, n1, m1, n2, m2, rb]))
        .permuted_axes(ndarray::IxDyn(&[0, 1, 3, 2, 4, 5]));
    reshape(&p, (ra, n1 * n2, m1 * m2, rb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(c: usize, rank: usize, seed: u64) -> QttOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = (0..c)
            .map(|k| {
                let rl = if k == 0 { 1 } else { rank };
                let rr = if k == c - 1 { 1 } else { rank };
                Array4::from_shape_fn((rl, 2, 2, rr), |_| rng.gen_range(-1.0..1.0))
            })
            .collect();
        QttOperator::from_cores(cores).unwrap()
    }

    fn random_vec(c: usize, rank: usize, seed: u64) -> QttVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = (0..c)
            .map(|k| {
                let rl = if k == 0 { 1 } else { rank };
                let rr = if k == c - 1 { 1 } else { rank };
                Array3::from_shape_fn((rl, 2, rr), |_| rng.gen_range(-1.0..1.0))
            })
            .collect();
        QttVector::from_cores(cores).unwrap()
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn identity_is_identity() {
        let i = QttOperator::identity(&[2, 2, 2]).to_dense().unwrap();
        assert_eq!(i, Array2::<f64>::eye(8));
    }

    #[test]
    fn diagonal_lift() {
        let v = random_vec(3, 2, 4);
        let d = QttOperator::from_diagonal(&v).to_dense().unwrap();
        let vd = v.to_dense().unwrap();
        assert!(close(&d, &Array2::from_diag(&vd), 1e-13));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn operator_algebra_matches_dense(seed in 0u64..1000, c in 1usize..5) {
            let a = random_op(c, 2, seed);
            let b = random_op(c, 3, seed + 11);
            let x = random_vec(c, 2, seed + 23);
            let ad = a.to_dense().unwrap();
            let bd = b.to_dense().unwrap();
            let xd = x.to_dense().unwrap();
            let ax = a.apply(&x).unwrap().to_dense().unwrap();
            let want = ad.dot(&xd);
            for (u, v) in ax.iter().zip(want.iter()) {
                prop_assert!((u - v).abs() < 1e-11 * (1.0 + v.abs()));
            }
            prop_assert!(close(&a.compose(&b).unwrap().to_dense().unwrap(), &ad.dot(&bd), 1e-11));
            prop_assert!(close(&a.add(&b).unwrap().to_dense().unwrap(), &(&ad + &bd), 1e-12));
            prop_assert!(close(&a.transpose().to_dense().unwrap(), &ad.t().to_owned(), 1e-15));
            prop_assert!(close(&a.round(TruncationPolicy::relative(1e-14)).unwrap().to_dense().unwrap(), &ad, 1e-10));
        }

        #[test]
        fn kron_matches_dense(seed in 0u64..1000) {
            let a = random_op(2, 2, seed);
            let b = random_op(2, 2, seed + 3);
            let k = a.kron(&b).to_dense().unwrap();
            let ad = a.to_dense().unwrap();
            let bd = b.to_dense().unwrap();
            for i in 0..4 { for j in 0..4 { for p in 0..4 { for q in 0..4 {
                prop_assert!((k[[i * 4 + p, j * 4 + q]] - ad[[i, j]] * bd[[p, q]]).abs() < 1e-12);
            }}}}
        }
    }

    #[test]
    fn merged_cores_match() {
        let a = random_op(2, 3, 9);
        let merged = merge_cores(&a.cores()[0], &a.cores()[1]);
        let m = QttOperator::from_cores(vec![merged]).unwrap().to_dense().unwrap();
        assert!(close(&m, &a.to_dense().unwrap(), 1e-12));
    }
}
