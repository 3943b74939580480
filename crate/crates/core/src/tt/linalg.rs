use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use ndarray::{Array, Array1, Array2, ArrayBase, Data, Dimension, IntoDimension, Ix2};

use crate::error::{QttError, Result};

/// Row-major reshape of any array into a new owned array.
pub fn reshape<S, D, E>(a: &ArrayBase<S, D>, shape: E) -> Array<f64, E::Dim>
where
    S: Data<Elem = f64>,
    D: Dimension,
    E: IntoDimension,
{
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order(shape)
        .expect("reshape: element count mismatch")
}

fn to_faer(a: &Array2<f64>) -> Mat<f64> {
    let std = a.as_standard_layout();
    let (m, n) = a.dim();
    MatRef::from_row_major_slice(std.as_slice().unwrap(), m, n).to_owned()
}

fn from_faer(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn check_finite(a: &Array2<f64>, what: &'static str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(QttError::NonFinite(what));
    }
    Ok(())
}

/// Thin QR: `a = q r` with `q` of shape (m, k), `r` of shape (k, n), k = min(m, n).
pub fn thin_qr(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (m, n) = a.dim();
    if m.min(n) == 0 {
        return Err(QttError::Shape("QR of an empty matrix".into()));
    }
    check_finite(a, "qr input")?;
    let qr = to_faer(a).qr();
    let q = from_faer(qr.compute_thin_Q().as_ref());
    let r = from_faer(qr.thin_R());
    Ok((q, r))
}

/// Thin SVD `a = u diag(s) vt` with singular values in decreasing order.
pub fn thin_svd(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    check_finite(a, "svd input")?;
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| QttError::Linalg(format!("svd did not converge: {:?}", e)))?;
    let u = from_faer(svd.U());
    let s: Array1<f64> = svd.S().column_vector().iter().copied().collect();
    let v = svd.V();
    let vt = Array2::from_shape_fn((v.ncols(), v.nrows()), |(i, j)| v[(j, i)]);
    Ok((u, s, vt))
}

/// Solve `a x = b` by LU with partial pivoting. Fails on a non-finite result.
pub fn solve_dense(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, n) = a.dim();
    if m != n || b.len() != n {
        return Err(QttError::Shape("solve needs a square system".into()));
    }
    check_finite(a, "solve input")?;
    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let x = to_faer(a).partial_piv_lu().solve(&rhs);
    let out: Array1<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(QttError::Linalg("singular system".into()));
    }
    Ok(out)
}

/// Solve `a X = B` for several right-hand sides.
pub fn solve_dense_multi(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let (m, n) = a.dim();
    if m != n || b.nrows() != n {
        return Err(QttError::Shape("solve needs a square system".into()));
    }
    check_finite(a, "solve input")?;
    let x = to_faer(a).partial_piv_lu().solve(&to_faer(b));
    let out = from_faer(x.as_ref());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(QttError::Linalg("singular system".into()));
    }
    Ok(out)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    check_finite(a, "cholesky input")?;
    let llt = to_faer(a)
        .llt(faer::Side::Lower)
        .map_err(|_| QttError::Linalg("matrix is not positive definite".into()))?;
    Ok(from_faer(llt.L()))
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    check_finite(a, "eigen input")?;
    let eig = to_faer(a)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| QttError::Linalg(format!("eigensolver did not converge: {:?}", e)))?;
    let vals: Array1<f64> = eig.S().column_vector().iter().copied().collect();
    Ok((vals, from_faer(eig.U())))
}

/// Sparse LU factorization, reusable across right-hand sides.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    /// Factor the `n x n` matrix given by `(row, col, value)` entries;
    /// duplicates are summed.
    pub fn new(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        use faer::sparse::{SparseColMat, Triplet};
        let mut merged = std::collections::BTreeMap::new();
        for &(r, c, v) in entries {
            if r >= n || c >= n {
                return Err(QttError::Shape("sparse entry out of range".into()));
            }
            if !v.is_finite() {
                return Err(QttError::NonFinite("sparse matrix"));
            }
            *merged.entry((c, r)).or_insert(0.0) += v;
        }
        let trips: Vec<Triplet<usize, usize, f64>> =
            merged.into_iter().map(|((c, r), v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| QttError::Linalg(format!("sparse assembly: {:?}", e)))?;
        let lu = a.sp_lu().map_err(|e| QttError::Linalg(format!("sparse LU: {:?}", e)))?;
        Ok(SparseLu { n, lu })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        if b.len() != self.n {
            return Err(QttError::Shape("right-hand side length".into()));
        }
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Array1<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(QttError::Linalg("singular system".into()));
        }
        Ok(out)
    }
}

/// Smallest rank whose discarded tail has Frobenius norm at most `delta`, capped.
pub fn truncation_rank(s: &Array1<f64>, delta: f64, cap: Option<usize>) -> usize {
    let mut tail = 0.0;
    let mut r = s.len();
    while r > 1 {
        let next = tail + s[r - 1] * s[r - 1];
        if next.sqrt() > delta {
            break;
        }
        tail = next;
        r -= 1;
    }
    match cap {
        Some(c) => r.min(c.max(1)),
        None => r,
    }
}

/// Truncated SVD factors `(u, s vt)` keeping `rank` terms.
pub fn split(
    u: &Array2<f64>,
    s: &Array1<f64>,
    vt: &Array2<f64>,
    rank: usize,
) -> (Array2<f64>, Array2<f64>) {
    let u = u.slice(ndarray::s![.., ..rank]).to_owned();
    let mut svt = vt.slice(ndarray::s![..rank, ..]).to_owned();
    for (mut row, sv) in svt.rows_mut().into_iter().zip(s.iter()) {
        row *= *sv;
    }
    (u, svt)
}

pub fn frobenius<S: Data<Elem = f64>, D: Dimension>(a: &ArrayBase<S, D>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn as_matrix<S: Data<Elem = f64>, D: Dimension>(
    a: &ArrayBase<S, D>,
    rows: usize,
    cols: usize,
) -> Array<f64, Ix2> {
    reshape(a, (rows, cols))
}
