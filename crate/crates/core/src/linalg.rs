//! Dense symmetric linear algebra shared by every estimator.
//!
//! Eigenpairs are always reported in descending eigenvalue order, ties kept
//! in the solver's original index order, and each eigenvector is signed so
//! that its largest-magnitude component is positive. Two calls on the same
//! input therefore return bit-identical output.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that an input matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Threshold below which `is_psd` still accepts an eigenvalue.
pub const PSD_TOL: f64 = 1e-10;

/// A square real matrix that is symmetric and has only finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Validates `m` and symmetrizes it as `(M + M')/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidMatrix(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let scale = max_abs(&m);
        let tol = SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE);
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                if (m[(i, j)] - m[(j, i)]).abs() > tol {
                    return Err(Error::InvalidMatrix(format!(
                        "asymmetric entries at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Wraps a matrix that is symmetric by construction, averaging away
    /// round-off in the two triangles.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymmetricMatrix(m)
    }

    pub fn identity(p: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Principal submatrix on `idx` (rows and columns in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> SymmetricMatrix {
        SymmetricMatrix(self.0.select_rows(idx).select_columns(idx))
    }

    pub fn scaled(&self, c: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * c)
    }
}

impl AsRef<DMatrix<f64>> for SymmetricMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Eigenvalues in non-increasing order with orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// The leading `k` eigenpairs as a low-rank factor `V_k diag(δ_k) V_k'`.
    pub fn leading(&self, k: usize) -> LowRank {
        LowRank {
            basis: self.vectors.columns(0, k).into_owned(),
            weights: self.values.rows(0, k).into_owned(),
        }
    }

    /// `V diag(values) V'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.vectors * DMatrix::from_diagonal(&self.values);
        &scaled * self.vectors.transpose()
    }
}

/// Full symmetric eigendecomposition, sorted descending.
pub fn sym_eigen(m: &SymmetricMatrix) -> EigenDecomposition {
    let p = m.dim();
    if p == 0 {
        return EigenDecomposition {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let raw = SymmetricEigen::new(m.as_matrix().clone());
    let mut order: Vec<usize> = (0..p).collect();
    // sort_by is stable, so equal eigenvalues keep their original index order
    order.sort_by(|&a, &b| {
        raw.eigenvalues[b]
            .partial_cmp(&raw.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let values = DVector::from_iterator(p, order.iter().map(|&i| raw.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let col = raw.eigenvectors.column(src);
        let mut pivot = 0;
        let mut best = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    EigenDecomposition { values, vectors }
}

/// Low-rank symmetric factor `U diag(w) U'`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub basis: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl LowRank {
    pub fn empty(p: usize) -> Self {
        LowRank {
            basis: DMatrix::zeros(p, 0),
            weights: DVector::zeros(0),
        }
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.dim();
        if self.rank() == 0 {
            return DMatrix::zeros(p, p);
        }
        let mut scaled = self.basis.clone();
        for (mut col, w) in scaled.column_iter_mut().zip(self.weights.iter()) {
            col *= *w;
        }
        let dense = &scaled * self.basis.transpose();
        SymmetricMatrix::symmetrized(dense).into_inner()
    }

    /// Restricts the factor to the rows `idx` and the basis columns `cols`.
    pub fn restrict(&self, idx: &[usize], cols: &[usize]) -> LowRank {
        LowRank {
            basis: self.basis.select_rows(idx).select_columns(cols),
            weights: DVector::from_iterator(cols.len(), cols.iter().map(|&c| self.weights[c])),
        }
    }
}

/// Norm selector for [`matrix_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Frobenius,
    /// Largest singular value.
    Operator,
    /// Largest absolute entry.
    Max,
    /// Largest absolute row sum.
    LInf,
}

pub fn matrix_norm(a: &DMatrix<f64>, kind: NormKind) -> Result<f64> {
    check_finite(a)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(match kind {
        NormKind::Frobenius => a.norm(),
        NormKind::Max => max_abs(a),
        NormKind::LInf => a
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Operator => a
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0, f64::max),
    })
}

/// Spectral norm of a symmetric matrix, `max |λ_i|`.
pub fn spectral_norm_sym(m: &SymmetricMatrix) -> f64 {
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Precomputed `Σ^{-1/2}` for repeated evaluation of `‖A − Σ‖_Σ`.
#[derive(Debug, Clone)]
pub struct RelativeFrobenius {
    inv_sqrt: DMatrix<f64>,
}

impl RelativeFrobenius {
    pub fn new(sigma: &SymmetricMatrix) -> Result<Self> {
        let eig = sym_eigen(sigma);
        let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-12) {
            return Err(Error::NotPositiveDefinite(format!(
                "reference covariance has minimum eigenvalue {min:e}"
            )));
        }
        let scaled = DVector::from_iterator(eig.dim(), eig.values.iter().map(|v| v.powf(-0.5)));
        let inv_sqrt = &eig.vectors * DMatrix::from_diagonal(&scaled) * eig.vectors.transpose();
        Ok(RelativeFrobenius { inv_sqrt })
    }

    pub fn dim(&self) -> usize {
        self.inv_sqrt.nrows()
    }

    /// `p^{-1/2} ‖Σ^{-1/2} A Σ^{-1/2} − I‖_F`.
    pub fn distance(&self, estimate: &DMatrix<f64>) -> Result<f64> {
        let p = self.dim();
        if estimate.nrows() != p || estimate.ncols() != p {
            return Err(Error::InvalidInput(format!(
                "estimate is {}x{}, reference is {p}x{p}",
                estimate.nrows(),
                estimate.ncols()
            )));
        }
        let mut w = &self.inv_sqrt * estimate * &self.inv_sqrt;
        for i in 0..p {
            w[(i, i)] -= 1.0;
        }
        Ok(w.norm() / (p as f64).sqrt())
    }
}

/// `‖A − Σ‖_Σ` with `A` the estimate and `Σ` the reference covariance.
pub fn relative_frobenius(estimate: &SymmetricMatrix, sigma: &SymmetricMatrix) -> Result<f64> {
    RelativeFrobenius::new(sigma)?.distance(estimate.as_matrix())
}

pub fn min_eigenvalue(m: &SymmetricMatrix) -> f64 {
    if m.dim() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.as_matrix().clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &SymmetricMatrix) -> bool {
    min_eigenvalue(m) >= -PSD_TOL
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    Ok(SymmetricMatrix::symmetrized(chol.inverse()).into_inner())
}

/// Replaces every eigenvalue below `floor` by `floor`.
pub fn floor_eigenvalues(m: &SymmetricMatrix, floor: f64) -> SymmetricMatrix {
    let mut eig = sym_eigen(m);
    if eig.values.iter().all(|&v| v >= floor) {
        return m.clone();
    }
    for v in eig.values.iter_mut() {
        *v = v.max(floor);
    }
    SymmetricMatrix::symmetrized(eig.reconstruct())
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows().max(1), pos / m.nrows().max(1));
        return Err(Error::InvalidMatrix(format!("non-finite entry at ({r},{c})")));
    }
    Ok(())
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn wishart(p: usize, n: usize, seed: u64) -> SymmetricMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        SymmetricMatrix::symmetrized(x.transpose() * x)
    }

    #[test]
    fn identity_eigen_is_identity_columns() {
        let eig = sym_eigen(&SymmetricMatrix::identity(3));
        assert_eq!(eig.values.as_slice(), &[1.0, 1.0, 1.0]);
        for j in 0..3 {
            let col = eig.vectors.column(j);
            assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|v| **v == 0.0).count(), 2);
        }
    }

    #[test]
    fn diagonal_eigen_orders_descending() {
        let eig = sym_eigen(&SymmetricMatrix::from_diagonal(&[1.0, 4.0]));
        assert_eq!(eig.values.as_slice(), &[4.0, 1.0]);
        assert_abs_diff_eq!(eig.vectors[(1, 0)], 1.0);
        assert_abs_diff_eq!(eig.vectors[(0, 1)], 1.0);
    }

    #[test]
    fn wishart_reconstruction_and_orthonormality() {
        let m = wishart(20, 30, 7);
        let eig = sym_eigen(&m);
        let err = max_abs(&(eig.reconstruct() - m.as_matrix()));
        assert!(err <= 1e-8 * max_abs(m.as_matrix()), "reconstruction error {err}");
        let gram = eig.vectors.transpose() * &eig.vectors;
        assert!(max_abs(&(gram - DMatrix::identity(20, 20))) <= 1e-8);
        for w in eig.values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for col in eig.vectors.column_iter() {
            let (mut pivot, mut best) = (0, -1.0);
            for (i, v) in col.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    pivot = i;
                }
            }
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn eigen_is_deterministic() {
        let m = wishart(15, 10, 3);
        assert_eq!(sym_eigen(&m), sym_eigen(&m));
    }

    #[test]
    fn rejects_bad_inputs() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymmetricMatrix::new(asym), Err(Error::InvalidMatrix(_))));
        let nan = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(SymmetricMatrix::new(nan), Err(Error::InvalidMatrix(_))));
        let rect = DMatrix::zeros(2, 3);
        assert!(SymmetricMatrix::new(rect).is_err());
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-14, 1.0]);
        assert!(SymmetricMatrix::new(tiny).is_ok());
    }

    #[test]
    fn norm_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_abs_diff_eq!(matrix_norm(&i2, NormKind::Frobenius).unwrap(), 2f64.sqrt());
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 4.0]);
        assert_abs_diff_eq!(matrix_norm(&a, NormKind::Operator).unwrap(), 5.0, epsilon = 1e-12);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.0]);
        assert_abs_diff_eq!(matrix_norm(&b, NormKind::LInf).unwrap(), 3.0);
        assert_abs_diff_eq!(matrix_norm(&b, NormKind::Max).unwrap(), 3.0);
        let bad = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(matrix_norm(&bad, NormKind::Max).is_err());
    }

    #[test]
    fn relative_frobenius_examples() {
        let sigma = wishart(6, 40, 11);
        assert_abs_diff_eq!(relative_frobenius(&sigma, &sigma).unwrap(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            relative_frobenius(&sigma.scaled(2.0), &sigma).unwrap(),
            1.0,
            epsilon = 1e-10
        );
        let id = SymmetricMatrix::identity(4);
        let est = SymmetricMatrix::symmetrized(DMatrix::identity(4, 4) * 1.1);
        assert_abs_diff_eq!(relative_frobenius(&est, &id).unwrap(), 0.1, epsilon = 1e-12);
        let singular = SymmetricMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(
            relative_frobenius(&id.submatrix(&[0, 1]), &singular),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert_abs_diff_eq!(min_eigenvalue(&SymmetricMatrix::identity(5)), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(min_eigenvalue(&SymmetricMatrix::from_diagonal(&[1.0, -2.0])), -2.0);
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let r1 = SymmetricMatrix::symmetrized(&v * v.transpose());
        assert!(min_eigenvalue(&r1).abs() <= 1e-10);
        assert!(is_psd(&r1));
    }

    #[test]
    fn floor_lifts_small_eigenvalues() {
        let m = SymmetricMatrix::from_diagonal(&[2.0, -1.0]);
        let f = floor_eigenvalues(&m, 0.5);
        assert_abs_diff_eq!(f.get(0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.get(1, 1), 0.5, epsilon = 1e-12);
    }
}
