//! Symmetric positive-definite matrices and the Stein divergence.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Largest tolerated `|X - X^T|` entry when wrapping a matrix.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Number of times [`regularize`] doubles epsilon before giving up.
pub const MAX_REGULARIZATION_DOUBLINGS: u32 = 10;

/// A symmetric positive-definite matrix with its cached log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    log_det: f64,
}

/// `ln det(m)` from the Cholesky factor, `None` if `m` is not positive
/// definite.
pub fn cholesky_log_det(m: &DMatrix<f64>) -> Option<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    let n = s.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    s
}

impl SpdMatrix {
    /// Wraps `mat` after checking symmetry and positive definiteness.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        check_square(&mat)?;
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault("non-finite matrix entry".into()));
        }
        let scale = mat.amax().max(1.0);
        if asymmetry(&mat) > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let mat = symmetrized(&mat);
        let log_det = cholesky_log_det(&mat).ok_or(Error::NotPositiveDefinite)?;
        Ok(SpdMatrix { mat, log_det })
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            mat: DMatrix::identity(dim, dim),
            log_det: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Row-major upper triangle, `dim * (dim + 1) / 2` values.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.mat[(i, j)]);
            }
        }
        out
    }

    /// Inverse of [`upper_triangle`](Self::upper_triangle).
    pub fn from_upper_triangle(dim: usize, values: &[f64]) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        let mut mat = DMatrix::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                mat[(i, j)] = values[k];
                mat[(j, i)] = values[k];
                k += 1;
            }
        }
        SpdMatrix::new(mat)
    }
}

/// Stein divergence `ln det((X + Y) / 2) - ln det(XY) / 2`.
///
/// Symmetric in its arguments and zero iff `x == y`. Log-determinants come
/// from Cholesky factors, never from explicit determinants.
pub fn stein_divergence(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let mid = (&x.mat + &y.mat) * 0.5;
    let mid_log_det = cholesky_log_det(&mid).ok_or(Error::NotPositiveDefinite)?;
    let d = mid_log_det - 0.5 * (x.log_det + y.log_det);
    // Rounding can push identical-looking arguments a hair below zero.
    Ok(d.max(0.0))
}

/// Shifts a symmetric matrix by `epsilon * I` so it factorizes.
///
/// If the shifted matrix is still not positive definite, epsilon doubles up
/// to [`MAX_REGULARIZATION_DOUBLINGS`] times.
pub fn regularize(x: &DMatrix<f64>, epsilon: f64) -> Result<SpdMatrix> {
    check_square(x)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "regularization epsilon must be positive, got {epsilon}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFault("non-finite matrix entry".into()));
    }
    let base = symmetrized(x);
    let mut eps = epsilon;
    for _ in 0..=MAX_REGULARIZATION_DOUBLINGS {
        let mut shifted = base.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += eps;
        }
        if let Some(log_det) = cholesky_log_det(&shifted) {
            return Ok(SpdMatrix {
                mat: shifted,
                log_det,
            });
        }
        eps *= 2.0;
    }
    Err(Error::IrreparablySingular(eps / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_row_slice(v))).unwrap()
    }

    #[test]
    fn stein_hand_value() {
        let d = stein_divergence(&diag(&[1.0, 1.0]), &diag(&[4.0, 4.0])).unwrap();
        let expected = 2.0 * 2.5f64.ln() - 4.0f64.ln();
        assert_relative_eq!(d, expected, epsilon = 1e-12);
        assert_relative_eq!(d, 0.44629, epsilon = 1e-5);
    }

    #[test]
    fn stein_self_is_zero() {
        let x = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
        ))
        .unwrap();
        assert_eq!(stein_divergence(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn stein_rejects_dimension_mismatch() {
        let err = stein_divergence(&diag(&[1.0]), &diag(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn new_rejects_indefinite_and_asymmetric() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SpdMatrix::new(indefinite),
            Err(Error::NotPositiveDefinite)
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            SpdMatrix::new(asym),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn regularize_zero_matrix() {
        let r = regularize(&DMatrix::zeros(4, 4), 1e-6).unwrap();
        assert_eq!(r.matrix(), &(DMatrix::<f64>::identity(4, 4) * 1e-6));
    }

    #[test]
    fn regularize_shifts_spectrum_by_epsilon() {
        let x = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let before = x.clone().symmetric_eigenvalues();
        let r = regularize(&x, 0.25).unwrap();
        let after = r.matrix().clone().symmetric_eigenvalues();
        let mut b: Vec<f64> = before.iter().copied().collect();
        let mut a: Vec<f64> = after.iter().copied().collect();
        b.sort_by(f64::total_cmp);
        a.sort_by(f64::total_cmp);
        for (x, y) in b.iter().zip(&a) {
            assert_relative_eq!(y - x, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn regularize_rank_deficient_gram() {
        // Rank-3 covariance in 72 dimensions, as from three frames.
        let d = 72;
        let cols: Vec<DVector<f64>> = (0..3)
            .map(|k| DVector::from_fn(d, |i, _| ((i * (k + 2)) as f64 * 0.37).sin()))
            .collect();
        let mut g = DMatrix::zeros(d, d);
        for c in &cols {
            g.ger(1.0, c, c, 1.0);
        }
        assert!(cholesky_log_det(&g).is_none());
        let r = regularize(&g, 1e-6).unwrap();
        assert!(cholesky_log_det(r.matrix()).is_some());
    }

    #[test]
    fn regularize_doubles_until_definite() {
        // Smallest eigenvalue -1e-3: needs epsilon above 1e-3.
        let x = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, -1e-3]));
        let r = regularize(&x, 1e-4).unwrap();
        assert!(r.matrix()[(1, 1)] > 0.0);
        let hopeless = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, -10.0]));
        assert!(matches!(
            regularize(&hopeless, 1e-6),
            Err(Error::IrreparablySingular(_))
        ));
    }

    #[test]
    fn upper_triangle_round_trip() {
        let x = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
        ))
        .unwrap();
        let tri = x.upper_triangle();
        assert_eq!(tri.len(), 6);
        assert_eq!(SpdMatrix::from_upper_triangle(3, &tri).unwrap(), x);
    }
}
