//! Dense factorizations backed by `faer`.
//!
//! Everything here runs sequentially so results are reproducible bit for bit
//! on a given machine.

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Views a row-major buffer as a matrix.
pub fn view_row_major(values: &[f64], rows: usize, cols: usize) -> MatRef<'_, f64> {
    assert_eq!(values.len(), rows * cols);
    // A row-major `rows × cols` buffer is the column-major layout of the transpose.
    MatRef::from_column_major_slice(values, cols, rows).transpose()
}

/// Singular values of a row-major matrix, in non-increasing order.
pub fn singular_values(values: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let a = view_row_major(values, rows, cols);
    a.singular_values()
        .map_err(|e| Error::Linalg(format!("svd did not converge: {e:?}")))
}

/// Seeded `rows × cols` standard Gaussian matrix, filled in row-major order.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat<f64> {
    let mut values = vec![0.0; rows * cols];
    for v in values.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    Mat::from_fn(rows, cols, |i, j| values[i * cols + j])
}

/// Matrix with orthonormal columns from the QR factorization of a seeded
/// Gaussian matrix.
///
/// Columns are sign-corrected so that `R` has a positive diagonal, which makes
/// the result Haar distributed.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat<f64> {
    assert!(rows >= cols, "need rows >= cols for orthonormal columns");
    let g = gaussian_matrix(rng, rows, cols);
    let qr = g.qr();
    let mut q = qr.compute_thin_Q();
    let r = qr.thin_R();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            for i in 0..rows {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Copies a matrix into a row-major buffer.
pub fn to_row_major(m: MatRef<'_, f64>) -> Vec<f64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthonormal(&mut rng, 12, 5);
        let gram = q.transpose() * &q;
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_major_view_round_trips() {
        let values: Vec<f64> = (0..6).map(f64::from).collect();
        let m = view_row_major(&values, 2, 3);
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(to_row_major(m), values);
    }

    #[test]
    fn singular_values_of_diagonal() {
        let values = vec![3.0, 0.0, 0.0, -4.0];
        let s = singular_values(&values, 2, 2).unwrap();
        assert!((s[0] - 4.0).abs() < 1e-14);
        assert!((s[1] - 3.0).abs() < 1e-14);
    }
}
