//! Principal subspaces and the angles between them.

use ilvm_core::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Orthonormal basis `[D, k]` of the top-`k` principal directions of the
/// rows of `x`.
pub fn pca_basis(x: &Tensor, k: usize) -> DMatrix<f64> {
    let m = to_matrix(x);
    let n = m.nrows() as f64;
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(m.ncols(), k, |i, j| eig.eigenvectors[(i, order[j])])
}

/// Orthonormal basis `[D, K]` of the image of the linear map `z ↦ z · w`
/// for a `[K, D]` weight matrix.
pub fn image_basis(w: &Tensor) -> DMatrix<f64> {
    to_matrix(w).transpose().qr().q()
}

/// Largest principal angle between two subspaces given by orthonormal bases,
/// in degrees.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = (a.transpose() * b).singular_values();
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_between_coordinate_planes() {
        let e = |cols: &[usize]| DMatrix::from_fn(3, cols.len(), |i, j| if i == cols[j] { 1.0 } else { 0.0 });
        assert!(max_principal_angle(&e(&[0, 1]), &e(&[1, 0])).abs() < 1e-6);
        assert!((max_principal_angle(&e(&[0, 1]), &e(&[0, 2])) - 90.0).abs() < 1e-9);
        let tilted = DMatrix::from_column_slice(3, 1, &[0.5f64.sqrt(), 0.5f64.sqrt(), 0.0]);
        assert!((max_principal_angle(&e(&[0]), &tilted) - 45.0).abs() < 1e-9);
    }

    #[test]
    fn pca_finds_dominant_axis() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 - 25.0) * 0.3, ((i * 7) % 5) as f64 * 0.01]).collect();
        let b = pca_basis(&Tensor::from_rows(&rows).unwrap(), 1);
        assert!(b[(0, 0)].abs() > 0.999);
        let w = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert!(max_principal_angle(&b, &image_basis(&w)) < 0.1);
    }
}
