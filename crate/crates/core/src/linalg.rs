//! Small dense helpers shared by the algebra and solver modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigenvalues (ascending) and eigenvectors of a complex Hermitian matrix.
pub fn herm_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn imag_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.im)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Largest absolute entry of `m - mᴴ`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `½ xᴴ T x`, the real power of a Hermitian power matrix.
pub fn half_quadratic_form(t: &CMatrix, x: &CVector) -> f64 {
    0.5 * (x.adjoint() * t * x)[(0, 0)].re
}

/// Orthonormal basis (as columns) of the orthogonal complement of `k`.
///
/// Built from the Householder reflector that maps `k` onto a multiple of the
/// first unit vector; the remaining reflector columns span `k⊥`.
pub fn orthogonal_complement(k: &DVector<f64>) -> DMatrix<f64> {
    let m = k.len();
    let norm = k.norm();
    let mut u = k.clone();
    let sign = if k[0] >= 0.0 { 1.0 } else { -1.0 };
    u[0] += sign * norm;
    let uu = u.dot(&u);
    let mut h = DMatrix::<f64>::identity(m, m);
    if uu > 0.0 {
        h -= (&u * u.transpose()) * (2.0 / uu);
    }
    h.columns(1, m - 1).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let k = DVector::from_vec(vec![0.3, -2.0, 0.5, 1e-3]);
        let v = orthogonal_complement(&k);
        let gram = v.transpose() * &v;
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-14);
        assert!((v.transpose() * &k).norm() < 1e-14 * k.norm());
    }

    #[test]
    fn complement_of_negative_leading_entry() {
        let k = DVector::from_vec(vec![-1.0, 0.0]);
        let v = orthogonal_complement(&k);
        assert!((v.transpose() * &k).norm() < 1e-15);
        assert!((v.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sorted_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = sym_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let r = &m * vecs.column(1) - vecs.column(1) * vals[1];
        assert!(r.norm() < 1e-14);
    }
}
