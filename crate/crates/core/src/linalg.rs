//! Small dense helpers shared by the physics modules.

use nalgebra::SymmetricEigen;

use crate::{CMatrix, Complex64};

/// Largest |M_ij - conj(M_ji)| over all index pairs.
pub fn hermiticity_violation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// Eigen-decomposition of a Hermitian matrix. The input is symmetrized
/// first so the solver sees an exactly Hermitian matrix.
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        let sym = (m + m.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(sym);
        HermitianEigen {
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// V f(Λ) V† for a real function applied to the spectrum.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let fl = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= fl;
            }
        }
        &scaled * v.adjoint()
    }
}

pub fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    HermitianEigen::new(m).min_eigenvalue()
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().copied().sum()
}

/// Tr(A B) without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_of_diagonal_matrix() {
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.25, 0.0),
            Complex64::new(0.75, 0.0),
        ]));
        let l = HermitianEigen::new(&m).map(f64::ln);
        assert!((l[(0, 0)].re - 0.25f64.ln()).abs() < 1e-14);
        assert!((l[(1, 1)].re - 0.75f64.ln()).abs() < 1e-14);
        assert!(l[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn violation_detects_antihermitian_entry() {
        let i = Complex64::new(0.0, 1.0);
        let z = Complex64::new(0.0, 0.0);
        let m = CMatrix::from_row_slice(2, 2, &[z, i, i, z]);
        assert!((hermiticity_violation(&m) - 2.0).abs() < 1e-15);
    }
}
