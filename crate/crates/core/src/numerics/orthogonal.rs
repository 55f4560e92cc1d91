use super::linalg::symmetric_eigen;
use super::matrix::Matrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};

/// A k×k orthogonal matrix whose columns are the per-subset coefficient
/// vectors of the partially randomized EBM.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix {
    m: Matrix,
}

impl OrthogonalMatrix {
    /// Wraps `m` after checking `‖M Mᵀ − I‖_max ≤ 1e-8`.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "orthogonal matrix must be square and non-empty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let err = orthogonality_error(&m);
        if !(err <= 1e-8) {
            return Err(Error::InvalidDimension(format!(
                "matrix is not orthogonal (max |MMᵀ - I| = {err:.3e})"
            )));
        }
        Ok(OrthogonalMatrix { m })
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.m
    }

    /// Column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.m.column(j)
    }

    /// All columns, each as its own vector.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|j| self.column(j)).collect()
    }
}

/// `max |M Mᵀ − I|`.
pub fn orthogonality_error(m: &Matrix) -> f64 {
    let prod = m.matmul(&m.transpose()).expect("square");
    prod.max_abs_diff(&Matrix::identity(m.rows()))
}

/// Draws a Gaussian k×k matrix and returns the eigenvectors of its symmetric
/// part, which are real and mutually orthogonal.
pub fn random_orthogonal(k: usize, rng: &mut SeededRng) -> Result<OrthogonalMatrix> {
    if k == 0 {
        return Err(Error::InvalidDimension("k must be at least 1".into()));
    }
    let raw: Vec<f64> = (0..k * k).map(|_| rng.normal()).collect();
    let b0 = Matrix::from_vec(k, k, raw)?;
    let mut sym = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            sym[(i, j)] = 0.5 * (b0[(i, j)] + b0[(j, i)]);
        }
    }
    let eig = symmetric_eigen(&sym)?;
    OrthogonalMatrix::new(eig.vectors)
}
