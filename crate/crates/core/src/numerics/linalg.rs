//! Dense symmetric solvers: Cholesky with jitter, cyclic Jacobi eigensolver,
//! and an LU determinant.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factors `a`, retrying with a growing diagonal jitter when the plain
    /// factorization hits a non-positive pivot.
    pub fn factor(a: &Matrix) -> Result<Cholesky> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::InvalidDimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.cols()
            )));
        }
        if let Some(l) = factor_plain(a, 0.0) {
            return Ok(Cholesky { l });
        }
        let mean_diag = (0..n).map(|i| a[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
        let mut jitter = 1e-10 * mean_diag.max(1e-300);
        for _ in 0..6 {
            if let Some(l) = factor_plain(a, jitter) {
                log::warn!("cholesky needed diagonal jitter {jitter:.3e}");
                return Ok(Cholesky { l });
            }
            jitter *= 100.0;
        }
        Err(Error::IllConditioned)
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.l;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let s = dot(&l.row(i)[..i], &y[..i]);
            y[i] = (b[i] - s) / l[(i, i)];
        }
        let mut x = y;
        for i in (0..n).rev() {
            let mut s = x[i];
            for p in i + 1..n {
                s -= l[(p, i)] * x[p];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

fn factor_plain(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj: Vec<f64> = l.row(j)[..j].to_vec();
        let d = a[(j, j)] + jitter - dot(&lj, &lj);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &lj);
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "spd solve right-hand side",
            expected: a.rows(),
            found: b.len(),
        });
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
/// `1e-12` times the matrix norm.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n || n == 0 {
        return Err(Error::InvalidDimension(format!(
            "eigendecomposition needs a non-empty square matrix, got {}x{}",
            n,
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigendecomposition input"));
    }
    let mut m = a.clone();
    // symmetrize exactly so rotations see a truly symmetric matrix
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let mut v = Matrix::identity(n);
    let norm = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * norm.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off = off_diagonal_norm(&m);
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }
    if off_diagonal_norm(&m) > tol * 1e3 {
        return Err(Error::IllConditioned);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Applies the Jacobi rotation `J(p, q, c, s)`: `m <- Jᵀ m J`, `v <- v J`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(a: &Matrix) -> Result<f64> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::InvalidDimension("determinant of non-square matrix".into()));
    }
    let mut m = a.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        if m[(pivot, col)] == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            det = -det;
        }
        let d = m[(col, col)];
        det *= d;
        for r in col + 1..n {
            let f = m[(r, col)] / d;
            if f != 0.0 {
                for k in col..n {
                    m[(r, k)] -= f * m[(col, k)];
                }
            }
        }
    }
    Ok(det)
}
