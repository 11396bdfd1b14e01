//! Dense row-major matrices in 64-bit floating point, with the factorizations
//! the rest of the crate needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix, row-major, always `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row-major data. Errors if the buffer length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of {} values cannot form a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("matrix from zero rows".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn scalar(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "expected 1x1 matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard matrix product. The inner loops skip zero entries of `self`,
    /// which makes products with sparse binary matrices cheap.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    /// `self += c * other`, in place.
    pub fn add_scaled(&mut self, other: &Matrix, c: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension("add_scaled shape mismatch".into()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension("dot shape mismatch".into()));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Stacks matrices vertically; all must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        if parts.is_empty() {
            return Err(Error::Empty("vstack of zero matrices".into()));
        }
        let cols = parts[0].cols;
        let rows: usize = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            if m.cols != cols {
                return Err(Error::Dimension("vstack column mismatch".into()));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Gathers the given rows into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Dimension(format!(
                    "row index {} out of {}",
                    i, self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }
}

/// Cholesky factor (lower triangular) of a symmetric positive definite matrix.
///
/// Only the lower triangle of `a` is read. A non-positive pivot reports the
/// failing index.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::Dimension(format!(
            "cholesky of non-square {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            let v = l.at(j, k);
            d -= v * v;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in (j + 1)..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, s / dj);
        }
    }
    Ok(l)
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let l = cholesky(a)?;
    cholesky_solve_factored(&l, b)
}

/// Solves with an already-computed lower Cholesky factor.
pub fn cholesky_solve_factored(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if b.rows() != n {
        return Err(Error::Dimension(format!(
            "solve rhs has {} rows, factor is {}x{}",
            b.rows(),
            n,
            n
        )));
    }
    let mut x = b.clone();
    // forward substitution: L y = b
    for col in 0..x.cols() {
        for i in 0..n {
            let mut s = x.at(i, col);
            for k in 0..i {
                s -= l.at(i, k) * x.at(k, col);
            }
            x.set(i, col, s / l.at(i, i));
        }
        // back substitution: L^T x = y
        for i in (0..n).rev() {
            let mut s = x.at(i, col);
            for k in (i + 1)..n {
                s -= l.at(k, i) * x.at(k, col);
            }
            x.set(i, col, s / l.at(i, i));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.at(i, k) * b.at(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let i2 = Matrix::identity(2);
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_projector() {
        let p = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = Matrix::from_vec(2, 1, vec![5.0, 7.0]).unwrap();
        let out = p.matmul(&v).unwrap();
        assert_eq!(out.data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(11);
        let a = Matrix::from_vec(3, 4, (0..12).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let b = Matrix::from_vec(4, 2, (0..8).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = triple_loop(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn cholesky_solve_identity() {
        let a = Matrix::identity(3);
        let b = Matrix::from_vec(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn cholesky_solve_diagonal() {
        let a = Matrix::from_vec(2, 2, vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![8.0, 27.0]).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        assert!((x.at(0, 0) - 2.0).abs() < 1e-14);
        assert!((x.at(1, 0) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_solve_random_pd_residual() {
        let mut rng = Rng::new(5);
        let n = 6;
        let g = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.normal()).collect()).unwrap();
        // G G^T + I is comfortably positive definite
        let mut a = g.matmul(&g.transpose()).unwrap();
        for i in 0..n {
            a.set(i, i, a.at(i, i) + 1.0);
        }
        let b = Matrix::from_vec(n, 2, (0..n * 2).map(|_| rng.normal()).collect()).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        let r = a.matmul(&x).unwrap().sub(&b).unwrap();
        assert!(r.frobenius_norm() < 1e-9 * b.frobenius_norm().max(1.0));
    }

    #[test]
    fn cholesky_recovers_known_solution() {
        let mut rng = Rng::new(17);
        let n = 6;
        let g = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.normal()).collect()).unwrap();
        let mut a = g.matmul(&g.transpose()).unwrap();
        for i in 0..n {
            a.set(i, i, a.at(i, i) + 1.0);
        }
        let x_true = Matrix::from_vec(n, 1, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let b = a.matmul(&x_true).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        let err = x.sub(&x_true).unwrap().frobenius_norm() / x_true.frobenius_norm();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn cholesky_rejects_non_pd_naming_pivot() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        match cholesky(&a) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }
}
