//! Small dense symmetric positive-definite kernel: Cholesky, triangular
//! solves, log-determinants and Gaussian sampling.
//!
//! Both matrix types store the lower triangle packed row by row, so row `i`
//! occupies `i(i+1)/2 .. i(i+1)/2 + i + 1`.

use std::cell::Cell;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative pivot tolerance: pivots at or below `PIVOT_TOLERANCE · max diagonal` are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

thread_local! {
    static FACTORIZATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of Cholesky factorizations of order > 0 started on the calling thread.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.with(Cell::get)
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Symmetric matrix in packed lower-triangle storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; row_offset(n)],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Builds the matrix from its lower triangle; `f` is called with `j <= i`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(row_offset(n));
        for i in 0..n {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        SymMatrix { n, data }
    }

    /// Builds from full rows, rejecting asymmetric or non-finite input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for j in 0..i {
                if row[j] != rows[j][i] {
                    return Err(Error::Domain(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        self.data[row_offset(i) + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        self.data[row_offset(i) + j] = value;
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    /// `A · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[row_offset(i)..row_offset(i) + i + 1];
            out[i] += dot(&row[..i], &x[..i]) + row[i] * x[i];
            for j in 0..i {
                out[j] += row[j] * x[i];
            }
        }
        Ok(out)
    }

    fn max_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| self.data[row_offset(i) + i])
            .fold(0.0, f64::max)
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor {
    n: usize,
    data: Vec<f64>,
}

impl CholFactor {
    pub fn order(&self) -> usize {
        self.n
    }

    /// Entry `L[i][j]`, zero above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[row_offset(i) + j]
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[row_offset(i)..row_offset(i) + i + 1]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }

    /// Solves `L y = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let mut y = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let v = (b[i] - dot(&row[..i], &y)) / row[i];
            y.push(v);
        }
        Ok(y)
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_solve_in_place(&self, y: &mut [f64]) -> Result<()> {
        self.check_len(y.len())?;
        for i in (0..self.n).rev() {
            let row = self.row(i);
            let xi = y[i] / row[i];
            y[i] = xi;
            for (yk, lik) in y[..i].iter_mut().zip(&row[..i]) {
                *yk -= lik * xi;
            }
        }
        Ok(())
    }

    /// `L · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        Ok((0..self.n).map(|i| dot(self.row(i), &v[..=i])).collect())
    }

    /// Quadratic form `bᵀ A⁻¹ b = ‖L⁻¹ b‖²`.
    pub fn inv_quad(&self, b: &[f64]) -> Result<f64> {
        let y = self.forward_solve(b)?;
        Ok(dot(&y, &y))
    }
}

/// Factorizes `a` without copying it.
pub fn cholesky_in_place(a: SymMatrix) -> Result<CholFactor> {
    let n = a.n;
    if n > 0 {
        FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    }
    let tol = PIVOT_TOLERANCE * a.max_diagonal();
    let mut data = a.data;
    for i in 0..n {
        let off_i = row_offset(i);
        let (done, rest) = data.split_at_mut(off_i);
        let row_i = &mut rest[..=i];
        for j in 0..i {
            let row_j = &done[row_offset(j)..row_offset(j) + j + 1];
            let s = row_i[j] - dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let pivot = row_i[i] - dot(&row_i[..i], &row_i[..i]);
        if !(pivot > tol) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { row: i, pivot });
        }
        row_i[i] = pivot.sqrt();
    }
    Ok(CholFactor { n, data })
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &SymMatrix) -> Result<CholFactor> {
    cholesky_in_place(a.clone())
}

/// `A⁻¹ · rhs` through forward and back substitution.
pub fn solve_spd(l: &CholFactor, rhs: &[f64]) -> Result<Vec<f64>> {
    let mut y = l.forward_solve(rhs)?;
    l.backward_solve_in_place(&mut y)?;
    Ok(y)
}

/// `log |A| = 2 Σ log L_kk`.
pub fn log_det(l: &CholFactor) -> f64 {
    2.0 * (0..l.n).map(|i| l.row(i)[i].ln()).sum::<f64>()
}

/// Draws `L ε` with `ε` i.i.d. standard normal.
pub fn sample_gaussian<R: Rng + ?Sized>(l: &CholFactor, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..l.n).map(|_| rng.sample(StandardNormal)).collect();
    l.mul_vec(&eps).expect("length matches by construction")
}

/// Zero-mean Gaussian log-density of `z` under covariance `a`, constants omitted:
/// `−½ (log|A| + zᵀ A⁻¹ z)`.
pub fn gaussian_loglik(a: SymMatrix, z: &[f64]) -> Result<f64> {
    if z.len() != a.order() {
        return Err(Error::DimensionMismatch {
            expected: a.order(),
            got: z.len(),
        });
    }
    let l = cholesky_in_place(a)?;
    Ok(-0.5 * (log_det(&l) + l.inv_quad(z)?))
}
