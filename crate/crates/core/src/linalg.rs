//! Dense vector and symmetric-matrix kernels.
//!
//! Everything here is plain `f64` arithmetic on row-major storage. The
//! problem sizes this crate targets are moderate (p in the tens to low
//! hundreds), so there is no blocking or BLAS dispatch.

use thiserror::Error;

/// Decision-space vector.
pub type Vector = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, found })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &[f64]) -> Vector {
    x.iter().map(|v| alpha * v).collect()
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Dense symmetric matrix stored row-major in full (both triangles).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = c;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = *d;
        }
        m
    }

    /// Builds from row-major data; the input is symmetrized.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(dim * dim, data.len())?;
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            check_dim(dim, r.len())?;
            data.extend_from_slice(r);
        }
        Self::from_row_major(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// `M <- (M + Mᵀ) / 2`
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    /// Largest `|M[i][j] - M[j][i]|` relative to `1 + |M[i][j]|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.data[i * n + j];
                let b = self.data[j * n + i];
                worst = worst.max((a - b).abs() / (1.0 + a.abs()));
            }
        }
        worst
    }

    /// In-place `M <- M + c·v·vᵀ`, computed on the upper triangle and mirrored.
    pub fn rank_one_update_mut(&mut self, v: &[f64], c: f64) -> Result<()> {
        check_dim(self.dim, v.len())?;
        let n = self.dim;
        for i in 0..n {
            let cvi = c * v[i];
            if cvi == 0.0 {
                continue;
            }
            for j in i..n {
                self.data[i * n + j] += cvi * v[j];
            }
        }
        self.mirror_upper();
        Ok(())
    }

    /// Returns `M + c·v·vᵀ`.
    pub fn rank_one_update(&self, v: &[f64], c: f64) -> Result<Self> {
        let mut out = self.clone();
        out.rank_one_update_mut(v, c)?;
        Ok(out)
    }

    fn mirror_upper(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                self.data[j * n + i] = self.data[i * n + j];
            }
        }
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vector> {
        check_dim(self.dim, v.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn add_assign(&mut self, other: &SymMatrix) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn add_diagonal(&mut self, c: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += c;
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim, other.dim)?;
        Ok(SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// General product `self · other` as plain row-major data. The product of
    /// two symmetric matrices is not symmetric in general, hence no `SymMatrix`.
    pub fn mat_mul(&self, other: &SymMatrix) -> Result<Vec<f64>> {
        check_dim(self.dim, other.dim)?;
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Ok(out)
    }

    pub fn ldlt(&self) -> Result<Ldlt> {
        Ldlt::factor(self)
    }

    /// Inverse through an `LDLᵀ` factorization. O(p³).
    pub fn spd_inverse(&self) -> Result<SymMatrix> {
        self.ldlt().map(|f| f.inverse())
    }
}

/// Square-root-free Cholesky: `M = L·D·Lᵀ` with unit lower-triangular `L`.
/// Every pivot in `D` must be positive, so success certifies that `M` is
/// positive definite.
#[derive(Debug, Clone)]
pub struct Ldlt {
    dim: usize,
    /// Strictly lower part of `L`, row-major; the unit diagonal is implied.
    lower: Vec<f64>,
    pivots: Vec<f64>,
}

impl Ldlt {
    pub fn factor(m: &SymMatrix) -> Result<Self> {
        let n = m.dim;
        let mut l = vec![0.0; n * n];
        let mut d = vec![0.0; n];
        // `work[k] = L[i][k]·d[k]`, reused across rows.
        let mut work = vec![0.0; n];
        for j in 0..n {
            let mut pivot = m.get(j, j);
            for k in 0..j {
                work[k] = l[j * n + k] * d[k];
                pivot -= l[j * n + k] * work[k];
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: j, value: pivot });
            }
            d[j] = pivot;
            for i in (j + 1)..n {
                let mut acc = m.get(i, j);
                for k in 0..j {
                    acc -= l[i * n + k] * work[k];
                }
                l[i * n + j] = acc / pivot;
            }
        }
        Ok(Self { dim: n, lower: l, pivots: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vector> {
        check_dim(self.dim, b.len())?;
        let n = self.dim;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for k in 0..i {
                acc -= l[i * n + k] * y[k];
            }
            y[i] = acc;
        }
        for (v, d) in y.iter_mut().zip(&self.pivots) {
            *v /= d;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in (i + 1)..n {
                acc -= l[k * n + i] * y[k];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e).expect("dimension fixed by construction");
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        inv.symmetrize();
        inv
    }
}

/// Solves `M·x = b` for symmetric positive definite `M`.
pub fn spd_factor_solve(m: &SymMatrix, b: &[f64]) -> Result<Vector> {
    check_dim(m.dim(), b.len())?;
    m.ldlt()?.solve(b)
}

pub fn is_positive_definite(m: &SymMatrix) -> bool {
    m.ldlt().is_ok()
}
