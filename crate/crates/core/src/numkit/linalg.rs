use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of finite `f64` values.
///
/// Constructors reject empty or non-finite data. Arithmetic helpers do not
/// re-check finiteness on every call; callers that can produce overflow
/// (optimizer steps) check explicitly with [`Vector::is_finite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("vector dimension must be positive".into()));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self(vec![0.0; dim])
    }

    pub fn from_slice(data: &[f64]) -> Result<Self> {
        Self::new(data.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        axpy(alpha, x, &mut self.0);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sub(&self, other: &[f64]) -> Vector {
        debug_assert_eq!(self.dim(), other.len());
        Vector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major data. Symmetry is checked with a
    /// relative tolerance of 1e-12 and then enforced exactly by averaging.
    pub fn new(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, actual: data.len() });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry ({}, {})", i / dim, i % dim)));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                let m = 0.5 * (a + b);
                data[i * dim + j] = m;
                data[j * dim + i] = m;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("matrix rows must form a square".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let dim = values.len();
        let mut data = vec![0.0; dim * dim];
        for (i, v) in values.iter().enumerate() {
            data[i * dim + i] = *v;
        }
        Self::new(dim, data)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, c: f64) -> Self {
        assert!(dim > 0);
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = c;
        }
        Self { dim, data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::scalar(dim, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.dim];
        self.matvec_into(x, &mut out);
        Vector(out)
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `x^T M x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.dim).map(|i| x[i] * dot(self.row(i), x)).sum()
    }

    /// `A M A` for symmetric `A` (the sandwich used for `H Cov(c) H`).
    pub fn sandwich(&self, outer: &SymMatrix) -> SymMatrix {
        let n = self.dim;
        assert_eq!(n, outer.dim);
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = outer.get(i, k);
                if a != 0.0 {
                    axpy(a, self.row(k), &mut tmp[i * n..(i + 1) * n]);
                }
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = tmp[i * n + k];
                if a != 0.0 {
                    axpy(a, outer.row(k), &mut out[i * n..(i + 1) * n]);
                }
            }
        }
        SymMatrix::new(n, out).expect("sandwich of symmetric matrices is symmetric")
    }

    /// Lower-triangular `L` with `L L^T = self`, for positive semidefinite
    /// input. Pivots within `1e-12 * max|diag|` of zero are treated as exact
    /// zeros so singular covariances factor cleanly.
    pub fn psd_factor(&self) -> Result<LowerTriangular> {
        let n = self.dim;
        let scale = (0..n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d < -tol {
                return Err(Error::NotPsd { index: j, pivot: d });
            }
            if d <= tol {
                // Zero pivot: the rest of the column must vanish for PSD input.
                for i in (j + 1)..n {
                    let mut s = self.get(i, j);
                    for k in 0..j {
                        s -= l[i * n + k] * l[j * n + k];
                    }
                    if s.abs() > 1e-8 * scale {
                        return Err(Error::NotPsd { index: j, pivot: d });
                    }
                }
                continue;
            }
            let root = d.sqrt();
            l[j * n + j] = root;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / root;
            }
        }
        Ok(LowerTriangular { dim: n, data: l })
    }
}

/// Lower-triangular factor produced by [`SymMatrix::psd_factor`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// `out = L z`
    pub fn mul_into(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            out[i] = dot(&self.data[i * n..i * n + i + 1], &z[..=i]);
        }
    }
}
