//! Deterministic numeric substrate.

mod linalg;
mod rng;

pub use linalg::{axpy, dot, LowerTriangular, SymMatrix, Vector};
pub use rng::{derive_seed, Rng};

use crate::error::{Error, Result};

/// Dominant eigenpair of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vector,
    pub iterations: usize,
}

/// Power iteration for the eigenvalue of largest magnitude.
///
/// Starts from the normalized all-ones vector. If that start lies in the null
/// space (`H 1 = 0` for a non-zero `H`) it restarts once from a seeded random
/// vector. Converged when `|H v - lambda v| <= tol * |lambda|`.
pub fn power_iteration(h: &SymMatrix, tol: f64, max_iters: usize) -> Result<EigenPair> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let n = h.dim();
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    match power_iteration_from(h, ones, tol, max_iters)? {
        Some(pair) => Ok(pair),
        None => {
            let mut rng = Rng::new(0x5eed_0f_e16e);
            let mut start = vec![0.0; n];
            rng.fill_normal(&mut start);
            let norm = dot(&start, &start).sqrt();
            start.iter_mut().for_each(|x| *x /= norm);
            power_iteration_from(h, start, tol, max_iters)?.ok_or_else(|| {
                Error::NotConverged { iters: 0, estimate: 0.0 }
            })
        }
    }
}

/// Returns `Ok(None)` on breakdown (start vector annihilated by a non-zero `H`).
fn power_iteration_from(
    h: &SymMatrix,
    mut v: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<Option<EigenPair>> {
    let n = h.dim();
    let h_nonzero = h.as_slice().iter().any(|&x| x != 0.0);
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for iter in 1..=max_iters.max(1) {
        h.matvec_into(&v, &mut w);
        lambda = dot(&v, &w);
        let residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            if h_nonzero {
                return Ok(None);
            }
            // zero matrix: every vector is an eigenvector of 0
            return Ok(Some(EigenPair { value: 0.0, vector: Vector::new(v)?, iterations: iter }));
        }
        if residual <= tol * lambda.abs() {
            return Ok(Some(EigenPair { value: lambda, vector: Vector::new(v)?, iterations: iter }));
        }
        // Normalizing by the Rayleigh sign keeps the iterate from flipping
        // when the dominant eigenvalue is negative.
        let s = if lambda < 0.0 { -norm } else { norm };
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / s;
        }
    }
    Err(Error::NotConverged { iters: max_iters, estimate: lambda })
}

/// Covariance argument for [`gaussian_vec`].
#[derive(Debug, Clone, Copy)]
pub enum Covariance<'a> {
    /// `c * I`
    Scalar(f64),
    Matrix(&'a SymMatrix),
}

/// One draw from `N(0, cov)`.
pub fn gaussian_vec(rng: &mut Rng, dim: usize, cov: Covariance<'_>) -> Result<Vector> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    match cov {
        Covariance::Scalar(c) => {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::NotPsd { index: 0, pivot: c });
            }
            let sd = c.sqrt();
            let mut out = vec![0.0; dim];
            rng.fill_normal(&mut out);
            out.iter_mut().for_each(|x| *x *= sd);
            Vector::new(out)
        }
        Covariance::Matrix(m) => {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: m.dim() });
            }
            let l = m.psd_factor()?;
            let mut z = vec![0.0; dim];
            rng.fill_normal(&mut z);
            let mut out = vec![0.0; dim];
            l.mul_into(&z, &mut out);
            Vector::new(out)
        }
    }
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Vector::new(grad)
}
