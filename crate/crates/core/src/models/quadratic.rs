use crate::error::{Error, Result};
use crate::models::LossModel;
use crate::numkit::{axpy, dot, power_iteration, Rng, SymMatrix, Vector};

/// Analytic eigen-decomposition `H = V diag(lambda) V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, one per eigenvalue.
    pub eigenvectors: Vec<Vector>,
}

/// Per-example quadratic loss `L_j(w) = 1/2 (w - c_j)^T H (w - c_j)`.
///
/// The centers sum to zero, so the full-batch loss is `1/2 w^T H w` plus a
/// constant and the minimizer is the origin. The minibatch gradient noise has
/// the exact covariance `H Cov(c) H / B` (sampling with replacement; without
/// replacement it carries the usual `(N - B) / (N - 1)` factor).
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    hessian: SymMatrix,
    diag: Option<Vec<f64>>,
    centers: Vec<Vector>,
    /// `H c_j`, row-major `N x d`.
    hc: Vec<f64>,
    offset: f64,
    spectrum: Option<Spectrum>,
}

impl QuadraticModel {
    pub fn new(hessian: SymMatrix, centers: Vec<Vector>) -> Result<Self> {
        let d = hessian.dim();
        if centers.is_empty() {
            return Err(Error::InvalidArgument("quadratic model needs at least one example".into()));
        }
        if let Some(c) = centers.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: c.dim() });
        }
        hessian.psd_factor()?;
        let mut sum = vec![0.0; d];
        let mut scale: f64 = 1.0;
        for c in &centers {
            axpy(1.0, c, &mut sum);
            scale = scale.max(c.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
        }
        let tol = 1e-9 * scale * centers.len() as f64;
        if let Some(i) = sum.iter().position(|s| s.abs() > tol) {
            return Err(Error::InvalidArgument(format!(
                "centers must sum to zero (coordinate {i} sums to {})",
                sum[i]
            )));
        }
        let diag = hessian.is_diagonal().then(|| hessian.diagonal());
        let mut model = Self { hessian, diag, centers, hc: Vec::new(), offset: 0.0, spectrum: None };
        let n = model.centers.len();
        let mut hc = vec![0.0; n * d];
        let mut offset = 0.0;
        for (j, c) in model.centers.iter().enumerate() {
            model.hess_mul_into(c, &mut hc[j * d..(j + 1) * d]);
            offset += 0.5 * dot(c, &hc[j * d..(j + 1) * d]);
        }
        model.hc = hc;
        model.offset = offset / n as f64;
        if let Some(diag) = &model.diag {
            let eigenvectors = (0..d)
                .map(|i| {
                    let mut e = Vector::zeros(d);
                    e[i] = 1.0;
                    e
                })
                .collect();
            model.spectrum = Some(Spectrum { eigenvalues: diag.clone(), eigenvectors });
        }
        Ok(model)
    }

    /// Like [`QuadraticModel::new`] but subtracts the mean center first.
    pub fn centered(hessian: SymMatrix, mut centers: Vec<Vector>) -> Result<Self> {
        if let Some(first) = centers.first() {
            let d = first.dim();
            let mut mean = vec![0.0; d];
            for c in &centers {
                if c.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, actual: c.dim() });
                }
                axpy(1.0 / centers.len() as f64, c, &mut mean);
            }
            for c in &mut centers {
                c.axpy(-1.0, &mean);
            }
        }
        Self::new(hessian, centers)
    }

    /// Diagonal Hessian `diag(eigenvalues)` with `n` Gaussian centers whose
    /// coordinate `i` has standard deviation `center_std[i]` (before
    /// re-centering).
    pub fn synthetic(eigenvalues: &[f64], center_std: &[f64], n: usize, rng: &mut Rng) -> Result<Self> {
        if eigenvalues.len() != center_std.len() {
            return Err(Error::DimensionMismatch { expected: eigenvalues.len(), actual: center_std.len() });
        }
        let centers = (0..n)
            .map(|_| Vector::new(center_std.iter().map(|s| s * rng.normal()).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::centered(SymMatrix::diag(eigenvalues)?, centers)
    }

    /// Attaches an analytic spectrum, validated against `H` to 1e-9.
    pub fn with_spectrum(mut self, spectrum: Spectrum) -> Result<Self> {
        let d = self.dim();
        if spectrum.eigenvalues.len() != d || spectrum.eigenvectors.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: spectrum.eigenvalues.len() });
        }
        for (lambda, v) in spectrum.eigenvalues.iter().zip(&spectrum.eigenvectors) {
            let hv = self.hessian.matvec(v);
            let err = hv.iter().zip(v.iter()).map(|(a, b)| (a - lambda * b).abs()).fold(0.0, f64::max);
            if err > 1e-9 * lambda.abs().max(1.0) || (v.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("eigenpair for {lambda} does not match H")));
            }
        }
        self.spectrum = Some(spectrum);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.hessian.dim()
    }

    pub fn num_examples(&self) -> usize {
        self.centers.len()
    }

    pub fn hessian(&self) -> &SymMatrix {
        &self.hessian
    }

    pub fn centers(&self) -> &[Vector] {
        &self.centers
    }

    pub fn spectrum(&self) -> Option<&Spectrum> {
        self.spectrum.as_ref()
    }

    fn hess_mul_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.diag {
            Some(diag) => {
                for ((o, h), xi) in out.iter_mut().zip(diag).zip(x) {
                    *o = h * xi;
                }
            }
            None => self.hessian.matvec_into(x, out),
        }
    }

    /// Population covariance of the centers, `(1/N) sum_j c_j c_j^T`.
    pub fn center_covariance(&self) -> SymMatrix {
        let d = self.dim();
        let n = self.num_examples() as f64;
        let mut data = vec![0.0; d * d];
        for c in &self.centers {
            for i in 0..d {
                axpy(c[i] / n, c, &mut data[i * d..(i + 1) * d]);
            }
        }
        SymMatrix::new(d, data).expect("outer-product sum is symmetric")
    }

    /// Per-example gradient covariance `H Cov(c) H`; independent of `w`.
    pub fn noise_covariance(&self) -> SymMatrix {
        self.center_covariance().sandwich(&self.hessian)
    }

    /// Largest Hessian eigenvalue, from the analytic spectrum when present.
    pub fn lambda_max(&self) -> Result<f64> {
        match &self.spectrum {
            Some(s) => Ok(s.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
            None => Ok(power_iteration(&self.hessian, 1e-12, 100_000)?.value),
        }
    }

    pub fn lambda_min(&self) -> Option<f64> {
        self.spectrum.as_ref().map(|s| s.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// `2 / lambda_max`: full-batch gradient descent converges iff `eps` is
    /// below this value.
    pub fn critical_lr(&self) -> Result<f64> {
        let lambda = self.lambda_max()?;
        if !(lambda > 0.0) {
            return Err(Error::Precondition(format!(
                "critical learning rate undefined for lambda_max = {lambda}"
            )));
        }
        Ok(2.0 / lambda)
    }

    /// Full-batch loss `C(w) = 1/2 w^T H w + const`.
    pub fn loss(&self, omega: &[f64]) -> f64 {
        self.excess_loss(omega) + self.offset
    }

    /// `C(w) - min C = 1/2 w^T H w`.
    pub fn excess_loss(&self, omega: &[f64]) -> f64 {
        match &self.diag {
            Some(diag) => 0.5 * diag.iter().zip(omega).map(|(h, w)| h * w * w).sum::<f64>(),
            None => 0.5 * self.hessian.quad_form(omega),
        }
    }

    pub fn example_loss(&self, j: usize, omega: &[f64]) -> f64 {
        let diff = Vector::new(omega.iter().zip(self.centers[j].iter()).map(|(w, c)| w - c).collect())
            .expect("finite difference of finite vectors");
        0.5 * self.hessian.quad_form(&diff)
    }

    pub fn example_grad(&self, j: usize, omega: &[f64]) -> Vector {
        let d = self.dim();
        let mut g = self.full_grad(omega);
        g.axpy(-1.0, &self.hc[j * d..(j + 1) * d]);
        g
    }

    /// `H w`
    pub fn full_grad(&self, omega: &[f64]) -> Vector {
        let mut g = Vector::zeros(self.dim());
        self.hess_mul_into(omega, &mut g);
        g
    }

    /// `(1/B) sum_{j in batch} H (w - c_j)`.
    pub fn minibatch_grad(&self, omega: &[f64], batch: &[usize]) -> Result<Vector> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("batch must be non-empty".into()));
        }
        let mut seen = vec![false; self.num_examples()];
        for &j in batch {
            if j >= self.num_examples() {
                return Err(Error::InvalidArgument(format!("example index {j} out of range")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidArgument(format!("example index {j} repeated in batch")));
            }
        }
        let mut g = Vector::zeros(self.dim());
        self.minibatch_grad_into(omega, batch, &mut g);
        Ok(g)
    }

    /// Unchecked variant of [`minibatch_grad`](Self::minibatch_grad) writing
    /// into a caller-owned buffer. `batch` must be duplicate-free.
    pub fn minibatch_grad_into(&self, omega: &[f64], batch: &[usize], out: &mut [f64]) {
        let d = self.dim();
        self.hess_mul_into(omega, out);
        if batch.len() == self.num_examples() {
            // sum of all centers is zero
            return;
        }
        let w = -1.0 / batch.len() as f64;
        for &j in batch {
            axpy(w, &self.hc[j * d..(j + 1) * d], out);
        }
    }
}

impl LossModel for QuadraticModel {
    fn dim(&self) -> usize {
        QuadraticModel::dim(self)
    }

    fn num_examples(&self) -> usize {
        QuadraticModel::num_examples(self)
    }

    fn loss(&self, params: &[f64]) -> f64 {
        QuadraticModel::loss(self, params)
    }

    fn example_grad(&self, index: usize, params: &[f64]) -> Vector {
        QuadraticModel::example_grad(self, index, params)
    }
}
