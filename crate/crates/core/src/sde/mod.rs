//! Gradient noise as a diffusion: covariance estimation, the discretized SDE
//! `w <- w - eps grad C(w) + sqrt(eps T) nu` with `nu ~ N(0, F)`, closed-form
//! stationary moments on quadratics and the Monte-Carlo checks built on them.

mod checks;
mod presets;

pub use checks::{
    eps_crit_check, exact_variance_quadratic, linear_scaling_check, minibatch_vs_sde_check, momentum_equivalence_check,
    temperature_invariance_check, CheckReport, CheckStatus, LinearScalingSpec, MomentumEquivalenceSpec, Start,
    StationarySpec,
};
pub use presets::{
    eps_crit_default, lin_scaling_default, lin_scaling_with_start, momentum_equiv_default, run_default_check,
    sde_vs_sgd_default, temperature_invariance_default, CheckName,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LossModel, QuadraticModel};
use crate::numkit::{LowerTriangular, Rng, SymMatrix, Vector};

/// Pass/fail thresholds shared by every check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Means agree when their difference is within this many standard errors.
    pub mean_std_errors: f64,
    /// Allowed `|ratio - 1|` of endpoint variances in the n-step composition check.
    pub linear_scaling_variance: f64,
    /// Allowed relative error of a simulated stationary variance.
    pub stationary_variance: f64,
    /// Allowed relative gap between minibatch SGD and its SDE model.
    pub sde_vs_sgd: f64,
    /// Allowed relative gap of stationary variances under `(eps, B) -> (2 eps, 2 B)`.
    pub temperature_invariance: f64,
    /// Minimum gap that marks the curvature-dominated boundary.
    pub regime_gap: f64,
    /// Allowed relative gap of mean final losses, SGD vs momentum.
    pub momentum_equivalence: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    mean_std_errors: 5.0,
    linear_scaling_variance: 0.05,
    stationary_variance: 0.03,
    sde_vs_sgd: 0.10,
    temperature_invariance: 0.10,
    regime_gap: 0.25,
    momentum_equivalence: 0.05,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    Empirical,
}

/// Which second moment of the per-example gradients to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherKind {
    /// `(1/N) sum g g^T - gbar gbar^T`
    #[default]
    Centered,
    /// `(1/N) sum g g^T`
    Uncentered,
}

/// Per-example gradient covariance `F` and its factor for sampling.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    covariance: SymMatrix,
    provenance: Provenance,
    factor: LowerTriangular,
}

impl NoiseModel {
    pub fn new(covariance: SymMatrix, provenance: Provenance) -> Result<Self> {
        let factor = covariance.psd_factor()?;
        Ok(Self { covariance, provenance, factor })
    }

    /// `H Cov(c) H` of a per-example quadratic.
    pub fn analytic(model: &QuadraticModel) -> Result<Self> {
        Self::new(model.noise_covariance(), Provenance::Analytic)
    }

    /// `f * I`.
    pub fn isotropic(dim: usize, f: f64) -> Result<Self> {
        Self::new(SymMatrix::scalar(dim, f), Provenance::Analytic)
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    /// `out = L z` for a standard normal `z`, i.e. one draw of `nu`.
    pub fn sample_into(&self, rng: &mut Rng, z: &mut [f64], out: &mut [f64]) {
        rng.fill_normal(z);
        self.factor.mul_into(z, out);
    }
}

/// Covariance of per-example gradients at `omega` over all `N` examples.
pub fn estimate_noise_cov<M: LossModel + ?Sized>(model: &M, omega: &[f64], kind: FisherKind) -> Result<NoiseModel> {
    let n = model.num_examples();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least two examples, got {n}")));
    }
    let d = model.dim();
    if omega.len() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: omega.len() });
    }
    let grads: Vec<Vector> = (0..n).map(|j| model.example_grad(j, omega)).collect();
    let mut mean = vec![0.0; d];
    for g in &grads {
        mean.iter_mut().zip(g.iter()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let shift: &[f64] = match kind {
        FisherKind::Centered => &mean,
        FisherKind::Uncentered => &vec![0.0; d],
    };
    let mut cov = vec![0.0; d * d];
    let mut dev = vec![0.0; d];
    for g in &grads {
        for ((e, x), s) in dev.iter_mut().zip(g.iter()).zip(shift) {
            *e = x - s;
        }
        for i in 0..d {
            for j in 0..=i {
                cov[i * d + j] += dev[i] * dev[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    NoiseModel::new(SymMatrix::new(d, cov)?, Provenance::Empirical)
}

/// Step size, temperature, noise covariance and loss of one SDE.
#[derive(Debug, Clone)]
pub struct SdeConfig<'a> {
    eps: f64,
    temperature: f64,
    noise: NoiseModel,
    loss: &'a QuadraticModel,
}

impl<'a> SdeConfig<'a> {
    pub fn new(eps: f64, temperature: f64, noise: NoiseModel, loss: &'a QuadraticModel) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Precondition(format!("eps must be positive, got {eps}")));
        }
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::Precondition(format!("temperature must be >= 0, got {temperature}")));
        }
        if noise.dim() != loss.dim() {
            return Err(Error::DimensionMismatch { expected: loss.dim(), actual: noise.dim() });
        }
        Ok(Self { eps, temperature, noise, loss })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn loss(&self) -> &QuadraticModel {
        self.loss
    }
}

/// One Euler step of the SDE. With `T = 0` this is exactly a full-batch
/// gradient step and draws nothing from `rng`.
pub fn sde_step(cfg: &SdeConfig<'_>, omega: &mut [f64], rng: &mut Rng) -> Result<()> {
    let d = cfg.loss.dim();
    let mut grad = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut nu = vec![0.0; d];
    sde_step_with(cfg, omega, rng, &mut grad, &mut z, &mut nu)
}

pub(crate) fn sde_step_with(
    cfg: &SdeConfig<'_>,
    omega: &mut [f64],
    rng: &mut Rng,
    grad: &mut [f64],
    z: &mut [f64],
    nu: &mut [f64],
) -> Result<()> {
    cfg.loss.hessian().matvec_into(omega, grad);
    for (w, g) in omega.iter_mut().zip(grad.iter()) {
        *w += -cfg.eps * g;
    }
    if cfg.temperature > 0.0 {
        cfg.noise.sample_into(rng, z, nu);
        let amp = (cfg.eps * cfg.temperature).sqrt();
        for (w, n) in omega.iter_mut().zip(nu.iter()) {
            *w += amp * n;
        }
    }
    if omega.iter().all(|w| w.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step: 0 })
    }
}

/// Stationary variance of `w <- (1 - eps lambda) w + sqrt(eps T f) z`:
/// `eps T f / (1 - (1 - eps lambda)^2) = T f / (lambda (2 - eps lambda))`.
pub fn ou_stationary_variance(lambda: f64, f: f64, eps: f64, temperature: f64) -> Result<f64> {
    let x = eps * lambda;
    if !(x > 0.0 && x < 2.0) {
        return Err(Error::Precondition(format!(
            "eps * lambda = {x} outside (0, 2): no stationary distribution"
        )));
    }
    Ok(temperature * f / (lambda * (2.0 - x)))
}

/// Stationary covariance of `w <- (I - eps H) w + sqrt(eps T) nu`,
/// `nu ~ N(0, F)`, for diagonal `H`:
/// `S_ij = eps T F_ij / (1 - (1 - eps h_i)(1 - eps h_j))`.
pub fn stationary_covariance(hessian_diag: &[f64], noise: &SymMatrix, eps: f64, temperature: f64) -> Result<SymMatrix> {
    let d = hessian_diag.len();
    if noise.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, actual: noise.dim() });
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let (a, b) = (eps * hessian_diag[i], eps * hessian_diag[j]);
            if !(a > 0.0 && a < 2.0 && b > 0.0 && b < 2.0) {
                return Err(Error::Precondition(format!(
                    "eps * h = {} outside (0, 2): no stationary distribution",
                    if a > 0.0 && a < 2.0 { b } else { a }
                )));
            }
            out[i * d + j] = eps * temperature * noise.get(i, j) / (1.0 - (1.0 - a) * (1.0 - b));
        }
    }
    SymMatrix::new(d, out)
}
