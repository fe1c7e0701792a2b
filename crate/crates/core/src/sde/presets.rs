//! Default setups of the named checks run by the command-line tool.

use serde::{Deserialize, Serialize};

use super::checks::{
    eps_crit_check, exact_variance_quadratic, linear_scaling_check, minibatch_vs_sde_check, momentum_equivalence_check,
    temperature_invariance_check, CheckReport, LinearScalingSpec, MomentumEquivalenceSpec, Start, StationarySpec,
};
use super::NoiseModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    EpsCrit,
    LinScaling,
    SdeVsSgd,
    MomentumEquiv,
}

impl CheckName {
    pub const ALL: [CheckName; 4] = [CheckName::EpsCrit, CheckName::LinScaling, CheckName::SdeVsSgd, CheckName::MomentumEquiv];

    pub fn name(&self) -> &'static str {
        match self {
            CheckName::EpsCrit => "eps-crit",
            CheckName::LinScaling => "lin-scaling",
            CheckName::SdeVsSgd => "sde-vs-sgd",
            CheckName::MomentumEquiv => "momentum-equiv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|c| c.name()).collect();
            Error::InvalidArgument(format!("unknown check {s:?}; valid checks: {}", names.join(", ")))
        })
    }
}

/// Critical rate on `H = diag(0.5, 2)`: converge at 0.99 and diverge at 1.01
/// times `2 / lambda_max` within 10^4 steps.
pub fn eps_crit_default() -> Result<CheckReport> {
    let model = exact_variance_quadratic(&[0.5, 2.0], 1.0, 16, 0)?;
    eps_crit_check(&model, &[1.0, 1.0], 10_000)
}

/// n-step composition on a 1-D quadratic (`lambda = 1`, `f = 1`, `T = 0.01`),
/// `n = 10`, 10^5 trajectories from the stationary law. `n eps` is
/// `0.1 eps_crit`, or `eps_crit` for the boundary run that must fail.
pub fn lin_scaling_default(seed: u64, at_boundary: bool) -> Result<CheckReport> {
    lin_scaling_with_start(seed, at_boundary, Start::Stationary)
}

pub fn lin_scaling_with_start(seed: u64, at_boundary: bool, start: Start) -> Result<CheckReport> {
    let loss = exact_variance_quadratic(&[1.0], 1.0, 16, 0)?;
    let noise = NoiseModel::isotropic(1, 1.0)?;
    let eps = if at_boundary { 0.2 } else { 0.02 };
    let spec = LinearScalingSpec {
        eps,
        temperature: 0.01,
        n: 10,
        seeds: 100_000,
        seed,
        start,
        expect_failure: at_boundary,
    };
    linear_scaling_check(&loss, &noise, &spec)
}

fn stationary_spec(eps: f64, seed: u64, expect_failure: bool) -> StationarySpec {
    StationarySpec { batch: 4, eps, steps: 200_000, burn_in: 1_000, chains: 4, seed, expect_failure }
}

/// Minibatch SGD against its SDE model on a 1-D quadratic with 1024
/// per-example centers, `B = 4`. At `eps = 0.1` (`0.05 eps_crit`) the
/// stationary variances agree; at `eps = eps_crit` the check must fail.
pub fn sde_vs_sgd_default(seed: u64, at_boundary: bool) -> Result<CheckReport> {
    let model = exact_variance_quadratic(&[1.0], 1.0, 1024, 0)?;
    let eps = if at_boundary { 2.0 } else { 0.1 };
    let mut spec = stationary_spec(eps, seed, at_boundary);
    if at_boundary {
        spec.steps = 20_000;
    }
    minibatch_vs_sde_check(&model, &spec)
}

/// `(eps, B)` against `(2 eps, 2 B)` on the same model. At `eps = 0.05
/// eps_crit` the variances agree within 10%; at `2 eps = eps_crit / 2` the
/// gap exceeds 25%.
pub fn temperature_invariance_default(seed: u64, at_boundary: bool) -> Result<CheckReport> {
    let model = exact_variance_quadratic(&[1.0], 1.0, 1024, 0)?;
    let eps = if at_boundary { 0.5 } else { 0.1 };
    temperature_invariance_check(&model, &stationary_spec(eps, seed, at_boundary))
}

/// SGD at `eps_eff = 0.05 eps_crit` against momentum 0.9 at the same
/// effective rate on a 4-D quadratic, step-decay schedule, 100 seeds.
pub fn momentum_equiv_default(seed: u64) -> Result<CheckReport> {
    let model = exact_variance_quadratic(&[1.0, 0.3, 0.1, 0.03], 1.0, 1024, 5)?;
    let spec = MomentumEquivalenceSpec {
        eps_eff: 0.1,
        momentum: 0.9,
        batch: 4,
        steps: 4_000,
        gamma: 2.0,
        seeds: 100,
        seed,
        start: vec![2.0; 4],
        expect_failure: false,
    };
    momentum_equivalence_check(&model, &spec)
}

/// Every default report of a named check.
pub fn run_default_check(name: CheckName, seed: u64) -> Result<Vec<CheckReport>> {
    Ok(match name {
        CheckName::EpsCrit => vec![eps_crit_default()?],
        CheckName::LinScaling => vec![lin_scaling_default(seed, false)?, lin_scaling_default(seed, true)?],
        CheckName::SdeVsSgd => vec![
            sde_vs_sgd_default(seed, false)?,
            sde_vs_sgd_default(seed, true)?,
            temperature_invariance_default(seed, false)?,
            temperature_invariance_default(seed, true)?,
        ],
        CheckName::MomentumEquiv => vec![momentum_equiv_default(seed)?],
    })
}
