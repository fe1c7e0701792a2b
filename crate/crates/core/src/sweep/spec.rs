use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DatasetSpec, MlpConfig, Normalization, SamplingMode};
use crate::optim::{Budget, Granularity};

/// What a sweep trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Diagonal per-example quadratic; centers are Gaussian, re-centered and
    /// rescaled so their population variance is exactly `center_var` per
    /// coordinate. Training starts from `start` (one value per coordinate,
    /// or a single value broadcast).
    Quadratic {
        eigenvalues: Vec<f64>,
        #[serde(default = "unit")]
        center_var: f64,
        n_examples: usize,
        #[serde(default = "unit_vec")]
        start: Vec<f64>,
        #[serde(default)]
        data_seed: u64,
    },
    /// MLP classifier on a synthetic teacher-labelled dataset.
    Mlp { mlp: MlpConfig, data: DatasetSpec },
}

fn unit() -> f64 {
    1.0
}

fn unit_vec() -> Vec<f64> {
    vec![1.0]
}

impl ModelSpec {
    pub fn num_examples(&self) -> usize {
        match self {
            ModelSpec::Quadratic { n_examples, .. } => *n_examples,
            ModelSpec::Mlp { data, .. } => data.n_train,
        }
    }

    pub fn is_mlp(&self) -> bool {
        matches!(self, ModelSpec::Mlp { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Quadratic { eigenvalues, center_var, n_examples, start, .. } => {
                if eigenvalues.is_empty() || eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                    return Err(Error::Config("model.eigenvalues must be non-empty and positive".into()));
                }
                if !(*center_var >= 0.0) {
                    return Err(Error::Config("model.center_var must be >= 0".into()));
                }
                if *n_examples < 2 {
                    return Err(Error::Config("model.n_examples must be >= 2".into()));
                }
                if start.len() != 1 && start.len() != eigenvalues.len() {
                    return Err(Error::Config(format!(
                        "model.start must have 1 or {} entries, got {}",
                        eigenvalues.len(),
                        start.len()
                    )));
                }
                Ok(())
            }
            ModelSpec::Mlp { mlp, data } => {
                data.validate().map_err(|e| Error::Config(format!("model.data: {e}")))?;
                let w = &mlp.widths;
                if w.first() != Some(&data.dim) || w.last() != Some(&data.classes) {
                    return Err(Error::Config(format!(
                        "model.mlp.widths {w:?} must start at data.dim = {} and end at data.classes = {}",
                        data.dim, data.classes
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Which summary statistic picks the best run and the optimal rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MaxTestAccuracy,
    MinTrainLoss,
    MinTestMse,
}

impl Objective {
    pub fn maximize(&self) -> bool {
        matches!(self, Objective::MaxTestAccuracy)
    }

    /// Is `a` strictly better than `b`?
    pub fn better(&self, a: f64, b: f64) -> bool {
        if self.maximize() {
            a > b
        } else {
            a < b
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Objective::MaxTestAccuracy => "test accuracy (%)",
            Objective::MinTrainLoss => "train loss",
            Objective::MinTestMse => "test mse",
        }
    }
}

/// How wide the error bar around the optimal rate is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorBarRule {
    /// Rates whose mean is within one standard deviation of the optimal
    /// point's mean, using the optimal point's standard deviation.
    #[default]
    OptimalStd,
    /// As above, using each candidate point's own standard deviation.
    PointStd,
}

/// Learning-rate grid: explicit values, or `2^(k / per_octave)` for integer
/// `k` from `log2_min * per_octave` to `log2_max * per_octave`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log2_min: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log2_max: Option<i32>,
    #[serde(default = "one_u32")]
    pub per_octave: u32,
}

fn one_u32() -> u32 {
    1
}

impl LrGrid {
    pub fn log2(min: i32, max: i32) -> Self {
        Self { values: None, log2_min: Some(min), log2_max: Some(max), per_octave: 1 }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        Self { values: Some(values), log2_min: None, log2_max: None, per_octave: 1 }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match (&self.values, self.log2_min, self.log2_max) {
            (Some(v), None, None) => v.clone(),
            (None, Some(lo), Some(hi)) => {
                if self.per_octave == 0 || lo > hi {
                    return Err(Error::Config("grid: need log2_min <= log2_max and per_octave >= 1".into()));
                }
                let p = self.per_octave as i32;
                (lo * p..=hi * p).map(|k| (k as f64 / p as f64).exp2()).collect()
            }
            _ => return Err(Error::Config("grid: give either values or log2_min and log2_max".into())),
        };
        if pts.is_empty() || pts.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config("grid: learning rates must be positive".into()));
        }
        if pts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("grid: learning rates must be strictly increasing".into()));
        }
        Ok(pts)
    }
}

/// Final-rate axis of a decoupled sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum FinalGrid {
    /// `eps_final = eps0 * 2^r` for each `r <= 0`.
    RatioLog2(Vec<i32>),
    /// Absolute final rates; pairs with `eps_final > eps0` are skipped.
    Absolute(LrGrid),
}

impl FinalGrid {
    pub fn validate(&self) -> Result<()> {
        match self {
            FinalGrid::RatioLog2(r) if r.is_empty() || r.iter().any(|&x| x > 0) => {
                Err(Error::Config("grid.final_lr: ratio-log2 entries must be <= 0".into()))
            }
            FinalGrid::RatioLog2(r) if r.windows(2).any(|w| w[1] <= w[0]) => {
                Err(Error::Config("grid.final_lr: ratio-log2 entries must be strictly increasing".into()))
            }
            FinalGrid::Absolute(g) => g.points().map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Final rates paired with `eps0`, increasing.
    pub fn for_initial(&self, eps0: f64) -> Result<Vec<f64>> {
        Ok(match self {
            FinalGrid::RatioLog2(r) => r.iter().map(|&k| eps0 * (k as f64).exp2()).collect(),
            FinalGrid::Absolute(g) => g.points()?.into_iter().filter(|&f| f <= eps0).collect(),
        })
    }
}

/// One point of the learning-rate axis: the initial effective rate and, in
/// decoupled sweeps, the final effective rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPoint {
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_final: Option<f64>,
}

/// A full sweep: every learning rate (and final rate) for every batch size,
/// `runs` times each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelSpec,
    pub lr_grid: LrGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lr: Option<FinalGrid>,
    pub batch_sizes: Vec<usize>,
    pub budget: Budget,
    pub runs: usize,
    pub keep: usize,
    pub objective: Objective,
    #[serde(default)]
    pub error_bar: ErrorBarRule,
    /// Heavy-ball coefficient; grid rates are effective rates `eps / (1 - m)`.
    #[serde(default)]
    pub momentum: f64,
    pub gamma: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
    pub seed: u64,
}

impl SweepSpec {
    /// Defaults: 15 runs, best 12, gamma 2, plain SGD.
    pub fn new(model: ModelSpec, lr_grid: LrGrid, batch_sizes: Vec<usize>, budget: Budget, objective: Objective) -> Self {
        Self {
            model,
            lr_grid,
            final_lr: None,
            batch_sizes,
            budget,
            runs: 15,
            keep: 12,
            objective,
            error_bar: ErrorBarRule::OptimalStd,
            momentum: 0.0,
            gamma: 2.0,
            sampling: SamplingMode::PerUpdate,
            granularity: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lr_grid.points()?;
        if let Some(f) = &self.final_lr {
            f.validate()?;
        }
        if self.batch_sizes.is_empty() {
            return Err(Error::Config("grid.batch_sizes must not be empty".into()));
        }
        let n = self.model.num_examples();
        if let Some(&b) = self.batch_sizes.iter().find(|&&b| b == 0 || b > n) {
            return Err(Error::Config(format!("grid.batch_sizes: {b} not in 1..={n}")));
        }
        if let ModelSpec::Mlp { mlp, .. } = &self.model {
            if mlp.normalization == Normalization::GhostBn {
                if let Some(&b) = self.batch_sizes.iter().find(|&&b| b % mlp.ghost_batch_size == 1 || b < 2) {
                    return Err(Error::Config(format!(
                        "grid.batch_sizes: {b} leaves a ghost batch of one example (ghost size {})",
                        mlp.ghost_batch_size
                    )));
                }
            }
        }
        if self.runs == 0 || self.keep == 0 || self.keep > self.runs {
            return Err(Error::Config(format!(
                "protocol: need 1 <= keep <= runs, got keep = {} and runs = {}",
                self.keep, self.runs
            )));
        }
        match (self.objective, self.model.is_mlp()) {
            (Objective::MaxTestAccuracy, false) => {
                return Err(Error::Config("protocol.objective max-test-accuracy needs an mlp model".into()))
            }
            (Objective::MinTestMse, true) => {
                return Err(Error::Config("protocol.objective min-test-mse needs a quadratic model".into()))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("optimizer.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::Config(format!("optimizer.gamma must be >= 1, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Learning-rate points in grid order (by initial rate, then final rate).
    pub fn lr_points(&self) -> Result<Vec<LrPoint>> {
        let lrs = self.lr_grid.points()?;
        Ok(match &self.final_lr {
            None => lrs.into_iter().map(|lr| LrPoint { lr, eps_final: None }).collect(),
            Some(f) => {
                let mut out = Vec::new();
                for lr in lrs {
                    for ef in f.for_initial(lr)? {
                        out.push(LrPoint { lr, eps_final: Some(ef) });
                    }
                }
                out
            }
        })
    }

    /// Number of training runs the sweep performs.
    pub fn planned_runs(&self) -> Result<usize> {
        Ok(self.lr_points()?.len() * self.runs * self.batch_sizes.len())
    }
}
