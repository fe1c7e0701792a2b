use serde::{Deserialize, Serialize};

use super::spec::{ModelSpec, Objective};
use crate::error::{Error, Result};
use crate::models::{BatchSampler, BnStats, MlpModel, Mode, QuadraticModel, SamplingMode, SyntheticDataset};
use crate::numkit::{Rng, Vector};
use crate::optim::{steps_per_epoch, Budget, Decay, DivergenceGuard, Granularity, LrSchedule, OptimizerState};
use crate::sde::exact_variance_quadratic;

/// A model instantiated from a [`ModelSpec`], shared read-only by all runs.
#[derive(Debug, Clone)]
pub enum Task {
    Quadratic { model: QuadraticModel, start: Vec<f64> },
    Mlp { model: MlpModel, data: SyntheticDataset },
}

impl Task {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            ModelSpec::Quadratic { eigenvalues, center_var, n_examples, start, data_seed } => {
                let model = exact_variance_quadratic(eigenvalues, *center_var, *n_examples, *data_seed)?;
                let start = if start.len() == 1 { vec![start[0]; eigenvalues.len()] } else { start.clone() };
                Task::Quadratic { model, start }
            }
            ModelSpec::Mlp { mlp, data } => {
                Task::Mlp { model: MlpModel::new(mlp.clone())?, data: SyntheticDataset::generate(data)? }
            }
        })
    }

    pub fn num_examples(&self) -> usize {
        match self {
            Task::Quadratic { model, .. } => model.num_examples(),
            Task::Mlp { data, .. } => data.n_train(),
        }
    }
}

/// Hyperparameters of one training run. Rates are effective rates
/// `eps / (1 - momentum)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_final: Option<f64>,
    pub gamma: f64,
    pub momentum: f64,
    pub batch: usize,
    pub budget: Budget,
    pub sampling: SamplingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

impl RunConfig {
    pub fn new(lr: f64, batch: usize, budget: Budget) -> Self {
        Self {
            lr,
            eps_final: None,
            gamma: 2.0,
            momentum: 0.0,
            batch,
            budget,
            sampling: SamplingMode::PerUpdate,
            granularity: None,
        }
    }

    /// Schedule of the raw step size `eps` for a dataset of `n` examples.
    pub fn schedule(&self, n: usize) -> Result<LrSchedule> {
        let scale = 1.0 - self.momentum;
        let decay = match self.eps_final {
            Some(f) => Decay::Final(f * scale),
            None => Decay::Gamma(self.gamma),
        };
        let granularity = self.granularity.unwrap_or_else(|| self.budget.default_granularity());
        LrSchedule::new(self.lr * scale, decay, self.budget, steps_per_epoch(n, self.batch), granularity)
    }
}

/// Full-set metrics at one point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunOutcome {
    Completed {
        /// Full training objective at the end.
        train_loss: f64,
        /// Test accuracy in percent (MLP) or mean squared parameter error
        /// (quadratic).
        test_metric: f64,
        steps: u64,
        /// Metrics at the start, at every rate drop and at the end.
        curve: Vec<CurvePoint>,
    },
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub run_index: usize,
    pub seed: u64,
    pub outcome: RunOutcome,
}

impl RunRecord {
    /// Objective value of a completed run.
    pub fn metric(&self, objective: Objective) -> Option<f64> {
        match &self.outcome {
            RunOutcome::Completed { train_loss, test_metric, .. } => Some(match objective {
                Objective::MinTrainLoss => *train_loss,
                Objective::MaxTestAccuracy | Objective::MinTestMse => *test_metric,
            }),
            RunOutcome::Diverged { .. } => None,
        }
    }

    pub fn train_loss(&self) -> Option<f64> {
        self.metric(Objective::MinTrainLoss)
    }

    pub fn test_metric(&self) -> Option<f64> {
        match &self.outcome {
            RunOutcome::Completed { test_metric, .. } => Some(*test_metric),
            RunOutcome::Diverged { .. } => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self.outcome, RunOutcome::Completed { .. })
    }
}

/// Steps at which the curve is sampled: start, each rate change, end.
fn curve_steps(schedule: &LrSchedule, total: u64) -> Vec<u64> {
    let mut steps = vec![0];
    steps.extend(schedule.table().iter().skip(1).map(|r| r.step));
    steps.push(total);
    steps.dedup();
    steps
}

/// Trains one run. Deterministic in `(task, config, seed)`. Divergence is an
/// outcome, not an error; errors mean the configuration is unusable.
pub fn run_training(task: &Task, config: &RunConfig, run_index: usize, seed: u64) -> Result<RunRecord> {
    if !(0.0..1.0).contains(&config.momentum) {
        return Err(Error::Config(format!("momentum must be in [0, 1), got {}", config.momentum)));
    }
    let n = task.num_examples();
    let schedule = config.schedule(n)?;
    let root = Rng::new(seed);
    let sampler = BatchSampler::new(n, config.batch, config.sampling, root.child(&[1]))?;
    let outcome = match task {
        Task::Quadratic { model, start } => train_quadratic(model, start, config, &schedule, sampler)?,
        Task::Mlp { model, data } => train_mlp(model, data, config, &schedule, sampler, &mut root.child(&[0]))?,
    };
    Ok(RunRecord { config: *config, run_index, seed, outcome })
}

fn quadratic_metrics(model: &QuadraticModel, w: &[f64]) -> (f64, f64) {
    (model.excess_loss(w), w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64)
}

fn step(st: &mut OptimizerState, g: &[f64], eps: f64) -> Result<()> {
    if st.momentum() == 0.0 {
        st.sgd_step(g, eps)
    } else {
        st.momentum_step(g, eps)
    }
}

fn train_quadratic(
    model: &QuadraticModel,
    start: &[f64],
    config: &RunConfig,
    schedule: &LrSchedule,
    mut sampler: BatchSampler,
) -> Result<RunOutcome> {
    let mut st = OptimizerState::new(Vector::from_slice(start)?, config.momentum)?;
    let total = schedule.total_steps();
    let marks = curve_steps(schedule, total);
    let (l0, m0) = quadratic_metrics(model, &st.omega);
    let guard = DivergenceGuard::new(l0);
    let target = match config.budget {
        Budget::Unlimited { target_loss, .. } => Some(target_loss),
        _ => None,
    };
    let mut curve = vec![CurvePoint { step: 0, train_loss: l0, test_metric: m0 }];
    let mut batch = Vec::with_capacity(config.batch);
    let mut g = vec![0.0; model.dim()];
    let mut next_mark = 1;
    let mut t = 0;
    while t < total {
        if target.is_some_and(|tl| model.excess_loss(&st.omega) <= tl) {
            break;
        }
        sampler.next_batch_into(&mut batch);
        model.minibatch_grad_into(&st.omega, &batch, &mut g);
        let loss = step(&mut st, &g, schedule.lr_at(t)).map(|_| model.excess_loss(&st.omega));
        match loss.and_then(|l| guard.check(l, t + 1).map(|_| l)) {
            Ok(_) => {}
            Err(Error::Diverged { .. }) => return Ok(RunOutcome::Diverged { step: t + 1 }),
            Err(e) => return Err(e),
        }
        t += 1;
        if next_mark < marks.len() && t == marks[next_mark] {
            let (l, m) = quadratic_metrics(model, &st.omega);
            curve.push(CurvePoint { step: t, train_loss: l, test_metric: m });
            next_mark += 1;
        }
    }
    let (train_loss, test_metric) = quadratic_metrics(model, &st.omega);
    if curve.last().map(|c| c.step) != Some(t) {
        curve.push(CurvePoint { step: t, train_loss, test_metric });
    }
    Ok(RunOutcome::Completed { train_loss, test_metric, steps: t, curve })
}

fn mlp_metrics(model: &MlpModel, data: &SyntheticDataset, params: &[f64], bn: &BnStats) -> Result<(f64, f64)> {
    let train = model.evaluate(params, bn, &data.train_x, &data.train_y)?;
    let test = model.evaluate(params, bn, &data.test_x, &data.test_y)?;
    Ok((train.loss, test.accuracy))
}

fn train_mlp(
    model: &MlpModel,
    data: &SyntheticDataset,
    config: &RunConfig,
    schedule: &LrSchedule,
    mut sampler: BatchSampler,
    init_rng: &mut Rng,
) -> Result<RunOutcome> {
    let mut st = OptimizerState::new(Vector::new(model.init_params(init_rng))?, config.momentum)?;
    let mut bn = model.fresh_bn_stats();
    let total = schedule.total_steps();
    let marks = curve_steps(schedule, total);
    let target = match config.budget {
        Budget::Unlimited { target_loss, .. } => Some(target_loss),
        _ => None,
    };
    let check_every = steps_per_epoch(data.n_train(), config.batch);
    let (l0, a0) = mlp_metrics(model, data, &st.omega, &bn)?;
    let mut curve = vec![CurvePoint { step: 0, train_loss: l0, test_metric: a0 }];
    let mut guard: Option<DivergenceGuard> = None;
    let (mut idx, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let mut next_mark = 1;
    let mut t = 0;
    while t < total {
        if let Some(tl) = target {
            if t % check_every == 0 && t > 0 && mlp_metrics(model, data, &st.omega, &bn)?.0 <= tl {
                break;
            }
        }
        sampler.next_batch_into(&mut idx);
        data.gather_train(&idx, &mut x, &mut y);
        let lg = match model.loss_and_grad(&st.omega, &x, &y, Mode::Train) {
            Ok(lg) => lg,
            Err(Error::Overflow { .. }) => return Ok(RunOutcome::Diverged { step: t + 1 }),
            Err(e) => return Err(e),
        };
        let g = guard.get_or_insert_with(|| DivergenceGuard::new(lg.loss));
        if g.check(lg.loss, t + 1).is_err() {
            return Ok(RunOutcome::Diverged { step: t + 1 });
        }
        if let Some(stats) = &lg.batch_stats {
            bn.update(stats);
        }
        match step(&mut st, &lg.grad, schedule.lr_at(t)) {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => return Ok(RunOutcome::Diverged { step: t + 1 }),
            Err(e) => return Err(e),
        }
        t += 1;
        if next_mark < marks.len() && t == marks[next_mark] {
            let (l, a) = match mlp_metrics(model, data, &st.omega, &bn) {
                Ok(m) => m,
                Err(Error::Overflow { .. }) => return Ok(RunOutcome::Diverged { step: t }),
                Err(e) => return Err(e),
            };
            curve.push(CurvePoint { step: t, train_loss: l, test_metric: a });
            next_mark += 1;
        }
    }
    let (train_loss, test_metric) = match curve.last() {
        Some(c) if c.step == t => (c.train_loss, c.test_metric),
        _ => match mlp_metrics(model, data, &st.omega, &bn) {
            Ok((l, a)) => {
                curve.push(CurvePoint { step: t, train_loss: l, test_metric: a });
                (l, a)
            }
            Err(Error::Overflow { .. }) => return Ok(RunOutcome::Diverged { step: t }),
            Err(e) => return Err(e),
        },
    };
    if !train_loss.is_finite() {
        return Ok(RunOutcome::Diverged { step: t });
    }
    Ok(RunOutcome::Completed { train_loss, test_metric, steps: t, curve })
}
