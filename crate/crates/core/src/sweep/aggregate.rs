use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use super::spec::{ErrorBarRule, LrPoint, Objective};
use crate::error::{Error, Result};

/// Best-k statistics of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointSummary {
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_final: Option<f64>,
    /// Objective mean over the kept runs.
    pub mean: f64,
    /// Sample standard deviation (divisor `kept - 1`; zero when one run is kept).
    pub std: f64,
    pub kept: usize,
    pub completed: usize,
    pub runs: usize,
    pub train_loss_mean: f64,
    pub train_loss_std: f64,
    pub test_metric_mean: f64,
    pub test_metric_std: f64,
}

impl GridPointSummary {
    /// A point with no completed run takes no part in selection.
    pub fn is_valid(&self) -> bool {
        self.kept > 0
    }

    pub fn point(&self) -> LrPoint {
        LrPoint { lr: self.lr, eps_final: self.eps_final }
    }
}

/// Mean and sample standard deviation, summed in order.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (k - 1.0)).sqrt())
}

/// Ranks completed runs by the objective (diverged runs rank last), keeps the
/// best `k`, and summarizes them. Ties keep record order.
pub fn aggregate_best_k(point: LrPoint, records: &[&RunRecord], k: usize, objective: Objective) -> GridPointSummary {
    let mut done: Vec<(&RunRecord, f64)> =
        records.iter().filter_map(|r| r.metric(objective).map(|m| (*r, m))).collect();
    let completed = done.len();
    done.sort_by(|a, b| {
        let ord = a.1.partial_cmp(&b.1).expect("completed runs have finite metrics");
        if objective.maximize() {
            ord.reverse()
        } else {
            ord
        }
    });
    done.truncate(k);
    let vals: Vec<f64> = done.iter().map(|d| d.1).collect();
    let train: Vec<f64> = done.iter().filter_map(|d| d.0.train_loss()).collect();
    let test: Vec<f64> = done.iter().filter_map(|d| d.0.test_metric()).collect();
    let (mean, std) = mean_std(&vals);
    let (train_loss_mean, train_loss_std) = mean_std(&train);
    let (test_metric_mean, test_metric_std) = mean_std(&test);
    GridPointSummary {
        lr: point.lr,
        eps_final: point.eps_final,
        mean,
        std,
        kept: vals.len(),
        completed,
        runs: records.len(),
        train_loss_mean,
        train_loss_std,
        test_metric_mean,
        test_metric_std,
    }
}

/// Optimal grid point and its error bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the summaries.
    pub optimal: usize,
    pub optimal_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_eps_final: Option<f64>,
    /// Indices of the error-bar set, in grid order.
    pub errorbar: Vec<usize>,
    pub errorbar_low: f64,
    pub errorbar_high: f64,
    /// Optimum or error-bar extremes at a grid end.
    pub boundary_flag: bool,
}

/// Picks the best valid mean (ties to the smaller rate), then collects every
/// valid point within one standard deviation of it on the favorable side.
///
/// `summaries` must be in grid order. For decoupled grids the initial rate
/// drives `errorbar_low`/`errorbar_high` and the boundary test.
pub fn select_optimal_lr(summaries: &[GridPointSummary], objective: Objective, rule: ErrorBarRule) -> Result<Selection> {
    let mut best: Option<usize> = None;
    for (i, s) in summaries.iter().enumerate() {
        if !s.is_valid() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let sb = &summaries[b];
                let tie_smaller = s.mean == sb.mean && s.lr < sb.lr;
                if objective.better(s.mean, sb.mean) || tie_smaller {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    let optimal = best.ok_or_else(|| Error::InvalidArgument("no grid point has a completed run".into()))?;
    let opt = &summaries[optimal];
    let errorbar: Vec<usize> = summaries
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_valid())
        .filter(|(_, s)| {
            let width = match rule {
                ErrorBarRule::OptimalStd => opt.std,
                ErrorBarRule::PointStd => s.std,
            };
            if objective.maximize() {
                s.mean >= opt.mean - width
            } else {
                s.mean <= opt.mean + width
            }
        })
        .map(|(i, _)| i)
        .collect();
    let lrs = errorbar.iter().map(|&i| summaries[i].lr);
    let errorbar_low = lrs.clone().fold(f64::INFINITY, f64::min);
    let errorbar_high = lrs.fold(f64::NEG_INFINITY, f64::max);
    let grid_min = summaries.iter().map(|s| s.lr).fold(f64::INFINITY, f64::min);
    let grid_max = summaries.iter().map(|s| s.lr).fold(f64::NEG_INFINITY, f64::max);
    let at_end = |x: f64| x == grid_min || x == grid_max;
    let boundary_flag = at_end(opt.lr) || at_end(errorbar_low) || at_end(errorbar_high);
    Ok(Selection {
        optimal,
        optimal_lr: opt.lr,
        optimal_eps_final: opt.eps_final,
        errorbar,
        errorbar_low,
        errorbar_high,
        boundary_flag,
    })
}
