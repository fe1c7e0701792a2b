//! Text tables and CSV output for sweep results.
//!
//! A report row reads
//!
//! ```text
//! 2048 | 94.9 ± 0.1 | 0.058 ± 0.000 | 2^3 (2^3 to 2^3)
//! ```
//!
//! batch size, objective mean ± std over the kept runs at the optimal rate,
//! final training loss ± std at that rate, and the optimal effective rate
//! with its error-bar range. Rates that are exact integer powers of two are
//! written `2^k`, everything else in shortest decimal form. Rows whose runs
//! all diverged read `diverged` and rows without records read `missing`.

mod artifacts;

pub use artifacts::{
    assemble, build_report, experiment_sweeps, read_records, record_key, write_records, Report, SubSweep,
    CONFIG_FILE, REPORT_FILE, RESULT_FILE, RUNS_FILE, SUMMARY_FILE, SUMMARY_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sweep::{BatchResult, Objective};

/// `mean ± std` with values already rounded to display precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Optimal rate and error-bar range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrCell {
    pub optimal: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    Diverged,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub batch: usize,
    pub status: RowStatus,
    pub metric: Option<Stat>,
    pub train_loss: Option<Stat>,
    pub lr: Option<LrCell>,
}

/// Decimal places of a fixed-point cell: one for accuracies, three otherwise.
pub fn decimals_for(objective: Objective) -> usize {
    match objective {
        Objective::MaxTestAccuracy => 1,
        _ => 3,
    }
}

const SCI_BELOW: f64 = 0.01;

/// Renders `mean ± std`. Means below 0.01 switch both numbers to three
/// significant figures in scientific form so small losses stay readable.
pub fn format_stat(s: Stat, decimals: usize) -> String {
    if use_sci(s.mean) {
        format!("{:.2e} ± {:.2e}", s.mean, s.std)
    } else {
        format!("{:.d$} ± {:.d$}", s.mean, s.std, d = decimals)
    }
}

fn use_sci(mean: f64) -> bool {
    // decide on the rounded value so rendering is a fixed point
    let rounded: f64 = format!("{mean:.2e}").parse().unwrap_or(mean);
    mean != 0.0 && rounded.abs() < SCI_BELOW
}

fn round_stat(s: Stat, decimals: usize) -> Stat {
    parse_stat(&format_stat(s, decimals)).expect("formatted stat parses")
}

pub fn parse_stat(cell: &str) -> Result<Stat> {
    let (m, s) = cell
        .split_once(" ± ")
        .ok_or_else(|| Error::InvalidArgument(format!("expected 'mean ± std', got {cell:?}")))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{x:?}: {e}")));
    Ok(Stat { mean: num(m)?, std: num(s)? })
}

/// `2^k` for exact integer powers of two, shortest decimal otherwise.
pub fn format_lr(x: f64) -> String {
    if x > 0.0 && x.is_finite() {
        let k = x.log2().round();
        if k.abs() < 1100.0 && k.exp2() == x {
            return format!("2^{}", k as i32);
        }
    }
    format!("{x}")
}

pub fn parse_lr(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = |e: String| Error::InvalidArgument(format!("learning rate {s:?}: {e}"));
    match s.strip_prefix("2^") {
        Some(k) => k.parse::<i32>().map(|k| (k as f64).exp2()).map_err(|e| bad(e.to_string())),
        None => s.parse::<f64>().map_err(|e| bad(e.to_string())),
    }
}

pub fn format_lr_cell(c: LrCell) -> String {
    format!("{} ({} to {})", format_lr(c.optimal), format_lr(c.low), format_lr(c.high))
}

pub fn parse_lr_cell(s: &str) -> Result<LrCell> {
    let bad = || Error::InvalidArgument(format!("expected 'lr (low to high)', got {s:?}"));
    let (opt, rest) = s.split_once(" (").ok_or_else(bad)?;
    let inner = rest.strip_suffix(')').ok_or_else(bad)?;
    let (lo, hi) = inner.split_once(" to ").ok_or_else(bad)?;
    Ok(LrCell { optimal: parse_lr(opt)?, low: parse_lr(lo)?, high: parse_lr(hi)? })
}

impl ReportRow {
    pub fn missing(batch: usize) -> Self {
        Self { batch, status: RowStatus::Missing, metric: None, train_loss: None, lr: None }
    }

    /// Row for one batch size, rounded to display precision.
    pub fn from_batch(b: &BatchResult, objective: Objective) -> Self {
        let d = decimals_for(objective);
        match (&b.selection, b.optimal()) {
            (Some(sel), Some(o)) => Self {
                batch: b.batch,
                status: RowStatus::Ok,
                metric: Some(round_stat(Stat { mean: o.mean, std: o.std }, d)),
                train_loss: Some(round_stat(Stat { mean: o.train_loss_mean, std: o.train_loss_std }, 3)),
                lr: Some(LrCell { optimal: o.lr, low: sel.errorbar_low, high: sel.errorbar_high }),
            },
            _ => Self { batch: b.batch, status: RowStatus::Diverged, metric: None, train_loss: None, lr: None },
        }
    }

    pub fn render(&self, decimals: usize) -> String {
        match (self.status, self.metric, self.train_loss, self.lr) {
            (RowStatus::Ok, Some(m), Some(t), Some(lr)) => {
                format!("{} | {} | {} | {}", self.batch, format_stat(m, decimals), format_stat(t, 3), format_lr_cell(lr))
            }
            (RowStatus::Missing, ..) => format!("{} | missing | missing | missing", self.batch),
            _ => format!("{} | diverged | diverged | diverged", self.batch),
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        let cells: Vec<&str> = line.split(" | ").map(str::trim).collect();
        let [batch, metric, train, lr] = cells[..] else {
            return Err(Error::InvalidArgument(format!("expected 4 cells, got {}: {line:?}", cells.len())));
        };
        let batch = batch.parse().map_err(|e| Error::InvalidArgument(format!("batch {batch:?}: {e}")))?;
        Ok(match metric {
            "missing" => Self::missing(batch),
            "diverged" => Self { batch, status: RowStatus::Diverged, metric: None, train_loss: None, lr: None },
            _ => Self {
                batch,
                status: RowStatus::Ok,
                metric: Some(parse_stat(metric)?),
                train_loss: Some(parse_stat(train)?),
                lr: Some(parse_lr_cell(lr)?),
            },
        })
    }
}

/// A titled block of report rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub objective: Objective,
    pub rows: Vec<ReportRow>,
}

fn objective_from_label(label: &str) -> Option<Objective> {
    [Objective::MaxTestAccuracy, Objective::MinTrainLoss, Objective::MinTestMse].into_iter().find(|o| o.label() == label)
}

impl ReportTable {
    pub fn header(objective: Objective) -> String {
        format!("batch | {} | train loss | optimal lr", objective.label())
    }

    pub fn render(&self) -> String {
        let d = decimals_for(self.objective);
        let mut out = format!("## {}\n{}\n", self.title, Self::header(self.objective));
        for r in &self.rows {
            out.push_str(&r.render(d));
            out.push('\n');
        }
        out
    }

    /// Parses every table in a rendered report; other lines are ignored.
    pub fn parse_all(text: &str) -> Result<Vec<ReportTable>> {
        let mut tables: Vec<ReportTable> = Vec::new();
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.next() {
            let Some(title) = line.strip_prefix("## ") else { continue };
            let Some(objective) = lines
                .peek()
                .and_then(|h| h.strip_prefix("batch | "))
                .and_then(|h| h.strip_suffix(" | train loss | optimal lr"))
                .and_then(objective_from_label)
            else {
                continue;
            };
            lines.next();
            let mut rows = Vec::new();
            while let Some(l) = lines.peek() {
                if l.trim().is_empty() || l.starts_with("## ") {
                    break;
                }
                rows.push(ReportRow::parse(lines.next().expect("peeked"))?);
            }
            tables.push(ReportTable { title: title.to_string(), objective, rows });
        }
        Ok(tables)
    }
}

/// CSV cell for a float: shortest round-trip form, empty for NaN.
pub fn csv_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

pub fn csv_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, csv_f64)
}
