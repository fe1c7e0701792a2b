//! Results directory: run records, summary CSV, plot CSVs and the rendered
//! report. Every aggregate is rebuilt from the run records, so a partial
//! records file yields a partial report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{csv_f64, csv_opt, format_lr, format_lr_cell, format_stat, LrCell, ReportRow, ReportTable, Stat};
use crate::config::{Config, ExperimentKind};
use crate::error::{Error, Result};
use crate::optim::Budget;
use crate::sweep::{
    endpoint_optimum, plan, summarize, BatchResult, EndpointOptimum, Objective, RunConfig, RunRecord, SweepSpec,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUNS_FILE: &str = "runs.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RESULT_FILE: &str = "result.json";
pub const REPORT_FILE: &str = "report.txt";

/// Column order of `summary.csv`, one row per (section, objective, batch,
/// grid point). `optimal` and `in_errorbar` are 0/1; `boundary` repeats the
/// batch's boundary flag. Empty cells stand for undefined statistics.
pub const SUMMARY_HEADER: &str = "section,objective,momentum,budget,batch,lr,eps_final,mean,std,kept,completed,runs,\
train_loss_mean,train_loss_std,test_metric_mean,test_metric_std,optimal,in_errorbar,boundary";

/// One rate sweep inside an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSweep {
    pub title: String,
    pub spec: SweepSpec,
}

/// The rate sweeps an experiment consists of, in execution order.
pub fn experiment_sweeps(config: &Config) -> Result<Vec<SubSweep>> {
    let base = config.sweep_spec()?;
    Ok(match config.experiment {
        ExperimentKind::Schedule => {
            return Err(Error::Config("a schedule experiment has no sweeps".into()));
        }
        ExperimentKind::Sweep | ExperimentKind::EndpointScan => vec![SubSweep { title: "sweep".into(), spec: base }],
        ExperimentKind::RegimeScan => config
            .scan
            .momenta
            .iter()
            .map(|&m| SubSweep { title: format!("momentum {m}"), spec: SweepSpec { momentum: m, ..base.clone() } })
            .collect(),
        ExperimentKind::BudgetScan => config
            .scan
            .epochs
            .iter()
            .map(|&e| SubSweep {
                title: format!("{e} epochs"),
                spec: SweepSpec { budget: Budget::Epochs { epochs: e }, ..base.clone() },
            })
            .collect(),
    })
}

/// Lookup key of a run: its configuration and run index.
pub fn record_key(config: &RunConfig, run_index: usize) -> String {
    serde_json::to_string(&(config, run_index)).expect("run configs serialize")
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a records file. A malformed final line (an interrupted write) is
/// dropped; malformed lines elsewhere are errors.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => {}
            Err(e) => return Err(Error::Io(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Per-batch results of `spec` under `objective`; `None` where any planned
/// run is absent from `index`.
pub fn assemble(
    spec: &SweepSpec,
    index: &HashMap<String, &RunRecord>,
    objective: Objective,
) -> Result<Vec<Option<BatchResult>>> {
    let mut out = Vec::with_capacity(spec.batch_sizes.len());
    for &b in &spec.batch_sizes {
        let sub = SweepSpec { batch_sizes: vec![b], ..spec.clone() };
        let found: Option<Vec<RunRecord>> = plan(&sub)?
            .iter()
            .map(|(cfg, r, _)| index.get(&record_key(cfg, *r)).map(|rec| (*rec).clone()))
            .collect();
        out.push(match found {
            Some(recs) => Some(summarize(&sub, &recs, objective)?.batches.remove(0)),
            None => None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct SectionJson {
    title: String,
    momentum: f64,
    budget: Budget,
    objective: Objective,
    batches: Vec<Option<BatchResult>>,
}

#[derive(Debug, Clone, Serialize)]
struct BudgetJson {
    epochs: u64,
    test: Option<LrCell>,
    train: Option<LrCell>,
}

/// Everything written to a results directory besides the records.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub summary_csv: String,
    /// `(file name, contents)` of the plot CSVs.
    pub plots: Vec<(String, String)>,
    pub result_json: String,
    pub tables: Vec<ReportTable>,
    /// Every planned run has a record.
    pub complete: bool,
    /// No batch of any section has a completed run.
    pub all_diverged: bool,
}

fn objective_key(o: Objective) -> String {
    serde_json::to_value(o).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn lr_cell(b: &BatchResult) -> Option<LrCell> {
    let sel = b.selection.as_ref()?;
    Some(LrCell { optimal: sel.optimal_lr, low: sel.errorbar_low, high: sel.errorbar_high })
}

fn summary_rows(csv: &mut String, section: &SubSweep, objective: Objective, batches: &[Option<BatchResult>]) {
    let s = &section.spec;
    for b in batches.iter().flatten() {
        let sel = b.selection.as_ref();
        for (i, p) in b.summaries.iter().enumerate() {
            let optimal = sel.is_some_and(|x| x.optimal == i);
            let in_bar = sel.is_some_and(|x| x.errorbar.contains(&i));
            let boundary = sel.is_some_and(|x| x.boundary_flag);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                section.title,
                objective_key(objective),
                csv_f64(s.momentum),
                s.budget.label(),
                b.batch,
                csv_f64(p.lr),
                csv_opt(p.eps_final),
                csv_f64(p.mean),
                csv_f64(p.std),
                p.kept,
                p.completed,
                p.runs,
                csv_f64(p.train_loss_mean),
                csv_f64(p.train_loss_std),
                csv_f64(p.test_metric_mean),
                csv_f64(p.test_metric_std),
                optimal as u8,
                in_bar as u8,
                boundary as u8
            );
        }
    }
}

fn range_text(lo: f64, hi: f64) -> String {
    format!("{} to {}", format_lr(lo), format_lr(hi))
}

/// Aggregates `records` for the experiment described by `config`.
pub fn build_report(config: &Config, records: &[RunRecord]) -> Result<Report> {
    let sections = experiment_sweeps(config)?;
    let index: HashMap<String, &RunRecord> = records.iter().map(|r| (record_key(&r.config, r.run_index), r)).collect();
    let base = config.sweep_spec()?;
    let objective = base.objective;
    let dual = matches!(config.experiment, ExperimentKind::BudgetScan | ExperimentKind::EndpointScan)
        && objective != Objective::MinTrainLoss;

    let mut text = String::new();
    let _ = writeln!(text, "experiment: {}", serde_json::to_value(config.experiment).unwrap_or_default().as_str().unwrap_or(""));
    let _ = writeln!(text, "objective: {}", objective.label());
    if config.experiment != ExperimentKind::BudgetScan {
        let _ = writeln!(text, "budget: {}", base.budget.label());
    }
    let _ = writeln!(text, "runs per point: {}, best kept: {}", base.runs, base.keep);
    let _ = writeln!(text, "error bar: {}", objective_key_rule(base.error_bar));
    let _ = writeln!(text, "seed: {}", base.seed);

    let mut csv = format!("{SUMMARY_HEADER}\n");
    let mut metric_csv = String::from("section,momentum,batch,metric_mean,metric_std,train_loss_mean,train_loss_std\n");
    let mut lr_csv = String::from("section,momentum,batch,optimal_lr,errorbar_low,errorbar_high,boundary\n");
    let mut budget_csv = String::from("epochs,test_lr,test_low,test_high,train_lr,train_low,train_high\n");
    let mut tables = Vec::new();
    let mut json_sections = Vec::new();
    let mut budget_rows = Vec::new();
    let mut endpoint: Vec<Option<EndpointOptimum>> = Vec::new();
    let mut complete = true;
    let mut any_selected = false;

    for sec in &sections {
        let main = assemble(&sec.spec, &index, objective)?;
        let train = if dual { Some(assemble(&sec.spec, &index, Objective::MinTrainLoss)?) } else { None };
        complete &= main.iter().all(Option::is_some);
        any_selected |= main.iter().flatten().any(|b| b.selection.is_some());

        let rows: Vec<ReportRow> = sec
            .spec
            .batch_sizes
            .iter()
            .zip(&main)
            .map(|(&b, r)| r.as_ref().map_or_else(|| ReportRow::missing(b), |r| ReportRow::from_batch(r, objective)))
            .collect();
        let table = ReportTable { title: sec.title.clone(), objective, rows };
        let _ = write!(text, "\n{}", table.render());
        let edge: Vec<String> = main
            .iter()
            .flatten()
            .filter(|b| b.selection.as_ref().is_some_and(|s| s.boundary_flag))
            .map(|b| b.batch.to_string())
            .collect();
        if !edge.is_empty() {
            let _ = writeln!(text, "grid edge reached at batch {}", edge.join(", "));
        }
        tables.push(table);

        summary_rows(&mut csv, sec, objective, &main);
        if let Some(t) = &train {
            summary_rows(&mut csv, sec, Objective::MinTrainLoss, t);
        }
        for b in main.iter().flatten() {
            let m = sec.spec.momentum;
            match b.optimal() {
                Some(o) => {
                    let sel = b.selection.as_ref().expect("optimal implies selection");
                    let _ = writeln!(
                        metric_csv,
                        "{},{},{},{},{},{},{}",
                        sec.title,
                        csv_f64(m),
                        b.batch,
                        csv_f64(o.mean),
                        csv_f64(o.std),
                        csv_f64(o.train_loss_mean),
                        csv_f64(o.train_loss_std)
                    );
                    let _ = writeln!(
                        lr_csv,
                        "{},{},{},{},{},{},{}",
                        sec.title,
                        csv_f64(m),
                        b.batch,
                        csv_f64(o.lr),
                        csv_f64(sel.errorbar_low),
                        csv_f64(sel.errorbar_high),
                        sel.boundary_flag as u8
                    );
                }
                None => {
                    let _ = writeln!(metric_csv, "{},{},{},,,,", sec.title, csv_f64(m), b.batch);
                    let _ = writeln!(lr_csv, "{},{},{},,,,", sec.title, csv_f64(m), b.batch);
                }
            }
        }

        if config.experiment == ExperimentKind::BudgetScan {
            let Budget::Epochs { epochs } = sec.spec.budget else { unreachable!("budget scans use epoch budgets") };
            let test = main[0].as_ref().and_then(lr_cell);
            let train_cell = match &train {
                Some(t) => t[0].as_ref().and_then(lr_cell),
                None => test,
            };
            let c = |x: Option<LrCell>| match x {
                Some(c) => format!("{},{},{}", csv_f64(c.optimal), csv_f64(c.low), csv_f64(c.high)),
                None => ",,".into(),
            };
            let _ = writeln!(budget_csv, "{epochs},{},{}", c(test), c(train_cell));
            budget_rows.push(BudgetJson { epochs, test, train: train_cell });
        }
        if config.experiment == ExperimentKind::EndpointScan {
            endpoint.push(main[0].as_ref().and_then(|b| endpoint_optimum(b, objective)));
            if let Some(t) = &train {
                endpoint.push(t[0].as_ref().and_then(|b| endpoint_optimum(b, Objective::MinTrainLoss)));
            }
        }
        json_sections.push(SectionJson {
            title: sec.title.clone(),
            momentum: sec.spec.momentum,
            budget: sec.spec.budget,
            objective,
            batches: main,
        });
    }

    if config.experiment == ExperimentKind::BudgetScan {
        let _ = writeln!(text, "\n## optimal lr vs budget\nepochs | {} optimal lr | train-loss optimal lr", objective.label());
        let cell = |x: &Option<LrCell>| x.map_or_else(|| "missing".to_string(), format_lr_cell);
        for r in &budget_rows {
            let _ = writeln!(text, "{} | {} | {}", r.epochs, cell(&r.test), cell(&r.train));
        }
    }
    if config.experiment == ExperimentKind::EndpointScan {
        let _ = writeln!(text, "\n## optimal endpoints\nobjective | initial lr (range) | final lr (range) | mean ± std");
        for o in endpoint.iter().flatten() {
            let d = super::decimals_for(o.objective);
            let _ = writeln!(
                text,
                "{} | {} ({}) | {} ({}) | {}",
                o.objective.label(),
                format_lr(o.lr),
                range_text(o.lr_low, o.lr_high),
                format_lr(o.eps_final),
                range_text(o.final_low, o.final_high),
                format_stat(Stat { mean: o.mean, std: o.std }, d)
            );
        }
    }
    if !complete {
        let _ = writeln!(text, "\nincomplete: some planned runs have no record");
    }

    let result_json = serde_json::to_string_pretty(&serde_json::json!({
        "experiment": config.experiment,
        "complete": complete,
        "sections": json_sections,
        "budget_rows": budget_rows,
        "endpoint_optima": endpoint,
    }))
    .map_err(|e| Error::Io(e.to_string()))?;

    let mut plots = vec![
        ("metric_vs_batch.csv".to_string(), metric_csv),
        ("optimal_lr_vs_batch.csv".to_string(), lr_csv),
    ];
    if config.experiment == ExperimentKind::BudgetScan {
        plots.push(("lr_vs_budget.csv".to_string(), budget_csv));
    }
    Ok(Report { text, summary_csv: csv, plots, result_json, tables, complete, all_diverged: !any_selected })
}

fn objective_key_rule(r: crate::sweep::ErrorBarRule) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{run_sweep, Task};

    const CFG: &str = r#"
version = 1
experiment = "sweep"
seed = 3

[model]
kind = "quadratic"
eigenvalues = [1.0, 0.2]
n_examples = 64

[grid]
lr = { log2_min = -5, log2_max = 2 }
batch_sizes = [2, 16]

[budget]
kind = "epochs"
epochs = 20

[protocol]
runs = 4
keep = 3
objective = "min-train-loss"
"#;

    fn records(cfg: &Config) -> Vec<RunRecord> {
        let task = Task::build(cfg.model.as_ref().unwrap()).unwrap();
        experiment_sweeps(cfg)
            .unwrap()
            .iter()
            .flat_map(|s| run_sweep(&task, &s.spec).unwrap().records)
            .collect()
    }

    #[test]
    fn records_file_round_trip_and_truncated_tail() {
        let cfg = Config::parse(CFG).unwrap();
        let recs = records(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RUNS_FILE);
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"config\": {\"lr\"");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), recs.len());
        std::fs::write(&path, format!("garbage\n{text}")).unwrap();
        assert!(read_records(&path).is_err());
    }

    #[test]
    fn report_matches_sweep_and_marks_missing_rows() {
        let cfg = Config::parse(CFG).unwrap();
        let recs = records(&cfg);
        let rep = build_report(&cfg, &recs).unwrap();
        assert!(rep.complete && !rep.all_diverged);
        let direct = run_sweep(&Task::build(cfg.model.as_ref().unwrap()).unwrap(), &cfg.sweep_spec().unwrap()).unwrap();
        for (row, b) in rep.tables[0].rows.iter().zip(&direct.result.batches) {
            assert_eq!(*row, ReportRow::from_batch(b, Objective::MinTrainLoss));
        }
        assert_eq!(ReportTable::parse_all(&rep.text).unwrap(), rep.tables);
        assert_eq!(rep.summary_csv.lines().count(), 1 + 2 * 8);
        assert!(rep.summary_csv.starts_with(SUMMARY_HEADER));

        // drop one record of the second batch size
        let partial: Vec<RunRecord> = recs.iter().filter(|r| !(r.config.batch == 16 && r.run_index == 1)).cloned().collect();
        let rep = build_report(&cfg, &partial).unwrap();
        assert!(!rep.complete);
        assert!(rep.text.contains("16 | missing | missing | missing"));
        assert!(rep.text.contains("incomplete"));
    }

    #[test]
    fn budget_scan_report_has_both_objectives() {
        let text = CFG
            .replace("experiment = \"sweep\"", "experiment = \"budget-scan\"")
            .replace("batch_sizes = [2, 16]", "batch_sizes = [8]")
            .replace("[budget]\nkind = \"epochs\"\nepochs = 20\n", "[scan]\nepochs = [20, 40]\n")
            .replace("min-train-loss", "min-test-mse");
        let cfg = Config::parse(&text).unwrap();
        let rep = build_report(&cfg, &records(&cfg)).unwrap();
        assert_eq!(rep.tables.len(), 2);
        assert!(rep.text.contains("## optimal lr vs budget"));
        let (_, lr_budget) = rep.plots.iter().find(|(n, _)| n == "lr_vs_budget.csv").unwrap();
        assert_eq!(lr_budget.lines().count(), 3);
        assert!(rep.summary_csv.contains(",min-train-loss,"));
    }

    #[test]
    fn all_diverged_flag() {
        let text = CFG.replace("lr = { log2_min = -5, log2_max = 2 }", "lr = { values = [8.0, 16.0] }");
        let cfg = Config::parse(&text).unwrap();
        let rep = build_report(&cfg, &records(&cfg)).unwrap();
        assert!(rep.all_diverged);
        assert!(rep.text.contains("2 | diverged | diverged | diverged"));
    }
}
