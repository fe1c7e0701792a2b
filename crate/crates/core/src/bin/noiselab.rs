use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use noiselab::config::{Config, ExperimentKind};
use noiselab::optim::{steps_per_epoch, Budget, Granularity, LrSchedule, ScheduleSpec};
use noiselab::report::{
    build_report, experiment_sweeps, read_records, write_records, Report, CONFIG_FILE, REPORT_FILE, RESULT_FILE,
    RUNS_FILE, SUMMARY_FILE,
};
use noiselab::sde::{run_default_check, CheckName};
use noiselab::sweep::{run_sweep, Task};
use noiselab::Error;

const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_DIVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

/// Learning-rate, batch-size and budget experiments on SGD noise.
#[derive(Debug, Parser)]
#[command(name = "noiselab", version)]
struct Cli {
    /// Experiment or schedule configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Results directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed; overrides the config's seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Print the planned number of runs and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a step-decay schedule: one row per rate change plus the endpoints.
    Schedule(ScheduleArgs),
    /// Run the experiment in --config and write its artifacts to --out.
    Sweep,
    /// Run analytic and Monte-Carlo checks with their default setups.
    Checks {
        #[arg(value_parser = ["eps-crit", "lin-scaling", "sde-vs-sgd", "momentum-equiv", "all"], default_value = "all")]
        which: Vec<String>,
        /// One JSON report per line instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild the report of a results directory from its run records.
    Report {
        /// Results directory (defaults to --out).
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long)]
    eps0: Option<f64>,
    /// Decay factor per drop (default 2).
    #[arg(long, conflicts_with = "eps_final")]
    gamma: Option<f64>,
    /// Final rate; sets the decay factor to (eps0 / eps_final)^(1/10).
    #[arg(long)]
    eps_final: Option<f64>,
    #[arg(long, conflicts_with = "steps")]
    epochs: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Training-set size; with --batch gives the steps per epoch.
    #[arg(long, requires = "batch")]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    batch: Option<usize>,
    #[arg(long, conflicts_with = "n")]
    steps_per_epoch: Option<u64>,
    /// Drop at epoch boundaries (default for epoch budgets) or at step boundaries.
    #[arg(long, value_parser = ["epoch", "step"])]
    granularity: Option<String>,
    /// Comma-separated output instead of a text table.
    #[arg(long)]
    csv: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_ERROR,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_ERROR, message: format!("{}: {e}", path.display()) }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Schedule(args) => cmd_schedule(cli, args),
        Command::Sweep => cmd_sweep(cli),
        Command::Checks { which, json } => cmd_checks(cli, which, *json),
        Command::Report { dir } => {
            let dir = dir.as_ref().or(cli.out.as_ref()).ok_or_else(|| config_failure("report needs a results directory"))?;
            cmd_report(dir)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| config_failure("--config PATH is required"))?;
    let mut cfg = Config::load(path).map_err(|e| match e {
        // an unreadable config is a usage problem, not a run failure
        Error::Io(m) => config_failure(format!("cannot read config {m}")),
        other => other.into(),
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn schedule_from_args(args: &ScheduleArgs) -> Result<ScheduleSpec, Failure> {
    let eps0 = args.eps0.ok_or_else(|| config_failure("schedule needs --config or --eps0"))?;
    let budget = match (args.epochs, args.steps) {
        (Some(epochs), None) => Budget::Epochs { epochs },
        (None, Some(steps)) => Budget::Steps { steps },
        _ => return Err(config_failure("schedule needs --epochs or --steps")),
    };
    let spe = match (args.n, args.batch, args.steps_per_epoch) {
        (Some(n), Some(b), None) => {
            if b == 0 || b > n {
                return Err(config_failure(format!("--batch must be in 1..={n}")));
            }
            steps_per_epoch(n, b)
        }
        (None, None, Some(k)) => k,
        _ => 1,
    };
    let granularity = args.granularity.as_deref().map(|g| if g == "epoch" { Granularity::Epoch } else { Granularity::Step });
    Ok(ScheduleSpec { eps0, gamma: args.gamma, eps_final: args.eps_final, budget, steps_per_epoch: spe, granularity })
}

fn cmd_schedule(cli: &Cli, args: &ScheduleArgs) -> Result<u8, Failure> {
    let spec = match &cli.config {
        Some(_) => {
            let cfg = load_config(cli)?;
            if cfg.experiment != ExperimentKind::Schedule {
                return Err(config_failure("config experiment must be \"schedule\""));
            }
            cfg.schedule_spec()?.clone()
        }
        None => schedule_from_args(args)?,
    };
    let schedule = LrSchedule::from_spec(&spec).map_err(|e| config_failure(format!("schedule: {e}")))?;
    let mut out = std::io::stdout().lock();
    let rows = schedule.table();
    let write = |out: &mut dyn Write| -> std::io::Result<()> {
        if args.csv {
            writeln!(out, "step,epoch,lr")?;
            for r in &rows {
                writeln!(out, "{},{},{}", r.step, r.epoch, r.lr)?;
            }
        } else {
            writeln!(out, "step | epoch | lr")?;
            for r in &rows {
                writeln!(out, "{} | {} | {:e}", r.step, r.epoch, r.lr)?;
            }
        }
        Ok(())
    };
    write(&mut out).map_err(|e| Failure { code: EXIT_ERROR, message: e.to_string() })?;
    Ok(0)
}

fn thread_pool(cli: &Cli) -> Result<rayon::ThreadPool, Failure> {
    let jobs = match cli.jobs {
        Some(0) => return Err(config_failure("--jobs must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure { code: EXIT_ERROR, message: e.to_string() })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn write_report(dir: &Path, report: &Report) -> Result<(), Failure> {
    write_file(&dir.join(SUMMARY_FILE), &report.summary_csv)?;
    write_file(&dir.join(RESULT_FILE), &report.result_json)?;
    write_file(&dir.join(REPORT_FILE), &report.text)?;
    for (name, csv) in &report.plots {
        write_file(&dir.join(name), csv)?;
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<u8, Failure> {
    let cfg = load_config(cli)?;
    if cfg.experiment == ExperimentKind::Schedule {
        return Err(config_failure("a schedule config is printed with the schedule command"));
    }
    let sections = experiment_sweeps(&cfg)?;
    if cli.dry_run {
        let mut total = 0;
        for s in &sections {
            let n = s.spec.planned_runs()?;
            total += n;
            println!(
                "{}: {} grid points x {} runs x {} batch sizes = {n}",
                s.title,
                s.spec.lr_points()?.len(),
                s.spec.runs,
                s.spec.batch_sizes.len()
            );
        }
        println!("planned runs: {total}");
        return Ok(0);
    }
    let out = cli.out.as_ref().ok_or_else(|| config_failure("--out DIR is required"))?;
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_toml()?)?;

    let task = Task::build(cfg.model.as_ref().expect("validated sweep config has a model"))?;
    let pool = thread_pool(cli)?;
    let mut records = Vec::new();
    for s in &sections {
        eprintln!("{}: {} runs", s.title, s.spec.planned_runs()?);
        let result = pool.install(|| run_sweep(&task, &s.spec))?;
        records.extend(result.records);
    }
    write_records(&out.join(RUNS_FILE), &records)?;
    let report = build_report(&cfg, &records)?;
    write_report(out, &report)?;
    print!("{}", report.text);
    Ok(if report.all_diverged { EXIT_ALL_DIVERGED } else { 0 })
}

fn cmd_report(dir: &Path) -> Result<u8, Failure> {
    let cfg = Config::load(&dir.join(CONFIG_FILE)).map_err(|e| match e {
        Error::Io(m) => config_failure(format!("not a results directory: {m}")),
        other => other.into(),
    })?;
    let runs = dir.join(RUNS_FILE);
    let records = if runs.exists() { read_records(&runs)? } else { Vec::new() };
    let report = build_report(&cfg, &records)?;
    write_report(dir, &report)?;
    print!("{}", report.text);
    Ok(if report.complete && report.all_diverged { EXIT_ALL_DIVERGED } else { 0 })
}

fn cmd_checks(cli: &Cli, which: &[String], json: bool) -> Result<u8, Failure> {
    let mut names: Vec<CheckName> = Vec::new();
    for w in which {
        if w == "all" {
            names.extend(CheckName::ALL);
        } else {
            names.push(CheckName::parse(w).map_err(|e| config_failure(e.to_string()))?);
        }
    }
    names.dedup();
    let seed = cli.seed.unwrap_or(0);
    let pool = thread_pool(cli)?;
    let mut all = Vec::new();
    let mut failed = false;
    let mut stdout = std::io::stdout().lock();
    for name in names {
        for report in pool.install(|| run_default_check(name, seed))? {
            failed |= !report.status.is_ok();
            let line = if json {
                serde_json::to_string(&report).map_err(|e| Failure { code: EXIT_ERROR, message: e.to_string() })?
            } else {
                let measured: Vec<String> = report.measured.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
                let status = serde_json::to_value(report.status).ok().and_then(|v| v.as_str().map(String::from));
                format!("{}: {} [{}]", report.name, status.unwrap_or_default(), measured.join(", "))
            };
            let _ = writeln!(stdout, "{line}");
            all.push(report);
        }
    }
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
        let text = serde_json::to_string_pretty(&all).map_err(|e| Failure { code: EXIT_ERROR, message: e.to_string() })?;
        write_file(&out.join("checks.json"), &text)?;
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { 0 })
}
