//! Versioned TOML configuration for the command-line tool.
//!
//! ```toml
//! version = 1
//! experiment = "sweep"      # schedule | sweep | regime-scan | budget-scan | endpoint-scan
//! seed = 0                  # overridden by --seed
//!
//! [model]
//! kind = "quadratic"
//! eigenvalues = [1.0, 0.1]
//! n_examples = 1024
//!
//! [grid]
//! lr = { log2_min = -8, log2_max = 1 }
//! batch_sizes = [1, 4, 16]
//!
//! [budget]
//! kind = "epochs"
//! epochs = 20
//!
//! [protocol]
//! runs = 15
//! keep = 12
//! objective = "min-train-loss"
//! ```
//!
//! Unknown keys anywhere are errors. Optional sections: `[optimizer]`
//! (`momentum`, `gamma`, `sampling`, `granularity`), `[scan]` (`momenta` for
//! regime scans, `epochs` for budget scans) and `grid.final_lr` for endpoint
//! scans. A `schedule` experiment needs only a `[schedule]` table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SamplingMode;
use crate::optim::{Budget, Granularity, ScheduleSpec};
use crate::sweep::{ErrorBarRule, FinalGrid, LrGrid, ModelSpec, Objective, SweepSpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Schedule,
    Sweep,
    RegimeScan,
    BudgetScan,
    EndpointScan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lr: LrGrid,
    pub batch_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lr: Option<FinalGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_keep")]
    pub keep: usize,
    pub objective: Objective,
    #[serde(default)]
    pub error_bar: ErrorBarRule,
}

fn default_runs() -> usize {
    15
}

fn default_keep() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

fn default_gamma() -> f64 {
    2.0
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { momentum: 0.0, gamma: default_gamma(), sampling: SamplingMode::default(), granularity: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub momenta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
}

fn missing(section: &str, kind: ExperimentKind) -> Error {
    Error::Config(format!("missing [{section}] section (required for experiment {kind:?})"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (this build reads version {CONFIG_VERSION})",
                self.version
            )));
        }
        match self.experiment {
            ExperimentKind::Schedule => {
                self.schedule.as_ref().ok_or_else(|| missing("schedule", self.experiment))?;
                self.schedule_spec()?;
            }
            kind => {
                let spec = self.sweep_spec()?;
                spec.validate()?;
                match kind {
                    ExperimentKind::RegimeScan if self.scan.momenta.is_empty() => {
                        return Err(Error::Config("scan.momenta must list at least one momentum".into()))
                    }
                    ExperimentKind::BudgetScan if self.scan.epochs.is_empty() => {
                        return Err(Error::Config("scan.epochs must list at least one epoch budget".into()))
                    }
                    ExperimentKind::BudgetScan | ExperimentKind::EndpointScan if spec.batch_sizes.len() != 1 => {
                        return Err(Error::Config(format!(
                            "grid.batch_sizes must have exactly one entry for experiment {kind:?}"
                        )))
                    }
                    ExperimentKind::EndpointScan if spec.final_lr.is_none() => {
                        return Err(Error::Config("grid.final_lr is required for endpoint-scan".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// The schedule of a `schedule` experiment, checked by building it.
    pub fn schedule_spec(&self) -> Result<&ScheduleSpec> {
        let s = self.schedule.as_ref().ok_or_else(|| missing("schedule", self.experiment))?;
        crate::optim::LrSchedule::from_spec(s).map_err(|e| Error::Config(format!("schedule: {e}")))?;
        Ok(s)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let kind = self.experiment;
        let model = self.model.clone().ok_or_else(|| missing("model", kind))?;
        let grid = self.grid.clone().ok_or_else(|| missing("grid", kind))?;
        let budget = match (self.budget, kind) {
            (Some(b), _) => b,
            // budget scans set the epoch count per row
            (None, ExperimentKind::BudgetScan) => Budget::Epochs { epochs: *self.scan.epochs.first().unwrap_or(&1) },
            (None, _) => return Err(missing("budget", kind)),
        };
        let protocol = self.protocol.clone().ok_or_else(|| missing("protocol", kind))?;
        let mut spec = SweepSpec::new(model, grid.lr, grid.batch_sizes, budget, protocol.objective);
        spec.final_lr = grid.final_lr;
        spec.runs = protocol.runs;
        spec.keep = protocol.keep;
        spec.error_bar = protocol.error_bar;
        spec.momentum = self.optimizer.momentum;
        spec.gamma = self.optimizer.gamma;
        spec.sampling = self.optimizer.sampling;
        spec.granularity = self.optimizer.granularity;
        spec.seed = self.seed;
        Ok(spec)
    }
}
