//! Step-decay schedule: constant for the first half of the budget, then a
//! drop by `gamma` every twentieth of the budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compute budget of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Budget {
    /// Fixed number of passes over the training set.
    Epochs { epochs: u64 },
    /// Fixed number of parameter updates.
    Steps { steps: u64 },
    /// Train until the full-batch training loss reaches `target_loss`, or
    /// `max_steps` updates. The schedule spans `max_steps`.
    Unlimited { target_loss: f64, max_steps: u64 },
}

impl Budget {
    pub fn total_steps(&self, steps_per_epoch: u64) -> u64 {
        match *self {
            Budget::Epochs { epochs } => epochs * steps_per_epoch,
            Budget::Steps { steps } => steps,
            Budget::Unlimited { max_steps, .. } => max_steps,
        }
    }

    pub fn default_granularity(&self) -> Granularity {
        match self {
            Budget::Epochs { .. } => Granularity::Epoch,
            _ => Granularity::Step,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Budget::Epochs { epochs } => format!("{epochs} epochs"),
            Budget::Steps { steps } => format!("{steps} steps"),
            Budget::Unlimited { target_loss, max_steps } => format!("loss {target_loss} or {max_steps} steps"),
        }
    }
}

/// Updates per epoch: `max(1, floor(N / B))`.
pub fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    (n / batch.max(1)).max(1) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Epoch,
    Step,
}

/// How the total decay is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    /// Factor applied at each drop.
    Gamma(f64),
    /// Final learning rate; `gamma = (eps0 / eps_final)^(1/10)`.
    Final(f64),
}

/// Serializable schedule description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub eps0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_final: Option<f64>,
    pub budget: Budget,
    #[serde(default = "one")]
    pub steps_per_epoch: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

fn one() -> u64 {
    1
}

/// One line of a printed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    eps0: f64,
    decay: Decay,
    budget: Budget,
    steps_per_epoch: u64,
    granularity: Granularity,
    total_units: u64,
    hold: u64,
    interval: u64,
    log2_gamma: f64,
}

impl LrSchedule {
    pub fn new(eps0: f64, decay: Decay, budget: Budget, steps_per_epoch: u64, granularity: Granularity) -> Result<Self> {
        if !(eps0 > 0.0) || !eps0.is_finite() {
            return Err(Error::Config(format!("eps0 must be positive, got {eps0}")));
        }
        if steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        let log2_gamma = match decay {
            Decay::Gamma(g) if g >= 1.0 && g.is_finite() => g.log2(),
            Decay::Gamma(g) => return Err(Error::Config(format!("gamma must be >= 1, got {g}"))),
            Decay::Final(f) if f > 0.0 && f <= eps0 => (eps0 / f).log2() / 10.0,
            Decay::Final(f) => {
                return Err(Error::Config(format!("eps_final must be in (0, eps0 = {eps0}], got {f}")))
            }
        };
        if let Budget::Unlimited { target_loss, .. } = budget {
            if !target_loss.is_finite() {
                return Err(Error::Config("target_loss must be finite".into()));
            }
        }
        if granularity == Granularity::Epoch && matches!(budget, Budget::Unlimited { .. } | Budget::Steps { .. }) {
            return Err(Error::Config("epoch granularity needs an epoch budget".into()));
        }
        let total_units = match (budget, granularity) {
            (Budget::Epochs { epochs }, Granularity::Epoch) => epochs,
            (b, _) => b.total_steps(steps_per_epoch),
        };
        if total_units > 0 && total_units < 20 {
            return Err(Error::Config(format!(
                "budget of {total_units} {granularity:?} units is too short for a 20-interval schedule"
            )));
        }
        Ok(Self {
            eps0,
            decay,
            budget,
            steps_per_epoch,
            granularity,
            total_units,
            hold: total_units / 2,
            interval: total_units / 20,
            log2_gamma,
        })
    }

    /// Coupled schedule with the budget's default granularity.
    pub fn coupled(eps0: f64, gamma: f64, budget: Budget, steps_per_epoch: u64) -> Result<Self> {
        Self::new(eps0, Decay::Gamma(gamma), budget, steps_per_epoch, budget.default_granularity())
    }

    /// Decoupled schedule with the budget's default granularity.
    pub fn decoupled(eps0: f64, eps_final: f64, budget: Budget, steps_per_epoch: u64) -> Result<Self> {
        Self::new(eps0, Decay::Final(eps_final), budget, steps_per_epoch, budget.default_granularity())
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        let decay = match (spec.gamma, spec.eps_final) {
            (Some(g), None) => Decay::Gamma(g),
            (None, Some(f)) => Decay::Final(f),
            (None, None) => Decay::Gamma(2.0),
            (Some(_), Some(_)) => return Err(Error::Config("give either gamma or eps_final, not both".into())),
        };
        let granularity = spec.granularity.unwrap_or_else(|| spec.budget.default_granularity());
        Self::new(spec.eps0, decay, spec.budget, spec.steps_per_epoch, granularity)
    }

    pub fn to_spec(&self) -> ScheduleSpec {
        let (gamma, eps_final) = match self.decay {
            Decay::Gamma(g) => (Some(g), None),
            Decay::Final(f) => (None, Some(f)),
        };
        ScheduleSpec {
            eps0: self.eps0,
            gamma,
            eps_final,
            budget: self.budget,
            steps_per_epoch: self.steps_per_epoch,
            granularity: Some(self.granularity),
        }
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    /// Effective per-drop factor.
    pub fn gamma(&self) -> f64 {
        self.log2_gamma.exp2()
    }

    /// Total parameter updates implied by the budget.
    pub fn total_steps(&self) -> u64 {
        self.budget.total_steps(self.steps_per_epoch)
    }

    /// First unit (epoch or step) at the lowered rate, and the drop interval.
    pub fn thresholds(&self) -> (u64, u64) {
        (self.hold, self.interval)
    }

    fn unit_of(&self, step: u64) -> u64 {
        match self.granularity {
            Granularity::Epoch => step / self.steps_per_epoch,
            Granularity::Step => step,
        }
    }

    /// Number of drops applied by unit `t`.
    pub fn drops_at_unit(&self, t: u64) -> u64 {
        if self.total_units == 0 || t < self.hold {
            0
        } else {
            (t - self.hold) / self.interval + 1
        }
    }

    /// Learning rate for the update with zero-based index `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr_at_unit(self.unit_of(step))
    }

    pub fn lr_at_unit(&self, t: u64) -> f64 {
        let drops = self.drops_at_unit(t);
        if drops == 0 {
            self.eps0
        } else {
            self.eps0 * (-(drops as f64) * self.log2_gamma).exp2()
        }
    }

    /// Units at which the rate changes, in order.
    pub fn drop_units(&self) -> Vec<u64> {
        if self.total_units == 0 || self.log2_gamma == 0.0 {
            return Vec::new();
        }
        (self.hold..self.total_units).step_by(self.interval as usize).collect()
    }

    /// First step, every change point, and the last step when its rate differs
    /// from the previous row.
    pub fn table(&self) -> Vec<ScheduleRow> {
        let to_step = |u: u64| match self.granularity {
            Granularity::Epoch => u * self.steps_per_epoch,
            Granularity::Step => u,
        };
        let row = |step: u64| ScheduleRow { step, epoch: step / self.steps_per_epoch, lr: self.lr_at(step) };
        let mut rows = vec![row(0)];
        for u in self.drop_units() {
            let r = row(to_step(u));
            if r.step > 0 && r.lr != rows[rows.len() - 1].lr {
                rows.push(r);
            }
        }
        let total = self.total_steps();
        if total > 1 {
            let r = row(total - 1);
            if r.lr != rows[rows.len() - 1].lr {
                rows.push(r);
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_budget_fixture() {
        let s = LrSchedule::coupled(0.4, 2.0, Budget::Epochs { epochs: 200 }, 1).unwrap();
        assert_eq!(s.lr_at(99), 0.4);
        assert_eq!(s.lr_at(100), 0.2);
        assert_eq!(s.lr_at(199), 3.90625e-4);
        assert_eq!(s.lr_at(199), 0.4 * 2f64.powi(-10));
        assert_eq!(s.drop_units().len(), 10);
    }

    #[test]
    fn epoch_granularity_holds_within_epoch() {
        let s = LrSchedule::coupled(1.0, 2.0, Budget::Epochs { epochs: 20 }, 7).unwrap();
        assert_eq!(s.total_steps(), 140);
        for step in 70..77 {
            assert_eq!(s.lr_at(step), 0.5);
        }
        assert_eq!(s.lr_at(69), 1.0);
        assert_eq!(s.lr_at(77), 0.25);
    }

    #[test]
    fn constant_step_fixture() {
        let s = LrSchedule::coupled(1.0, 2.0, Budget::Steps { steps: 9765 }, 1).unwrap();
        assert_eq!(s.thresholds(), (4882, 488));
        assert_eq!(s.lr_at(4881), 1.0);
        assert_eq!(s.lr_at(4882), 0.5);
        let mut expected: Vec<u64> = (0..11).map(|k| 4882 + 488 * k).collect();
        assert_eq!(*expected.last().unwrap(), 9762);
        assert_eq!(s.drop_units(), expected);
        for w in expected.windows(2) {
            assert_eq!(s.lr_at(w[1] - 1), s.lr_at(w[0]));
            assert_eq!(s.lr_at(w[1]), s.lr_at(w[0]) / 2.0);
        }
        // the eleventh drop covers the final three steps
        assert_eq!(s.lr_at(9764), 2f64.powi(-11));
        expected.insert(0, 0);
        let steps: Vec<u64> = s.table().iter().map(|r| r.step).collect();
        assert_eq!(steps, expected);
    }

    #[test]
    fn decoupled_matches_coupled() {
        let budget = Budget::Epochs { epochs: 200 };
        let a = LrSchedule::coupled(1.0, 2.0, budget, 3).unwrap();
        let b = LrSchedule::decoupled(1.0, 2f64.powi(-10), budget, 3).unwrap();
        for step in 0..a.total_steps() {
            assert_eq!(a.lr_at(step).to_bits(), b.lr_at(step).to_bits());
        }
        let c = LrSchedule::decoupled(0.3, 0.3, budget, 1).unwrap();
        assert_eq!(c.gamma(), 1.0);
        assert!((0..200).all(|e| c.lr_at(e) == 0.3));
        assert_eq!(c.table().len(), 1);
    }

    #[test]
    fn rejects_bad_schedules() {
        let b = Budget::Epochs { epochs: 200 };
        assert!(LrSchedule::coupled(0.0, 2.0, b, 1).is_err());
        assert!(LrSchedule::coupled(0.1, 0.5, b, 1).is_err());
        assert!(LrSchedule::decoupled(0.1, 0.2, b, 1).is_err());
        assert!(LrSchedule::coupled(0.1, 2.0, Budget::Epochs { epochs: 10 }, 1).is_err());
        assert!(LrSchedule::coupled(0.1, 2.0, Budget::Steps { steps: 0 }, 1).is_ok());
        assert!(LrSchedule::new(0.1, Decay::Gamma(2.0), Budget::Steps { steps: 100 }, 1, Granularity::Epoch).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let s = LrSchedule::decoupled(0.5, 0.01, Budget::Steps { steps: 400 }, 4).unwrap();
        let text = toml::to_string(&s.to_spec()).unwrap();
        let back: ScheduleSpec = toml::from_str(&text).unwrap();
        assert_eq!(LrSchedule::from_spec(&back).unwrap(), s);
    }
}
