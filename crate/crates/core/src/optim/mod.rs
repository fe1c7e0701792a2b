//! SGD and heavy-ball momentum, effective learning rate, temperature and the
//! step-decay learning-rate schedule.

mod schedule;

pub use schedule::{steps_per_epoch, Budget, Decay, Granularity, LrSchedule, ScheduleRow, ScheduleSpec};

use crate::error::{Error, Result};
use crate::numkit::Vector;

/// Default heavy-ball coefficient.
pub const DEFAULT_MOMENTUM: f64 = 0.9;
/// A run is declared diverged once its loss exceeds this multiple of the
/// initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Parameters, velocity buffer, momentum coefficient and step counter of one
/// training run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub omega: Vector,
    pub velocity: Vector,
    momentum: f64,
    step: u64,
}

impl OptimizerState {
    /// `momentum` must lie in `[0, 1)`; the velocity starts at zero.
    pub fn new(omega: Vector, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        let velocity = Vector::zeros(omega.dim());
        Ok(Self { omega, velocity, momentum, step: 0 })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn check(&self, grad: &[f64], eps: f64) -> Result<()> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Precondition(format!("learning rate must be positive and finite, got {eps}")));
        }
        if grad.len() != self.omega.dim() {
            return Err(Error::DimensionMismatch { expected: self.omega.dim(), actual: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step: self.step });
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.step += 1;
        if self.omega.is_finite() {
            Ok(())
        } else {
            Err(Error::Diverged { step: self.step })
        }
    }

    /// `w <- w - eps * grad`.
    pub fn sgd_step(&mut self, grad: &[f64], eps: f64) -> Result<()> {
        self.check(grad, eps)?;
        self.omega.axpy(-eps, grad);
        self.finish()
    }

    /// `v <- m v + grad; w <- w - eps * v`.
    pub fn momentum_step(&mut self, grad: &[f64], eps: f64) -> Result<()> {
        self.check(grad, eps)?;
        let m = self.momentum;
        for (v, g) in self.velocity.iter_mut().zip(grad) {
            *v = m * *v + g;
        }
        self.omega.axpy(-eps, &self.velocity);
        self.finish()
    }
}

/// `eps / (1 - m)`.
pub fn effective_lr(eps: f64, momentum: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
    }
    Ok(eps / (1.0 - momentum))
}

/// `eps_eff / B`.
pub fn temperature(eps_eff: f64, batch_size: usize) -> f64 {
    assert!(batch_size >= 1, "batch size must be at least 1");
    eps_eff / batch_size as f64
}

/// Flags a run whose loss has blown up relative to where it started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceGuard {
    threshold: f64,
}

impl DivergenceGuard {
    pub fn new(initial_loss: f64) -> Self {
        Self { threshold: DIVERGENCE_FACTOR * initial_loss.abs().max(f64::MIN_POSITIVE) }
    }

    pub fn check(&self, loss: f64, step: u64) -> Result<()> {
        if loss.is_finite() && loss <= self.threshold {
            Ok(())
        } else {
            Err(Error::Diverged { step })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticModel;
    use crate::numkit::{Rng, SymMatrix};

    #[test]
    fn sgd_examples() {
        let mut s = OptimizerState::new(Vector::from_slice(&[1.0, 2.0]).unwrap(), 0.0).unwrap();
        s.sgd_step(&[1.0, 2.0], 1.0).unwrap();
        assert_eq!(s.omega.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.step(), 1);
        assert!(matches!(s.sgd_step(&[1.0, 2.0], 0.0), Err(Error::Precondition(_))));
        assert!(s.sgd_step(&[1.0], 0.1).is_err());
        assert!(matches!(s.sgd_step(&[f64::NAN, 0.0], 0.1), Err(Error::Diverged { step: 1 })));
        let mut s = OptimizerState::new(Vector::from_slice(&[1.0]).unwrap(), 0.0).unwrap();
        assert!(matches!(s.sgd_step(&[1e308], 1e10), Err(Error::Diverged { step: 1 })));
    }

    #[test]
    fn momentum_zero_is_sgd_bitwise() {
        let mut rng = Rng::new(5);
        let start = Vector::from_slice(&[0.3, -1.2, 2.5]).unwrap();
        let mut a = OptimizerState::new(start.clone(), 0.0).unwrap();
        let mut b = OptimizerState::new(start, 0.0).unwrap();
        let mut g = [0.0; 3];
        for _ in 0..1000 {
            rng.fill_normal(&mut g);
            a.sgd_step(&g, 0.037).unwrap();
            b.momentum_step(&g, 0.037).unwrap();
        }
        for (x, y) in a.omega.iter().zip(b.omega.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn momentum_constant_gradient_closed_form() {
        let (m, eps, g) = (0.9, 0.1, 2.0);
        let mut s = OptimizerState::new(Vector::from_slice(&[0.0]).unwrap(), m).unwrap();
        for i in 1..=50 {
            s.momentum_step(&[g], eps).unwrap();
            let disp: f64 = (1..=i).map(|k| (1.0 - m.powi(k)) / (1.0 - m)).sum::<f64>() * -eps * g;
            assert!((s.omega[0] - disp).abs() < 1e-12 * disp.abs().max(1.0), "step {i}");
        }
    }

    #[test]
    fn effective_lr_and_temperature() {
        assert!((effective_lr(0.1, 0.9).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(effective_lr(0.3, 0.0).unwrap(), 0.3);
        assert!((effective_lr(0.05, 0.9).unwrap() - 0.5).abs() < 1e-15);
        assert!(effective_lr(0.1, 1.0).is_err());
        assert!(OptimizerState::new(Vector::zeros(1), 1.0).is_err());
        assert_eq!(temperature(0.4, 64), 0.00625);
        assert_eq!(temperature(1.0, 64), 0.015625);
        assert_eq!(temperature(0.8, 128), temperature(0.4, 64));
    }

    #[test]
    fn critical_lr_boundary() {
        let h = SymMatrix::diag(&[0.5, 2.0]).unwrap();
        let model = QuadraticModel::new(h, vec![Vector::zeros(2), Vector::zeros(2)]).unwrap();
        let crit = model.critical_lr().unwrap();
        let run = |eps: f64| -> (Vec<f64>, Option<u64>) {
            let mut s = OptimizerState::new(Vector::from_slice(&[1.0, 1.0]).unwrap(), 0.0).unwrap();
            let guard = DivergenceGuard::new(model.loss(&s.omega));
            let mut losses = vec![model.loss(&s.omega)];
            for _ in 0..10_000 {
                let g = model.full_grad(&s.omega);
                let r = s.sgd_step(&g, eps).and_then(|_| guard.check(model.loss(&s.omega), s.step()));
                if let Err(Error::Diverged { step }) = r {
                    return (losses, Some(step));
                }
                losses.push(model.loss(&s.omega));
            }
            (losses, None)
        };
        let (losses, div) = run(0.99 * crit);
        assert!(div.is_none());
        assert!(losses[1..].windows(2).all(|w| w[1] < w[0] || w[1] == 0.0));
        let (_, div) = run(1.01 * crit);
        assert!(div.is_some());
    }
}
