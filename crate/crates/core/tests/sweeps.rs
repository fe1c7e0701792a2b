//! Sweep-level properties on the quadratic model.

use noiselab::optim::{Budget, Granularity};
use noiselab::sweep::{budget_scan, run_sweep, LrGrid, ModelSpec, Objective, SweepSpec, Task};

fn quadratic(eigenvalues: Vec<f64>, n: usize) -> ModelSpec {
    ModelSpec::Quadratic { eigenvalues, center_var: 1.0, n_examples: n, start: vec![10.0], data_seed: 3 }
}

#[test]
fn full_batch_loss_is_u_shaped_in_lr() {
    // B = N: every update is the full gradient, so the runs are noiseless
    let mut s = SweepSpec::new(
        quadratic(vec![1.0, 0.1], 64),
        LrGrid::log2(-8, 2),
        vec![64],
        Budget::Steps { steps: 60 },
        Objective::MinTrainLoss,
    );
    s.runs = 2;
    s.keep = 1;
    let out = run_sweep(&Task::build(&s.model).unwrap(), &s).unwrap();
    let losses: Vec<f64> = out.result.batches[0]
        .summaries
        .iter()
        .map(|p| if p.is_valid() { p.mean } else { f64::INFINITY })
        .collect();
    let best = losses.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(losses[..=best].windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert!(losses[best..].windows(2).all(|w| w[1] >= w[0]), "{losses:?}");
    assert!(best > 0 && best < losses.len() - 1, "{losses:?}");
    assert!(losses.last().unwrap().is_infinite(), "2^2 > eps_crit must diverge");
}

#[test]
fn sweeps_are_reproducible() {
    let mut s = SweepSpec::new(
        quadratic(vec![1.0, 0.3], 256),
        LrGrid::log2(-6, 0),
        vec![2, 16],
        Budget::Epochs { epochs: 20 },
        Objective::MinTrainLoss,
    );
    s.runs = 3;
    s.keep = 2;
    s.seed = 99;
    let task = Task::build(&s.model).unwrap();
    let a = run_sweep(&task, &s).unwrap();
    let b = run_sweep(&task, &s).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    s.seed = 100;
    let c = run_sweep(&task, &s).unwrap();
    assert_ne!(format!("{:?}", a.records), format!("{:?}", c.records));
}

#[test]
fn train_optimal_lr_falls_with_budget_when_noise_dominates() {
    // B = 1 on a noisy quadratic with a constant rate: longer budgets trade
    // convergence speed for a lower noise floor
    let mut s = SweepSpec::new(
        quadratic(vec![1.0, 0.01], 256),
        LrGrid::log2(-14, 1),
        vec![1],
        Budget::Epochs { epochs: 20 },
        Objective::MinTrainLoss,
    );
    s.gamma = 1.0;
    s.granularity = Some(Granularity::Step);
    s.seed = 4;
    let rows = budget_scan(&Task::build(&s.model).unwrap(), &s, &[20, 40, 80, 160, 320]).unwrap();
    let lrs: Vec<f64> = rows.iter().map(|r| r.train.as_ref().unwrap().lr.log2()).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "{lrs:?}");
    assert!(lrs.last().unwrap() < &lrs[0], "{lrs:?}");
}

#[test]
fn single_budget_scan_gives_one_row() {
    let mut s = SweepSpec::new(
        quadratic(vec![1.0], 64),
        LrGrid::log2(-3, 0),
        vec![8],
        Budget::Epochs { epochs: 20 },
        Objective::MinTrainLoss,
    );
    s.runs = 2;
    s.keep = 1;
    let rows = budget_scan(&Task::build(&s.model).unwrap(), &s, &[20]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].epochs, 20);
}
