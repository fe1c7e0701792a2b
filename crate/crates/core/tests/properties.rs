//! Property tests over the public API.

use proptest::prelude::*;

use noiselab::config::Config;
use noiselab::models::ghost_bn_forward;
use noiselab::numkit::{power_iteration, Rng, SymMatrix, Vector};
use noiselab::optim::{Budget, Decay, Granularity, LrSchedule, OptimizerState};
use noiselab::report::{format_lr_cell, parse_lr_cell, LrCell, ReportRow, RowStatus, Stat};
use noiselab::sde::{exact_variance_quadratic, sde_step, NoiseModel, SdeConfig};
use noiselab::sweep::{
    aggregate_best_k, select_optimal_lr, ErrorBarRule, GridPointSummary, LrPoint, Objective, RunConfig, RunOutcome,
    RunRecord,
};

fn record(i: usize, value: Option<f64>) -> RunRecord {
    RunRecord {
        config: RunConfig::new(0.1, 8, Budget::Steps { steps: 1 }),
        run_index: i,
        seed: i as u64,
        outcome: match value {
            Some(v) => RunOutcome::Completed { train_loss: v, test_metric: v, steps: 1, curve: vec![] },
            None => RunOutcome::Diverged { step: 1 },
        },
    }
}

fn summary(lr: f64, mean: f64, std: f64) -> GridPointSummary {
    GridPointSummary {
        lr,
        eps_final: None,
        mean,
        std,
        kept: 1,
        completed: 1,
        runs: 1,
        train_loss_mean: mean,
        train_loss_std: std,
        test_metric_mean: mean,
        test_metric_std: std,
    }
}

fn schedule_case() -> impl Strategy<Value = (f64, f64, u64, u64, bool)> {
    (1e-4f64..10.0, 1.0f64..4.0, 20u64..3000, 1u64..8, any::<bool>())
}

proptest! {
    #[test]
    fn rng_streams_reproduce(seed in any::<u64>(), stream in 0u64..4) {
        let mut a = Rng::with_stream(seed, stream);
        let mut b = Rng::with_stream(seed, stream);
        for _ in 0..32 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn power_iteration_residual_bound(diag in prop::collection::vec(0.1f64..10.0, 1..6), off in -0.5f64..0.5) {
        let d = diag.len();
        let mut rows: Vec<Vec<f64>> = (0..d).map(|i| {
            let mut r = vec![0.0; d];
            r[i] = diag[i];
            r
        }).collect();
        if d > 1 {
            rows[0][1] = off;
            rows[1][0] = off;
        }
        let h = SymMatrix::from_rows(&rows).unwrap();
        let tol = 1e-9;
        if let Ok(p) = power_iteration(&h, tol, 100_000) {
            let hv = h.matvec(&p.vector);
            let res = hv.iter().zip(p.vector.iter()).map(|(a, b)| (a - p.value * b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= tol * p.value.abs());
        }
    }

    #[test]
    fn ghost_bn_groups_are_standardized(
        groups in 1usize..4, ghost in 8usize..16, features in 1usize..4, scale in 20.0f64..50.0, seed in any::<u64>()
    ) {
        let rows = groups * ghost;
        let mut rng = Rng::new(seed);
        let mut x = vec![0.0; rows * features];
        rng.fill_normal(&mut x);
        x.iter_mut().enumerate().for_each(|(i, v)| *v = *v * scale + i as f64 % 3.0);
        let out = ghost_bn_forward(&x, features, ghost, &vec![1.5; features], &vec![0.2; features]).unwrap();
        prop_assert_eq!(out.groups.len(), groups);
        for &(start, len) in &out.groups {
            for j in 0..features {
                let col: Vec<f64> = (start..start + len).map(|r| out.normalized[r * features + j]).collect();
                let mean = col.iter().sum::<f64>() / len as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!((var - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_momentum_matches_sgd(grads in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..50), eps in 1e-4f64..1.0) {
        let start = Vector::new(vec![0.3, -1.0, 2.0]).unwrap();
        let mut sgd = OptimizerState::new(start.clone(), 0.0).unwrap();
        let mut mom = OptimizerState::new(start, 0.0).unwrap();
        for g in &grads {
            sgd.sgd_step(g, eps).unwrap();
            mom.momentum_step(g, eps).unwrap();
            for (a, b) in sgd.omega.iter().zip(mom.omega.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn schedule_is_stepwise_non_increasing((eps0, gamma, units, spe, by_epoch) in schedule_case()) {
        let budget = if by_epoch { Budget::Epochs { epochs: units } } else { Budget::Steps { steps: units } };
        let gran = if by_epoch { Granularity::Epoch } else { Granularity::Step };
        let s = LrSchedule::new(eps0, Decay::Gamma(gamma), budget, spe, gran).unwrap();
        let (u0, delta) = (units / 2, units / 20);
        prop_assert_eq!(s.thresholds(), (u0, delta));
        let unit_len = if by_epoch { spe } else { 1 };
        let mut prev = f64::INFINITY;
        for step in 0..s.total_steps() {
            let lr = s.lr_at(step);
            prop_assert!(lr <= prev);
            let t = step / unit_len;
            let drops = if t < u0 { 0 } else { (t - u0) / delta + 1 };
            let expect = eps0 * gamma.powf(-(drops as f64));
            prop_assert!((lr - expect).abs() <= 1e-12 * expect);
            if lr < prev && step > 0 {
                // changes only at the first step of a drop unit
                prop_assert_eq!(step % unit_len, 0);
                prop_assert!(s.drop_units().contains(&t));
            }
            prev = lr;
        }
    }

    #[test]
    fn divisible_budgets_end_at_ten_drops(eps0 in 1e-4f64..10.0, k in 1u64..100) {
        let s = LrSchedule::coupled(eps0, 2.0, Budget::Steps { steps: 20 * k }, 1).unwrap();
        prop_assert_eq!(s.lr_at(20 * k - 1), eps0 * 2f64.powi(-10));
        prop_assert_eq!(s.drop_units().len(), 10);
    }

    #[test]
    fn zero_temperature_sde_is_gradient_descent(
        eigs in prop::collection::vec(0.01f64..2.0, 1..4), eps in 0.01f64..0.9, start in -5.0f64..5.0
    ) {
        let model = exact_variance_quadratic(&eigs, 1.0, 8, 0).unwrap();
        let noise = NoiseModel::isotropic(eigs.len(), 1.0).unwrap();
        let cfg = SdeConfig::new(eps, 0.0, noise, &model).unwrap();
        let mut w = vec![start; eigs.len()];
        let mut gd = OptimizerState::new(Vector::new(w.clone()).unwrap(), 0.0).unwrap();
        let mut rng = Rng::new(0);
        for _ in 0..20 {
            sde_step(&cfg, &mut w, &mut rng).unwrap();
            let g = model.full_grad(&gd.omega);
            gd.sgd_step(&g, eps).unwrap();
            for (a, b) in w.iter().zip(gd.omega.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn best_k_keeps_the_top_completed_runs(
        values in prop::collection::vec(prop::option::weighted(0.8, -100.0f64..100.0), 1..20),
        k in 1usize..20,
        maximize in any::<bool>(),
    ) {
        let objective = if maximize { Objective::MaxTestAccuracy } else { Objective::MinTrainLoss };
        let recs: Vec<RunRecord> = values.iter().enumerate().map(|(i, v)| record(i, *v)).collect();
        let refs: Vec<&RunRecord> = recs.iter().collect();
        let s = aggregate_best_k(LrPoint { lr: 0.1, eps_final: None }, &refs, k, objective);
        let mut done: Vec<f64> = values.iter().flatten().copied().collect();
        prop_assert_eq!(s.completed, done.len());
        prop_assert_eq!(s.kept, k.min(done.len()));
        if done.is_empty() {
            prop_assert!(!s.is_valid());
        } else {
            done.sort_by(f64::total_cmp);
            if maximize {
                done.reverse();
            }
            let top = &done[..s.kept];
            let mean = top.iter().sum::<f64>() / top.len() as f64;
            prop_assert!((s.mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
            prop_assert!(s.std >= 0.0);
            let worst_kept = top[top.len() - 1];
            // every dropped completed run is no better than the worst kept
            for &d in &done[s.kept..] {
                let no_better = if maximize { d <= worst_kept } else { d >= worst_kept };
                prop_assert!(no_better);
            }
        }
    }

    #[test]
    fn selection_picks_best_and_brackets_it(
        points in prop::collection::vec((0.0f64..10.0, 0.0f64..2.0), 1..10),
        maximize in any::<bool>(),
        point_std in any::<bool>(),
    ) {
        let objective = if maximize { Objective::MaxTestAccuracy } else { Objective::MinTrainLoss };
        let rule = if point_std { ErrorBarRule::PointStd } else { ErrorBarRule::OptimalStd };
        let sums: Vec<GridPointSummary> =
            points.iter().enumerate().map(|(i, &(m, s))| summary((i as f64 - 4.0).exp2(), m, s)).collect();
        let sel = select_optimal_lr(&sums, objective, rule).unwrap();
        let best = sums[sel.optimal].mean;
        for (i, s) in sums.iter().enumerate() {
            let better = if maximize { s.mean > best } else { s.mean < best };
            prop_assert!(!better);
            if s.mean == best {
                prop_assert!(i >= sel.optimal, "ties go to the smaller rate");
            }
        }
        prop_assert!(sel.errorbar.contains(&sel.optimal));
        prop_assert!(sel.errorbar_low <= sel.optimal_lr && sel.optimal_lr <= sel.errorbar_high);
        let last = sums.len() - 1;
        let touches = sel.errorbar.iter().any(|&i| i == 0 || i == last);
        prop_assert_eq!(sel.boundary_flag, touches || sel.optimal == 0 || sel.optimal == last);
    }

    #[test]
    fn report_rows_round_trip(
        batch in 1usize..100_000,
        mean in 0.0f64..100.0,
        std in 0.0f64..5.0,
        loss in 1e-6f64..10.0,
        k in -12i32..4,
        lo in 0i32..4,
        hi in 0i32..4,
        decimals in 1usize..4,
    ) {
        let lr = LrCell { optimal: (k as f64).exp2(), low: ((k - lo) as f64).exp2(), high: ((k + hi) as f64).exp2() };
        let row = ReportRow {
            batch,
            status: RowStatus::Ok,
            metric: Some(Stat { mean, std }),
            train_loss: Some(Stat { mean: loss, std: loss / 10.0 }),
            lr: Some(lr),
        };
        let text = row.render(decimals);
        let back = ReportRow::parse(&text).unwrap();
        prop_assert_eq!(back.batch, batch);
        prop_assert_eq!(back.lr, Some(lr));
        prop_assert_eq!(back.render(decimals), text);
        prop_assert_eq!(parse_lr_cell(&format_lr_cell(lr)).unwrap(), lr);
    }
}

#[test]
fn config_round_trips_through_toml() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = Config::load(&path).unwrap();
            let again = Config::parse(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
