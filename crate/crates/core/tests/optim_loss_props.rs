mod common;

use std::cell::RefCell;

use common::{central_diff, random_dataset, random_expression, rel_err};
use fex_core::loss::{euler_residual_loss, loss_and_gradient};
use fex_core::optim::{
    minimize_bfgs, minimize_first_order, two_stage_minimize, BfgsSettings, Objective, OptimConfig,
};
use fex_core::{ExpressionParams, Trajectory, TrajectoryDataset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 100 {
        let d = rng.gen_range(1..=4);
        let data = random_dataset(d, 3, 8, 0.1, &mut rng);
        let e = random_expression(d, 1.0, &mut rng);
        let c = rng.gen_range(0..d);
        let Ok((_, g)) = loss_and_gradient(&e, &data, c) else {
            continue;
        };
        let fd = central_diff(
            |p| {
                let e = e.with_params(ExpressionParams(p.to_vec())).unwrap();
                euler_residual_loss(&e, &data, c).unwrap()
            },
            e.params().as_slice(),
            1e-6,
        );
        let err = rel_err(&g, &fd);
        assert!(err <= 1e-5, "{}: relative error {err:e}", e.sequence());
        checked += 1;
    }
}

fn zero_field(d: usize) -> fex_core::CompiledExpression {
    use fex_core::{Operator, OperatorSequence, TemplateKind, TreeTemplate, UnaryOp};
    let t = TreeTemplate::new(TemplateKind::Type1, d).unwrap();
    let seq = OperatorSequence(
        t.slot_kinds()
            .map(|k| match k {
                fex_core::expr::SlotKind::Unary => Operator::Unary(UnaryOp::Zero),
                fex_core::expr::SlotKind::Binary => Operator::Binary(fex_core::BinaryOp::Add),
            })
            .collect(),
    );
    let n = fex_core::expr::param_count(&t, &seq).unwrap();
    fex_core::CompiledExpression::new(t, seq, ExpressionParams(vec![0.0; n])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_ignores_trajectory_order(seed in any::<u64>(), d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(d, 5, 6, 0.2, &mut rng);
        let e = random_expression(d, 1.0, &mut rng);
        let mut trajs: Vec<Trajectory> = data.trajectories().to_vec();
        trajs.reverse();
        trajs.swap(0, 2);
        let shuffled = TrajectoryDataset::new(trajs, data.dt(), data.var_names().to_vec()).unwrap();
        let a = euler_residual_loss(&e, &data, 0);
        let b = euler_residual_loss(&e, &shuffled, 0);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn zero_field_loss_is_mean_squared_increment(seed in any::<u64>(), d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = 0.25;
        let data = random_dataset(d, 4, 7, dt, &mut rng);
        let c = rng.gen_range(0..d);
        let mut total = 0.0;
        let mut pairs = 0usize;
        for t in data.trajectories() {
            for s in 0..t.len() - 1 {
                let q = t.row(s + 1)[c] - t.row(s)[c];
                total += q * q;
                pairs += 1;
            }
        }
        let expected = total / pairs as f64;
        let got = euler_residual_loss(&zero_field(d), &data, c).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * (1.0 + expected));
    }
}

/// Wraps an objective and records every loss it is asked for.
struct Recording<F> {
    inner: F,
    seen: RefCell<Vec<(Vec<f64>, f64)>>,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for Recording<F> {
    fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let v = (self.inner)(theta, grad);
        self.seen.borrow_mut().push((theta.to_vec(), v));
        v
    }
}

fn bumpy(x: &[f64], g: &mut [f64]) -> f64 {
    let mut f = 0.0;
    for (i, (xi, gi)) in x.iter().zip(g.iter_mut()).enumerate() {
        let k = 1.0 + i as f64;
        f += xi * xi + 0.5 * (k * xi).sin();
        *gi = 2.0 * xi + 0.5 * k * (k * xi).cos();
    }
    f
}

#[test]
fn optimizers_report_the_best_iterate_they_evaluated() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let x0: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lr = rng.gen_range(0.05..1.5);
        let rec = Recording {
            inner: bumpy,
            seen: RefCell::new(Vec::new()),
        };
        let r = minimize_first_order(&rec, &x0, 40, lr).unwrap();
        let min_seen = rec
            .seen
            .borrow()
            .iter()
            .map(|s| s.1)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.loss, min_seen);
        let mut g = vec![0.0; 4];
        assert_eq!(bumpy(&r.params, &mut g), r.loss);
        assert!(r.loss <= bumpy(&x0, &mut g));

        let rec = Recording {
            inner: bumpy,
            seen: RefCell::new(Vec::new()),
        };
        let b = minimize_bfgs(&rec, &x0, 25, &BfgsSettings::default()).unwrap();
        let min_seen = rec
            .seen
            .borrow()
            .iter()
            .map(|s| s.1)
            .fold(f64::INFINITY, f64::min);
        assert!(b.loss <= min_seen + 1e-12 * (1.0 + min_seen.abs()));
        assert_eq!(bumpy(&b.params, &mut g), b.loss);
    }
}

#[test]
fn two_stage_never_worse_than_its_first_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = OptimConfig {
        t1_iters: 20,
        t2_iters: 20,
        ..OptimConfig::default()
    };
    for _ in 0..50 {
        let d = rng.gen_range(1..=3);
        let data = random_dataset(d, 3, 10, 0.1, &mut rng);
        let e = random_expression(d, 1.0, &mut rng);
        let obj = |p: &[f64], g: &mut [f64]| {
            let e = e.with_params(ExpressionParams(p.to_vec())).unwrap();
            match loss_and_gradient(&e, &data, 0) {
                Ok((l, grad)) => {
                    g.copy_from_slice(&grad);
                    l
                }
                Err(_) => f64::NAN,
            }
        };
        let init = e.params().as_slice().to_vec();
        if !obj(&init, &mut vec![0.0; init.len()]).is_finite() {
            continue;
        }
        let first = minimize_first_order(&obj, &init, cfg.t1_iters, cfg.lr_first).unwrap();
        let both = two_stage_minimize(&obj, &init, &cfg).unwrap();
        assert!(both.loss <= first.loss);
        let again = two_stage_minimize(&obj, &init, &cfg).unwrap();
        assert_eq!(both, again);
    }
}
