//! Randomized stream stress test: mixed random-walk/jump inputs drive every
//! update path (append, replace, spawn, budget rejection) while structural
//! and numerical invariants are checked at each step.
#![allow(clippy::needless_range_loop)]

use rand::Rng;

use skygp::aggregate::Aggregation;
use skygp::kernel::{self, Hyperparameters};
use skygp::pool::{Mode, Pool, PoolConfig, UpdateEvent};
use skygp::seed;

/// Plain dense GP solve used to recheck an expert after a replacement.
fn batch_predict(h: &Hyperparameters, xs: &[f64], ys: &[f64], q: &[f64]) -> (f64, f64) {
    let m = h.dim();
    let n = ys.len();
    let row = |i: usize| &xs[i * m..(i + 1) * m];
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    kernel::eval(h, row(i), row(j)).unwrap()
                        + if i == j { h.noise_var() } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let mut rhs: Vec<Vec<f64>> = vec![ys.to_vec()];
    let kq: Vec<f64> = (0..n)
        .map(|i| kernel::eval(h, q, row(i)).unwrap())
        .collect();
    rhs.push(kq.clone());
    // Gauss-Jordan on both right-hand sides
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        for r in &mut rhs {
            r.swap(col, piv);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            for rhs in rhs.iter_mut() {
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let alpha: Vec<f64> = (0..n).map(|i| rhs[0][i] / a[i][i]).collect();
    let w: Vec<f64> = (0..n).map(|i| rhs[1][i] / a[i][i]).collect();
    let mean = kq.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let var = h.signal_var() - kq.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

fn run_stress(seed_id: u64, mode: Mode, max_experts: Option<usize>, agg: Aggregation) {
    let h = Hyperparameters::isotropic(2, 0.8, 1.0, 0.1);
    let capacity = 5;
    let config = PoolConfig {
        mode,
        capacity,
        max_agg: 3,
        max_window: 6,
        aggregation: agg,
        prior_var: 1.0,
        max_experts,
        ..PoolConfig::default()
    };
    let mut pool = Pool::new(h.clone(), config).unwrap();
    let mut rng = seed::derive_rng(seed_id, 0);
    let mut pos = [0.0f64, 0.0];
    let mut seen = [0usize; 4];

    for step in 0..600 {
        // random walk with occasional jumps so regions get revisited
        if rng.gen_bool(0.08) {
            pos = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
        } else {
            pos[0] = (pos[0] + rng.gen_range(-0.3..0.3)).clamp(-2.5, 2.5);
            pos[1] = (pos[1] + rng.gen_range(-0.3..0.3)).clamp(-2.5, 2.5);
        }
        let y = (2.0 * pos[0]).sin() * (pos[1]).cos() + 0.1 * rng.gen_range(-1.0..1.0);

        let before = pool.predict_only(&pos).unwrap();
        let experts_before = pool.num_experts();
        let sizes_before: Vec<usize> = pool.experts().map(|(_, e)| e.len()).collect();

        let (pred, event) = pool.process(&pos, y).unwrap();

        // the returned prediction never incorporates the new sample
        assert_eq!(pred.mean.to_bits(), before.mean.to_bits(), "step {step}");
        assert_eq!(pred.variance.to_bits(), before.variance.to_bits());

        // event / state consistency
        match event {
            UpdateEvent::Appended(posn) => {
                seen[0] += 1;
                let id = pool.order()[posn];
                assert_eq!(pool.expert(id).len(), sizes_before[id] + 1);
                assert_eq!(pool.num_experts(), experts_before);
            }
            UpdateEvent::Replaced(posn) => {
                seen[1] += 1;
                let id = pool.order()[posn];
                let e = pool.expert(id);
                assert_eq!(e.len(), capacity);
                assert!(e.dropped_center().is_some());
                assert_eq!(pool.num_experts(), experts_before);
                // the rebuilt factor matches a from-scratch solve
                let xs: Vec<f64> = e.points().flatten().copied().collect();
                let q = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
                let (m, v) = e.predict(&h, &q, f64::MIN).unwrap();
                let (mb, vb) = batch_predict(&h, &xs, e.targets(), &q);
                assert!(
                    (m - mb).abs() < 1e-8,
                    "replace mean drift {}",
                    (m - mb).abs()
                );
                assert!((v - vb).abs() < 1e-8);
            }
            UpdateEvent::Spawned(_) => {
                seen[2] += 1;
                assert_eq!(pool.num_experts(), experts_before + 1);
            }
            UpdateEvent::RejectedFullFast(_) => {
                seen[3] += 1;
                assert_eq!(pool.num_experts(), experts_before);
                let sizes: Vec<usize> = pool.experts().map(|(_, e)| e.len()).collect();
                assert_eq!(sizes, sizes_before);
            }
        }

        // structural invariants
        let mut ids: Vec<usize> = pool.order().to_vec();
        ids.sort_unstable();
        assert_eq!(ids, (0..pool.num_experts()).collect::<Vec<_>>());
        for (_, e) in pool.experts() {
            assert!(e.len() <= capacity);
            assert!(e.theta() > 0.0 && e.theta() <= 1.0);
        }
        if let Some(budget) = max_experts {
            assert!(pool.num_experts() <= budget);
            assert!(pool.total_points() <= budget * capacity);
        }
    }

    assert!(seen[0] > 0, "stream never appended");
    assert!(seen[2] > 0, "stream never spawned");
    if mode == Mode::Dense && max_experts.is_none() {
        assert!(seen[1] > 0, "dense stream never replaced");
    }
    if max_experts.is_some() {
        assert!(seen[3] > 0, "budgeted stream never rejected");
    }
}

#[test]
fn dense_stream_exercises_all_paths() {
    run_stress(42, Mode::Dense, None, Aggregation::Rbcm);
}

#[test]
fn fast_stream_appends_and_spawns() {
    run_stress(43, Mode::Fast, None, Aggregation::GPoe);
}

#[test]
fn budgeted_stream_rejects_at_the_cap() {
    run_stress(44, Mode::Dense, Some(4), Aggregation::Bcm);
}

#[test]
fn non_finite_inputs_are_rejected() {
    let h = Hyperparameters::isotropic(1, 1.0, 1.0, 0.1);
    let mut pool = Pool::new(h, PoolConfig::default()).unwrap();
    assert!(pool.process(&[f64::NAN], 0.0).is_err());
    assert!(pool.process(&[0.0], f64::INFINITY).is_err());
    pool.process(&[0.0], 1.0).unwrap();
    assert!(pool.predict_only(&[f64::NAN]).is_err());
    assert!(pool.predict_only(&[0.5, 0.5]).is_err()); // wrong dimension
}
