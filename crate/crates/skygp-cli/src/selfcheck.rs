//! Built-in invariant checks: a fast smoke suite over the numerical core.
//! Each check prints one PASS/FAIL line; the command fails if any check does.
//!
//! Setting SKYGP_SELFCHECK_CORRUPT=<check-name> perturbs that check's
//! expected constant, which must make it fail (used to verify the harness
//! actually detects regressions).

use rand::Rng;

use skygp::aggregate::{self, Aggregation, ExpertPosterior};
use skygp::control::{lyapunov_residual, lyapunov_solve};
use skygp::expert::Expert;
use skygp::kernel::{self, Hyperparameters};
use skygp::seed;

use crate::CliError;

pub fn run() -> Result<(), CliError> {
    let corrupt = std::env::var("SKYGP_SELFCHECK_CORRUPT").unwrap_or_default();
    type Check = fn(bool) -> Result<(), String>;
    let checks: &[(&str, Check)] = &[
        ("incremental-cholesky-vs-batch", check_incremental_cholesky),
        (
            "aggregation-single-expert-reduction",
            check_aggregation_reduction,
        ),
        ("lyapunov-residual", check_lyapunov),
        ("delta-trigger-oracle", check_delta_trigger),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check(corrupt == *name) {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} selfcheck(s) failed")));
    }
    println!("all selfchecks passed");
    Ok(())
}

/// Textbook dense GP prediction via Gauss-Jordan, independent of the
/// incremental factor path.
fn dense_gp_predict(h: &Hyperparameters, xs: &[f64], ys: &[f64], q: &[f64]) -> (f64, f64) {
    let m = h.dim();
    let n = ys.len();
    let row = |i: usize| &xs[i * m..(i + 1) * m];
    let build = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        kernel::eval(h, row(i), row(j)).unwrap()
                            + if i == j { h.noise_var() } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    };
    let solve = |mut a: Vec<Vec<f64>>, mut b: Vec<f64>| -> Vec<f64> {
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r][col] / a[col][col];
                #[allow(clippy::needless_range_loop)]
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
        (0..n).map(|i| b[i] / a[i][i]).collect()
    };
    let alpha = solve(build(), ys.to_vec());
    let kq: Vec<f64> = (0..n)
        .map(|i| kernel::eval(h, q, row(i)).unwrap())
        .collect();
    let mean: f64 = kq.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let w = solve(build(), kq.clone());
    let var = h.signal_var() - kq.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

fn check_incremental_cholesky(corrupt: bool) -> Result<(), String> {
    let tol = if corrupt { 1e-18 } else { 1e-8 };
    let h = Hyperparameters::isotropic(2, 1.0, 1.0, 0.1);
    let mut rng = seed::derive_rng(101, 0);
    for _ in 0..20 {
        let n = rng.gen_range(2..=15);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut expert: Option<Expert> = None;
        for _ in 0..n {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let y: f64 = rng.gen_range(-2.0..2.0);
            xs.extend_from_slice(&x);
            ys.push(y);
            match &mut expert {
                None => expert = Some(Expert::new(&h, &x, y).map_err(|e| e.to_string())?),
                Some(e) => e.append(&h, &x, y, 64).map_err(|e| e.to_string())?,
            }
        }
        let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let (mi, vi) = expert
            .unwrap()
            .predict(&h, &q, f64::MIN)
            .map_err(|e| e.to_string())?;
        let (mb, vb) = dense_gp_predict(&h, &xs, &ys, &q);
        if (mi - mb).abs() > tol || (vi - vb).abs() > tol {
            return Err(format!(
                "incremental vs batch mismatch: mean {mi} vs {mb}, var {vi} vs {vb}"
            ));
        }
    }
    Ok(())
}

fn check_aggregation_reduction(corrupt: bool) -> Result<(), String> {
    let prior_var = 2.0;
    let mean = if corrupt { 0.70001 } else { 0.7 };
    let post = |variance: f64, weight: f64| ExpertPosterior {
        expert_id: 0,
        mean: 0.7,
        variance,
        weight,
    };
    let cases: [(Aggregation, f64); 5] = [
        (Aggregation::Moe, 0.3),
        (Aggregation::Poe, 0.3),
        (Aggregation::GPoe, 0.3),
        (Aggregation::Bcm, 0.3),
        // rBCM entropy weight hits 1 exactly at variance prior/e^2
        (Aggregation::Rbcm, prior_var / std::f64::consts::E.powi(2)),
    ];
    for (method, variance) in cases {
        let p = aggregate::aggregate(method, &[post(variance, 1.0)], prior_var, 0.0)
            .map_err(|e| e.to_string())?;
        if (p.mean - mean).abs() > 1e-12 || (p.variance - variance).abs() > 1e-12 {
            return Err(format!(
                "{method:?}: lone expert not reproduced: ({}, {}) vs ({mean}, {variance})",
                p.mean, p.variance
            ));
        }
    }
    Ok(())
}

fn check_lyapunov(corrupt: bool) -> Result<(), String> {
    let a = [[0.0, 1.0], [-5.0, -10.0]];
    let q = [[1.0, 0.0], [0.0, 1.0]];
    let p = lyapunov_solve(&a, &q).map_err(|e| e.to_string())?;
    let expected = if corrupt {
        [[1.31, 0.1], [0.1, 0.06]]
    } else {
        [[1.3, 0.1], [0.1, 0.06]]
    };
    for i in 0..2 {
        for j in 0..2 {
            if (p[i][j] - expected[i][j]).abs() > 1e-10 {
                return Err(format!("P[{i}][{j}] = {} != {}", p[i][j], expected[i][j]));
            }
        }
    }
    let res = lyapunov_residual(&a, &q, &p);
    if res > 1e-10 {
        return Err(format!("residual {res:.3e} > 1e-10"));
    }
    Ok(())
}

fn check_delta_trigger(corrupt: bool) -> Result<(), String> {
    let h = Hyperparameters::new(vec![1.0], 1.0, 0.1).unwrap();
    let mut rng = seed::derive_rng(202, 0);
    for _ in 0..100 {
        let capacity = rng.gen_range(2..=6);
        let mut e = Expert::new(&h, &[rng.gen_range(-2.0..2.0)], 0.0).unwrap();
        for _ in 1..capacity {
            e.append(&h, &[rng.gen_range(-2.0..2.0)], 0.0, capacity)
                .map_err(|er| er.to_string())?;
        }
        // half the scenarios carry a dropped-data history
        if rng.gen_bool(0.5) {
            e.replace(&h, &[rng.gen_range(-2.0..2.0)], 0.0, capacity)
                .map_err(|er| er.to_string())?;
        }
        let x = [rng.gen_range(-3.0..3.0)];
        let delta = e.delta_trigger(&h, &x).map_err(|er| er.to_string())?;
        // brute force over held points
        let c = e.center().to_vec();
        let off = e.dropped_center().map(|v| v.to_vec());
        let mut brute = f64::NEG_INFINITY;
        for row in e.points() {
            let mut d = kernel::eval(&h, row, &c).unwrap() - kernel::eval(&h, &x, &c).unwrap();
            if let Some(off) = &off {
                d += kernel::eval(&h, &x, off).unwrap() - kernel::eval(&h, row, off).unwrap();
            }
            brute = brute.max(d);
        }
        let brute = if corrupt { -brute } else { brute };
        if (delta - brute).abs() > 1e-12 || (delta < 0.0) != (brute < 0.0) {
            return Err(format!("delta {delta} != brute-force {brute}"));
        }
    }
    Ok(())
}
