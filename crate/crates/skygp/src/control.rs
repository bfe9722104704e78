//! Closed-loop tracking control of a scalar second-order plant with the
//! learned dynamics compensation in the loop.
//!
//! Plant: q'' = u - 9.8 + f(q, q') with f unknown to the controller. The
//! control law feeds forward gravity, the reference acceleration and the
//! current model estimate, applies PD feedback on the tracking error and a
//! Lyapunov-based robustness term. Trials integrate with fixed-step RK4;
//! the model estimate is refreshed once per control step while the feedback
//! terms stay continuous across the RK4 stages.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bound::{BoundContext, BoundParams};
use crate::error::{Result, SkyGpError};
use crate::kernel::Hyperparameters;
use crate::pool::{Pool, PoolConfig};
use crate::seed;

/// Unknown plant dynamics of the tracking experiment:
/// f(x) = 1 + x1 x2 / 10 + cos(x2)/2 - 10 sin(5 x1) + (1 + exp(-x2/10))^-1 / 2.
pub fn true_dynamics(x: &[f64; 2]) -> f64 {
    1.0 + x[0] * x[1] / 10.0 + x[1].cos() / 2.0 - 10.0 * (5.0 * x[0]).sin()
        + 0.5 / (1.0 + (-x[1] / 10.0).exp())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlantState {
    pub q: f64,
    pub qdot: f64,
    pub t: f64,
}

impl PlantState {
    pub fn new(q: f64, qdot: f64) -> Self {
        PlantState { q, qdot, t: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ControllerConfig {
    pub k_p: f64,
    pub k_d: f64,
    pub epsilon: f64,
    /// Reference amplitude and frequency: q_d(t) = a_r sin(w_r t).
    pub a_r: f64,
    pub w_r: f64,
    /// Lyapunov matrix solving A^T P + P A = -Q for the closed-loop A.
    pub p: [[f64; 2]; 2],
    pub q_mat: [[f64; 2]; 2],
    /// Control and integration step.
    pub dt: f64,
    /// Standard deviation of the measurement noise on training targets.
    pub noise_dev: f64,
}

impl ControllerConfig {
    /// Build a controller, solving the Lyapunov equation for the closed-loop
    /// matrix A = [[0, 1], [-k_p, -k_d]]. Fails if A is not Hurwitz.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k_p: f64,
        k_d: f64,
        epsilon: f64,
        a_r: f64,
        w_r: f64,
        q_mat: [[f64; 2]; 2],
        dt: f64,
        noise_dev: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "epsilon must be positive".into(),
            ));
        }
        if !(dt > 0.0) {
            return Err(SkyGpError::InvalidArgument("dt must be positive".into()));
        }
        let a = [[0.0, 1.0], [-k_p, -k_d]];
        let p = lyapunov_solve(&a, &q_mat)?;
        Ok(ControllerConfig {
            k_p,
            k_d,
            epsilon,
            a_r,
            w_r,
            p,
            q_mat,
            dt,
            noise_dev,
        })
    }

    /// Gains of the scalar tracking experiment: k_p = 5, k_d = 10,
    /// epsilon = 1, Q = I, reference amplitude 1 at 0.1 rad/s.
    pub fn tracking_experiment() -> Self {
        Self::new(
            5.0,
            10.0,
            1.0,
            1.0,
            0.1,
            [[1.0, 0.0], [0.0, 1.0]],
            0.01,
            0.01,
        )
        .expect("reference gains are Hurwitz")
    }

    pub fn reference(&self, t: f64) -> (f64, f64, f64) {
        let (s, c) = (self.w_r * t).sin_cos();
        (
            self.a_r * s,
            self.a_r * self.w_r * c,
            -self.a_r * self.w_r * self.w_r * s,
        )
    }
}

/// Control input
/// u = 9.8 - mu - a_r w_r^2 sin(w_r t) - k_p z1 - k_d z2 - [0,1] P z / (2 eps).
/// The feedback gains act with stabilizing sign so the closed-loop matrix
/// [[0,1],[-k_p,-k_d]] is Hurwitz.
pub fn control_law(t: f64, x: &[f64; 2], mu_tilde: f64, cfg: &ControllerConfig) -> f64 {
    let (q_d, qd_d, qdd_d) = cfg.reference(t);
    let z1 = x[0] - q_d;
    let z2 = x[1] - qd_d;
    9.8 - mu_tilde + qdd_d
        - cfg.k_p * z1
        - cfg.k_d * z2
        - (cfg.p[1][0] * z1 + cfg.p[1][1] * z2) / (2.0 * cfg.epsilon)
}

/// Solve A^T P + P A = -Q for symmetric P via the three-unknown linear
/// system of the 2x2 case. Errors when the system is singular or the
/// solution is not positive definite (A not Hurwitz).
pub fn lyapunov_solve(a: &[[f64; 2]; 2], q: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    // unknowns [p11, p12, p22]
    let mut m = [
        [2.0 * a[0][0], 2.0 * a[1][0], 0.0, -q[0][0]],
        [
            a[0][1],
            a[0][0] + a[1][1],
            a[1][0],
            -0.5 * (q[0][1] + q[1][0]),
        ],
        [0.0, 2.0 * a[0][1], 2.0 * a[1][1], -q[1][1]],
    ];
    // Gaussian elimination with partial pivoting
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        if m[col][col].abs() < 1e-300 {
            return Err(SkyGpError::LyapunovNoSolution(
                "singular Lyapunov system".into(),
            ));
        }
        for row in 0..3 {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let p11 = m[0][3] / m[0][0];
    let p12 = m[1][3] / m[1][1];
    let p22 = m[2][3] / m[2][2];
    if !(p11 > 0.0 && p11 * p22 - p12 * p12 > 0.0) {
        return Err(SkyGpError::LyapunovNoSolution(
            "solution is not positive definite (A is not Hurwitz)".into(),
        ));
    }
    let p = [[p11, p12], [p12, p22]];
    let res = lyapunov_residual(a, q, &p);
    let scale = 1.0 + frobenius(q);
    if !(res <= 1e-10 * scale) {
        return Err(SkyGpError::NumericalDegeneracy(format!(
            "Lyapunov residual {res:.3e} too large"
        )));
    }
    Ok(p)
}

/// Frobenius norm of A^T P + P A + Q.
pub fn lyapunov_residual(a: &[[f64; 2]; 2], q: &[[f64; 2]; 2], p: &[[f64; 2]; 2]) -> f64 {
    let mut r = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = q[i][j];
            for k in 0..2 {
                s += a[k][i] * p[k][j] + p[i][k] * a[k][j];
            }
            r[i][j] = s;
        }
    }
    frobenius(&r)
}

fn frobenius(m: &[[f64; 2]; 2]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenvalue extremes of a symmetric 2x2 matrix.
pub fn symmetric_eigs(m: &[[f64; 2]; 2]) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

/// Where the control law gets its model estimate from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSource {
    /// Online-learned pool, updated every control step.
    Pool,
    /// No compensation (mu = 0 everywhere).
    Zero,
    /// The true dynamics (perfect-model baseline).
    Oracle,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q: f64,
    pub q_d: f64,
    pub z1: f64,
    pub z2: f64,
    pub mu: f64,
    pub f: f64,
    pub sigma: f64,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub max_tracking_err: f64,
    pub max_pred_err: f64,
    pub final_tracking_err: f64,
    /// Max tracking error over the last 20% of the horizon (the ultimate-
    /// boundedness window).
    pub tail_tracking_err: f64,
    /// Plant state [q, qdot] at the end of the horizon.
    pub final_state: [f64; 2],
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

/// Everything a trial needs besides its initial state and RNG.
pub struct TrialSetup<'a> {
    pub controller: &'a ControllerConfig,
    pub h: &'a Hyperparameters,
    pub pool_config: &'a PoolConfig,
    pub model: ModelSource,
    pub duration: f64,
    /// Record every n-th step of the trajectory; `None` records nothing.
    pub trajectory_stride: Option<usize>,
    /// Emit the error radius in trajectory rows.
    pub bound: Option<&'a BoundParams>,
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// One RK4 step of the closed loop; the feedback terms are evaluated
/// continuously at each stage, the model term through `model_at`.
fn rk4_step(
    t: f64,
    state: [f64; 2],
    dt: f64,
    cfg: &ControllerConfig,
    model_at: &dyn Fn(&[f64; 2]) -> f64,
) -> [f64; 2] {
    let deriv = |t: f64, s: [f64; 2]| -> [f64; 2] {
        let u = control_law(t, &s, model_at(&s), cfg);
        [s[1], u - 9.8 + true_dynamics(&s)]
    };
    let k1 = deriv(t, state);
    let k2 = deriv(
        t + dt / 2.0,
        [state[0] + dt / 2.0 * k1[0], state[1] + dt / 2.0 * k1[1]],
    );
    let k3 = deriv(
        t + dt / 2.0,
        [state[0] + dt / 2.0 * k2[0], state[1] + dt / 2.0 * k2[1]],
    );
    let k4 = deriv(t + dt, [state[0] + dt * k3[0], state[1] + dt * k3[1]]);
    [
        state[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        state[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Run one closed-loop trial: predict, act, integrate, then train on the
/// measured acceleration. Prediction errors are measured against the model
/// state before the concurrent update.
pub fn simulate_trial(
    setup: &TrialSetup,
    init: PlantState,
    rng: &mut ChaCha8Rng,
) -> Result<TrialResult> {
    let cfg = setup.controller;
    let dt = cfg.dt;
    let steps = (setup.duration / dt).round() as usize;
    let mut pool = match setup.model {
        ModelSource::Pool => Some(Pool::new(setup.h.clone(), setup.pool_config.clone())?),
        _ => None,
    };
    let mut bound_ctx = match (setup.bound, setup.model) {
        (Some(b), ModelSource::Pool) => {
            Some(BoundContext::new(b.clone(), setup.pool_config.max_agg)?)
        }
        _ => None,
    };

    let mut state = [init.q, init.qdot];
    let mut t = init.t;
    let mut max_tracking: f64 = 0.0;
    let mut tail_tracking: f64 = 0.0;
    let tail_start = init.t + 0.8 * setup.duration;
    let mut max_pred: f64 = 0.0;
    let mut trajectory = setup.trajectory_stride.map(|_| Vec::new());
    let mut diverged = false;

    let tracking_err = |t: f64, s: &[f64; 2]| -> (f64, f64, f64) {
        let (q_d, qd_d, _) = cfg.reference(t);
        let z1 = s[0] - q_d;
        let z2 = s[1] - qd_d;
        (z1, z2, (z1 * z1 + z2 * z2).sqrt())
    };

    for step in 0..steps {
        if !state[0].is_finite()
            || !state[1].is_finite()
            || state[0].abs() > DIVERGENCE_LIMIT
            || state[1].abs() > DIVERGENCE_LIMIT
        {
            diverged = true;
            break;
        }

        // (i) predict with the model as of the previous step
        let (mu, sigma2, mut pred) = match (&pool, setup.model) {
            (Some(p), _) => {
                let pred = p.predict_only(&state)?;
                (pred.mean, pred.variance, Some(pred))
            }
            (None, ModelSource::Oracle) => (true_dynamics(&state), 0.0, None),
            (None, _) => (0.0, setup.pool_config.prior_var, None),
        };
        let f_now = true_dynamics(&state);
        max_pred = max_pred.max((f_now - mu).abs());
        let (z1, z2, zn) = tracking_err(t, &state);
        max_tracking = max_tracking.max(zn);
        if t >= tail_start {
            tail_tracking = tail_tracking.max(zn);
        }

        if let (Some(rows), Some(stride)) = (&mut trajectory, setup.trajectory_stride) {
            if step % stride == 0 {
                let eta = match (&mut bound_ctx, &pool, &mut pred) {
                    (Some(ctx), Some(p), Some(pr)) if !pr.contributions.is_empty() => {
                        Some(ctx.annotate(p, pr)?)
                    }
                    _ => None,
                };
                rows.push(TrajectoryRow {
                    t,
                    q: state[0],
                    q_d: cfg.reference(t).0,
                    z1,
                    z2,
                    mu,
                    f: f_now,
                    sigma: sigma2.max(0.0).sqrt(),
                    eta,
                });
            }
        }

        // (ii)-(iii) act and advance; the learned estimate is held across the
        // step, the oracle stays continuous
        let next = match setup.model {
            ModelSource::Oracle => rk4_step(t, state, dt, cfg, &|s| true_dynamics(s)),
            _ => rk4_step(t, state, dt, cfg, &|_| mu),
        };

        // (iv)-(v) measured acceleration -> training target for the pool
        if let Some(p) = &mut pool {
            let u0 = control_law(t, &state, mu, cfg);
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_dev;
            let qdd_measured = u0 - 9.8 + f_now + noise;
            let y = qdd_measured - (u0 - 9.8);
            p.process(&state, y)?;
        }

        state = next;
        t += dt;
    }

    let (_, _, final_z) = tracking_err(t, &state);
    if !diverged {
        max_tracking = max_tracking.max(final_z);
        tail_tracking = tail_tracking.max(final_z);
    }
    Ok(TrialResult {
        max_tracking_err: max_tracking,
        max_pred_err: max_pred,
        final_tracking_err: final_z,
        tail_tracking_err: tail_tracking,
        final_state: state,
        diverged,
        trajectory,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryStats {
    fn from_values(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quantile = |p: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            v[lo] * (1.0 - w) + v[hi] * w
        };
        SummaryStats {
            median: quantile(0.5),
            q1: quantile(0.25),
            q3: quantile(0.75),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub n_trials: usize,
    pub seed: u64,
    pub tracking_err: SummaryStats,
    pub prediction_err: SummaryStats,
    pub diverged_trials: usize,
    pub trials: Vec<TrialResult>,
}

/// Monte Carlo evaluation: independent trials with q(0), q'(0) uniform in
/// [0,1], deterministic per (seed, trial index), run in parallel.
pub fn monte_carlo(setup: &TrialSetup, n_trials: usize, seed: u64) -> Result<McSummary> {
    if n_trials < 1 {
        return Err(SkyGpError::InvalidArgument("n_trials must be >= 1".into()));
    }
    let trials: Result<Vec<TrialResult>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::derive_rng(seed, i as u64);
            let q0: f64 = rng.gen_range(0.0..=1.0);
            let qd0: f64 = rng.gen_range(0.0..=1.0);
            simulate_trial(setup, PlantState::new(q0, qd0), &mut rng)
        })
        .collect();
    let trials = trials?;
    let tracking: Vec<f64> = trials.iter().map(|t| t.max_tracking_err).collect();
    let prediction: Vec<f64> = trials.iter().map(|t| t.max_pred_err).collect();
    Ok(McSummary {
        n_trials,
        seed,
        tracking_err: SummaryStats::from_values(&tracking),
        prediction_err: SummaryStats::from_values(&prediction),
        diverged_trials: trials.iter().filter(|t| t.diverged).count(),
        trials,
    })
}
