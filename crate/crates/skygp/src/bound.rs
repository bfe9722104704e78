//! High-probability prediction-error radius eta(x) = beta * sigma(x) + gamma(x)
//! for aggregated expert predictions, plus the simplified 2 * beta * sigma(x)
//! variant.
//!
//! beta depends only on the domain, the grid factor tau and the confidence
//! delta; gamma_i additionally needs per-expert Lipschitz constants, which are
//! estimated numerically from finite-difference slopes unless overridden.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::Prediction;
use crate::error::{Result, SkyGpError};
use crate::expert::Expert;
use crate::kernel::Hyperparameters;
use crate::pool::Pool;
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundParams {
    /// Per-expert confidence level, must lie in (0, 1/max_agg).
    pub delta: f64,
    /// Grid factor tau > 0.
    pub tau: f64,
    /// RKHS norm budget of the target function.
    pub gamma_rkhs: f64,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    /// Use eta = 2 * beta * sigma instead of beta * sigma + gamma.
    pub use_simplified: bool,
    /// Kernel Lipschitz constant; `None` uses the analytic SE bound.
    pub l_kappa: Option<f64>,
    /// (L_mu, L_sigma) applied to every expert instead of estimating.
    pub lipschitz_override: Option<(f64, f64)>,
    /// Random pairs drawn per expert for the Lipschitz estimates.
    pub lipschitz_pairs: usize,
    /// beta_delta inside gamma_i; `None` uses beta^2.
    pub beta_delta: Option<f64>,
    /// Seed for the Lipschitz pair sampling.
    pub seed: u64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams {
            delta: 0.05,
            tau: 0.05,
            gamma_rkhs: 1.0,
            domain_lo: vec![-1.0],
            domain_hi: vec![1.0],
            use_simplified: false,
            l_kappa: None,
            lipschitz_override: None,
            lipschitz_pairs: 256,
            beta_delta: None,
            seed: 0,
        }
    }
}

impl BoundParams {
    pub fn validate(&self, max_agg: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0 / max_agg as f64) {
            return Err(SkyGpError::InvalidArgument(format!(
                "delta must lie in (0, 1/{max_agg})"
            )));
        }
        if !(self.tau > 0.0) {
            return Err(SkyGpError::InvalidArgument("tau must be positive".into()));
        }
        if self.domain_lo.len() != self.domain_hi.len() || self.domain_lo.is_empty() {
            return Err(SkyGpError::InvalidArgument(
                "domain bounds must match".into(),
            ));
        }
        if self
            .domain_lo
            .iter()
            .zip(&self.domain_hi)
            .any(|(l, h)| l > h)
        {
            return Err(SkyGpError::InvalidArgument(
                "domain_lo must not exceed domain_hi".into(),
            ));
        }
        Ok(())
    }

    /// Analytic Lipschitz bound of the ARD-SE kernel:
    /// sigma_f^2 * max_j(1/l_j) * exp(-1/2).
    pub fn l_kappa_for(&self, h: &Hyperparameters) -> f64 {
        self.l_kappa.unwrap_or_else(|| {
            let inv_l = h.lengthscales.iter().map(|l| 1.0 / l).fold(0.0, f64::max);
            h.signal_var() * inv_l * (-0.5f64).exp()
        })
    }
}

/// beta = 2 * (2 * sum_j log ceil(sqrt(n)/(2 tau) * (hi_j - lo_j)) - 2 log(delta/n))^(1/2),
/// with the ceiling clamped at 1 so a collapsed domain contributes log 1 = 0.
pub fn beta(p: &BoundParams, n: usize) -> Result<f64> {
    if n != p.domain_lo.len() {
        return Err(SkyGpError::DimensionMismatch {
            expected: p.domain_lo.len(),
            got: n,
        });
    }
    let nf = n as f64;
    let mut grid_term = 0.0;
    for (lo, hi) in p.domain_lo.iter().zip(&p.domain_hi) {
        let cells = (nf.sqrt() / (2.0 * p.tau) * (hi - lo)).ceil().max(1.0);
        grid_term += cells.ln();
    }
    Ok(2.0 * (2.0 * grid_term - 2.0 * (p.delta / nf).ln()).sqrt())
}

/// gamma_i = (sqrt(beta_delta) * L_sigma + Gamma * sqrt(2 L_kappa) + L_mu) * tau.
pub fn gamma_i(p: &BoundParams, beta: f64, l_kappa: f64, l_mu: f64, l_sigma: f64) -> f64 {
    let beta_delta = p.beta_delta.unwrap_or(beta * beta);
    (beta_delta.sqrt() * l_sigma + p.gamma_rkhs * (2.0 * l_kappa).sqrt() + l_mu) * p.tau
}

/// Max finite-difference slopes of the posterior mean and standard deviation
/// over random point pairs in the configured domain.
pub fn estimate_lipschitz(
    expert: &Expert,
    h: &Hyperparameters,
    p: &BoundParams,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let dim = p.domain_lo.len();
    let sample = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        (0..dim)
            .map(|j| rng.gen_range(p.domain_lo[j]..=p.domain_hi[j]))
            .collect()
    };
    let mut l_mu = 0.0f64;
    let mut l_sigma = 0.0f64;
    for _ in 0..p.lipschitz_pairs {
        let a = sample(rng);
        let b = sample(rng);
        let dist = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-12 {
            continue;
        }
        let (ma, va) = expert.predict(h, &a, 0.0)?;
        let (mb, vb) = expert.predict(h, &b, 0.0)?;
        l_mu = l_mu.max((ma - mb).abs() / dist);
        l_sigma = l_sigma.max((va.sqrt() - vb.sqrt()).abs() / dist);
    }
    Ok((l_mu, l_sigma))
}

/// eta = beta * sum_i omega_i sigma_i + sum_i omega_i gamma_i, or
/// 2 * beta * sum_i omega_i sigma_i in the simplified form. `gammas` must be
/// aligned with the prediction's contributions (ignored when simplified).
pub fn eta(p: &BoundParams, pred: &Prediction, gammas: &[f64]) -> Result<f64> {
    if pred.contributions.is_empty() {
        return Err(SkyGpError::InvalidArgument(
            "prediction carries no per-expert contributions".into(),
        ));
    }
    let b = beta(p, p.domain_lo.len())?;
    let sigma_bar: f64 = pred
        .contributions
        .iter()
        .map(|c| c.mean_weight * c.variance.max(0.0).sqrt())
        .sum();
    if p.use_simplified {
        return Ok(2.0 * b * sigma_bar);
    }
    if gammas.len() != pred.contributions.len() {
        return Err(SkyGpError::InvalidArgument(format!(
            "expected {} gamma values, got {}",
            pred.contributions.len(),
            gammas.len()
        )));
    }
    let gamma_bar: f64 = pred
        .contributions
        .iter()
        .zip(gammas)
        .map(|(c, g)| c.mean_weight * g)
        .sum();
    Ok(b * sigma_bar + gamma_bar)
}

/// Binds bound parameters to a pool and caches per-expert gamma_i values,
/// recomputing them only when an expert's data changes.
pub struct BoundContext {
    params: BoundParams,
    beta: f64,
    gamma_cache: HashMap<usize, (u64, f64)>,
}

impl BoundContext {
    pub fn new(params: BoundParams, max_agg: usize) -> Result<Self> {
        params.validate(max_agg)?;
        let beta = beta(&params, params.domain_lo.len())?;
        Ok(BoundContext {
            params,
            beta,
            gamma_cache: HashMap::new(),
        })
    }

    pub fn params(&self) -> &BoundParams {
        &self.params
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn gamma_for(&mut self, pool: &Pool, id: usize) -> Result<f64> {
        let expert = pool.expert(id);
        if let Some(&(version, gamma)) = self.gamma_cache.get(&id) {
            if version == expert.version() {
                return Ok(gamma);
            }
        }
        let h = pool.hyperparameters();
        let (l_mu, l_sigma) = match self.params.lipschitz_override {
            Some(pair) => pair,
            None => {
                let mut rng =
                    seed::derive_rng(self.params.seed, (id as u64) << 32 | expert.version());
                estimate_lipschitz(expert, h, &self.params, &mut rng)?
            }
        };
        let g = gamma_i(
            &self.params,
            self.beta,
            self.params.l_kappa_for(h),
            l_mu,
            l_sigma,
        );
        self.gamma_cache.insert(id, (expert.version(), g));
        Ok(g)
    }

    /// Error radius for a prediction made by `pool`.
    pub fn eta_for(&mut self, pool: &Pool, pred: &Prediction) -> Result<f64> {
        if self.params.use_simplified {
            return eta(&self.params, pred, &[]);
        }
        let mut gammas = Vec::with_capacity(pred.contributions.len());
        for c in &pred.contributions {
            gammas.push(self.gamma_for(pool, c.expert_id)?);
        }
        eta(&self.params, pred, &gammas)
    }

    /// Compute the radius and store it in the prediction.
    pub fn annotate(&mut self, pool: &Pool, pred: &mut Prediction) -> Result<f64> {
        let radius = self.eta_for(pool, pred)?;
        pred.error_radius = Some(radius);
        Ok(radius)
    }
}
