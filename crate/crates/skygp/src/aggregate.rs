//! Combine per-expert posteriors into a single predictive distribution.
//!
//! All methods share the weighted-sum template: a mean built from weights
//! over expert means and a variance built from weights over expert variances.
//! MoE uses mixture moments, the PoE family uses precision weighting, and the
//! BCM family adds a prior-variance correction. rBCM derives its weights from
//! the differential entropy between prior and posterior.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkyGpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Moe,
    Poe,
    GPoe,
    Bcm,
    Rbcm,
}

/// One expert's posterior at the query plus its base weight w_i.
#[derive(Debug, Clone, Copy)]
pub struct ExpertPosterior {
    pub expert_id: usize,
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

/// Per-expert share of the aggregated prediction. `mean_weight` is the
/// effective weight omega_i with aggregated mean = sum omega_i * mu_i (the
/// weighting the error bound uses); `var_weight` is the expert's share of the
/// aggregate precision (or the mixture weight for MoE).
#[derive(Debug, Clone, Serialize)]
pub struct Contribution {
    pub expert_id: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_weight: f64,
    pub var_weight: f64,
}

/// Aggregated predictive distribution.
#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub contributions: Vec<Contribution>,
    /// High-probability error radius, filled by the bound module on demand.
    pub error_radius: Option<f64>,
}

impl Prediction {
    /// Prior fallback used when no expert exists yet.
    pub fn prior(prior_var: f64) -> Self {
        Prediction {
            mean: 0.0,
            variance: prior_var,
            contributions: Vec::new(),
            error_radius: None,
        }
    }
}

fn check_nonempty(posteriors: &[ExpertPosterior]) -> Result<()> {
    if posteriors.is_empty() {
        return Err(SkyGpError::InvalidArgument(
            "no posteriors to aggregate".into(),
        ));
    }
    Ok(())
}

fn check_variances(posteriors: &[ExpertPosterior]) -> Result<()> {
    if let Some(p) = posteriors.iter().find(|p| !(p.variance > 0.0)) {
        return Err(SkyGpError::InvalidArgument(format!(
            "non-positive expert variance {} (expert {})",
            p.variance, p.expert_id
        )));
    }
    Ok(())
}

/// Mixture-of-experts moments: mean = sum w_i mu_i and variance from the law
/// of total variance. Weights must sum to one.
pub fn aggregate_moe(posteriors: &[ExpertPosterior], variance_floor: f64) -> Result<Prediction> {
    check_nonempty(posteriors)?;
    let wsum: f64 = posteriors.iter().map(|p| p.weight).sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(SkyGpError::InvalidArgument(format!(
            "MoE weights must sum to 1, got {wsum}"
        )));
    }
    let (mean, variance) = if let [lone] = posteriors {
        // algebraic identity; skips the second-moment round trip
        (lone.mean, lone.variance.max(variance_floor))
    } else {
        let mean: f64 = posteriors.iter().map(|p| p.weight * p.mean).sum();
        let second: f64 = posteriors
            .iter()
            .map(|p| p.weight * (p.variance + p.mean * p.mean))
            .sum();
        (mean, (second - mean * mean).max(variance_floor))
    };
    let contributions = posteriors
        .iter()
        .map(|p| Contribution {
            expert_id: p.expert_id,
            mean: p.mean,
            variance: p.variance,
            mean_weight: p.weight,
            var_weight: p.weight,
        })
        .collect();
    Ok(Prediction {
        mean,
        variance,
        contributions,
        error_radius: None,
    })
}

/// Product-of-experts family: variance = 1 / sum w_i / sigma_i^2 and a
/// precision-weighted mean. w_i = 1 gives classic PoE, w_i = 1/n the
/// generalized (uniform) variant.
pub fn aggregate_poe(posteriors: &[ExpertPosterior], variance_floor: f64) -> Result<Prediction> {
    check_nonempty(posteriors)?;
    check_variances(posteriors)?;
    let precision: f64 = posteriors.iter().map(|p| p.weight / p.variance).sum();
    combine_precision(posteriors, precision, variance_floor)
}

/// BCM family: PoE precision plus the prior correction
/// (1 - sum w_j) / prior_var; the mean weighting stays the PoE one.
pub fn aggregate_bcm(
    posteriors: &[ExpertPosterior],
    prior_var: f64,
    variance_floor: f64,
) -> Result<Prediction> {
    check_nonempty(posteriors)?;
    check_variances(posteriors)?;
    if !(prior_var > 0.0) {
        return Err(SkyGpError::InvalidArgument(
            "prior variance must be positive".into(),
        ));
    }
    let wsum: f64 = posteriors.iter().map(|p| p.weight).sum();
    let precision: f64 = posteriors
        .iter()
        .map(|p| p.weight / p.variance)
        .sum::<f64>()
        + (1.0 - wsum) / prior_var;
    if !(precision > 0.0) {
        return Err(SkyGpError::InvalidArgument(format!(
            "BCM aggregate precision is non-positive ({precision})"
        )));
    }
    combine_precision(posteriors, precision, variance_floor)
}

/// Robust BCM: per-query weights w_i = max(0, (ln prior_var - ln sigma_i^2)/2)
/// (the differential-entropy reduction), left unnormalized, then the BCM
/// combination absorbs the deficit or excess through the prior term.
pub fn aggregate_rbcm(
    posteriors: &[ExpertPosterior],
    prior_var: f64,
    variance_floor: f64,
) -> Result<Prediction> {
    check_nonempty(posteriors)?;
    check_variances(posteriors)?;
    if !(prior_var > 0.0) {
        return Err(SkyGpError::InvalidArgument(
            "prior variance must be positive".into(),
        ));
    }
    let weighted: Vec<ExpertPosterior> = posteriors
        .iter()
        .map(|p| ExpertPosterior {
            weight: (0.5 * (prior_var.ln() - p.variance.ln())).max(0.0),
            ..*p
        })
        .collect();
    aggregate_bcm(&weighted, prior_var, variance_floor)
}

fn combine_precision(
    posteriors: &[ExpertPosterior],
    precision: f64,
    variance_floor: f64,
) -> Result<Prediction> {
    if let [lone] = posteriors {
        // w = 1 makes the reduction an identity; skip the reciprocal round trip
        if lone.weight == 1.0 {
            return Ok(Prediction {
                mean: lone.mean,
                variance: lone.variance.max(variance_floor),
                contributions: vec![Contribution {
                    expert_id: lone.expert_id,
                    mean: lone.mean,
                    variance: lone.variance,
                    mean_weight: 1.0,
                    var_weight: 1.0,
                }],
                error_radius: None,
            });
        }
    }
    let variance_raw = 1.0 / precision;
    let mean: f64 = posteriors
        .iter()
        .map(|p| p.weight / p.variance * p.mean)
        .sum::<f64>()
        * variance_raw;
    let contributions = posteriors
        .iter()
        .map(|p| Contribution {
            expert_id: p.expert_id,
            mean: p.mean,
            variance: p.variance,
            mean_weight: p.weight / p.variance * variance_raw,
            var_weight: p.weight / p.variance / precision,
        })
        .collect();
    Ok(Prediction {
        mean,
        variance: variance_raw.max(variance_floor),
        contributions,
        error_radius: None,
    })
}

/// Dispatch on the configured method. `posteriors` carry the base weights;
/// rBCM ignores them and derives its own.
pub fn aggregate(
    method: Aggregation,
    posteriors: &[ExpertPosterior],
    prior_var: f64,
    variance_floor: f64,
) -> Result<Prediction> {
    match method {
        Aggregation::Moe => aggregate_moe(posteriors, variance_floor),
        Aggregation::Poe | Aggregation::GPoe => aggregate_poe(posteriors, variance_floor),
        Aggregation::Bcm => aggregate_bcm(posteriors, prior_var, variance_floor),
        Aggregation::Rbcm => aggregate_rbcm(posteriors, prior_var, variance_floor),
    }
}
