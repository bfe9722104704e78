//! Sequential streaming-regression evaluation: CSV/synthetic ingestion, the
//! predict-then-update protocol, SMSE and MSLL in their sequential reading,
//! and per-step timing.
//!
//! The first `pretrain_count` rows of a dataset are reserved for normalizer
//! statistics (they are never fed to the pool); every later sample is first
//! predicted, then used for the model update.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bound::{BoundContext, BoundParams};
use crate::error::{Result, SkyGpError};
use crate::kernel::{self, Hyperparameters};
use crate::pool::{Mode, Pool, PoolConfig};
use crate::seed;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Row-major features, `dim` columns.
    pub x: Vec<f64>,
    pub dim: usize,
    pub y: Vec<f64>,
    pub name: String,
    /// Leading rows reserved for normalizer statistics.
    pub pretrain_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.x.len() != self.len() * self.dim {
            return Err(SkyGpError::Load("feature matrix shape mismatch".into()));
        }
        if self.pretrain_count < 2 || self.len() <= self.pretrain_count {
            return Err(SkyGpError::Load(format!(
                "need more than pretrain_count={} rows (have {}), pretrain_count >= 2",
                self.pretrain_count,
                self.len()
            )));
        }
        if let Some(i) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(SkyGpError::Load(format!(
                "non-finite feature at row {}, column {}",
                i / self.dim,
                i % self.dim
            )));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(SkyGpError::Load(format!("non-finite target at row {i}")));
        }
        Ok(())
    }

    /// Z-score every feature column using pretrain statistics only.
    /// Constant columns are left unscaled.
    pub fn normalize_features(&mut self) {
        let n = self.pretrain_count;
        for j in 0..self.dim {
            let col = |x: &Vec<f64>, i: usize| x[i * self.dim + j];
            let mean: f64 = (0..n).map(|i| col(&self.x, i)).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|i| (col(&self.x, i) - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            let std = var.sqrt();
            if std < 1e-12 {
                continue;
            }
            for i in 0..self.len() {
                self.x[i * self.dim + j] = (self.x[i * self.dim + j] - mean) / std;
            }
        }
    }
}

/// Load a headered numeric CSV. The target column is pulled out by name and
/// the remaining columns become features in file order.
pub fn load_csv(
    path: &Path,
    target_column: &str,
    pretrain_count: usize,
    normalize: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SkyGpError::Load(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| SkyGpError::Load(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|c| c == target_column)
        .ok_or_else(|| {
            SkyGpError::Load(format!(
                "target column '{target_column}' not found in {:?}",
                headers
            ))
        })?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(SkyGpError::Load("CSV has no feature columns".into()));
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| SkyGpError::Load(format!("row {}: {e}", line + 1)))?;
        if record.len() != headers.len() {
            return Err(SkyGpError::Load(format!(
                "row {}: expected {} cells, got {}",
                line + 1,
                headers.len(),
                record.len()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                SkyGpError::Load(format!(
                    "row {}, column '{}': cannot parse '{cell}' as a number",
                    line + 1,
                    headers[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(SkyGpError::Load(format!(
                    "row {}, column '{}': non-finite value '{cell}'",
                    line + 1,
                    headers[col]
                )));
            }
            if col == target_idx {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut ds = Dataset {
        x,
        dim,
        y,
        name,
        pretrain_count,
    };
    ds.validate()?;
    if normalize {
        ds.normalize_features();
    }
    Ok(ds)
}

/// A function drawn from the kernel's RKHS as a finite expansion
/// f(x) = sum_s c_s k(x, z_s), scaled to a prescribed RKHS norm.
#[derive(Debug, Clone)]
pub struct RkhsFunction {
    h: Hyperparameters,
    centers: Vec<f64>,
    coeffs: Vec<f64>,
}

impl RkhsFunction {
    pub fn generate(
        h: Hyperparameters,
        lo: &[f64],
        hi: &[f64],
        n_centers: usize,
        norm: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let dim = h.dim();
        let mut centers = Vec::with_capacity(n_centers * dim);
        for _ in 0..n_centers {
            for j in 0..dim {
                centers.push(rng.gen_range(lo[j]..=hi[j]));
            }
        }
        let mut coeffs: Vec<f64> = (0..n_centers)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut f = RkhsFunction {
            h,
            centers,
            coeffs: coeffs.clone(),
        };
        let current = f.rkhs_norm();
        let scale = norm / current;
        for c in &mut coeffs {
            *c *= scale;
        }
        f.coeffs = coeffs;
        f
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let dim = self.h.dim();
        self.centers
            .chunks_exact(dim)
            .zip(&self.coeffs)
            .map(|(z, c)| c * kernel::eval_unchecked(&self.h, x, z))
            .sum()
    }

    /// sqrt(c^T K c) over the expansion centers.
    pub fn rkhs_norm(&self) -> f64 {
        let dim = self.h.dim();
        let rows: Vec<&[f64]> = self.centers.chunks_exact(dim).collect();
        let mut quad = 0.0;
        for (i, zi) in rows.iter().enumerate() {
            for (j, zj) in rows.iter().enumerate() {
                quad += self.coeffs[i] * self.coeffs[j] * kernel::eval_unchecked(&self.h, zi, zj);
            }
        }
        quad.max(0.0).sqrt()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// y = sin(2x) on a reflected random walk over [-3, 3].
    Sine,
    /// Finite kernel expansion with RKHS norm `norm`.
    RkhsMixture { norm: f64, n_centers: usize },
    /// Piecewise function with jumps at -1 and 1.
    Piecewise,
}

pub const SYNTHETIC_DOMAIN: (f64, f64) = (-3.0, 3.0);

fn piecewise(x: f64) -> f64 {
    if x < -1.0 {
        -1.0 + 0.5 * x
    } else if x < 1.0 {
        (3.0 * x).sin()
    } else {
        1.5 - 0.8 * (x - 1.0)
    }
}

/// Deterministic 1-D stream: a reflected random walk over the synthetic
/// domain with targets from the chosen function family plus Gaussian noise.
pub fn synthetic_stream(
    kind: SyntheticKind,
    n: usize,
    seed: u64,
    noise_dev: f64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(SkyGpError::InvalidArgument(
            "synthetic streams need n >= 10".into(),
        ));
    }
    let (lo, hi) = SYNTHETIC_DOMAIN;
    let mut rng = seed::derive_rng(seed, 0);
    type Target = Box<dyn Fn(&[f64]) -> f64>;
    let f: Target = match kind {
        SyntheticKind::Sine => Box::new(|x: &[f64]| (2.0 * x[0]).sin()),
        SyntheticKind::Piecewise => Box::new(|x: &[f64]| piecewise(x[0])),
        SyntheticKind::RkhsMixture { norm, n_centers } => {
            let h = Hyperparameters::isotropic(1, 1.0, 1.0, noise_dev);
            let f = RkhsFunction::generate(h, &[lo], &[hi], n_centers, norm, &mut rng);
            Box::new(move |x: &[f64]| f.eval(x))
        }
    };

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pos: f64 = rng.gen_range(lo..=hi);
    for _ in 0..n {
        x.push(pos);
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * noise_dev;
        y.push(f(&[pos]) + noise);
        let step: f64 = rng.sample::<f64, _>(StandardNormal) * 0.25;
        pos += step;
        if pos > hi {
            pos = 2.0 * hi - pos;
        }
        if pos < lo {
            pos = 2.0 * lo - pos;
        }
        pos = pos.clamp(lo, hi);
    }

    let name = match kind {
        SyntheticKind::Sine => format!("sine-n{n}-seed{seed}"),
        SyntheticKind::RkhsMixture { .. } => format!("rkhs-n{n}-seed{seed}"),
        SyntheticKind::Piecewise => format!("piecewise-n{n}-seed{seed}"),
    };
    let ds = Dataset {
        x,
        dim: 1,
        y,
        name,
        pretrain_count: (n / 10).clamp(2, 1000),
    };
    ds.validate()?;
    Ok(ds)
}

/// Running SMSE/MSLL against the pretrain baseline. The trivial model is the
/// Gaussian with the pretrain mean and variance of the targets.
#[derive(Debug, Clone)]
struct StreamMetrics {
    mean0: f64,
    var0: f64,
    noise_var: f64,
    count: usize,
    se_sum: f64,
    nll_model: f64,
    nll_trivial: f64,
}

impl StreamMetrics {
    fn new(pretrain_y: &[f64], noise_var: f64) -> Result<Self> {
        let n = pretrain_y.len();
        let mean0 = pretrain_y.iter().sum::<f64>() / n as f64;
        let var0 = pretrain_y
            .iter()
            .map(|y| (y - mean0) * (y - mean0))
            .sum::<f64>()
            / (n - 1) as f64;
        if !(var0 > 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "pretrain target variance is zero; SMSE normalizer is degenerate".into(),
            ));
        }
        Ok(StreamMetrics {
            mean0,
            var0,
            noise_var,
            count: 0,
            se_sum: 0.0,
            nll_model: 0.0,
            nll_trivial: 0.0,
        })
    }

    fn observe(&mut self, mu: f64, variance: f64, y: f64) {
        let tau = std::f64::consts::TAU;
        self.count += 1;
        let err = y - mu;
        self.se_sum += err * err;
        let s2 = variance + self.noise_var;
        self.nll_model += 0.5 * (tau * s2).ln() + err * err / (2.0 * s2);
        let e0 = y - self.mean0;
        self.nll_trivial += 0.5 * (tau * self.var0).ln() + e0 * e0 / (2.0 * self.var0);
    }

    fn smse(&self) -> f64 {
        self.se_sum / self.count as f64 / self.var0
    }

    fn msll(&self) -> f64 {
        (self.nll_model - self.nll_trivial) / self.count as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub mu: f64,
    pub variance: f64,
    pub y: f64,
    pub cum_smse: f64,
    pub cum_msll: f64,
    pub pred_ns: u64,
    pub update_ns: u64,
    pub expert_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub dataset: String,
    /// Post-pretrain samples evaluated.
    pub samples: usize,
    pub smse: f64,
    pub msll: f64,
    pub mean_pred_time_s: f64,
    pub mean_update_time_s: f64,
    pub expert_count: usize,
    pub total_points: usize,
    /// Set when the run stopped early on a numerical failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_step: Option<Vec<StepRecord>>,
}

/// Sequential protocol: for every post-pretrain sample, record the timed
/// prediction, fold it into the metrics, then feed the sample to the pool.
pub fn run_stream(
    ds: &Dataset,
    h: &Hyperparameters,
    pool_cfg: &PoolConfig,
    bound: Option<&BoundParams>,
    per_step: bool,
) -> Result<RunReport> {
    ds.validate()?;
    pool_cfg.validate()?;
    let mut metrics = StreamMetrics::new(&ds.y[..ds.pretrain_count], h.noise_var())?;
    let mut pool = Pool::new(h.clone(), pool_cfg.clone())?;
    let mut bound_ctx = match bound {
        Some(b) => Some(BoundContext::new(b.clone(), pool_cfg.max_agg)?),
        None => None,
    };

    let mut records = per_step.then(Vec::new);
    let mut pred_ns_total: u64 = 0;
    let mut update_ns_total: u64 = 0;
    let mut aborted = None;

    for s in ds.pretrain_count..ds.len() {
        let x = ds.row(s);
        let y = ds.y[s];

        let t0 = Instant::now();
        let mut pred = pool.predict_only(x)?;
        let pred_ns = t0.elapsed().as_nanos() as u64;

        metrics.observe(pred.mean, pred.variance, y);

        // radius of the pre-update prediction; outside the timed sections
        if records.is_some() && !pred.contributions.is_empty() {
            if let Some(ctx) = &mut bound_ctx {
                ctx.annotate(&pool, &mut pred)?;
            }
        }

        let t1 = Instant::now();
        let outcome = pool.process(x, y);
        let update_ns = t1.elapsed().as_nanos() as u64;

        pred_ns_total += pred_ns;
        update_ns_total += update_ns;

        if let Some(records) = &mut records {
            let eta = pred.error_radius;
            records.push(StepRecord {
                step: s,
                mu: pred.mean,
                variance: pred.variance,
                y,
                cum_smse: metrics.smse(),
                cum_msll: metrics.msll(),
                pred_ns,
                update_ns,
                expert_count: pool.num_experts(),
                eta,
            });
        }

        match outcome {
            Ok(_) => {}
            Err(e @ SkyGpError::NumericalDegeneracy(_)) => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let n = metrics.count.max(1);
    Ok(RunReport {
        dataset: ds.name.clone(),
        samples: metrics.count,
        smse: metrics.smse(),
        msll: metrics.msll(),
        mean_pred_time_s: pred_ns_total as f64 / n as f64 / 1e9,
        mean_update_time_s: update_ns_total as f64 / n as f64 / 1e9,
        expert_count: pool.num_experts(),
        total_points: pool.total_points(),
        aborted,
        per_step: records,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub smse: f64,
    pub msll: f64,
    pub mean_pred_time_s: f64,
    pub mean_update_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareTable {
    pub rows: Vec<VariantRow>,
}

impl CompareTable {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>12} {:>12}\n",
            "variant", "smse", "msll", "t_pred[s]", "t_up[s]"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>10.4} {:>10.3} {:>12.3e} {:>12.3e}\n",
                r.variant, r.smse, r.msll, r.mean_pred_time_s, r.mean_update_time_s
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,smse,msll,t_pred_s,t_up_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant, r.smse, r.msll, r.mean_pred_time_s, r.mean_update_time_s
            ));
        }
        out
    }
}

/// Run Fast and Dense at 1, 2 and 4 aggregated experts on the same stream.
pub fn compare_modes(ds: &Dataset, h: &Hyperparameters, base: &PoolConfig) -> Result<CompareTable> {
    let mut rows = Vec::with_capacity(6);
    for (mode, tag) in [(Mode::Fast, "F"), (Mode::Dense, "D")] {
        for max_agg in [1usize, 2, 4] {
            let cfg = PoolConfig {
                mode,
                max_agg,
                ..base.clone()
            };
            let report = run_stream(ds, h, &cfg, None, false)?;
            rows.push(VariantRow {
                variant: format!("SkyGP-{tag}-{max_agg}"),
                smse: report.smse,
                msll: report.msll,
                mean_pred_time_s: report.mean_pred_time_s,
                mean_update_time_s: report.mean_update_time_s,
            });
        }
    }
    Ok(CompareTable { rows })
}
