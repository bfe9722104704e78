//! File-based run configuration. Precedence: command-line flags over file
//! values over built-in defaults. The fully resolved config is echoed into
//! every report for reproducibility.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use skygp::bench::{self, Dataset, SyntheticKind};
use skygp::bound::BoundParams;
use skygp::control::ControllerConfig;
use skygp::kernel::Hyperparameters;
use skygp::pool::{Mode, PoolConfig};
use skygp::Aggregation;

use crate::{CliError, Overrides};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    /// CSV file with a header row; mutually exclusive with `synthetic`.
    pub path: Option<PathBuf>,
    /// Target column name for CSV ingestion.
    pub target: String,
    /// Synthetic stream recipe, e.g. `{ kind = "sine" }`.
    pub synthetic: Option<SyntheticKind>,
    /// Stream length for synthetic datasets.
    pub n: usize,
    /// Observation noise for synthetic datasets.
    pub noise_dev: f64,
    /// Rows reserved for normalizer statistics; `None` keeps the default.
    pub pretrain: Option<usize>,
    pub normalize: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            path: None,
            target: "y".into(),
            synthetic: None,
            n: 2000,
            noise_dev: 0.1,
            pretrain: None,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlSpec {
    pub k_p: f64,
    pub k_d: f64,
    pub epsilon: f64,
    pub a_r: f64,
    pub w_r: f64,
    /// Diagonal of the Lyapunov Q matrix.
    pub q_diag: [f64; 2],
    pub dt: f64,
    pub duration: f64,
    /// Measurement noise on training targets.
    pub noise_dev: f64,
    pub n_trials: usize,
    /// Record every n-th trajectory row when per-step output is on.
    pub trajectory_stride: usize,
    /// Cap on total stored points across the pool; translated into a hard
    /// expert budget of max_total_points / capacity when the pool has none.
    pub max_total_points: Option<usize>,
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec {
            k_p: 5.0,
            k_d: 10.0,
            epsilon: 1.0,
            a_r: 1.0,
            w_r: 0.1,
            q_diag: [1.0, 1.0],
            dt: 0.01,
            duration: 100.0,
            noise_dev: 0.01,
            n_trials: 100,
            trajectory_stride: 10,
            max_total_points: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub per_step: bool,
    pub kernel: Hyperparameters,
    pub pool: PoolConfig,
    pub dataset: DatasetSpec,
    pub bound: Option<BoundParams>,
    pub control: ControlSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            per_step: false,
            kernel: Hyperparameters::isotropic(1, 1.0, 1.0, 0.1),
            pool: PoolConfig::default(),
            dataset: DatasetSpec::default(),
            bound: None,
            control: ControlSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                let cfg: RunConfig = toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let mut cfg = cfg;
                // prior variance defaults to the kernel's signal variance
                // when the file does not pin it
                let raw: toml::Value = toml::from_str(&text).unwrap();
                let prior_set = raw.get("pool").and_then(|p| p.get("prior_var")).is_some();
                if !prior_set {
                    cfg.pool.prior_var = cfg.kernel.signal_var();
                }
                cfg
            }
            None => {
                let mut cfg = RunConfig::default();
                cfg.pool.prior_var = cfg.kernel.signal_var();
                cfg
            }
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(mode) = &o.mode {
            self.pool.mode = match mode.as_str() {
                "fast" => Mode::Fast,
                "dense" => Mode::Dense,
                other => return Err(CliError::Config(format!("unknown mode '{other}'"))),
            };
        }
        if let Some(v) = o.max_agg {
            self.pool.max_agg = v;
        }
        if let Some(v) = o.max_points {
            self.pool.capacity = v;
        }
        if let Some(v) = o.window {
            self.pool.max_window = v;
        }
        if let Some(agg) = &o.agg {
            self.pool.aggregation = match agg.as_str() {
                "moe" => Aggregation::Moe,
                "poe" => Aggregation::Poe,
                "gpoe" => Aggregation::GPoe,
                "bcm" => Aggregation::Bcm,
                "rbcm" => Aggregation::Rbcm,
                other => return Err(CliError::Config(format!("unknown aggregation '{other}'"))),
            };
        }
        if let Some(v) = o.gamma {
            self.pool.decay = v;
        }
        if let Some(v) = o.theta_bar {
            self.pool.theta_min = v;
        }
        if let Some(v) = o.rho {
            self.pool.window_scale = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out_dir = v.clone();
        }
        if o.per_step {
            self.per_step = true;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        self.pool
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(b) = &self.bound {
            b.validate(self.pool.max_agg)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.dataset.path.is_some() && self.dataset.synthetic.is_some() {
            return Err(CliError::Config(
                "dataset: set either `path` or `synthetic`, not both".into(),
            ));
        }
        if let Some(path) = &self.dataset.path {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "dataset path does not exist: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        let spec = &self.dataset;
        if let Some(path) = &spec.path {
            let pretrain = spec.pretrain.unwrap_or(100);
            return Ok(bench::load_csv(
                path,
                &spec.target,
                pretrain,
                spec.normalize,
            )?);
        }
        // no dataset configured at all: default to the synthetic sine stream
        let kind = spec.synthetic.unwrap_or(SyntheticKind::Sine);
        let mut ds = bench::synthetic_stream(kind, spec.n, self.seed, spec.noise_dev)?;
        if let Some(p) = spec.pretrain {
            ds.pretrain_count = p;
            ds.validate()?;
        }
        if spec.normalize {
            ds.normalize_features();
        }
        Ok(ds)
    }

    pub fn controller(&self) -> Result<ControllerConfig, CliError> {
        if self.kernel.dim() != 2 {
            return Err(CliError::Config(format!(
                "control runs model f(q, qdot): kernel needs 2 lengthscales, got {}",
                self.kernel.dim()
            )));
        }
        let c = &self.control;
        let q = [[c.q_diag[0], 0.0], [0.0, c.q_diag[1]]];
        Ok(ControllerConfig::new(
            c.k_p,
            c.k_d,
            c.epsilon,
            c.a_r,
            c.w_r,
            q,
            c.dt,
            c.noise_dev,
        )?)
    }
}
