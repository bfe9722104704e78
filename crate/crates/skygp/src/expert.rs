//! A single exact GP expert over a bounded data window.
//!
//! Appends extend the Cholesky factor by one row (O(N^2)); replacements
//! (Dense mode) evict the point furthest from the expert center and rebuild
//! the factor from scratch (O(N^3)). The expert keeps two running means: its
//! center over every point ever assigned to it, and a second center over the
//! points it has dropped.

use crate::chol::CholeskyFactor;
use crate::error::{Result, SkyGpError};
use crate::kernel::{self, Hyperparameters};

/// Jitter ladder applied to the diagonal when a factorization hits a
/// non-positive pivot: 1e-8 * sigma_f^2 escalating by 10x, three attempts.
const JITTER_STEPS: [f64; 3] = [1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone)]
pub struct Expert {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
    center: Vec<f64>,
    n_center: u64,
    dropped_center: Option<Vec<f64>>,
    n_dropped: u64,
    pub(crate) theta: f64,
    version: u64,
}

/// In-place running-mean update: c_k = (k-1) c_{k-1} / k + x / k.
fn running_mean_update(c: &mut [f64], count: &mut u64, x: &[f64]) {
    *count += 1;
    let k = *count as f64;
    for (ci, xi) in c.iter_mut().zip(x) {
        *ci = (k - 1.0) * *ci / k + xi / k;
    }
}

impl Expert {
    /// Create an expert from its first observation. The center starts at `x`
    /// and the time-aware factor at 1.
    pub fn new(h: &Hyperparameters, x: &[f64], y: f64) -> Result<Self> {
        let mut e = Expert {
            dim: h.dim(),
            xs: Vec::new(),
            ys: Vec::new(),
            chol: CholeskyFactor::new(),
            alpha: Vec::new(),
            center: x.to_vec(),
            n_center: 1,
            dropped_center: None,
            n_dropped: 0,
            theta: 1.0,
            version: 0,
        };
        e.push_point(h, x, y)?;
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn dropped_center(&self) -> Option<&[f64]> {
        self.dropped_center.as_deref()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Bumped on every data change; lets callers cache per-expert work.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Held training inputs, row by row.
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.xs.chunks_exact(self.dim)
    }

    pub fn targets(&self) -> &[f64] {
        &self.ys
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(SkyGpError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Extend the factor by one row, escalating jitter on the new diagonal
    /// entry if the pivot comes out non-positive.
    fn push_point(&mut self, h: &Hyperparameters, x: &[f64], y: f64) -> Result<()> {
        self.check_dim(x)?;
        let cov = kernel::eval_vec(h, x, &self.xs)?;
        let diag = h.signal_var() + h.noise_var();
        let mut last = None;
        for jitter in std::iter::once(0.0).chain(JITTER_STEPS.iter().map(|j| j * h.signal_var())) {
            match self.chol.push_row(&cov, diag + jitter) {
                Ok(()) => {
                    last = None;
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        if let Some(e) = last {
            return Err(e);
        }
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        self.alpha = self.chol.solve(&self.ys);
        self.version += 1;
        Ok(())
    }

    /// Incorporate one observation by rank-one extension of the factor.
    /// The expert center follows the running mean over all assigned points.
    pub fn append(
        &mut self,
        h: &Hyperparameters,
        x: &[f64],
        y: f64,
        capacity: usize,
    ) -> Result<()> {
        if self.len() >= capacity {
            return Err(SkyGpError::CapacityFull { capacity });
        }
        self.push_point(h, x, y)?;
        running_mean_update(&mut self.center, &mut self.n_center, x);
        Ok(())
    }

    /// Dense-mode replacement: assign `x` to this (full) expert, cast off the
    /// held point furthest from the updated center, fold the victim into the
    /// dropped-data center, and rebuild the factor on the surviving window.
    pub fn replace(
        &mut self,
        h: &Hyperparameters,
        x: &[f64],
        y: f64,
        capacity: usize,
    ) -> Result<()> {
        if self.len() != capacity {
            return Err(SkyGpError::NotFull {
                held: self.len(),
                capacity,
            });
        }
        self.check_dim(x)?;
        running_mean_update(&mut self.center, &mut self.n_center, x);

        let mut victim = 0;
        let mut worst = f64::NEG_INFINITY;
        for (s, row) in self.points().enumerate() {
            let d = kernel::kernel_distance_unchecked(h, &self.center, row);
            if d > worst {
                worst = d;
                victim = s;
            }
        }

        let dropped: Vec<f64> = self.xs[victim * self.dim..(victim + 1) * self.dim].to_vec();
        match &mut self.dropped_center {
            Some(c) => running_mean_update(c, &mut self.n_dropped, &dropped),
            None => {
                self.dropped_center = Some(dropped.clone());
                self.n_dropped = 1;
            }
        }

        self.xs.drain(victim * self.dim..(victim + 1) * self.dim);
        self.ys.remove(victim);
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        self.rebuild(h)
    }

    /// Full refactorization of K + sigma_n^2 I over the held window.
    fn rebuild(&mut self, h: &Hyperparameters) -> Result<()> {
        let n = self.len();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            let xi = &self.xs[i * self.dim..(i + 1) * self.dim];
            for j in 0..=i {
                let xj = &self.xs[j * self.dim..(j + 1) * self.dim];
                let mut k = kernel::eval_unchecked(h, xi, xj);
                if i == j {
                    k += h.noise_var();
                }
                packed.push(k);
            }
        }
        let mut last = None;
        for jitter in std::iter::once(0.0).chain(JITTER_STEPS.iter().map(|j| j * h.signal_var())) {
            let mut p = packed.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    p[i * (i + 1) / 2 + i] += jitter;
                }
            }
            match CholeskyFactor::from_packed(&p, n) {
                Ok(l) => {
                    self.chol = l;
                    last = None;
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        if let Some(e) = last {
            return Err(e);
        }
        self.alpha = self.chol.solve(&self.ys);
        self.version += 1;
        Ok(())
    }

    /// Replacement trigger Delta = max_s Delta(s) with
    /// Delta(s) = k(x_s, c) - k(x_s, c_off) - k(x, c) + k(x, c_off).
    /// Before any point has been dropped the c_off terms are omitted.
    /// The caller replaces iff the returned value is negative.
    pub fn delta_trigger(&self, h: &Hyperparameters, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let k_x_c = kernel::eval_unchecked(h, x, &self.center);
        let k_x_off = self
            .dropped_center
            .as_ref()
            .map(|c| kernel::eval_unchecked(h, x, c));
        let mut delta = f64::NEG_INFINITY;
        for row in self.points() {
            let mut d = kernel::eval_unchecked(h, row, &self.center) - k_x_c;
            if let (Some(off), Some(kxo)) = (&self.dropped_center, k_x_off) {
                d += kxo - kernel::eval_unchecked(h, row, off);
            }
            delta = delta.max(d);
        }
        Ok(delta)
    }

    /// Number of held points strictly more similar to the center than `x`.
    pub fn most_central_count(&self, h: &Hyperparameters, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        let k_x_c = kernel::eval_unchecked(h, x, &self.center);
        Ok(self
            .points()
            .filter(|row| kernel::eval_unchecked(h, row, &self.center) > k_x_c)
            .count())
    }

    /// Posterior mean and variance at `x`; the variance is clamped below at
    /// `variance_floor`.
    pub fn predict(
        &self,
        h: &Hyperparameters,
        x: &[f64],
        variance_floor: f64,
    ) -> Result<(f64, f64)> {
        let cov = kernel::eval_vec(h, x, &self.xs)?;
        let mean: f64 = cov.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = self.chol.solve_lower(&cov);
        let var = h.signal_var() - v.iter().map(|z| z * z).sum::<f64>();
        Ok((mean, var.max(variance_floor)))
    }
}
