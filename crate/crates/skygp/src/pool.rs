//! The expert pool: an ordered list of GP experts with adaptive-window
//! localization, an update strategy that appends, replaces or spawns, and
//! time-aware decay of expert recency.
//!
//! The pool keeps its experts in a center-indexed list. Each incoming sample
//! is localized by searching a window of list positions around the expert
//! used last, predictions are aggregated over the best few candidates, and
//! the sample is then offered to those candidates in decreasing similarity.

use serde::{Deserialize, Serialize};

use crate::aggregate::{self, Aggregation, ExpertPosterior, Prediction};
use crate::error::{Result, SkyGpError};
use crate::expert::Expert;
use crate::kernel::{self, Hyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Append-only: full candidates are skipped and a new expert is spawned.
    Fast,
    /// Replacement: a full candidate may swap its least central point for the
    /// incoming one (factor rebuild) before spawning is considered.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// w_i = 1/|set| over the aggregation set.
    Uniform,
    /// w_i proportional to exp(k(x, c_i)), normalized.
    SoftmaxSimilarity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub mode: Mode,
    /// Per-expert data capacity N-bar.
    pub capacity: usize,
    /// Number of experts aggregated per prediction.
    pub max_agg: usize,
    /// Cap on the localization window (list positions each side).
    pub max_window: usize,
    /// Window growth scale rho: W = min(max_window, floor(exp(d/rho))).
    pub window_scale: f64,
    /// Per-step decay gamma applied to unused experts' time-aware factor.
    pub decay: f64,
    /// Candidates with theta at or below this are filtered out.
    pub theta_min: f64,
    pub aggregation: Aggregation,
    /// Prior variance sigma_*^2 used by the BCM family and prior fallback.
    pub prior_var: f64,
    pub variance_floor: f64,
    pub weighting: Weighting,
    /// Apply decay on every call instead of only when a spawn happens.
    pub decay_every_step: bool,
    /// Hard cap on the number of experts; `None` leaves spawning unbounded.
    pub max_experts: Option<usize>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            mode: Mode::Fast,
            capacity: 50,
            max_agg: 2,
            max_window: 40,
            window_scale: 1.0,
            decay: 0.999,
            theta_min: 0.05,
            aggregation: Aggregation::Rbcm,
            prior_var: 1.0,
            variance_floor: 1e-12,
            weighting: Weighting::Uniform,
            decay_every_step: false,
            max_experts: None,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 1 {
            return Err(SkyGpError::InvalidArgument("capacity must be >= 1".into()));
        }
        if self.max_agg < 1 {
            return Err(SkyGpError::InvalidArgument("max_agg must be >= 1".into()));
        }
        if !(self.window_scale > 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "window_scale must be positive".into(),
            ));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(SkyGpError::InvalidArgument(
                "decay must lie in (0,1)".into(),
            ));
        }
        if !(self.theta_min >= 0.0 && self.theta_min < 1.0) {
            return Err(SkyGpError::InvalidArgument(
                "theta_min must lie in [0,1)".into(),
            ));
        }
        if !(self.prior_var > 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "prior_var must be positive".into(),
            ));
        }
        if !(self.variance_floor > 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "variance_floor must be positive".into(),
            ));
        }
        if self.max_experts == Some(0) {
            return Err(SkyGpError::InvalidArgument(
                "max_experts must be >= 1 when set".into(),
            ));
        }
        Ok(())
    }
}

/// What `process` did with the sample. Positions refer to the ordered list
/// at the time of the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateEvent {
    /// Sample appended to the expert at this position.
    Appended(usize),
    /// Sample replaced the least central point of the expert at this position.
    Replaced(usize),
    /// New expert spawned and inserted at this position.
    Spawned(usize),
    /// Expert budget reached and no candidate accepted; sample discarded.
    /// Carries the position a spawn would have used.
    RejectedFullFast(usize),
}

#[derive(Debug, Clone)]
pub struct Pool {
    h: Hyperparameters,
    config: PoolConfig,
    /// Experts keyed by creation id.
    experts: Vec<Expert>,
    /// Center-indexed list: position -> expert id.
    order: Vec<usize>,
    /// List position of the expert used last.
    nu_prev: usize,
    /// Previous input, used for the adaptive window.
    last_x: Option<Vec<f64>>,
    /// Samples processed so far.
    step: u64,
}

impl Pool {
    pub fn new(h: Hyperparameters, config: PoolConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pool {
            h,
            config,
            experts: Vec::new(),
            order: Vec::new(),
            nu_prev: 0,
            last_x: None,
            step: 0,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.h
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn expert(&self, id: usize) -> &Expert {
        &self.experts[id]
    }

    pub fn experts(&self) -> impl Iterator<Item = (usize, &Expert)> {
        self.experts.iter().enumerate()
    }

    /// Positions -> expert ids.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Total points held across all experts.
    pub fn total_points(&self) -> usize {
        self.experts.iter().map(|e| e.len()).sum()
    }

    fn center_at(&self, pos: usize) -> &[f64] {
        self.experts[self.order[pos]].center()
    }

    /// Adaptive window size. No previous sample means no window.
    pub fn window_size(&self, x: &[f64]) -> usize {
        match &self.last_x {
            None => 0,
            Some(prev) => {
                let d = kernel::kernel_distance_unchecked(&self.h, prev, x);
                let w = (d / self.config.window_scale).exp().floor();
                if w >= self.config.max_window as f64 {
                    self.config.max_window
                } else {
                    w as usize
                }
            }
        }
    }

    /// Candidate list positions around `nu_prev`, theta-filtered. Falls back
    /// to `{nu_prev}` when the window is zero or the filter empties the set.
    fn filtered_candidates(&self, x: &[f64]) -> Vec<usize> {
        debug_assert!(!self.order.is_empty());
        let w = self.window_size(x);
        let mut cands: Vec<usize> = if w == 0 {
            vec![self.nu_prev]
        } else {
            let lo = self.nu_prev.saturating_sub(w);
            let hi = (self.nu_prev + w).min(self.order.len() - 1);
            (lo..=hi).collect()
        };
        cands.retain(|&pos| self.experts[self.order[pos]].theta > self.config.theta_min);
        if cands.is_empty() {
            cands.push(self.nu_prev);
        }
        cands
    }

    /// Localization: candidate window plus the position most similar to `x`.
    /// Updates the pool's previous-expert pointer.
    pub fn localize(&mut self, x: &[f64]) -> Result<(Vec<usize>, usize)> {
        if self.is_empty() {
            return Err(SkyGpError::EmptyPool);
        }
        let cands = self.filtered_candidates(x);
        let nu_nr = self.ranked(x, &cands)[0].0;
        self.nu_prev = nu_nr;
        Ok((cands, nu_nr))
    }

    /// Candidates ranked by decreasing kernel similarity to `x`
    /// (ties: lower position first).
    fn ranked(&self, x: &[f64], cands: &[usize]) -> Vec<(usize, f64)> {
        let mut sims: Vec<(usize, f64)> = cands
            .iter()
            .map(|&pos| (pos, kernel::eval_unchecked(&self.h, x, self.center_at(pos))))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims
    }

    fn aggregation_set(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let cands = self.filtered_candidates(x);
        let mut ranked = self.ranked(x, &cands);
        ranked.truncate(self.config.max_agg);
        ranked
    }

    fn aggregate_over(&self, x: &[f64], set: &[(usize, f64)]) -> Result<Prediction> {
        let n = set.len();
        let base: Vec<f64> = match (self.config.aggregation, self.config.weighting) {
            (Aggregation::Poe, _) => vec![1.0; n],
            (_, Weighting::Uniform) => vec![1.0 / n as f64; n],
            (_, Weighting::SoftmaxSimilarity) => {
                let max_sim = set
                    .iter()
                    .map(|(_, s)| *s)
                    .fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = set.iter().map(|(_, s)| (s - max_sim).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / total).collect()
            }
        };
        let mut posts = Vec::with_capacity(n);
        for (&(pos, _), &w) in set.iter().zip(&base) {
            let id = self.order[pos];
            let (mean, variance) =
                self.experts[id].predict(&self.h, x, self.config.variance_floor)?;
            posts.push(ExpertPosterior {
                expert_id: id,
                mean,
                variance,
                weight: w,
            });
        }
        aggregate::aggregate(
            self.config.aggregation,
            &posts,
            self.config.prior_var,
            self.config.variance_floor,
        )
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.h.dim() {
            return Err(SkyGpError::DimensionMismatch {
                expected: self.h.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SkyGpError::InvalidArgument(
                "input contains a non-finite value".into(),
            ));
        }
        Ok(())
    }

    /// Aggregated prediction without any state mutation. An empty pool
    /// returns the prior (mean 0, variance sigma_*^2).
    pub fn predict_only(&self, x: &[f64]) -> Result<Prediction> {
        self.check_input(x)?;
        if self.is_empty() {
            return Ok(Prediction::prior(self.config.prior_var));
        }
        let set = self.aggregation_set(x);
        self.aggregate_over(x, &set)
    }

    /// Where a new expert centered at `x` goes relative to the nearest one:
    /// right of it when the right neighbor is kernel-closer than the left,
    /// left otherwise. Missing neighbors count as infinitely far; a lone
    /// expert always gets its new sibling on the right.
    pub fn insertion_index(&self, x: &[f64], nu_nr: usize) -> Result<usize> {
        if self.is_empty() {
            return Err(SkyGpError::EmptyPool);
        }
        if self.order.len() == 1 {
            return Ok(1);
        }
        let d_left = if nu_nr == 0 {
            f64::INFINITY
        } else {
            kernel::kernel_distance_unchecked(&self.h, x, self.center_at(nu_nr - 1))
        };
        let d_right = if nu_nr + 1 >= self.order.len() {
            f64::INFINITY
        } else {
            kernel::kernel_distance_unchecked(&self.h, x, self.center_at(nu_nr + 1))
        };
        Ok(if d_right < d_left { nu_nr + 1 } else { nu_nr })
    }

    fn decay_all_except(&mut self, keep_ids: &[usize]) {
        for (id, e) in self.experts.iter_mut().enumerate() {
            if !keep_ids.contains(&id) {
                e.theta *= self.config.decay;
            }
        }
    }

    /// Feed one sample: returns the aggregated prediction computed before the
    /// update, plus what happened to the sample.
    pub fn process(&mut self, x: &[f64], y: f64) -> Result<(Prediction, UpdateEvent)> {
        self.check_input(x)?;
        if !y.is_finite() {
            return Err(SkyGpError::InvalidArgument("target is not finite".into()));
        }
        self.step += 1;

        if self.is_empty() {
            let prediction = Prediction::prior(self.config.prior_var);
            let e = Expert::new(&self.h, x, y)?;
            self.experts.push(e);
            self.order.push(0);
            self.nu_prev = 0;
            self.last_x = Some(x.to_vec());
            self.decay_all_except(&[]);
            return Ok((prediction, UpdateEvent::Spawned(0)));
        }

        let set = self.aggregation_set(x);
        let prediction = self.aggregate_over(x, &set)?;
        let agg_ids: Vec<usize> = set.iter().map(|&(pos, _)| self.order[pos]).collect();
        let nu_nr = set[0].0;
        self.nu_prev = nu_nr;
        self.last_x = Some(x.to_vec());

        for &(pos, _) in &set {
            let id = self.order[pos];
            self.experts[id].theta = 1.0;
            if self.experts[id].len() < self.config.capacity {
                self.experts[id].append(&self.h, x, y, self.config.capacity)?;
                if self.config.decay_every_step {
                    self.decay_all_except(&agg_ids);
                }
                return Ok((prediction, UpdateEvent::Appended(pos)));
            }
            if self.config.mode == Mode::Dense
                && self.experts[id].most_central_count(&self.h, x)? == 0
                && self.experts[id].delta_trigger(&self.h, x)? < 0.0
            {
                self.experts[id].replace(&self.h, x, y, self.config.capacity)?;
                if self.config.decay_every_step {
                    self.decay_all_except(&agg_ids);
                }
                return Ok((prediction, UpdateEvent::Replaced(pos)));
            }
        }

        // no candidate accepted the sample
        let pos = self.insertion_index(x, nu_nr)?;
        if let Some(budget) = self.config.max_experts {
            if self.experts.len() >= budget {
                if self.config.decay_every_step {
                    self.decay_all_except(&agg_ids);
                }
                return Ok((prediction, UpdateEvent::RejectedFullFast(pos)));
            }
        }
        let id = self.experts.len();
        self.experts.push(Expert::new(&self.h, x, y)?);
        self.order.insert(pos, id);
        if pos <= self.nu_prev {
            self.nu_prev += 1;
        }
        self.decay_all_except(&agg_ids);
        Ok((prediction, UpdateEvent::Spawned(pos)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1() -> Hyperparameters {
        Hyperparameters::new(vec![1.0], 1.0, 0.1).unwrap()
    }

    fn cfg() -> PoolConfig {
        PoolConfig {
            aggregation: Aggregation::GPoe,
            ..PoolConfig::default()
        }
    }

    /// Pool with experts centered at the given 1-D points, one point each.
    fn pool_with_centers(centers: &[f64], config: PoolConfig) -> Pool {
        let mut pool = Pool::new(h1(), config).unwrap();
        for &c in centers {
            pool.process(&[c], c.sin()).unwrap();
        }
        pool
    }

    /// Hand-built pool with experts placed at exactly these list positions,
    /// bypassing the insertion rule. `last_x` is set so the window is active.
    fn pool_at_positions(centers: &[f64], last_x: f64, config: PoolConfig) -> Pool {
        let h = h1();
        let mut pool = Pool::new(h.clone(), config).unwrap();
        for &c in centers {
            pool.experts.push(Expert::new(&h, &[c], c.sin()).unwrap());
            pool.order.push(pool.experts.len() - 1);
        }
        pool.last_x = Some(vec![last_x]);
        pool.step = centers.len() as u64;
        pool
    }

    #[test]
    fn window_is_zero_before_first_sample() {
        let pool = Pool::new(h1(), cfg()).unwrap();
        assert_eq!(pool.window_size(&[0.0]), 0);
    }

    #[test]
    fn window_at_zero_distance() {
        let mut pool = Pool::new(h1(), cfg()).unwrap();
        pool.process(&[0.5], 0.0).unwrap();
        // d = 1/k(x,x) = 1, W = min(40, floor(e^1)) = 2
        assert_eq!(pool.window_size(&[0.5]), 2);
    }

    #[test]
    fn window_saturates_at_max() {
        let mut pool = Pool::new(h1(), cfg()).unwrap();
        pool.process(&[0.0], 0.0).unwrap();
        assert_eq!(pool.window_size(&[100.0]), cfg().max_window);
    }

    #[test]
    fn localize_empty_pool_errors() {
        let mut pool = Pool::new(h1(), cfg()).unwrap();
        assert!(matches!(pool.localize(&[0.0]), Err(SkyGpError::EmptyPool)));
    }

    #[test]
    fn localize_picks_most_similar_center_in_window() {
        // window of exactly 1: rho = 10 so d = 1 gives floor(exp(0.1)) = 1
        let config = PoolConfig {
            window_scale: 10.0,
            ..cfg()
        };
        let mut pool = pool_at_positions(&[0.0, 5.0, 10.0], 9.0, config);
        pool.nu_prev = 1;
        assert_eq!(pool.window_size(&[9.0]), 1);
        let (cands, nu_nr) = pool.localize(&[9.0]).unwrap();
        assert_eq!(cands, vec![0, 1, 2]);
        assert_eq!(nu_nr, 2);
        assert_eq!(pool.nu_prev, 2);
    }

    #[test]
    fn theta_filter_keeps_only_active_neighbor() {
        let mut pool = pool_at_positions(&[0.0, 1.0, 2.0], 0.0, cfg());
        pool.nu_prev = 1;
        for pos in [0usize, 1] {
            let id = pool.order[pos];
            pool.experts[id].theta = 0.01; // below theta_min
        }
        let (cands, nu_nr) = pool.localize(&[0.0]).unwrap();
        assert_eq!(cands, vec![2]);
        assert_eq!(nu_nr, 2);
    }

    #[test]
    fn theta_starvation_falls_back_to_prev() {
        let mut pool = pool_at_positions(&[0.0, 1.0, 2.0], 2.0, cfg());
        pool.nu_prev = 1;
        for id in 0..3 {
            pool.experts[id].theta = 0.01;
        }
        let (cands, nu_nr) = pool.localize(&[2.0]).unwrap();
        assert_eq!(cands, vec![1]);
        assert_eq!(nu_nr, 1);
    }

    #[test]
    fn process_empty_pool_spawns_and_returns_prior() {
        let mut pool = Pool::new(h1(), cfg()).unwrap();
        let (pred, event) = pool.process(&[0.3], 1.0).unwrap();
        assert_eq!(event, UpdateEvent::Spawned(0));
        assert_eq!(pred.mean, 0.0);
        assert_eq!(pred.variance, pool.config().prior_var);
        assert!(pred.contributions.is_empty());
        assert_eq!(pool.num_experts(), 1);
    }

    #[test]
    fn process_single_nonfull_expert_appends() {
        let mut pool = Pool::new(h1(), cfg()).unwrap();
        pool.process(&[0.0], 0.5).unwrap();
        let before = pool.predict_only(&[0.4]).unwrap();
        let (pred, event) = pool.process(&[0.4], 0.8).unwrap();
        assert_eq!(event, UpdateEvent::Appended(0));
        // prediction precedes the update and matches the lone expert
        assert_eq!(pred.mean, before.mean);
        assert_eq!(pred.variance, before.variance);
        let (m, v) = pool.expert(0).predict(&h1(), &[0.4], 1e-12).unwrap();
        // the pool has one expert but it now holds the new point too
        assert_ne!(pred.mean, m);
        assert!(v <= pred.variance);
    }

    #[test]
    fn fast_mode_full_candidates_spawn_without_touching_data() {
        let config = PoolConfig {
            capacity: 2,
            max_agg: 2,
            ..cfg()
        };
        let mut pool = Pool::new(h1(), config).unwrap();
        for x in [0.0, 0.1, 5.0, 5.1] {
            pool.process(&[x], x).unwrap();
        }
        assert_eq!(pool.num_experts(), 2);
        let sizes: Vec<usize> = pool.experts().map(|(_, e)| e.len()).collect();
        let (_, event) = pool.process(&[0.05], 0.0).unwrap();
        assert!(matches!(event, UpdateEvent::Spawned(_)));
        assert_eq!(pool.num_experts(), 3);
        for (id, e) in pool.experts() {
            if id < 2 {
                assert_eq!(e.len(), sizes[id]);
            }
        }
    }

    #[test]
    fn dense_mode_replaces_when_central_and_trigger_fires() {
        let config = PoolConfig {
            mode: Mode::Dense,
            capacity: 2,
            max_agg: 1,
            ..cfg()
        };
        let mut pool = Pool::new(h1(), config).unwrap();
        pool.process(&[0.0], 0.0).unwrap();
        pool.process(&[3.0], 0.1).unwrap(); // same expert, now full, center 1.5
        assert_eq!(pool.num_experts(), 1);
        let (_, event) = pool.process(&[1.4], 0.2).unwrap();
        assert_eq!(event, UpdateEvent::Replaced(0));
        assert_eq!(pool.num_experts(), 1);
        assert_eq!(pool.expert(0).len(), 2);
        assert_eq!(pool.expert(0).dropped_center().unwrap(), &[3.0]);
    }

    #[test]
    fn dense_mode_spawns_when_new_point_not_central() {
        let config = PoolConfig {
            mode: Mode::Dense,
            capacity: 2,
            max_agg: 1,
            ..cfg()
        };
        let mut pool = Pool::new(h1(), config).unwrap();
        pool.process(&[0.0], 0.0).unwrap();
        pool.process(&[0.2], 0.1).unwrap();
        // far point: every held point is more central, no replacement
        let (_, event) = pool.process(&[4.0], 0.3).unwrap();
        assert!(matches!(event, UpdateEvent::Spawned(_)));
        assert_eq!(pool.num_experts(), 2);
    }

    #[test]
    fn insertion_examples() {
        // lone expert: new center goes right
        let config = PoolConfig {
            capacity: 1,
            ..cfg()
        };
        let mut pool = pool_with_centers(&[0.0], config.clone());
        assert_eq!(pool.insertion_index(&[1.0], 0).unwrap(), 1);
        let (_, event) = pool.process(&[1.0], 0.0).unwrap();
        assert_eq!(event, UpdateEvent::Spawned(1));
        assert_eq!(pool.order().len(), 2);

        // centers [0], [10]; nearest is position 0; missing left neighbor is
        // infinitely far so the finite right distance wins
        let mut pool = pool_with_centers(&[0.0, 10.0], config);
        pool.nu_prev = 0;
        assert_eq!(pool.insertion_index(&[4.0], 0).unwrap(), 1);
        let (_, event) = pool.process(&[4.0], 0.0).unwrap();
        assert_eq!(event, UpdateEvent::Spawned(1));
        let centers: Vec<f64> = pool
            .order()
            .iter()
            .map(|&id| pool.expert(id).center()[0])
            .collect();
        assert_eq!(centers, vec![0.0, 4.0, 10.0]);
    }

    #[test]
    fn insertion_tie_goes_left() {
        let pool = pool_at_positions(&[0.0, 4.0, 2.0], 2.0, cfg());
        // x = 1 is equidistant from the neighbors at positions 0 and 2
        assert_eq!(pool.insertion_index(&[1.0], 1).unwrap(), 1);
    }

    #[test]
    fn insertion_missing_right_neighbor_goes_left() {
        let pool = pool_at_positions(&[0.0, 2.0], 2.0, cfg());
        // right neighbor of position 1 is missing: infinite distance loses
        assert_eq!(pool.insertion_index(&[4.0], 1).unwrap(), 1);
    }

    #[test]
    fn predict_only_is_pure_and_empty_pool_returns_prior() {
        let pool = Pool::new(h1(), cfg()).unwrap();
        let p = pool.predict_only(&[1.0]).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.variance, pool.config().prior_var);

        let pool = pool_with_centers(&[0.0, 0.3, 0.6], cfg());
        let a = pool.predict_only(&[0.2]).unwrap();
        let b = pool.predict_only(&[0.2]).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
    }

    #[test]
    fn predict_only_single_agg_equals_nearest_expert() {
        let config = PoolConfig {
            capacity: 1,
            max_agg: 1,
            ..cfg()
        };
        let pool = pool_with_centers(&[0.0, 2.0], config);
        let p = pool.predict_only(&[1.9]).unwrap();
        let id = pool.order()[1];
        let (m, v) = pool.expert(id).predict(&h1(), &[1.9], 1e-12).unwrap();
        assert!((p.mean - m).abs() < 1e-15);
        assert!((p.variance - v).abs() < 1e-15);
    }

    #[test]
    fn max_agg_clamps_to_available_experts() {
        let config = PoolConfig {
            capacity: 1,
            max_agg: 4,
            ..cfg()
        };
        let pool = pool_with_centers(&[0.0, 0.5, 1.0], config);
        let p = pool.predict_only(&[0.5]).unwrap();
        assert_eq!(p.contributions.len(), 3);
    }

    #[test]
    fn prediction_precedes_update() {
        let mut pool = Pool::new(h1(), cfg()).unwrap();
        let mut t = 0.0f64;
        for i in 0..60 {
            t += 0.13;
            let x = [3.0 * (0.11 * i as f64).sin()];
            let before = pool.predict_only(&x).unwrap();
            let (pred, _) = pool.process(&x, t.sin()).unwrap();
            assert_eq!(pred.mean.to_bits(), before.mean.to_bits());
            assert_eq!(pred.variance.to_bits(), before.variance.to_bits());
        }
    }

    #[test]
    fn capacity_never_exceeded_and_order_is_bijection() {
        let config = PoolConfig {
            capacity: 3,
            mode: Mode::Dense,
            ..cfg()
        };
        let mut pool = Pool::new(h1(), config).unwrap();
        for i in 0..200 {
            let x = [5.0 * ((i as f64) * 0.17).sin()];
            pool.process(&x, x[0].cos()).unwrap();
            for (_, e) in pool.experts() {
                assert!(e.len() <= 3);
            }
        }
        let mut ids: Vec<usize> = pool.order().to_vec();
        ids.sort_unstable();
        let expected: Vec<usize> = (0..pool.num_experts()).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn hard_budget_rejects_when_all_candidates_full() {
        let config = PoolConfig {
            capacity: 1,
            max_agg: 2,
            max_experts: Some(2),
            ..cfg()
        };
        let mut pool = Pool::new(h1(), config).unwrap();
        pool.process(&[0.0], 0.0).unwrap();
        pool.process(&[1.0], 0.1).unwrap();
        assert_eq!(pool.num_experts(), 2);
        let (_, event) = pool.process(&[0.5], 0.2).unwrap();
        assert!(matches!(event, UpdateEvent::RejectedFullFast(_)));
        assert_eq!(pool.num_experts(), 2);
        assert_eq!(pool.total_points(), 2);
    }

    #[test]
    fn decay_applies_on_spawn_path_only_by_default() {
        let config = PoolConfig {
            capacity: 1,
            ..cfg()
        };
        let mut pool = Pool::new(h1(), config).unwrap();
        pool.process(&[0.0], 0.0).unwrap();
        // first expert decayed once at its own spawn (it is not in the
        // aggregation set of that call)
        let gamma = pool.config().decay;
        assert!((pool.expert(0).theta() - gamma).abs() < 1e-15);

        // append path: no decay (the candidate gets reset to 1)
        let mut pool2 = Pool::new(
            h1(),
            PoolConfig {
                capacity: 10,
                ..cfg()
            },
        )
        .unwrap();
        pool2.process(&[0.0], 0.0).unwrap();
        pool2.process(&[0.1], 0.0).unwrap();
        assert_eq!(pool2.expert(0).theta(), 1.0);

        // spawn path decays experts outside the aggregation set
        let (_, e) = pool.process(&[8.0], 0.0).unwrap();
        assert!(matches!(e, UpdateEvent::Spawned(_)));
        // expert 0 was the only candidate (in the set, reset to 1);
        // the new expert 1 decays once at birth
        assert_eq!(pool.expert(0).theta(), 1.0);
        assert!((pool.expert(1).theta() - gamma).abs() < 1e-15);
    }

    #[test]
    fn decay_every_step_flag_decays_on_append_path() {
        let config = PoolConfig {
            capacity: 4,
            max_agg: 1,
            decay_every_step: true,
            ..cfg()
        };
        let gamma = config.decay;
        let mut pool = pool_at_positions(&[0.0, 6.0], 0.0, config);
        pool.nu_prev = 0;
        let (_, event) = pool.process(&[0.1], 0.2).unwrap();
        assert_eq!(event, UpdateEvent::Appended(0));
        assert_eq!(pool.expert(0).theta(), 1.0);
        assert!((pool.expert(1).theta() - gamma).abs() < 1e-15);
    }

    #[test]
    fn softmax_weighting_favors_the_nearer_expert() {
        let base = PoolConfig {
            max_agg: 2,
            ..cfg()
        };
        let uniform = pool_at_positions(&[0.0, 1.0], 0.4, base.clone());
        let softmax = pool_at_positions(
            &[0.0, 1.0],
            0.4,
            PoolConfig {
                weighting: Weighting::SoftmaxSimilarity,
                ..base
            },
        );
        // query closer to the expert at 0: softmax shifts mean weight to it
        let q = [0.2];
        let pu = uniform.predict_only(&q).unwrap();
        let ps = softmax.predict_only(&q).unwrap();
        let weight_of = |p: &crate::aggregate::Prediction, id: usize| {
            p.contributions
                .iter()
                .find(|c| c.expert_id == id)
                .unwrap()
                .mean_weight
        };
        assert!(weight_of(&ps, 0) > weight_of(&pu, 0));
        let sum: f64 = ps.contributions.iter().map(|c| c.mean_weight).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_gp_reduction_small() {
        // single expert, max_agg 1, wide window: pool equals one exact GP
        let config = PoolConfig {
            capacity: 100,
            max_agg: 1,
            max_window: 0,
            aggregation: Aggregation::GPoe,
            ..PoolConfig::default()
        };
        let h = h1();
        let mut pool = Pool::new(h.clone(), config).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..30 {
            let x = 2.0 * ((i as f64) * 0.37).sin();
            let y = (2.0 * x).cos();
            pool.process(&[x], y).unwrap();
            xs.push(x);
            ys.push(y);
        }
        assert_eq!(pool.num_experts(), 1);
        let q = [0.77];
        let p = pool.predict_only(&q).unwrap();
        let (m, v) = pool.expert(0).predict(&h, &q, 1e-12).unwrap();
        assert!((p.mean - m).abs() < 1e-12);
        assert!((p.variance - v).abs() < 1e-12);
    }
}
