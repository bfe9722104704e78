//! ARD squared-exponential kernel and the kernel-induced distance.
//!
//! The kernel is the only similarity measure used anywhere in the crate:
//! expert posteriors, expert centers, list ordering and the adaptive search
//! window are all expressed through `eval` and its reciprocal
//! `kernel_distance`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkyGpError};

/// Kernel hyperparameters: one lengthscale per input dimension plus signal
/// and noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Per-dimension lengthscales, all strictly positive.
    pub lengthscales: Vec<f64>,
    /// Signal standard deviation (sigma_f).
    pub signal_dev: f64,
    /// Observation-noise standard deviation (sigma_n).
    pub noise_dev: f64,
}

impl Hyperparameters {
    pub fn new(lengthscales: Vec<f64>, signal_dev: f64, noise_dev: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0)) {
            return Err(SkyGpError::InvalidArgument(
                "lengthscales must be non-empty and strictly positive".into(),
            ));
        }
        if !(signal_dev > 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "signal_dev must be strictly positive".into(),
            ));
        }
        if !(noise_dev >= 0.0) {
            return Err(SkyGpError::InvalidArgument(
                "noise_dev must be non-negative".into(),
            ));
        }
        Ok(Self {
            lengthscales,
            signal_dev,
            noise_dev,
        })
    }

    /// Isotropic shorthand used all over the tests.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_dev: f64, noise_dev: f64) -> Self {
        Self::new(vec![lengthscale; dim], signal_dev, noise_dev)
            .expect("isotropic hyperparameters must be valid")
    }

    /// Input dimension m.
    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Signal variance sigma_f^2, the kernel value at zero distance.
    pub fn signal_var(&self) -> f64 {
        self.signal_dev * self.signal_dev
    }

    /// Noise variance sigma_n^2.
    pub fn noise_var(&self) -> f64 {
        self.noise_dev * self.noise_dev
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(SkyGpError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// k(x, x2) = sigma_f^2 * exp(-0.5 * sum_j ((x_j - x2_j) / l_j)^2)
pub fn eval(h: &Hyperparameters, x: &[f64], x2: &[f64]) -> Result<f64> {
    h.check_dim(x)?;
    h.check_dim(x2)?;
    Ok(eval_unchecked(h, x, x2))
}

/// Same as [`eval`] without the dimension checks; used on hot paths where the
/// inputs come from containers that already enforce the dimension.
/// Clamped at the smallest normal float so extreme distances cannot
/// underflow to zero and blow up the kernel-induced distance.
#[inline]
pub(crate) fn eval_unchecked(h: &Hyperparameters, x: &[f64], x2: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for ((a, b), l) in x.iter().zip(x2).zip(&h.lengthscales) {
        let d = (a - b) / l;
        r2 += d * d;
    }
    (h.signal_var() * (-0.5 * r2).exp()).max(f64::MIN_POSITIVE)
}

/// Covariance vector between a query `x` and the rows of `xs`
/// (`xs` is row-major with `h.dim()` columns).
pub fn eval_vec(h: &Hyperparameters, x: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
    h.check_dim(x)?;
    let m = h.dim();
    if !xs.len().is_multiple_of(m) {
        return Err(SkyGpError::DimensionMismatch {
            expected: m,
            got: xs.len() % m,
        });
    }
    Ok(xs
        .chunks_exact(m)
        .map(|row| eval_unchecked(h, x, row))
        .collect())
}

/// Kernel-induced distance 1 / k(c, x). Always >= 1 / sigma_f^2 and grows
/// monotonically with Euclidean distance for the SE kernel.
pub fn kernel_distance(h: &Hyperparameters, c: &[f64], x: &[f64]) -> Result<f64> {
    Ok(1.0 / eval(h, c, x)?)
}

#[inline]
pub(crate) fn kernel_distance_unchecked(h: &Hyperparameters, c: &[f64], x: &[f64]) -> f64 {
    1.0 / eval_unchecked(h, c, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h2() -> Hyperparameters {
        Hyperparameters::new(vec![1.0, 1.0], 1.0, 0.1).unwrap()
    }

    #[test]
    fn eval_at_same_point_is_signal_variance() {
        let h = h2();
        assert_eq!(eval(&h, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn eval_unit_distance() {
        let h = h2();
        let k = eval(&h, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-12);
        assert!((k - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn eval_anisotropic() {
        let h = Hyperparameters::new(vec![2.0, 1.0], 3.0, 0.0).unwrap();
        let k = eval(&h, &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((k - 9.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((k - 5.458776).abs() < 1e-6);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let h = h2();
        assert!(matches!(
            eval(&h, &[0.0], &[0.0, 0.0]),
            Err(SkyGpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn eval_vec_single_row_equal_to_query() {
        let h = h2();
        let ks = eval_vec(&h, &[0.3, -0.2], &[0.3, -0.2]).unwrap();
        assert_eq!(ks, vec![1.0]);
    }

    #[test]
    fn eval_vec_two_rows_is_definition() {
        let h = h2();
        let x = [0.0, 0.0];
        let x2 = [1.0, 2.0];
        let xs = [x[0], x[1], x2[0], x2[1]];
        let ks = eval_vec(&h, &x, &xs).unwrap();
        assert_eq!(ks[0], eval(&h, &x, &x).unwrap());
        assert_eq!(ks[1], eval(&h, &x, &x2).unwrap());
    }

    #[test]
    fn eval_vec_matches_loop_of_evals() {
        let h = Hyperparameters::new(vec![0.7, 1.3], 1.5, 0.0).unwrap();
        let x = [0.4, -0.9];
        // 5 fixed pseudo-random rows.
        let xs: Vec<f64> = (0..10)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let ks = eval_vec(&h, &x, &xs).unwrap();
        for (s, row) in xs.chunks_exact(2).enumerate() {
            assert_eq!(ks[s], eval(&h, &x, row).unwrap());
        }
    }

    #[test]
    fn kernel_distance_examples() {
        let h1 = Hyperparameters::new(vec![1.0], 1.0, 0.0).unwrap();
        assert!((kernel_distance(&h1, &[0.5], &[0.5]).unwrap() - 1.0).abs() < 1e-15);
        let d = kernel_distance(&h1, &[0.0], &[1.0]).unwrap();
        assert!((d - 0.5f64.exp()).abs() < 1e-12);
        assert!((d - 1.648721).abs() < 1e-6);

        let h = Hyperparameters::new(vec![1.0], 2.0, 0.0).unwrap();
        assert_eq!(kernel_distance(&h, &[3.0], &[3.0]).unwrap(), 0.25);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            ls in proptest::collection::vec(0.1f64..5.0, 3),
            sf in 0.1f64..4.0,
        ) {
            let h = Hyperparameters::new(ls, sf, 0.0).unwrap();
            let kab = eval(&h, &a, &b).unwrap();
            let kba = eval(&h, &b, &a).unwrap();
            prop_assert_eq!(kab, kba);
            prop_assert!(kab > 0.0);
            prop_assert!(kab <= h.signal_var() + 1e-15);
            if a == b {
                prop_assert!((kab - h.signal_var()).abs() < 1e-12);
            }
        }

        #[test]
        fn distance_is_reciprocal_of_eval(
            a in proptest::collection::vec(-5.0f64..5.0, 2),
            b in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let h = Hyperparameters::isotropic(2, 1.0, 1.3, 0.0);
            let k = eval(&h, &a, &b).unwrap();
            let d = kernel_distance(&h, &a, &b).unwrap();
            prop_assert!((d * k - 1.0).abs() < 1e-12);
        }
    }
}
