//! Packed lower-triangular Cholesky factors with incremental row appends.
//!
//! Experts only ever grow their factor one row at a time (an append costs
//! O(N^2)) or rebuild it from scratch after a replacement (O(N^3)), so a
//! packed `Vec<f64>` is all the structure we need.

use crate::error::{Result, SkyGpError};

/// Lower-triangular factor L with L * L^T = K + sigma_n^2 I.
/// Row i occupies entries [i*(i+1)/2, i*(i+1)/2 + i].
#[derive(Debug, Clone, Default)]
pub struct CholeskyFactor {
    data: Vec<f64>,
    n: usize,
}

impl CholeskyFactor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factorize a symmetric matrix given in packed lower-triangular
    /// row-major order (`n*(n+1)/2` entries).
    pub fn from_packed(packed: &[f64], n: usize) -> Result<Self> {
        assert_eq!(packed.len(), n * (n + 1) / 2);
        let mut l = Self {
            data: Vec::with_capacity(packed.len()),
            n: 0,
        };
        for i in 0..n {
            let row = &packed[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
            l.push_row(&row[..i], row[i])?;
        }
        Ok(l)
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1]
    }

    /// Entry L[i][j] for j <= i.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (i + 1) / 2 + j]
    }

    /// Append one row: `cov` holds the covariances against the existing
    /// points and `diag` the new diagonal entry (k(x,x) + sigma_n^2).
    ///
    /// Solves L * l12 = cov, then l22 = sqrt(diag - |l12|^2). A non-positive
    /// pivot leaves the factor untouched and reports degeneracy so the caller
    /// can retry with jitter.
    pub fn push_row(&mut self, cov: &[f64], diag: f64) -> Result<()> {
        assert_eq!(cov.len(), self.n);
        let mut l12 = cov.to_vec();
        // forward substitution against the existing rows
        for i in 0..self.n {
            let row = self.row(i);
            let mut s = l12[i];
            for j in 0..i {
                s -= row[j] * l12[j];
            }
            l12[i] = s / row[i];
        }
        let pivot2 = diag - l12.iter().map(|v| v * v).sum::<f64>();
        if !(pivot2 > 0.0) {
            return Err(SkyGpError::NumericalDegeneracy(format!(
                "non-positive Cholesky pivot {pivot2:.3e} at row {}",
                self.n
            )));
        }
        self.data.extend_from_slice(&l12);
        self.data.push(pivot2.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Solve L z = b by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z = b.to_vec();
        for i in 0..self.n {
            let row = self.row(i);
            let mut s = z[i];
            for j in 0..i {
                s -= row[j] * z[j];
            }
            z[i] = s / row[i];
        }
        z
    }

    /// Solve L^T z = b by backward substitution.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut z = b.to_vec();
        for i in (0..self.n).rev() {
            let mut s = z[i];
            for k in i + 1..self.n {
                s -= self.get(k, i) * z[k];
            }
            z[i] = s / self.get(i, i);
        }
        z
    }

    /// Solve (L L^T) z = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Reconstruct L L^T in packed lower-triangular order (test support).
    #[cfg(test)]
    pub fn reconstruct_packed(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j {
                    s += self.get(i, k) * self.get(j, k);
                }
                out.push(s);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorizes_and_solves_spd_system() {
        // K = [[4,2,1],[2,5,3],[1,3,6]] packed lower
        let packed = [4.0, 2.0, 5.0, 1.0, 3.0, 6.0];
        let l = CholeskyFactor::from_packed(&packed, 3).unwrap();
        let rec = l.reconstruct_packed();
        for (a, b) in rec.iter().zip(packed.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // check solve against LL^T z = b
        let b = [1.0, -2.0, 0.5];
        let z = l.solve(&b);
        // multiply back: K z
        let k = [[4.0, 2.0, 1.0], [2.0, 5.0, 3.0], [1.0, 3.0, 6.0]];
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| k[i][j] * z[j]).sum();
            assert!((s - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn incremental_rows_match_batch() {
        let packed = [2.0, 0.5, 3.0, 0.2, 1.0, 4.0, -0.3, 0.4, 0.9, 5.0];
        let batch = CholeskyFactor::from_packed(&packed, 4).unwrap();
        let mut inc = CholeskyFactor::new();
        inc.push_row(&[], 2.0).unwrap();
        inc.push_row(&[0.5], 3.0).unwrap();
        inc.push_row(&[0.2, 1.0], 4.0).unwrap();
        inc.push_row(&[-0.3, 0.4, 0.9], 5.0).unwrap();
        for i in 0..4 {
            for j in 0..=i {
                assert!((batch.get(i, j) - inc.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_positive_pivot_is_rejected_and_factor_unchanged() {
        let mut l = CholeskyFactor::new();
        l.push_row(&[], 1.0).unwrap();
        let err = l.push_row(&[1.0], 1.0); // duplicate point, zero pivot
        assert!(matches!(err, Err(SkyGpError::NumericalDegeneracy(_))));
        assert_eq!(l.len(), 1);
        l.push_row(&[0.5], 1.0).unwrap();
        assert_eq!(l.len(), 2);
    }
}
