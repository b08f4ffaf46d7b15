//! Small dense square matrices, stored row-major.

use serde::Serialize;

use crate::cubic::{StochCheck, StochKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquareMatrix {
    m: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(m: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || m > crate::cubic::MAX_DIM {
            return Err(Error::UnsupportedDimension(m));
        }
        if data.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                found: data.len(),
            });
        }
        if let Some(offset) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { offset });
        }
        Ok(SquareMatrix { m, data })
    }

    /// Caller guarantees `data.len() == m*m`; finiteness is inherited from
    /// finite inputs.
    pub(crate) fn from_vec_unchecked(m: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), m * m);
        SquareMatrix { m, data }
    }

    pub fn from_rows<const N: usize>(rows: [[f64; N]; N]) -> Result<Self> {
        Self::new(N, rows.iter().flatten().copied().collect())
    }

    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..m * m).map(|ik| f(ik / m, ik % m)).collect();
        Self::new(m, data)
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::from_fn(m, |i, k| if i == k { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.m + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.m).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.m).map(|k| (0..self.m).map(|i| self.get(i, k)).sum()).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn same_dim(&self, other: &SquareMatrix) -> Result<()> {
        if self.m == other.m {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.m,
                found: other.m,
            })
        }
    }

    /// Row-by-column product.
    pub fn matmul(&self, other: &SquareMatrix) -> Result<Self> {
        self.same_dim(other)?;
        let m = self.m;
        Self::from_fn(m, |i, k| (0..m).map(|j| self.get(i, j) * other.get(j, k)).sum())
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> Result<f64> {
        self.same_dim(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub fn determinant(&self) -> f64 {
        if self.m == 2 {
            return self.data[0] * self.data[3] - self.data[1] * self.data[2];
        }
        match lu(self) {
            Some((lu, _, sign)) => (0..self.m).map(|i| lu[i * self.m + i]).product::<f64>() * sign,
            None => 0.0,
        }
    }

    /// Inverse by the closed form for `m = 2` and Gaussian elimination with
    /// partial pivoting otherwise. Fails when `|det| <= det_tol`.
    pub fn inverse(&self, det_tol: f64) -> Result<Self> {
        let det = self.determinant();
        if !(det.abs() > det_tol) {
            return Err(Error::Domain(format!(
                "matrix is singular (|det| = {:e} <= {det_tol:e})",
                det.abs()
            )));
        }
        let m = self.m;
        if m == 2 {
            let [a, b, c, d] = [self.data[0], self.data[1], self.data[2], self.data[3]];
            return Self::new(2, vec![d / det, -b / det, -c / det, a / det]);
        }
        let (lu, perm, _) = lu(self).ok_or_else(|| Error::Domain("matrix is singular".into()))?;
        let mut inv = vec![0.0; m * m];
        for col in 0..m {
            // solve L U x = P e_col
            let mut x: Vec<f64> = (0..m).map(|i| if perm[i] == col { 1.0 } else { 0.0 }).collect();
            for i in 0..m {
                for j in 0..i {
                    x[i] -= lu[i * m + j] * x[j];
                }
            }
            for i in (0..m).rev() {
                for j in i + 1..m {
                    x[i] -= lu[i * m + j] * x[j];
                }
                x[i] /= lu[i * m + i];
            }
            for i in 0..m {
                inv[i * m + col] = x[i];
            }
        }
        Self::new(m, inv)
    }

    pub fn is_square_stochastic(&self, kind: StochKind, tol: f64) -> Result<bool> {
        Ok(self.stochastic_check(kind, tol)?.ok)
    }

    pub fn stochastic_check(&self, kind: StochKind, tol: f64) -> Result<StochCheck> {
        let dev = |sums: Vec<f64>| sums.into_iter().map(|s| (s - 1.0).abs()).collect::<Vec<_>>();
        let deviations = match kind {
            StochKind::Left => dev(self.col_sums()),
            StochKind::Right => dev(self.row_sums()),
            StochKind::Doubly => {
                let mut d = dev(self.row_sums());
                d.extend(dev(self.col_sums()));
                d
            }
            other => return Err(Error::Domain(format!("{} is a cubic-matrix kind", other.label()))),
        };
        Ok(StochCheck::from_parts(self.min_entry(), deviations, tol))
    }
}

/// Doolittle LU with partial pivoting. Returns packed LU, the row
/// permutation and the permutation sign, or `None` on a zero pivot.
fn lu(a: &SquareMatrix) -> Option<(Vec<f64>, Vec<usize>, f64)> {
    let m = a.m;
    let mut lu = a.data.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut sign = 1.0;
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| lu[x * m + col].abs().total_cmp(&lu[y * m + col].abs()))
            .expect("non-empty range");
        if lu[pivot * m + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for k in 0..m {
                lu.swap(pivot * m + k, col * m + k);
            }
            perm.swap(pivot, col);
            sign = -sign;
        }
        for row in col + 1..m {
            let f = lu[row * m + col] / lu[col * m + col];
            lu[row * m + col] = f;
            for k in col + 1..m {
                lu[row * m + k] -= f * lu[col * m + k];
            }
        }
    }
    Some((lu, perm, sign))
}
