//! Dense cubic matrices and the products defined on them.
//!
//! A cubic matrix of dimension `m` holds `m³` reals `q[i][j][k]` with all
//! indices in `0..m`. Storage is a flat row-major array with
//! `offset = i·m² + j·m + k`. The same layout is used by every file format.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::square::SquareMatrix;

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;

/// Default absolute tolerance for stochasticity sums.
pub const STOCH_TOL: f64 = 1e-12;

/// Kinds of stochasticity for cubic and square matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochKind {
    /// Σ_{i,j} p_ijk = 1 for every k.
    #[serde(rename = "12")]
    OneTwo,
    /// Σ_{i,k} p_ijk = 1 for every j.
    #[serde(rename = "13")]
    OneThree,
    /// Σ_{j,k} p_ijk = 1 for every i.
    #[serde(rename = "23")]
    TwoThree,
    /// Σ_k p_ijk = 1 for every (i, j).
    #[serde(rename = "3")]
    Three,
    /// (2,3)-stochastic with Σ_i p_ijk = 1/m for every (j, k).
    TwiceStochastic,
    /// Square: every column sums to 1.
    Left,
    /// Square: every row sums to 1.
    Right,
    /// Square: rows and columns sum to 1.
    Doubly,
}

impl StochKind {
    pub fn is_cubic(self) -> bool {
        matches!(
            self,
            StochKind::OneTwo
                | StochKind::OneThree
                | StochKind::TwoThree
                | StochKind::Three
                | StochKind::TwiceStochastic
        )
    }

    pub fn is_square(self) -> bool {
        !self.is_cubic()
    }

    pub fn label(self) -> &'static str {
        match self {
            StochKind::OneTwo => "(1,2)-stochastic",
            StochKind::OneThree => "(1,3)-stochastic",
            StochKind::TwoThree => "(2,3)-stochastic",
            StochKind::Three => "3-stochastic",
            StochKind::TwiceStochastic => "twice stochastic",
            StochKind::Left => "left stochastic",
            StochKind::Right => "right stochastic",
            StochKind::Doubly => "doubly stochastic",
        }
    }
}

/// Outcome of a stochasticity test: the verdict plus every defining sum's
/// absolute deviation from its target, in index order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StochCheck {
    pub ok: bool,
    pub min_entry: f64,
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

impl StochCheck {
    pub(crate) fn from_parts(min_entry: f64, deviations: Vec<f64>, tol: f64) -> Self {
        let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
        StochCheck {
            ok: min_entry >= -tol && max_deviation <= tol,
            min_entry,
            deviations,
            max_deviation,
        }
    }
}

pub(crate) fn check_dim(m: usize) -> Result<()> {
    if (MIN_DIM..=MAX_DIM).contains(&m) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicMatrix {
    m: usize,
    data: Vec<f64>,
}

impl CubicMatrix {
    pub fn new(m: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(m)?;
        if data.len() != m * m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m * m,
                found: data.len(),
            });
        }
        if let Some(offset) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { offset });
        }
        Ok(CubicMatrix { m, data })
    }

    pub fn zeros(m: usize) -> Result<Self> {
        check_dim(m)?;
        Ok(CubicMatrix {
            m,
            data: vec![0.0; m * m * m],
        })
    }

    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dim(m)?;
        let mut data = Vec::with_capacity(m * m * m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(m, data)
    }

    /// The unit matrix `E_ijk`.
    pub fn basis(m: usize, i: usize, j: usize, k: usize) -> Result<Self> {
        let mut out = Self::zeros(m)?;
        for index in [i, j, k] {
            if index >= m {
                return Err(Error::IndexOutOfRange { index, m });
            }
        }
        let o = out.offset(i, j, k);
        out.data[o] = 1.0;
        Ok(out)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.m + j) * self.m + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn same_dim(&self, other: &CubicMatrix) -> Result<()> {
        if self.m == other.m {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.m,
                found: other.m,
            })
        }
    }

    /// `alpha·a + beta·b`.
    pub fn lin_comb(alpha: f64, a: &CubicMatrix, beta: f64, b: &CubicMatrix) -> Result<Self> {
        a.same_dim(b)?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| alpha * x + beta * y).collect();
        Self::new(a.m, data)
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.m, self.data.iter().map(|x| alpha * x).collect())
    }

    pub fn max_abs_diff(&self, other: &CubicMatrix) -> Result<f64> {
        self.same_dim(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Maksimov 0-product: `c_ijr = Σ_k a_ijk · b_kjr`.
    pub fn mul_maksimov0(&self, other: &CubicMatrix) -> Result<Self> {
        self.same_dim(other)?;
        let m = self.m;
        Self::from_fn(m, |i, j, r| {
            (0..m).map(|k| self.get(i, j, k) * other.get(k, j, r)).sum()
        })
    }

    /// Maksimov a-product: `c_ijr = Σ_{l,n : a(l,n)=j} Σ_k a_ilk · b_knr`.
    pub fn mul_maksimov_a(&self, other: &CubicMatrix, op: &BinaryOpTable) -> Result<Self> {
        self.same_dim(other)?;
        if op.dim() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: op.dim(),
            });
        }
        let m = self.m;
        let mut out = vec![0.0; m * m * m];
        for i in 0..m {
            for l in 0..m {
                for n in 0..m {
                    let j = op.apply(l, n);
                    for r in 0..m {
                        let s: f64 = (0..m).map(|k| self.get(i, l, k) * other.get(k, n, r)).sum();
                        out[(i * m + j) * m + r] += s;
                    }
                }
            }
        }
        Self::new(m, out)
    }

    /// Product through an explicit table of structural constants, the
    /// bilinear extension of `E_ijk * E_lnr = Σ_uvw C^{uvw}_{ijk,lnr} E_uvw`.
    pub fn mul_general(&self, other: &CubicMatrix, mu: &StructConstants) -> Result<Self> {
        self.same_dim(other)?;
        if mu.dim() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: mu.dim(),
            });
        }
        let mut out = vec![0.0; self.data.len()];
        for (&(p, q), terms) in &mu.coeffs {
            let w = self.data[p] * other.data[q];
            if w == 0.0 {
                continue;
            }
            for &(u, c) in terms {
                out[u] += w * c;
            }
        }
        Self::new(self.m, out)
    }

    pub fn is_stochastic(&self, kind: StochKind, tol: f64) -> Result<StochCheck> {
        let m = self.m;
        let min_entry = self.min_entry();
        let sum_over = |fix: &dyn Fn(usize, usize) -> (usize, usize, usize)| -> f64 {
            let mut s = 0.0;
            for x in 0..m {
                for y in 0..m {
                    let (i, j, k) = fix(x, y);
                    s += self.get(i, j, k);
                }
            }
            s
        };
        let deviations: Vec<f64> = match kind {
            StochKind::OneTwo => (0..m).map(|k| (sum_over(&|i, j| (i, j, k)) - 1.0).abs()).collect(),
            StochKind::OneThree => (0..m).map(|j| (sum_over(&|i, k| (i, j, k)) - 1.0).abs()).collect(),
            StochKind::TwoThree => (0..m).map(|i| (sum_over(&|j, k| (i, j, k)) - 1.0).abs()).collect(),
            StochKind::Three => {
                let mut d = Vec::with_capacity(m * m);
                for i in 0..m {
                    for j in 0..m {
                        let s: f64 = (0..m).map(|k| self.get(i, j, k)).sum();
                        d.push((s - 1.0).abs());
                    }
                }
                d
            }
            StochKind::TwiceStochastic => {
                let mut d: Vec<f64> = (0..m).map(|i| (sum_over(&|j, k| (i, j, k)) - 1.0).abs()).collect();
                let target = 1.0 / m as f64;
                for j in 0..m {
                    for k in 0..m {
                        let s: f64 = (0..m).map(|i| self.get(i, j, k)).sum();
                        d.push((s - target).abs());
                    }
                }
                d
            }
            StochKind::Left | StochKind::Right | StochKind::Doubly => {
                return Err(Error::Domain(format!("{} is a square-matrix kind", kind.label())))
            }
        };
        Ok(StochCheck::from_parts(min_entry, deviations, tol))
    }

    /// Sum over the middle index: `c̄_ik = Σ_j p_ijk`.
    pub fn contract_second(&self) -> SquareMatrix {
        let m = self.m;
        let data = (0..m * m)
            .map(|ik| {
                let (i, k) = (ik / m, ik % m);
                (0..m).map(|j| self.get(i, j, k)).sum()
            })
            .collect();
        SquareMatrix::from_vec_unchecked(m, data)
    }

    /// The `j`-th layer `(p_ijk)_{i,k}`.
    pub fn slice_second(&self, j: usize) -> Result<SquareMatrix> {
        let m = self.m;
        if j >= m {
            return Err(Error::IndexOutOfRange { index: j, m });
        }
        let data = (0..m * m).map(|ik| self.get(ik / m, j, ik % m)).collect();
        Ok(SquareMatrix::from_vec_unchecked(m, data))
    }

    /// The block `(q_ijk)_{j,k}` for fixed `i`.
    pub fn slice_first(&self, i: usize) -> Result<SquareMatrix> {
        let m = self.m;
        if i >= m {
            return Err(Error::IndexOutOfRange { index: i, m });
        }
        let start = i * m * m;
        Ok(SquareMatrix::from_vec_unchecked(
            m,
            self.data[start..start + m * m].to_vec(),
        ))
    }

    /// Inverse of [`slice_second`](Self::slice_second): layer `j` becomes
    /// `(p_ijk)_{i,k}`.
    pub fn from_second_slices(layers: &[SquareMatrix]) -> Result<Self> {
        let m = layers.len();
        check_dim(m)?;
        for layer in layers {
            if layer.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: layer.dim(),
                });
            }
        }
        Self::from_fn(m, |i, j, k| layers[j].get(i, k))
    }

    /// Clamp entries in `[-tol, 0)` to zero. Entries below `-tol` are an error.
    pub fn clamp_negative(&self, tol: f64) -> Result<Self> {
        let mut data = self.data.clone();
        for (offset, x) in data.iter_mut().enumerate() {
            if *x < -tol {
                return Err(Error::Domain(format!("entry {offset} = {x} is below -{tol}")));
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        Self::new(self.m, data)
    }

    pub fn to_json(&self) -> String {
        let repr = CubicRepr {
            m: self.m,
            entries: self.data.clone(),
        };
        serde_json::to_string(&repr).expect("plain numbers always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: CubicRepr = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(repr.m, repr.entries)
    }

    /// Plain text: `m` on the first line, then one line of `m` numbers per
    /// `(i, j)` pair in layout order.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.m);
        for row in self.data.chunks(self.m) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let m: usize = tokens
            .next()
            .ok_or_else(|| Error::Format("empty input".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("bad dimension: {e}")))?;
        let data = tokens
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(m, data)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CubicRepr {
    m: usize,
    entries: Vec<f64>,
}

/// An associative binary operation on `{0, …, m-1}`, checked at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryOpTable {
    m: usize,
    table: Vec<usize>,
}

impl BinaryOpTable {
    /// `table[x·m + y] = a(x, y)`.
    pub fn new(m: usize, table: Vec<usize>) -> Result<Self> {
        check_dim(m)?;
        if table.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                found: table.len(),
            });
        }
        if let Some(&index) = table.iter().find(|&&v| v >= m) {
            return Err(Error::IndexOutOfRange { index, m });
        }
        let op = BinaryOpTable { m, table };
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    if op.apply(op.apply(x, y), z) != op.apply(x, op.apply(y, z)) {
                        return Err(Error::NonAssociative { x, y, z });
                    }
                }
            }
        }
        Ok(op)
    }

    /// Left projection `a₀(x, y) = x`.
    pub fn projection(m: usize) -> Result<Self> {
        Self::new(m, (0..m * m).map(|xy| xy / m).collect())
    }

    #[inline]
    pub fn apply(&self, x: usize, y: usize) -> usize {
        self.table[x * self.m + y]
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn is_projection(&self) -> bool {
        (0..self.m * self.m).all(|xy| self.table[xy] == xy / self.m)
    }
}

/// Sparse structural constants `C^{uvw}_{ijk,lnr}`; absent coefficients are 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructConstants {
    m: usize,
    // (offset of ijk, offset of lnr) -> [(offset of uvw, coefficient)]
    coeffs: BTreeMap<(usize, usize), Vec<(usize, f64)>>,
}

impl StructConstants {
    pub fn new(m: usize) -> Result<Self> {
        check_dim(m)?;
        Ok(StructConstants {
            m,
            coeffs: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    fn flat(&self, (i, j, k): (usize, usize, usize)) -> Result<usize> {
        for index in [i, j, k] {
            if index >= self.m {
                return Err(Error::IndexOutOfRange { index, m: self.m });
            }
        }
        Ok((i * self.m + j) * self.m + k)
    }

    /// Adds `value` to the coefficient of `E_uvw` in `E_ijk * E_lnr`.
    pub fn add(
        &mut self,
        ijk: (usize, usize, usize),
        lnr: (usize, usize, usize),
        uvw: (usize, usize, usize),
        value: f64,
    ) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("structural constant {value} is not finite")));
        }
        let key = (self.flat(ijk)?, self.flat(lnr)?);
        let u = self.flat(uvw)?;
        let terms = self.coeffs.entry(key).or_default();
        match terms.iter_mut().find(|(w, _)| *w == u) {
            Some((_, c)) => *c += value,
            None => terms.push((u, value)),
        }
        Ok(())
    }

    pub fn get(
        &self,
        ijk: (usize, usize, usize),
        lnr: (usize, usize, usize),
        uvw: (usize, usize, usize),
    ) -> Result<f64> {
        let key = (self.flat(ijk)?, self.flat(lnr)?);
        let u = self.flat(uvw)?;
        Ok(self
            .coeffs
            .get(&key)
            .and_then(|terms| terms.iter().find(|(w, _)| *w == u))
            .map_or(0.0, |&(_, c)| c))
    }

    /// Number of stored coefficients.
    pub fn nnz(&self) -> usize {
        self.coeffs.values().map(Vec::len).sum()
    }

    /// `E_ijk *₀ E_lnr = δ_kl δ_jn E_ijr`.
    pub fn maksimov0(m: usize) -> Result<Self> {
        let mut mu = Self::new(m)?;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for r in 0..m {
                        mu.add((i, j, k), (k, j, r), (i, j, r), 1.0)?;
                    }
                }
            }
        }
        Ok(mu)
    }

    /// `E_ijk *ₐ E_lnr = δ_kl E_{i a(j,n) r}`.
    pub fn maksimov_a(op: &BinaryOpTable) -> Result<Self> {
        let m = op.dim();
        let mut mu = Self::new(m)?;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for n in 0..m {
                        for r in 0..m {
                            mu.add((i, j, k), (k, n, r), (i, op.apply(j, n), r), 1.0)?;
                        }
                    }
                }
            }
        }
        Ok(mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(m: usize, v: f64) -> CubicMatrix {
        CubicMatrix::from_fn(m, |_, _, _| v).unwrap()
    }

    #[test]
    fn basis_layout() {
        let e = CubicMatrix::basis(2, 0, 0, 0).unwrap();
        assert_eq!(e.as_slice()[0], 1.0);
        assert_eq!(e.as_slice().iter().sum::<f64>(), 1.0);
        let e = CubicMatrix::basis(2, 1, 1, 1).unwrap();
        assert_eq!(e.as_slice()[7], 1.0);
        assert_eq!(e.as_slice().iter().sum::<f64>(), 1.0);
        assert_eq!(
            CubicMatrix::basis(2, 2, 0, 0),
            Err(Error::IndexOutOfRange { index: 2, m: 2 })
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            CubicMatrix::new(2, vec![0.0; 7]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(CubicMatrix::new(1, vec![1.0]), Err(Error::UnsupportedDimension(1)));
        assert_eq!(CubicMatrix::zeros(9), Err(Error::UnsupportedDimension(9)));
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert_eq!(CubicMatrix::new(2, data), Err(Error::NonFinite { offset: 3 }));
    }

    #[test]
    fn maksimov0_basis_examples() {
        let e = |i, j, k| CubicMatrix::basis(2, i, j, k).unwrap();
        assert_eq!(e(0, 0, 0).mul_maksimov0(&e(0, 0, 1)).unwrap(), e(0, 0, 1));
        assert_eq!(e(0, 0, 1).mul_maksimov0(&e(1, 0, 0)).unwrap(), e(0, 0, 0));
        assert_eq!(
            e(0, 0, 1).mul_maksimov0(&e(0, 0, 1)).unwrap(),
            CubicMatrix::zeros(2).unwrap()
        );
        let half = uniform(2, 0.5);
        assert_eq!(half.mul_maksimov0(&half).unwrap(), half);
    }

    #[test]
    fn maksimov_a_hand_example() {
        let a0 = BinaryOpTable::projection(2).unwrap();
        let a = CubicMatrix::lin_comb(
            1.0,
            &CubicMatrix::basis(2, 0, 0, 0).unwrap(),
            1.0,
            &CubicMatrix::basis(2, 0, 0, 1).unwrap(),
        )
        .unwrap();
        let c = a.mul_maksimov_a(&a, &a0).unwrap();
        let mut expected = vec![0.0; 8];
        expected[0] = 1.0;
        expected[1] = 1.0;
        assert_eq!(c.as_slice(), expected.as_slice());

        let zero = CubicMatrix::zeros(2).unwrap();
        assert_eq!(zero.mul_maksimov_a(&a, &a0).unwrap(), zero);
    }

    #[test]
    fn general_product_examples() {
        let mu = StructConstants::maksimov0(2).unwrap();
        let e = |i, j, k| CubicMatrix::basis(2, i, j, k).unwrap();
        assert_eq!(e(0, 0, 0).mul_general(&e(0, 0, 1), &mu).unwrap(), e(0, 0, 1));
        let zero_mu = StructConstants::new(2).unwrap();
        let x = uniform(2, 0.3);
        assert_eq!(x.mul_general(&x, &zero_mu).unwrap(), CubicMatrix::zeros(2).unwrap());
        assert_eq!(mu.nnz(), 16);
        assert_eq!(mu.get((0, 1, 1), (1, 1, 0), (0, 1, 0)).unwrap(), 1.0);
        assert_eq!(mu.get((0, 1, 1), (0, 1, 0), (0, 1, 0)).unwrap(), 0.0);
    }

    #[test]
    fn products_reject_mismatched_dimensions() {
        let a = CubicMatrix::zeros(2).unwrap();
        let b = CubicMatrix::zeros(3).unwrap();
        assert!(a.mul_maksimov0(&b).is_err());
        let op = BinaryOpTable::projection(3).unwrap();
        assert!(a.mul_maksimov_a(&a, &op).is_err());
        let mu = StructConstants::maksimov0(3).unwrap();
        assert!(a.mul_general(&a, &mu).is_err());
    }

    #[test]
    fn non_associative_table_is_rejected() {
        // a(x, y) = 1 - x is not associative on {0, 1}
        let err = BinaryOpTable::new(2, vec![1, 1, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::NonAssociative { .. }));
        // max is associative
        assert!(BinaryOpTable::new(2, vec![0, 1, 1, 1]).is_ok());
        assert!(BinaryOpTable::projection(3).unwrap().is_projection());
    }

    #[test]
    fn uniform_stochasticity() {
        for m in 2..=4 {
            let q = uniform(m, 1.0 / (m * m) as f64);
            assert!(q.is_stochastic(StochKind::OneTwo, STOCH_TOL).unwrap().ok);
            assert!(q.is_stochastic(StochKind::TwoThree, STOCH_TOL).unwrap().ok);
            assert!(!q.is_stochastic(StochKind::Three, STOCH_TOL).unwrap().ok);
            let twice = q.is_stochastic(StochKind::TwiceStochastic, STOCH_TOL).unwrap();
            assert!(twice.ok);
            assert_eq!(twice.deviations.len(), m + m * m);
        }
        let q = uniform(2, 0.25);
        assert!(q.is_stochastic(StochKind::Left, 1e-12).is_err());
    }

    #[test]
    fn twice_stochastic_needs_both_sums() {
        // (2,3)-stochastic but Σ_i is not 1/m everywhere
        let mut q = CubicMatrix::zeros(2).unwrap().into_vec();
        q[0] = 1.0; // (0,0,0)
        q[4] = 1.0; // (1,0,0)
        let q = CubicMatrix::new(2, q).unwrap();
        assert!(q.is_stochastic(StochKind::TwoThree, 1e-12).unwrap().ok);
        assert!(!q.is_stochastic(StochKind::TwiceStochastic, 1e-12).unwrap().ok);
    }

    #[test]
    fn negative_entry_fails() {
        let mut d = vec![0.25; 8];
        d[0] = 0.5;
        d[1] = -0.25;
        let q = CubicMatrix::new(2, d).unwrap();
        let chk = q.is_stochastic(StochKind::Three, 1e-12).unwrap();
        assert!(!chk.ok);
        assert_eq!(chk.min_entry, -0.25);
        assert!(q.clamp_negative(1e-12).is_err());
        let tiny = CubicMatrix::new(2, vec![-1e-14; 8]).unwrap();
        assert_eq!(tiny.clamp_negative(1e-12).unwrap().min_entry(), 0.0);
    }

    #[test]
    fn contraction_and_slices() {
        let q = uniform(3, 1.0 / 9.0);
        let c = q.contract_second();
        for i in 0..3 {
            for k in 0..3 {
                assert!((c.get(i, k) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let e = CubicMatrix::basis(2, 0, 1, 0).unwrap();
        let c = e.contract_second();
        assert_eq!(c.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.slice_second(1).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.slice_second(0).unwrap().as_slice(), &[0.0; 4]);
        assert_eq!(e.slice_first(0).unwrap().as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(e.slice_second(2).is_err());
        assert!(e.slice_first(2).is_err());
    }

    #[test]
    fn reassemble_second_slices() {
        let q = CubicMatrix::from_fn(3, |i, j, k| (i * 9 + j * 3 + k) as f64).unwrap();
        let layers: Vec<_> = (0..3).map(|j| q.slice_second(j).unwrap()).collect();
        assert_eq!(CubicMatrix::from_second_slices(&layers).unwrap(), q);
    }

    #[test]
    fn text_and_json_formats() {
        let q = CubicMatrix::from_fn(2, |i, j, k| 0.1 * (i + 2 * j + 4 * k) as f64).unwrap();
        let text = q.to_text();
        assert!(text.starts_with("2\n"));
        assert!(text.ends_with('\n'));
        assert_eq!(CubicMatrix::from_text(&text).unwrap(), q);
        assert_eq!(CubicMatrix::from_json(&q.to_json()).unwrap(), q);
        assert!(CubicMatrix::from_json(r#"{"m":2,"entries":[1,2,3]}"#).is_err());
        assert!(CubicMatrix::from_text("2\n1 2 x").is_err());
        assert!(CubicMatrix::from_text("").is_err());
    }
}
