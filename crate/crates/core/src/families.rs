//! Quadratic stochastic processes: two-parameter families of cubic
//! stochastic matrices satisfying the Kolmogorov-Chapman equation under a
//! Maksimov product.
//!
//! Families of type `(3|0)` are direct sums of right stochastic square
//! processes, one per middle-index layer. Families of type `(12|a₀)` are
//! `(1,2)`-stochastic and compose under `*ₐ` with the left projection
//! `a₀(i, j) = i`; their contraction over the middle index is an ordinary
//! left stochastic Markov process.
//!
//! Every constructor samples its validity conditions on a [`Validation`]
//! grid and fails with [`Error::Construction`] naming the condition and the
//! first counterexample.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::cubic::{BinaryOpTable, CubicMatrix, StochKind};
use crate::error::{Error, Result};
use crate::markov_square::{at, check_times, kce_residual_square, pair_table, Descriptor, SquareProcessFamily};
use crate::square::SquareMatrix;
use crate::timefn::{Property, ScalarTimeFunction};
use crate::verify::{TimeGrid, Validation, VerificationReport, BAND_SLACK, KCE_TOL};

/// Determinant threshold for matrix flows.
pub const DET_TOL: f64 = 1e-10;

/// Tolerance on sums that involve a numerical matrix inverse.
const INVERSE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Product {
    Maksimov0,
    MaksimovA(BinaryOpTable),
}

impl Product {
    pub fn projection(m: usize) -> Result<Self> {
        Ok(Product::MaksimovA(BinaryOpTable::projection(m)?))
    }

    pub fn apply(&self, a: &CubicMatrix, b: &CubicMatrix) -> Result<CubicMatrix> {
        match self {
            Product::Maksimov0 => a.mul_maksimov0(b),
            Product::MaksimovA(op) => a.mul_maksimov_a(b, op),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Product::Maksimov0 => "maksimov0",
            Product::MaksimovA(op) if op.is_projection() => "maksimov_a0",
            Product::MaksimovA(_) => "maksimov_a",
        }
    }
}

type CubicEval = dyn Fn(f64, f64) -> Result<CubicMatrix> + Send + Sync;

#[derive(Clone)]
pub struct CubicProcessFamily {
    m: usize,
    descriptor: Descriptor,
    kind: StochKind,
    product: Product,
    cutoffs: Vec<f64>,
    warnings: Vec<String>,
    eval: Arc<CubicEval>,
}

impl fmt::Debug for CubicProcessFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CubicProcessFamily")
            .field("m", &self.m)
            .field("descriptor", &self.descriptor)
            .field("kind", &self.kind)
            .field("product", &self.product.label())
            .field("cutoffs", &self.cutoffs)
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl CubicProcessFamily {
    /// Wraps an arbitrary evaluator. No validity checks are made here.
    pub fn from_fn(
        m: usize,
        descriptor: Descriptor,
        kind: StochKind,
        product: Product,
        cutoffs: Vec<f64>,
        eval: impl Fn(f64, f64) -> Result<CubicMatrix> + Send + Sync + 'static,
    ) -> Self {
        CubicProcessFamily {
            m,
            descriptor,
            kind,
            product,
            cutoffs,
            warnings: Vec::new(),
            eval: Arc::new(eval),
        }
    }

    pub(crate) fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<CubicMatrix> {
        check_times(s, t)?;
        (self.eval)(s, t)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    pub fn kind(&self) -> StochKind {
        self.kind
    }

    pub fn product(&self) -> &Product {
        &self.product
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    /// Non-fatal findings recorded at construction.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

/// 2×2×2 matrix from the two first-index blocks `(p_0jk)_{j,k}` and
/// `(p_1jk)_{j,k}`.
pub(crate) fn cubic2(block0: [[f64; 2]; 2], block1: [[f64; 2]; 2]) -> Result<CubicMatrix> {
    CubicMatrix::new(
        2,
        vec![
            block0[0][0],
            block0[0][1],
            block0[1][0],
            block0[1][1],
            block1[0][0],
            block1[0][1],
            block1[1][0],
            block1[1][1],
        ],
    )
}

fn nonneg_violation(family: &str, m: &CubicMatrix, s: f64, t: f64) -> Result<()> {
    let min = m.min_entry();
    if min < -BAND_SLACK {
        let offset = m.as_slice().iter().position(|&x| x == min).unwrap_or(0);
        let mm = m.dim();
        return Err(Error::construction(
            family,
            "entry nonnegativity",
            format!("(s={s}, t={t})"),
            format!(
                "P[{},{},{}] = {min}",
                offset / (mm * mm),
                (offset / mm) % mm,
                offset % mm
            ),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// (3|0): direct sums

/// `P[s,t]_ijk = (layer_j)[s,t]_ik`. Every layer must be a right stochastic
/// Markov process; the result is 3-stochastic under `*₀`.
pub fn direct_sum_30(layers: Vec<SquareProcessFamily>, v: &Validation) -> Result<CubicProcessFamily> {
    let m = layers.len();
    crate::cubic::check_dim(m)?;
    let mut cutoffs: Vec<f64> = Vec::new();
    let mut desc = Descriptor::new("direct_sum");
    for (j, layer) in layers.iter().enumerate() {
        if layer.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: layer.dim(),
            });
        }
        let name = &layer.descriptor().name;
        if !layer
            .kinds()
            .iter()
            .any(|k| matches!(k, StochKind::Right | StochKind::Doubly))
        {
            return Err(Error::construction(
                "direct_sum",
                format!("layer {j} ({name}) right stochastic"),
                "declaration",
                format!("declared kinds {:?}", layer.kinds()),
            ));
        }
        for (s, t) in v.pairs(layer.cutoffs()) {
            let u = layer.eval(s, t)?;
            let chk = u.stochastic_check(StochKind::Right, crate::cubic::STOCH_TOL)?;
            if !chk.ok {
                return Err(Error::construction(
                    "direct_sum",
                    format!("layer {j} ({name}) right stochastic"),
                    format!("(s={s}, t={t})"),
                    format!(
                        "max row-sum deviation {}, min entry {}",
                        chk.max_deviation, chk.min_entry
                    ),
                ));
            }
        }
        let grid = TimeGrid::uniform(v.horizon, 25)?.straddling(layer.cutoffs())?;
        let rep = kce_residual_square(layer, &grid, KCE_TOL)?;
        if !rep.passed() {
            let w = rep.worst.expect("failed report has a worst triple");
            return Err(Error::construction(
                "direct_sum",
                format!("layer {j} ({name}) Kolmogorov-Chapman"),
                format!("(s={}, tau={}, t={})", w.s, w.tau.unwrap_or(f64::NAN), w.t),
                format!("residual {}", w.residual),
            ));
        }
        cutoffs.extend_from_slice(layer.cutoffs());
        desc = desc.param(&format!("layer{j}"), layer.descriptor());
    }
    cutoffs.sort_by(f64::total_cmp);
    cutoffs.dedup();
    let layers = Arc::new(layers);
    Ok(CubicProcessFamily::from_fn(
        m,
        desc,
        StochKind::Three,
        Product::Maksimov0,
        cutoffs,
        move |s, t| {
            let slices = layers.iter().map(|l| l.eval(s, t)).collect::<Result<Vec<_>>>()?;
            CubicMatrix::from_second_slices(&slices)
        },
    ))
}

// ---------------------------------------------------------------------------
// (12|a0), m = 2

#[derive(Debug, Clone, PartialEq)]
pub struct M1Params {
    pub g: ScalarTimeFunction,
    pub u11: ScalarTimeFunction,
    pub u21: ScalarTimeFunction,
}

impl M1Params {
    /// `A(s) = ½(g(s) + u11(s) + u21(s))`, the stationary first coordinate.
    pub fn a_of(&self, s: f64) -> Result<f64> {
        Ok(0.5 * (self.g.eval(s)? + self.u11.eval(s)? + self.u21.eval(s)?))
    }
}

/// Lifts the left stochastic `[[g, g], [1-g, 1-g]]` process: blocks
/// `[[u11, u11], [g-u11, g-u11]]` and `[[u21, u21], [1-g-u21, 1-g-u21]]`,
/// all functions of `s` only.
pub fn m1_family(p: M1Params, v: &Validation) -> Result<CubicProcessFamily> {
    const FAM: &str = "m1";
    v.require(FAM, "g", &p.g, Property::InUnitInterval)?;
    v.require_between(FAM, "0 <= u11(s) <= g(s)", &[], |s| {
        Ok((0.0, p.u11.eval(s)?, p.g.eval(s)?))
    })?;
    v.require_between(FAM, "0 <= u21(s) <= 1 - g(s)", &[], |s| {
        Ok((0.0, p.u21.eval(s)?, 1.0 - p.g.eval(s)?))
    })?;
    let desc = Descriptor::new(FAM)
        .param("g", &p.g)
        .param("u11", &p.u11)
        .param("u21", &p.u21);
    Ok(CubicProcessFamily::from_fn(
        2,
        desc,
        StochKind::OneTwo,
        Product::projection(2)?,
        vec![],
        move |s, t| {
            let g = at(&p.g, s, s, t)?;
            let u11 = at(&p.u11, s, s, t)?;
            let u21 = at(&p.u21, s, s, t)?;
            cubic2(
                [[u11, u11], [g - u11, g - u11]],
                [[u21, u21], [1.0 - g - u21, 1.0 - g - u21]],
            )
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct M2Params {
    pub psi: ScalarTimeFunction,
    pub zeta11: ScalarTimeFunction,
    pub zeta21: ScalarTimeFunction,
    pub gamma11: ScalarTimeFunction,
    pub gamma21: ScalarTimeFunction,
    /// `lim Ψ(t)` as `t → ∞`, when known.
    pub psi_inf: Option<f64>,
}

/// The lift of the doubly stochastic `½[[1+r, 1-r], [1-r, 1+r]]` process,
/// `r = Ψ(t)/Ψ(s)`.
///
/// Validity is checked entrywise: with `Ψ(t) <= Ψ(s)` every entry is
/// nonnegative iff `|γ11|Ψ(t) <= ζ11`, `|1/Ψ(s) - γ11|Ψ(t) <= 1 - ζ11`,
/// `|γ21|Ψ(t) <= ζ21` and `|1/Ψ(s) + γ21|Ψ(t) <= 1 - ζ21`. These are
/// tested at sampled pairs and at the `t → s⁺` limit, which bounds every
/// `t > s` when `Ψ` is decreasing.
pub fn m2_family(p: M2Params, v: &Validation) -> Result<CubicProcessFamily> {
    const FAM: &str = "m2";
    v.require(FAM, "psi", &p.psi, Property::Positive)?;
    v.require(FAM, "psi", &p.psi, Property::Decreasing)?;
    v.require(FAM, "zeta11", &p.zeta11, Property::InUnitInterval)?;
    v.require(FAM, "zeta21", &p.zeta21, Property::InUnitInterval)?;

    let bands = |s: f64, psi_t: f64| -> Result<[(String, f64, f64); 4]> {
        let inv_s = 1.0 / p.psi.eval(s)?;
        let (z11, z21) = (p.zeta11.eval(s)?, p.zeta21.eval(s)?);
        let (g11, g21) = (p.gamma11.eval(s)?, p.gamma21.eval(s)?);
        Ok([
            ("gamma11 band: |gamma11|psi(t) <= zeta11".into(), g11.abs() * psi_t, z11),
            (
                "gamma11 band: |1/psi(s) - gamma11|psi(t) <= 1 - zeta11".into(),
                (inv_s - g11).abs() * psi_t,
                1.0 - z11,
            ),
            ("gamma21 band: |gamma21|psi(t) <= zeta21".into(), g21.abs() * psi_t, z21),
            (
                "gamma21 band: |1/psi(s) + gamma21|psi(t) <= 1 - zeta21".into(),
                (inv_s + g21).abs() * psi_t,
                1.0 - z21,
            ),
        ])
    };
    for s in v.points(&[]) {
        let psi_s = p.psi.eval(s)?;
        for (cond, lhs, rhs) in bands(s, psi_s)? {
            if lhs > rhs + BAND_SLACK {
                return Err(Error::construction(
                    FAM,
                    cond,
                    format!("(s={s}, t->s+)"),
                    format!("{lhs} > {rhs}"),
                ));
            }
        }
    }
    for (s, t) in v.pairs(&[]) {
        let psi_t = p.psi.eval(t)?;
        for (cond, lhs, rhs) in bands(s, psi_t)? {
            if lhs > rhs + BAND_SLACK {
                return Err(Error::construction(
                    FAM,
                    cond,
                    format!("(s={s}, t={t})"),
                    format!("{lhs} > {rhs}"),
                ));
            }
        }
    }

    let mut desc = Descriptor::new(FAM)
        .param("psi", &p.psi)
        .param("zeta11", &p.zeta11)
        .param("zeta21", &p.zeta21)
        .param("gamma11", &p.gamma11)
        .param("gamma21", &p.gamma21);
    if let Some(inf) = p.psi_inf {
        desc = desc.param("psi_inf", inf);
    }
    Ok(CubicProcessFamily::from_fn(
        2,
        desc,
        StochKind::OneTwo,
        Product::projection(2)?,
        vec![],
        move |s, t| {
            let psi_t = at(&p.psi, t, s, t)?;
            let inv_s = 1.0 / at(&p.psi, s, s, t)?;
            let z11 = at(&p.zeta11, s, s, t)?;
            let z21 = at(&p.zeta21, s, s, t)?;
            let g11 = at(&p.gamma11, s, s, t)?;
            let g21 = at(&p.gamma21, s, s, t)?;
            let a = (inv_s - g11) * psi_t;
            let b = (inv_s + g21) * psi_t;
            cubic2(
                [
                    [0.5 * (z11 + g11 * psi_t), 0.5 * (z11 - g11 * psi_t)],
                    [0.5 * (1.0 - z11 + a), 0.5 * (1.0 - z11 - a)],
                ],
                [
                    [0.5 * (z21 + g21 * psi_t), 0.5 * (z21 - g21 * psi_t)],
                    [0.5 * (1.0 - z21 - b), 0.5 * (1.0 - z21 + b)],
                ],
            )
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct M3Params {
    pub eta11: ScalarTimeFunction,
    pub xi21: ScalarTimeFunction,
    pub kappa11: ScalarTimeFunction,
    pub kappa21: ScalarTimeFunction,
    pub b: f64,
}

/// The lift of the identity-then-uniform process with cutoff `b`.
///
/// For `t < b` the blocks are `[[η11, 0], [1-η11, 0]]` and
/// `[[0, ξ21], [0, 1-ξ21]]`; for `t >= b` they are `[[κ11, κ11], [½-κ11, ½-κ11]]`
/// and `[[κ21, κ21], [½-κ21, ½-κ21]]`. Triples `s < τ < b <= t` force
/// `κ11(s) = η11(s)/2` and `κ21(s) = ξ21(s)/2` for `s < b`.
pub fn m3_family(p: M3Params, v: &Validation) -> Result<CubicProcessFamily> {
    const FAM: &str = "m3";
    if !(p.b > 0.0 && p.b.is_finite()) {
        return Err(Error::construction(
            FAM,
            "b > 0",
            "construction",
            format!("b = {}", p.b),
        ));
    }
    v.require(FAM, "eta11", &p.eta11, Property::InUnitInterval)?;
    v.require(FAM, "xi21", &p.xi21, Property::InUnitInterval)?;
    let b = p.b;
    let near_b = [b, b * (1.0 - 1e-9)];
    v.require_between(FAM, "kappa11 in [0, 1/2]", &near_b, |s| {
        Ok((0.0, p.kappa11.eval(s)?, 0.5))
    })?;
    v.require_between(FAM, "kappa21 in [0, 1/2]", &near_b, |s| {
        Ok((0.0, p.kappa21.eval(s)?, 0.5))
    })?;
    for s in v.points(&near_b).into_iter().filter(|&s| s < b) {
        for (cond, kappa, half) in [
            (
                "kappa11(s) = eta11(s)/2 for s < b",
                p.kappa11.eval(s)?,
                0.5 * p.eta11.eval(s)?,
            ),
            (
                "kappa21(s) = xi21(s)/2 for s < b",
                p.kappa21.eval(s)?,
                0.5 * p.xi21.eval(s)?,
            ),
        ] {
            if (kappa - half).abs() > BAND_SLACK {
                return Err(Error::construction(
                    FAM,
                    cond,
                    format!("s={s}"),
                    format!("{kappa} != {half}"),
                ));
            }
        }
    }
    let desc = Descriptor::new(FAM)
        .param("eta11", &p.eta11)
        .param("xi21", &p.xi21)
        .param("kappa11", &p.kappa11)
        .param("kappa21", &p.kappa21)
        .param("b", b);
    Ok(CubicProcessFamily::from_fn(
        2,
        desc,
        StochKind::OneTwo,
        Product::projection(2)?,
        vec![b],
        move |s, t| {
            if t < b {
                let eta = at(&p.eta11, s, s, t)?;
                let xi = at(&p.xi21, s, s, t)?;
                cubic2([[eta, 0.0], [1.0 - eta, 0.0]], [[0.0, xi], [0.0, 1.0 - xi]])
            } else {
                let k1 = at(&p.kappa11, s, s, t)?;
                let k2 = at(&p.kappa21, s, s, t)?;
                cubic2([[k1, k1], [0.5 - k1, 0.5 - k1]], [[k2, k2], [0.5 - k2, 0.5 - k2]])
            }
        },
    ))
}

// ---------------------------------------------------------------------------
// (12|a0) from matrix flows

type FlowEval = dyn Fn(f64) -> Result<SquareMatrix> + Send + Sync;

/// A family `t ↦ A[t]` of invertible square matrices.
#[derive(Clone)]
pub struct MatrixFlow {
    m: usize,
    descriptor: Descriptor,
    eval: Arc<FlowEval>,
}

impl fmt::Debug for MatrixFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixFlow")
            .field("m", &self.m)
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

impl MatrixFlow {
    /// Checks `|det A[t]| > 1e-10` at every sample point.
    pub fn new(
        m: usize,
        descriptor: Descriptor,
        eval: impl Fn(f64) -> Result<SquareMatrix> + Send + Sync + 'static,
        v: &Validation,
    ) -> Result<Self> {
        let flow = MatrixFlow {
            m,
            descriptor,
            eval: Arc::new(eval),
        };
        for t in v.points(&[]) {
            let a = flow.at(t)?;
            if a.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: a.dim(),
                });
            }
            let det = a.determinant();
            if !(det.abs() > DET_TOL) {
                return Err(Error::construction(
                    &flow.descriptor.name,
                    "invertibility |det A[t]| > 1e-10",
                    format!("t={t}"),
                    format!("det = {det:e}"),
                ));
            }
        }
        Ok(flow)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    pub fn at(&self, t: f64) -> Result<SquareMatrix> {
        (self.eval)(t)
    }

    pub fn inverse_at(&self, t: f64) -> Result<SquareMatrix> {
        self.at(t)?.inverse(DET_TOL)
    }

    /// `A[s]·(A[t])⁻¹`.
    pub fn transition(&self, s: f64, t: f64) -> Result<SquareMatrix> {
        self.at(s)?.matmul(&self.inverse_at(t)?)
    }
}

/// `A[t] = [[a(t), 1-b(t)], [1-a(t), b(t)]]` with `a, b ∈ (0, 1)` both
/// increasing with `a + b > 1`, or both decreasing with `a + b < 1`.
pub fn p3_flow(a: ScalarTimeFunction, b: ScalarTimeFunction, v: &Validation) -> Result<MatrixFlow> {
    const FAM: &str = "p3_flow";
    for (name, f) in [("a", &a), ("b", &b)] {
        v.require_between(FAM, &format!("{name}(t) in (0, 1)"), &[], |t| {
            let x = f.eval(t)?;
            // open interval: push the band edges inward past the slack
            Ok((2.0 * BAND_SLACK, x, 1.0 - 2.0 * BAND_SLACK))
        })?;
    }
    let inc = v.claim(Property::Increasing);
    let dec = v.claim(Property::Decreasing);
    let increasing = a.validate_claim(&inc).is_ok() && b.validate_claim(&inc).is_ok();
    let decreasing = a.validate_claim(&dec).is_ok() && b.validate_claim(&dec).is_ok();
    if increasing {
        v.require_between(FAM, "a(t) + b(t) > 1 (increasing case)", &[], |t| {
            Ok((1.0 + 2.0 * BAND_SLACK, a.eval(t)? + b.eval(t)?, f64::INFINITY))
        })?;
    } else if decreasing {
        v.require_between(FAM, "a(t) + b(t) < 1 (decreasing case)", &[], |t| {
            Ok((f64::NEG_INFINITY, a.eval(t)? + b.eval(t)?, 1.0 - 2.0 * BAND_SLACK))
        })?;
    } else {
        let t = v
            .claim(Property::Increasing)
            .sample_times()
            .into_iter()
            .find(|_| true)
            .unwrap_or(0.0);
        return Err(Error::construction(
            FAM,
            "a and b both increasing or both decreasing",
            format!("t>={t}"),
            "monotonicity claims failed for both directions",
        ));
    }
    let desc = Descriptor::new(FAM).param("a", &a).param("b", &b);
    MatrixFlow::new(
        2,
        desc,
        move |t| {
            let at_ = a.eval(t)?;
            let bt = b.eval(t)?;
            SquareMatrix::from_rows([[at_, 1.0 - bt], [1.0 - at_, bt]])
        },
        v,
    )
}

type BetaFn = dyn Fn(f64) -> Result<CubicMatrix> + Send + Sync;

/// `P[s,t]_ijr = Σ_k β_ijk(s)·b[t]_kr` where `(b[t]_kr) = (A[t])⁻¹`.
///
/// Condition (i): `A[s](A[t])⁻¹` is left stochastic for `s < t`.
/// Condition (ii): `Σ_j β_ijk(s) = a[s]_ik` and every entry of the result is
/// nonnegative. Both are sampled. Without `beta` the split
/// `β_ijk(s) = a[s]_ik / m` is used.
pub fn theorem_a_family(flow: MatrixFlow, beta: Option<Arc<BetaFn>>, v: &Validation) -> Result<CubicProcessFamily> {
    const FAM: &str = "theorem_a";
    let m = flow.dim();
    let beta: Arc<BetaFn> = match beta {
        Some(b) => b,
        None => {
            let f = flow.clone();
            Arc::new(move |s| {
                let a = f.at(s)?;
                CubicMatrix::from_fn(m, |i, _j, k| a.get(i, k) / m as f64)
            })
        }
    };

    for (s, t) in v.pairs(&[]) {
        let tr = flow.transition(s, t)?;
        let chk = tr.stochastic_check(StochKind::Left, INVERSE_SUM_TOL)?;
        if !(chk.max_deviation <= INVERSE_SUM_TOL && chk.min_entry >= -BAND_SLACK) {
            return Err(Error::construction(
                FAM,
                "(i) A[s](A[t])^-1 left stochastic",
                format!("(s={s}, t={t})"),
                format!(
                    "max column-sum deviation {}, min entry {}",
                    chk.max_deviation, chk.min_entry
                ),
            ));
        }
    }
    for s in v.points(&[]) {
        let bs = beta(s)?;
        let a = flow.at(s)?;
        let sums = bs.contract_second();
        let dev = sums.max_abs_diff(&a)?;
        if dev > INVERSE_SUM_TOL {
            return Err(Error::construction(
                FAM,
                "(ii) sum_j beta_ijk(s) = a[s]_ik",
                format!("s={s}"),
                format!("max deviation {dev}"),
            ));
        }
    }
    let eval = {
        let flow = flow.clone();
        let beta = beta.clone();
        move |s: f64, t: f64| -> Result<CubicMatrix> {
            let bs = beta(s)?;
            let inv = flow.inverse_at(t)?;
            CubicMatrix::from_fn(m, |i, j, r| (0..m).map(|k| bs.get(i, j, k) * inv.get(k, r)).sum())
        }
    };
    for (s, t) in v.pairs(&[]) {
        let p = eval(s, t)?;
        nonneg_violation(FAM, &p, s, t).map_err(|e| match e {
            Error::Construction { family, at, detail, .. } => Error::Construction {
                family,
                condition: "(ii) sum_k beta_ijk(s) b[t]_kr >= 0".into(),
                at,
                detail,
            },
            other => other,
        })?;
    }
    let desc = Descriptor::new(FAM).param("flow", flow.descriptor());
    Ok(CubicProcessFamily::from_fn(
        m,
        desc,
        StochKind::OneTwo,
        Product::projection(m)?,
        vec![],
        eval,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NParams {
    pub a: ScalarTimeFunction,
    pub b: ScalarTimeFunction,
    pub alpha: ScalarTimeFunction,
    pub beta: ScalarTimeFunction,
    pub gamma: ScalarTimeFunction,
    pub delta: ScalarTimeFunction,
}

impl NParams {
    /// The `β_ijk(s)` split that makes [`theorem_a_family`] over
    /// [`p3_flow`] coincide with [`n_family`].
    pub fn beta_split(&self) -> impl Fn(f64) -> Result<CubicMatrix> + Send + Sync + 'static {
        let p = self.clone();
        move |s| {
            let (a, b) = (p.a.eval(s)?, p.b.eval(s)?);
            let (al, be, ga, de) = (p.alpha.eval(s)?, p.beta.eval(s)?, p.gamma.eval(s)?, p.delta.eval(s)?);
            cubic2([[al, be], [a - al, 1.0 - b - be]], [[ga, de], [1.0 - a - ga, b - de]])
        }
    }
}

/// Closed-form 2×2×2 family over the flow `[[a, 1-b], [1-a, b]]`.
pub fn n_family(p: NParams, v: &Validation) -> Result<CubicProcessFamily> {
    const FAM: &str = "n";
    for (name, f) in [("a", &p.a), ("b", &p.b)] {
        v.require_between(FAM, &format!("{name}(t) in (0, 1)"), &[], |t| {
            Ok((2.0 * BAND_SLACK, f.eval(t)?, 1.0 - 2.0 * BAND_SLACK))
        })?;
    }
    v.require_between(FAM, "a(t) + b(t) - 1 > 0", &[], |t| {
        Ok((DET_TOL, p.a.eval(t)? + p.b.eval(t)? - 1.0, f64::INFINITY))
    })?;
    v.require_between(FAM, "0 <= alpha(s) <= a(s)", &[], |s| {
        Ok((0.0, p.alpha.eval(s)?, p.a.eval(s)?))
    })?;
    v.require_between(FAM, "0 <= beta(s) <= 1 - b(s)", &[], |s| {
        Ok((0.0, p.beta.eval(s)?, 1.0 - p.b.eval(s)?))
    })?;
    v.require_between(FAM, "0 <= gamma(s) <= 1 - a(s)", &[], |s| {
        Ok((0.0, p.gamma.eval(s)?, 1.0 - p.a.eval(s)?))
    })?;
    v.require_between(FAM, "0 <= delta(s) <= b(s)", &[], |s| {
        Ok((0.0, p.delta.eval(s)?, p.b.eval(s)?))
    })?;

    let desc = Descriptor::new(FAM)
        .param("a", &p.a)
        .param("b", &p.b)
        .param("alpha", &p.alpha)
        .param("beta", &p.beta)
        .param("gamma", &p.gamma)
        .param("delta", &p.delta);
    let eval = move |s: f64, t: f64| -> Result<CubicMatrix> {
        let (a_s, b_s) = (at(&p.a, s, s, t)?, at(&p.b, s, s, t)?);
        let (a_t, b_t) = (at(&p.a, t, s, t)?, at(&p.b, t, s, t)?);
        let al = at(&p.alpha, s, s, t)?;
        let be = at(&p.beta, s, s, t)?;
        let ga = at(&p.gamma, s, s, t)?;
        let de = at(&p.delta, s, s, t)?;
        let d = a_t + b_t - 1.0;
        let row = |x: f64, y: f64| [(x * b_t + y * (a_t - 1.0)) / d, (x * (b_t - 1.0) + y * a_t) / d];
        cubic2(
            [row(al, be), row(a_s - al, 1.0 - b_s - be)],
            [row(ga, de), row(1.0 - a_s - ga, b_s - de)],
        )
    };
    // the stated bounds are necessary; nonnegativity of the entries is what
    // makes each matrix (1,2)-stochastic
    for (s, t) in v.pairs(&[]) {
        nonneg_violation(FAM, &eval(s, t)?, s, t)?;
    }
    Ok(CubicProcessFamily::from_fn(
        2,
        desc,
        StochKind::OneTwo,
        Product::projection(2)?,
        vec![],
        eval,
    ))
}

// ---------------------------------------------------------------------------
// verification

/// Residual `max |M[s,t] - M[s,τ] * M[τ,t]|` for every grid triple, using the
/// family's product.
pub fn kce_residual_cubic(family: &CubicProcessFamily, grid: &TimeGrid, tol: f64) -> Result<VerificationReport> {
    let p = grid.points();
    let table = pair_table(p, |s, t| family.eval(s, t))?;
    let get = |a: usize, b: usize| table[a][b].as_ref().expect("a < b is filled");
    let mut report = VerificationReport::new(format!("kce:{}", family.descriptor().name), tol);
    for a in 0..p.len() {
        for b in a + 1..p.len() {
            for c in b + 1..p.len() {
                let rhs = family.product().apply(get(a, b), get(b, c))?;
                report.push_triple(p[a], p[b], p[c], get(a, c).max_abs_diff(&rhs)?);
            }
        }
    }
    Ok(report)
}

/// Checks `kind` (the family's declared kind by default) at every grid pair.
pub fn stochasticity_cubic(
    family: &CubicProcessFamily,
    grid: &TimeGrid,
    kind: Option<StochKind>,
    tol: f64,
) -> Result<VerificationReport> {
    let kind = kind.unwrap_or(family.kind());
    let mut report = VerificationReport::new(
        format!("stochasticity:{}:{}", family.descriptor().name, kind.label()),
        tol,
    );
    for (s, t) in grid.pairs() {
        let chk = family.eval(s, t)?.is_stochastic(kind, tol)?;
        report.push_pair(s, t, chk.max_deviation.max(-chk.min_entry).max(0.0));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", content = "period", rename_all = "snake_case")]
pub enum TimeDependence {
    Homogeneous,
    PeriodicInS(f64),
    PeriodicInT(f64),
    General,
}

/// Compares the family against shifted copies of itself on grid pairs.
///
/// Homogeneous: `M[s,t] = M[s+h,t+h]` for every candidate shift `h`.
/// Periodic in t with period `T`: `M[s,t+T] = M[s,t]`. Periodic in s with
/// period `S`: `M[s+S,t] = M[s,t]` whenever `s + S < t`. Candidates default
/// to the distinct positive spacings of the grid. The result names a
/// candidate; it is not a proof.
pub fn classify_time_dependence(
    family: &CubicProcessFamily,
    grid: &TimeGrid,
    candidates: Option<&[f64]>,
    tol: f64,
) -> Result<TimeDependence> {
    let pts = grid.points();
    let cands: Vec<f64> = match candidates {
        Some(c) => c.iter().copied().filter(|h| *h > 0.0).collect(),
        None => {
            let mut d: Vec<f64> = grid.pairs().iter().map(|(s, t)| t - s).collect();
            d.sort_by(f64::total_cmp);
            d.dedup_by(|b, a| (*b - *a).abs() <= 1e-12);
            d
        }
    };
    let pairs = grid.pairs();
    let close = |a: &CubicMatrix, b: &CubicMatrix| -> Result<bool> { Ok(a.max_abs_diff(b)? <= tol) };

    let mut homogeneous = !cands.is_empty();
    'h: for &h in &cands {
        for &(s, t) in &pairs {
            if !close(&family.eval(s, t)?, &family.eval(s + h, t + h)?)? {
                homogeneous = false;
                break 'h;
            }
        }
    }
    if homogeneous {
        return Ok(TimeDependence::Homogeneous);
    }
    for &period in &cands {
        let mut ok = true;
        for &(s, t) in &pairs {
            if !close(&family.eval(s, t)?, &family.eval(s, t + period)?)? {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(TimeDependence::PeriodicInT(period));
        }
    }
    for &period in &cands {
        let mut ok = true;
        let mut tested = false;
        for &(s, t) in &pairs {
            if s + period < t {
                tested = true;
                if !close(&family.eval(s, t)?, &family.eval(s + period, t)?)? {
                    ok = false;
                    break;
                }
            }
        }
        if ok && tested {
            return Ok(TimeDependence::PeriodicInS(period));
        }
    }
    let _ = pts;
    Ok(TimeDependence::General)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_square::{q1, q2, q3, q5};

    fn f(s: &str) -> ScalarTimeFunction {
        ScalarTimeFunction::parse(s).unwrap()
    }

    fn v() -> Validation {
        Validation::default()
    }

    #[test]
    fn direct_sum_recovers_layers() {
        let l0 = q2(f("exp(-t)"), &v()).unwrap();
        let l1 = q3(1.0, &v()).unwrap();
        let fam = direct_sum_30(vec![l0.clone(), l1.clone()], &v()).unwrap();
        assert_eq!(fam.kind(), StochKind::Three);
        assert_eq!(fam.cutoffs(), &[1.0]);
        for (s, t) in [(0.0, 0.5), (0.2, 1.5), (1.0, 3.0)] {
            let p = fam.eval(s, t).unwrap();
            assert_eq!(p.slice_second(0).unwrap(), l0.eval(s, t).unwrap());
            assert_eq!(p.slice_second(1).unwrap(), l1.eval(s, t).unwrap());
        }
    }

    #[test]
    fn direct_sum_of_q5_ignores_s() {
        let l = q5(f("0.4 + 0.2*sin(t)"), &v()).unwrap();
        let fam = direct_sum_30(vec![l.clone(), l], &v()).unwrap();
        assert_eq!(fam.eval(0.0, 2.0).unwrap(), fam.eval(1.5, 2.0).unwrap());
    }

    #[test]
    fn direct_sum_rejects_left_only_layer() {
        let l = q1(f("0.3"), &v()).unwrap();
        let err = direct_sum_30(vec![l.clone(), l], &v()).unwrap_err();
        assert!(matches!(err, Error::Construction { .. }), "{err}");
    }

    fn m1(g: &str, u11: &str, u21: &str) -> Result<CubicProcessFamily> {
        m1_family(
            M1Params {
                g: f(g),
                u11: f(u11),
                u21: f(u21),
            },
            &v(),
        )
    }

    #[test]
    fn m1_uniform_instance() {
        let fam = m1("0.5", "0.25", "0.25").unwrap();
        assert_eq!(fam.eval(0.0, 1.0).unwrap().as_slice(), &[0.25; 8]);
        assert!(m1("1", "0.5", "0.2").is_err());
        let fam = m1("0.5 + 0.3*sin(t)", "0.1", "0.2").unwrap();
        assert_eq!(fam.eval(0.7, 1.0).unwrap(), fam.eval(0.7, 4.0).unwrap());
    }

    fn m2_valid() -> M2Params {
        M2Params {
            psi: f("(1 + exp(-t))/2"),
            zeta11: f("0.5"),
            zeta21: f("0.5"),
            gamma11: f("1/(1 + exp(-t))"),
            gamma21: f("-1/(1 + exp(-t))"),
            psi_inf: Some(0.5),
        }
    }

    #[test]
    fn m2_contracts_to_q2() {
        let p = m2_valid();
        let fam = m2_family(p.clone(), &v()).unwrap();
        let sq = q2(p.psi.clone(), &v()).unwrap();
        for (s, t) in [(0.0, 0.1), (0.5, 2.0), (3.0, 9.0)] {
            let c = fam.eval(s, t).unwrap().contract_second();
            assert!(c.max_abs_diff(&sq.eval(s, t).unwrap()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn m2_rejects_bad_bands() {
        let mut p = m2_valid();
        p.gamma21 = f("0");
        let err = m2_family(p, &v()).unwrap_err();
        match err {
            Error::Construction { condition, .. } => assert!(condition.contains("gamma21"), "{condition}"),
            other => panic!("{other:?}"),
        }
        // the instance with gamma21 = (1/psi - 2)/2 goes negative for larger s
        let mut p = m2_valid();
        p.gamma11 = f("1/(1 + exp(-t))");
        p.gamma21 = f("(2/(1 + exp(-t)) - 2)/2");
        assert!(m2_family(p, &v()).is_err());
        // gamma21 = 0 with zeta21 = 0 is a genuine process
        let mut p = m2_valid();
        p.gamma21 = f("0");
        p.zeta21 = f("0");
        assert!(m2_family(p, &v()).is_ok());
    }

    fn m3(eta: &str, xi: &str, k1: &str, k2: &str) -> Result<CubicProcessFamily> {
        m3_family(
            M3Params {
                eta11: f(eta),
                xi21: f(xi),
                kappa11: f(k1),
                kappa21: f(k2),
                b: 2.0,
            },
            &v(),
        )
    }

    #[test]
    fn m3_branches() {
        let fam = m3("0.5", "0.5", "0.25", "0.25").unwrap();
        let early = fam.eval(0.0, 1.0).unwrap();
        assert_eq!(early.as_slice(), &[0.5, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.5]);
        assert!(early.is_stochastic(StochKind::OneTwo, 1e-12).unwrap().ok);
        assert_eq!(fam.eval(0.0, 2.0).unwrap().as_slice(), &[0.25; 8]);
        assert!(m3("0.5", "0.5", "0.6", "0.25").is_err());
        // kappa inconsistent with eta before the cutoff
        assert!(m3("1", "1", "0.25", "0.25").is_err());
        // after the cutoff kappa is free
        assert!(m3("0.5", "0.5", "min(0.25, max(0.1, 0.25 - (t - 2)))", "0.25").is_ok());
    }

    fn ab() -> ScalarTimeFunction {
        f("0.6 + 0.3*(1 - exp(-t))")
    }

    #[test]
    fn p3_flow_values() {
        let flow = p3_flow(ab(), ab(), &v()).unwrap();
        let a0 = flow.at(0.0).unwrap();
        let expected = SquareMatrix::from_rows([[0.6, 0.4], [0.4, 0.6]]).unwrap();
        assert!(a0.max_abs_diff(&expected).unwrap() < 1e-15);
        let tr = flow.transition(0.0, 1.0).unwrap();
        assert!(tr.min_entry() >= 0.0);
        for c in tr.col_sums() {
            assert!((c - 1.0).abs() < 1e-12);
        }
        assert!(p3_flow(f("0.5"), f("0.5"), &v()).is_err());
        assert!(p3_flow(f("0.6 + 0.3*(1 - exp(-t))"), f("0.4 - 0.1*(1 - exp(-t))"), &v()).is_err());
        // decreasing branch
        assert!(p3_flow(f("0.3 - 0.1*(1 - exp(-t))"), f("0.4 - 0.1*(1 - exp(-t))"), &v()).is_ok());
    }

    #[test]
    fn singular_flow_rejected() {
        let err = MatrixFlow::new(
            2,
            Descriptor::new("collapsing"),
            |t| SquareMatrix::from_rows([[1.0, 0.0], [0.0, (1.0 - t).abs()]]),
            &Validation {
                extra_points: vec![1.0],
                ..Validation::with_horizon(2.0)
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("invertibility"), "{err}");
    }

    #[test]
    fn theorem_a_default_split_contracts_to_transition() {
        let flow = p3_flow(ab(), ab(), &v()).unwrap();
        let fam = theorem_a_family(flow.clone(), None, &v()).unwrap();
        for (s, t) in [(0.0, 1.0), (0.5, 4.0), (2.0, 2.5)] {
            let c = fam.eval(s, t).unwrap().contract_second();
            assert!(c.max_abs_diff(&flow.transition(s, t).unwrap()).unwrap() < 1e-12);
        }
    }

    fn n_params() -> NParams {
        NParams {
            a: ab(),
            b: ab(),
            alpha: f("(0.6 + 0.3*(1 - exp(-t)))/2"),
            beta: f("(1 - (0.6 + 0.3*(1 - exp(-t))))/2"),
            gamma: f("(1 - (0.6 + 0.3*(1 - exp(-t))))/2"),
            delta: f("(0.6 + 0.3*(1 - exp(-t)))/2"),
        }
    }

    #[test]
    fn n_family_matches_theorem_a() {
        let p = n_params();
        let fam = n_family(p.clone(), &v()).unwrap();
        let flow = p3_flow(p.a.clone(), p.b.clone(), &v()).unwrap();
        let ta = theorem_a_family(flow.clone(), Some(Arc::new(p.beta_split())), &v()).unwrap();
        for (s, t) in [(0.0, 0.3), (1.0, 2.0), (0.5, 7.5)] {
            let x = fam.eval(s, t).unwrap();
            assert!(x.max_abs_diff(&ta.eval(s, t).unwrap()).unwrap() < 1e-10);
            let c = x.contract_second();
            assert!(c.max_abs_diff(&flow.transition(s, t).unwrap()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn n_family_rejections() {
        let mut p = n_params();
        p.alpha = f("0.6 + 0.3*(1 - exp(-t)) + 0.1");
        let err = n_family(p, &v()).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        // within the stated bounds, but an entry goes negative
        let mut p = n_params();
        p.alpha = ab();
        p.beta = f("0");
        let err = n_family(p, &v()).unwrap_err();
        assert!(err.to_string().contains("nonnegativity"), "{err}");
    }

    #[test]
    fn classify_examples() {
        let grid = TimeGrid::uniform(4.0, 9).unwrap();
        let fam = m1("0.5", "0.25", "0.25").unwrap();
        assert_eq!(
            classify_time_dependence(&fam, &grid, None, 1e-9).unwrap(),
            TimeDependence::Homogeneous
        );
        let fam = m2_family(m2_valid(), &v()).unwrap();
        assert_eq!(
            classify_time_dependence(&fam, &grid, None, 1e-9).unwrap(),
            TimeDependence::General
        );
        let l = q5(f("0.4 + 0.2*sin(t)"), &v()).unwrap();
        let fam = direct_sum_30(vec![l.clone(), l], &v()).unwrap();
        let period = 2.0 * std::f64::consts::PI;
        match classify_time_dependence(&fam, &grid, Some(&[1.0, period]), 1e-9).unwrap() {
            TimeDependence::PeriodicInT(p) => assert_eq!(p, period),
            other => panic!("{other:?}"),
        }
    }
}
