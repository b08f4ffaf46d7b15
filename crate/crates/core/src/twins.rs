//! Population model with twin births on `{0, 1, 2}` = {empty body, female,
//! male}.
//!
//! `P[s,t]_ijk` is the probability that a type-`k` parent starting at `s`
//! yields offspring `i, j` by `t`. Layers `k = 0` and `k = 2` are fixed with
//! a single 1 at `(0, 0, k)`. The middle layer holds
//!
//! ```text
//!   i=0: a, b, c      (j = 0, 1, 2)
//!   i=1: α, β, γ
//!   i=2: u, v, w
//! ```
//!
//! The Kolmogorov-Chapman equation under `*_{a₀}` reduces to nine scalar
//! equations in which `f = α + β + γ` satisfies Cantor's second equation.
//! The three solution branches of that equation give the three families.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cubic::{CubicMatrix, StochKind};
use crate::error::{Error, Result};
use crate::families::{CubicProcessFamily, Product};
use crate::fmt::g17;
use crate::markov_square::{at, Descriptor};
use crate::timefn::{Property, ScalarTimeFunction};
use crate::verify::{TimeGrid, Validation, VerificationReport, BAND_SLACK};

/// Default tolerance for the nine-equation system.
pub const NINE_EQ_TOL: f64 = 1e-10;

/// Step used to probe continuity of `1/Φ` from the right.
const CONTINUITY_PROBE: f64 = 1e-6;

/// Names of the middle-layer slots in `(i, j)` order.
pub const SLOTS: [&str; 9] = ["a", "b", "c", "alpha", "beta", "gamma", "u", "v", "w"];

#[derive(Debug, Clone, PartialEq)]
pub struct TwinBParams {
    pub phi: ScalarTimeFunction,
    /// `lim Φ(t)` as `t → ∞`, when known.
    pub phi_inf: Option<f64>,
    pub b: ScalarTimeFunction,
    pub c: ScalarTimeFunction,
    pub u: ScalarTimeFunction,
    pub v: ScalarTimeFunction,
    pub w: ScalarTimeFunction,
    pub alpha: ScalarTimeFunction,
    pub beta: ScalarTimeFunction,
}

impl TwinBParams {
    /// Branch-B parameters with `b = c = u = v = w = 0` and no declared limit.
    pub fn with_zeros(phi: ScalarTimeFunction, alpha: ScalarTimeFunction, beta: ScalarTimeFunction) -> Self {
        let zero = ScalarTimeFunction::Constant(0.0);
        TwinBParams {
            phi,
            phi_inf: None,
            b: zero.clone(),
            c: zero.clone(),
            u: zero.clone(),
            v: zero.clone(),
            w: zero,
            alpha,
            beta,
        }
    }

    /// `b + c + u + v + w` at `s`.
    fn outer_sum(&self, s: f64) -> Result<f64> {
        Ok(self.b.eval(s)? + self.c.eval(s)? + self.u.eval(s)? + self.v.eval(s)? + self.w.eval(s)?)
    }

    /// `γ(s) = 1/Φ(s) - α(s) - β(s)`.
    pub fn gamma(&self, s: f64) -> Result<f64> {
        Ok(1.0 / self.phi.eval(s)? - self.alpha.eval(s)? - self.beta.eval(s)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCParams {
    pub alpha0: ScalarTimeFunction,
    pub beta0: ScalarTimeFunction,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
// built once per run, so the inline branch-B payload is not worth boxing
#[allow(clippy::large_enum_variant)]
pub enum TwinModelParams {
    ExtinctionA,
    SurvivalB(TwinBParams),
    CataclysmC(TwinCParams),
}

/// How the branch-B inequality `1/Φ(t) - 1/Φ(s) >= b+c+u+v+w (s)` is
/// quantified.
///
/// `Grid` checks sampled pairs only and records a warning when `1/Φ` is
/// continuous at some `s` with a positive outer sum, since then the
/// inequality fails for `t` close enough to `s`. `Strict` turns that
/// warning into a construction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinMode {
    #[default]
    Grid,
    Strict,
}

/// Middle layer `[a, b, c, α, β, γ, u, v, w]` placed into the fixed pattern.
pub(crate) fn twin_matrix(mid: [f64; 9]) -> Result<CubicMatrix> {
    let mut data = vec![0.0; 27];
    data[0] = 1.0; // (0,0,0)
    data[2] = 1.0; // (0,0,2)
    for (n, x) in mid.into_iter().enumerate() {
        let (i, j) = (n / 3, n % 3);
        data[i * 9 + j * 3 + 1] = x;
    }
    CubicMatrix::new(3, data)
}

const EXTINCT: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

fn twin_family(
    desc: Descriptor,
    cutoffs: Vec<f64>,
    eval: impl Fn(f64, f64) -> Result<CubicMatrix> + Send + Sync + 'static,
) -> Result<CubicProcessFamily> {
    Ok(CubicProcessFamily::from_fn(
        3,
        desc,
        StochKind::OneTwo,
        Product::projection(3)?,
        cutoffs,
        eval,
    ))
}

/// `f ≡ 0`: `a ≡ 1`, every other middle entry 0.
pub fn case_a_family() -> CubicProcessFamily {
    twin_family(Descriptor::new("twin_a"), vec![], |_, _| twin_matrix(EXTINCT)).expect("m = 3 is supported")
}

/// `f(s,t) = Φ(t)/Φ(s)`: every middle entry except `a` is `h(s)Φ(t)` and
/// `a = Φ(t)(1/Φ(t) - 1/Φ(s) - (b+c+u+v+w)(s))`.
pub fn case_b_family(p: TwinBParams, v: &Validation, mode: TwinMode) -> Result<CubicProcessFamily> {
    const FAM: &str = "twin_b";
    v.require(FAM, "phi", &p.phi, Property::Positive)?;
    for (name, f) in [
        ("b", &p.b),
        ("c", &p.c),
        ("u", &p.u),
        ("v", &p.v),
        ("w", &p.w),
        ("alpha", &p.alpha),
        ("beta", &p.beta),
    ] {
        v.require_between(FAM, &format!("{name}(t) >= 0"), &[], |t| {
            Ok((0.0, f.eval(t)?, f64::INFINITY))
        })?;
    }
    v.require_between(FAM, "alpha(t) + beta(t) <= 1/phi(t)", &[], |t| {
        Ok((
            f64::NEG_INFINITY,
            p.alpha.eval(t)? + p.beta.eval(t)?,
            1.0 / p.phi.eval(t)?,
        ))
    })?;
    for (s, t) in v.pairs(&[]) {
        let gap = 1.0 / p.phi.eval(t)? - 1.0 / p.phi.eval(s)?;
        let outer = p.outer_sum(s)?;
        if gap < outer - BAND_SLACK {
            return Err(Error::construction(
                FAM,
                "1/phi(t) - 1/phi(s) >= b(s)+c(s)+u(s)+v(s)+w(s)",
                format!("(s={s}, t={t})"),
                format!("{gap} < {outer}"),
            ));
        }
    }
    let mut warnings = Vec::new();
    for s in v.points(&[]) {
        let outer = p.outer_sum(s)?;
        if outer <= BAND_SLACK {
            continue;
        }
        let gap = 1.0 / p.phi.eval(s + CONTINUITY_PROBE)? - 1.0 / p.phi.eval(s)?;
        if gap < outer {
            let msg = format!(
                "continuity collapse at s={s}: 1/phi(s+{CONTINUITY_PROBE:e}) - 1/phi(s) = {gap:e} < b+c+u+v+w = {outer}; \
                 the inequality holds only on the sampled grid"
            );
            if mode == TwinMode::Strict {
                return Err(Error::construction(
                    FAM,
                    "1/phi(t) - 1/phi(s) >= b(s)+c(s)+u(s)+v(s)+w(s) for all t > s",
                    format!("(s={s}, t={})", s + CONTINUITY_PROBE),
                    format!("{gap:e} < {outer}"),
                ));
            }
            warnings.push(msg);
            break;
        }
    }
    let mut desc = Descriptor::new(FAM)
        .param("phi", &p.phi)
        .param("b", &p.b)
        .param("c", &p.c)
        .param("u", &p.u)
        .param("v", &p.v)
        .param("w", &p.w)
        .param("alpha", &p.alpha)
        .param("beta", &p.beta);
    if let Some(inf) = p.phi_inf {
        desc = desc.param("phi_inf", inf);
    }
    let fam = twin_family(desc, vec![], move |s, t| {
        let phi_t = at(&p.phi, t, s, t)?;
        let inv_s = 1.0 / at(&p.phi, s, s, t)?;
        let h = |f: &ScalarTimeFunction| at(f, s, s, t);
        let (b, c, u, vv, w) = (h(&p.b)?, h(&p.c)?, h(&p.u)?, h(&p.v)?, h(&p.w)?);
        let (al, be) = (h(&p.alpha)?, h(&p.beta)?);
        let ga = inv_s - al - be;
        let a = 1.0 - phi_t * inv_s - phi_t * (b + c + u + vv + w);
        twin_matrix([
            a,
            b * phi_t,
            c * phi_t,
            al * phi_t,
            be * phi_t,
            ga * phi_t,
            u * phi_t,
            vv * phi_t,
            w * phi_t,
        ])
    })?;
    Ok(fam.with_warnings(warnings))
}

/// Stable until `cutoff`, extinct from then on: for `t < cutoff` the `i = 1`
/// block holds `α₀(s), β₀(s), 1 - α₀(s) - β₀(s)`; for `t >= cutoff` the
/// family equals [`case_a_family`].
pub fn case_c_family(p: TwinCParams, v: &Validation) -> Result<CubicProcessFamily> {
    const FAM: &str = "twin_c";
    let cutoff = p.cutoff;
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::construction(
            FAM,
            "cutoff > 0",
            "construction",
            format!("cutoff = {cutoff}"),
        ));
    }
    let before: Vec<f64> = v.points(&[]).into_iter().filter(|&t| t < cutoff).collect();
    for t in before {
        let (a0, b0) = (p.alpha0.eval(t)?, p.beta0.eval(t)?);
        for (cond, lo, x, hi) in [
            ("alpha0(t) in [0, 1]", 0.0, a0, 1.0),
            ("beta0(t) in [0, 1]", 0.0, b0, 1.0),
            ("alpha0(t) + beta0(t) <= 1", f64::NEG_INFINITY, a0 + b0, 1.0),
        ] {
            if x < lo - BAND_SLACK || x > hi + BAND_SLACK {
                return Err(Error::construction(FAM, cond, format!("t={t}"), format!("value {x}")));
            }
        }
    }
    let desc = Descriptor::new(FAM)
        .param("alpha0", &p.alpha0)
        .param("beta0", &p.beta0)
        .param("cutoff", cutoff);
    twin_family(desc, vec![cutoff], move |s, t| {
        if t >= cutoff {
            return twin_matrix(EXTINCT);
        }
        let a0 = at(&p.alpha0, s, s, t)?;
        let b0 = at(&p.beta0, s, s, t)?;
        twin_matrix([0.0, 0.0, 0.0, a0, b0, 1.0 - a0 - b0, 0.0, 0.0, 0.0])
    })
}

/// Builds the family for any branch.
pub fn twin_family_for(params: &TwinModelParams, v: &Validation, mode: TwinMode) -> Result<CubicProcessFamily> {
    match params {
        TwinModelParams::ExtinctionA => Ok(case_a_family()),
        TwinModelParams::SurvivalB(p) => case_b_family(p.clone(), v, mode),
        TwinModelParams::CataclysmC(p) => case_c_family(p.clone(), v),
    }
}

/// The nine middle-layer entries, after checking shape and the fixed outer
/// layers.
pub fn middle_layer(p: &CubicMatrix) -> Result<[f64; 9]> {
    if p.dim() != 3 {
        return Err(Error::Domain(format!("twin model needs m = 3, got m = {}", p.dim())));
    }
    for i in 0..3 {
        for j in 0..3 {
            for k in [0, 2] {
                let expected = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                if p.get(i, j, k) != expected {
                    return Err(Error::Domain(format!(
                        "entry ({i},{j},{k}) = {} breaks the twin pattern (expected {expected})",
                        p.get(i, j, k)
                    )));
                }
            }
        }
    }
    let mut mid = [0.0; 9];
    for (n, x) in mid.iter_mut().enumerate() {
        *x = p.get(n / 3, n % 3, 1);
    }
    Ok(mid)
}

/// Residual of each of the nine equations per grid triple, plus the
/// normalization `Σ middle = 1` per pair (component `"bir"`).
pub fn verify_nine_equations(family: &CubicProcessFamily, grid: &TimeGrid, tol: f64) -> Result<VerificationReport> {
    if family.dim() != 3 {
        return Err(Error::Domain(format!(
            "twin model needs m = 3, got m = {}",
            family.dim()
        )));
    }
    let pts = grid.points();
    let n = pts.len();
    let mut mids = vec![vec![None; n]; n];
    let mut report = VerificationReport::new(format!("nine_equations:{}", family.descriptor().name), tol);
    for a in 0..n {
        for b in a + 1..n {
            let mid = middle_layer(&family.eval(pts[a], pts[b])?)?;
            let bir = (mid.iter().sum::<f64>() - 1.0).abs();
            report.record_component("bir", bir);
            report.push_pair(pts[a], pts[b], bir);
            mids[a][b] = Some(mid);
        }
    }
    let get = |a: usize, b: usize| mids[a][b].expect("a < b is filled");
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let (st, s_tau, tau_t) = (get(a, c), get(a, b), get(b, c));
                let f = tau_t[3] + tau_t[4] + tau_t[5];
                let mut worst = 0.0f64;
                for (slot, name) in SLOTS.iter().enumerate() {
                    let rhs = if slot == 0 {
                        tau_t[0] + tau_t[1] + tau_t[2] + s_tau[0] * f + tau_t[6] + tau_t[7] + tau_t[8]
                    } else {
                        s_tau[slot] * f
                    };
                    let r = (st[slot] - rhs).abs();
                    report.record_component(name, r);
                    worst = if r.is_nan() { r } else { worst.max(r) };
                }
                report.push_triple(pts[a], pts[b], pts[c], worst);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CantorMode {
    /// `g(s,t) = g(s,τ) + g(τ,t)`
    First,
    /// `f(s,t) = f(s,τ)·f(τ,t)`
    Second,
}

pub fn cantor_checks(
    f: impl Fn(f64, f64) -> Result<f64>,
    grid: &TimeGrid,
    mode: CantorMode,
    tol: f64,
) -> Result<VerificationReport> {
    let label = match mode {
        CantorMode::First => "cantor_first",
        CantorMode::Second => "cantor_second",
    };
    let mut report = VerificationReport::new(label, tol);
    for (s, tau, t) in grid.triples() {
        let (st, s_tau, tau_t) = (f(s, t)?, f(s, tau)?, f(tau, t)?);
        let r = match mode {
            CantorMode::First => st - s_tau - tau_t,
            CantorMode::Second => st - s_tau * tau_t,
        };
        report.push_triple(s, tau, t, r.abs());
    }
    Ok(report)
}

/// Twin probabilities as `t → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TwinLimits {
    Declared { ff: f64, mixed: f64, mm: f64 },
    NoLimitDeclared,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinReport {
    pub s: f64,
    pub t: f64,
    /// `P_001`: no offspring.
    pub none: f64,
    /// `P_011 + P_101`.
    pub single_female: f64,
    /// `P_021 + P_201`.
    pub single_male: f64,
    /// `P_111`.
    pub ff: f64,
    /// `P_121 + P_211`.
    pub mixed: f64,
    /// `P_221`.
    pub mm: f64,
    pub limits: TwinLimits,
}

impl TwinReport {
    /// Female-female twins relative to single female births.
    pub fn ff_ratio(&self) -> f64 {
        self.ff / self.single_female
    }

    pub fn csv_header() -> &'static str {
        "s,t,p_ff,p_mixed,p_mm,limit_ff,limit_mixed,limit_mm"
    }

    /// One CSV row; limit columns are empty when no limit is declared.
    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{}",
            g17(self.s),
            g17(self.t),
            g17(self.ff),
            g17(self.mixed),
            g17(self.mm)
        );
        match self.limits {
            TwinLimits::Declared { ff, mixed, mm } => {
                let _ = write!(row, ",{},{},{}", g17(ff), g17(mixed), g17(mm));
            }
            TwinLimits::NoLimitDeclared => row.push_str(",,,"),
        }
        row
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Reads the twin probabilities of `family` at `(s, t)`.
///
/// Limits: branch A and C die out, so every twin limit is 0. Branch B uses
/// `Φ(∞)β(s)`, `Φ(∞)(γ(s) + v(s))` and `Φ(∞)w(s)` when `Φ(∞)` is declared.
pub fn twin_report(family: &CubicProcessFamily, params: &TwinModelParams, s: f64, t: f64) -> Result<TwinReport> {
    let mid = middle_layer(&family.eval(s, t)?)?;
    let limits = match params {
        TwinModelParams::ExtinctionA | TwinModelParams::CataclysmC(_) => TwinLimits::Declared {
            ff: 0.0,
            mixed: 0.0,
            mm: 0.0,
        },
        TwinModelParams::SurvivalB(p) => match p.phi_inf {
            Some(inf) => TwinLimits::Declared {
                ff: inf * p.beta.eval(s)?,
                mixed: inf * (p.gamma(s)? + p.v.eval(s)?),
                mm: inf * p.w.eval(s)?,
            },
            None => TwinLimits::NoLimitDeclared,
        },
    };
    Ok(TwinReport {
        s,
        t,
        none: mid[0],
        single_female: mid[1] + mid[3],
        single_male: mid[2] + mid[6],
        ff: mid[4],
        mixed: mid[5] + mid[7],
        mm: mid[8],
        limits,
    })
}
