//! Two-parameter families of square stochastic matrices (ordinary Markov
//! processes) for m = 2 and the square Kolmogorov-Chapman verifier.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::cubic::StochKind;
use crate::error::{Error, Result};
use crate::square::SquareMatrix;
use crate::timefn::{Property, ScalarTimeFunction};
use crate::verify::{TimeGrid, Validation, VerificationReport};

/// Name and parameters of a family, in the order they were given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptor {
    pub name: String,
    pub params: Vec<(String, String)>,
}

impl Descriptor {
    pub fn new(name: &str) -> Self {
        Descriptor {
            name: name.to_string(),
            params: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (n, (k, v)) in self.params.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

pub(crate) fn check_times(s: f64, t: f64) -> Result<()> {
    if s.is_finite() && t.is_finite() && 0.0 <= s && s <= t {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "time pair (s={s}, t={t}) must satisfy 0 <= s <= t"
        )))
    }
}

/// Evaluates a parameter function inside a family evaluator, tagging errors
/// with the pair being evaluated.
pub(crate) fn at(f: &ScalarTimeFunction, x: f64, s: f64, t: f64) -> Result<f64> {
    f.eval(x).map_err(|source| Error::FamilyEval { s, t, source })
}

type SquareEval = dyn Fn(f64, f64) -> Result<SquareMatrix> + Send + Sync;

#[derive(Clone)]
pub struct SquareProcessFamily {
    m: usize,
    descriptor: Descriptor,
    kinds: Vec<StochKind>,
    cutoffs: Vec<f64>,
    eval: Arc<SquareEval>,
}

impl fmt::Debug for SquareProcessFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SquareProcessFamily")
            .field("m", &self.m)
            .field("descriptor", &self.descriptor)
            .field("kinds", &self.kinds)
            .field("cutoffs", &self.cutoffs)
            .finish()
    }
}

impl SquareProcessFamily {
    /// Wraps an arbitrary evaluator. No validity checks are made here.
    pub fn from_fn(
        m: usize,
        descriptor: Descriptor,
        kinds: Vec<StochKind>,
        cutoffs: Vec<f64>,
        eval: impl Fn(f64, f64) -> Result<SquareMatrix> + Send + Sync + 'static,
    ) -> Self {
        SquareProcessFamily {
            m,
            descriptor,
            kinds,
            cutoffs,
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<SquareMatrix> {
        check_times(s, t)?;
        (self.eval)(s, t)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    pub fn kinds(&self) -> &[StochKind] {
        &self.kinds
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }
}

fn m2(rows: [[f64; 2]; 2]) -> Result<SquareMatrix> {
    SquareMatrix::from_rows(rows)
}

fn require_cutoff(family: &str, name: &str, c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::construction(
            family,
            format!("{name} > 0"),
            "construction",
            format!("{name} = {c}"),
        ))
    }
}

/// `[[g(s), g(s)], [1-g(s), 1-g(s)]]`, left stochastic, independent of t.
pub fn q1(g: ScalarTimeFunction, v: &Validation) -> Result<SquareProcessFamily> {
    v.require("q1", "g", &g, Property::InUnitInterval)?;
    let desc = Descriptor::new("q1").param("g", &g);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Left],
        vec![],
        move |s, t| {
            let gs = at(&g, s, s, t)?;
            m2([[gs, gs], [1.0 - gs, 1.0 - gs]])
        },
    ))
}

/// `½[[1+r, 1-r], [1-r, 1+r]]` with `r = Ψ(t)/Ψ(s)`.
pub fn q2(psi: ScalarTimeFunction, v: &Validation) -> Result<SquareProcessFamily> {
    v.require("q2", "psi", &psi, Property::Positive)?;
    v.require("q2", "psi", &psi, Property::Decreasing)?;
    let desc = Descriptor::new("q2").param("psi", &psi);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Doubly],
        vec![],
        move |s, t| {
            let r = at(&psi, t, s, t)? / at(&psi, s, s, t)?;
            m2([[0.5 * (1.0 + r), 0.5 * (1.0 - r)], [0.5 * (1.0 - r), 0.5 * (1.0 + r)]])
        },
    ))
}

/// Identity while `t < b`, the uniform ½ matrix once `t >= b`.
pub fn q3(b: f64, _v: &Validation) -> Result<SquareProcessFamily> {
    require_cutoff("q3", "b", b)?;
    let desc = Descriptor::new("q3").param("b", b);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Doubly],
        vec![b],
        move |_s, t| {
            if t < b {
                m2([[1.0, 0.0], [0.0, 1.0]])
            } else {
                m2([[0.5, 0.5], [0.5, 0.5]])
            }
        },
    ))
}

/// `[[1, 0], [1-r, r]]` with `r = ψ(t)/ψ(s)`.
pub fn q4(psi: ScalarTimeFunction, v: &Validation) -> Result<SquareProcessFamily> {
    v.require("q4", "psi", &psi, Property::Positive)?;
    v.require("q4", "psi", &psi, Property::Decreasing)?;
    let desc = Descriptor::new("q4").param("psi", &psi);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Right],
        vec![],
        move |s, t| {
            let r = at(&psi, t, s, t)? / at(&psi, s, s, t)?;
            m2([[1.0, 0.0], [1.0 - r, r]])
        },
    ))
}

/// Both rows equal `[f(t), 1-f(t)]`.
pub fn q5(f: ScalarTimeFunction, v: &Validation) -> Result<SquareProcessFamily> {
    v.require("q5", "f", &f, Property::InUnitInterval)?;
    let desc = Descriptor::new("q5").param("f", &f);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Right],
        vec![],
        move |s, t| {
            let ft = at(&f, t, s, t)?;
            m2([[ft, 1.0 - ft], [ft, 1.0 - ft]])
        },
    ))
}

/// `I - (1 - θ(t)/θ(s))·K` with `K = [[c1, -c1], [-c2, c2]]`,
/// `c1 = (λ-2μ)/(2(λ-μ))`, `c2 = λ/(2(λ-μ))`; requires `0 < 2μ < λ`.
pub fn q6(lambda: f64, mu: f64, theta: ScalarTimeFunction, v: &Validation) -> Result<SquareProcessFamily> {
    if !(0.0 < 2.0 * mu && 2.0 * mu < lambda && lambda.is_finite()) {
        return Err(Error::construction(
            "q6",
            "0 < 2mu < lambda",
            "construction",
            format!("lambda = {lambda}, mu = {mu}"),
        ));
    }
    v.require("q6", "theta", &theta, Property::Positive)?;
    v.require("q6", "theta", &theta, Property::Decreasing)?;
    let c1 = (lambda - 2.0 * mu) / (2.0 * (lambda - mu));
    let c2 = lambda / (2.0 * (lambda - mu));
    let desc = Descriptor::new("q6")
        .param("lambda", lambda)
        .param("mu", mu)
        .param("theta", &theta);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Right],
        vec![],
        move |s, t| {
            let d = 1.0 - at(&theta, t, s, t)? / at(&theta, s, s, t)?;
            m2([[1.0 - c1 * d, c1 * d], [c2 * d, 1.0 - c2 * d]])
        },
    ))
}

/// Identity while `t < a`, both rows `[g(t), 1-g(t)]` once `t >= a`.
pub fn q7(a: f64, g: ScalarTimeFunction, v: &Validation) -> Result<SquareProcessFamily> {
    require_cutoff("q7", "a", a)?;
    v.require("q7", "g", &g, Property::InUnitInterval)?;
    let desc = Descriptor::new("q7").param("a", a).param("g", &g);
    Ok(SquareProcessFamily::from_fn(
        2,
        desc,
        vec![StochKind::Right],
        vec![a],
        move |s, t| {
            if t < a {
                m2([[1.0, 0.0], [0.0, 1.0]])
            } else {
                let gt = at(&g, t, s, t)?;
                m2([[gt, 1.0 - gt], [gt, 1.0 - gt]])
            }
        },
    ))
}

/// Evaluates a family at every ordered grid pair, indexed `[a][b]` for
/// `a < b`.
pub(crate) fn pair_table<M>(points: &[f64], eval: impl Fn(f64, f64) -> Result<M>) -> Result<Vec<Vec<Option<M>>>> {
    let n = points.len();
    let mut table: Vec<Vec<Option<M>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    for a in 0..n {
        for b in a + 1..n {
            table[a][b] = Some(eval(points[a], points[b])?);
        }
    }
    Ok(table)
}

/// Residual `max |U[s,t] - U[s,τ]·U[τ,t]|` for every grid triple.
pub fn kce_residual_square(family: &SquareProcessFamily, grid: &TimeGrid, tol: f64) -> Result<VerificationReport> {
    let p = grid.points();
    let table = pair_table(p, |s, t| family.eval(s, t))?;
    let get = |a: usize, b: usize| table[a][b].as_ref().expect("a < b is filled");
    let mut report = VerificationReport::new(format!("kce:{}", family.descriptor().name), tol);
    for a in 0..p.len() {
        for b in a + 1..p.len() {
            for c in b + 1..p.len() {
                let rhs = get(a, b).matmul(get(b, c))?;
                report.push_triple(p[a], p[b], p[c], get(a, c).max_abs_diff(&rhs)?);
            }
        }
    }
    Ok(report)
}

/// Checks every declared kind at every grid pair. The residual is the
/// larger of the worst sum deviation and the most negative entry.
pub fn stochasticity_square(family: &SquareProcessFamily, grid: &TimeGrid, tol: f64) -> Result<VerificationReport> {
    let mut report = VerificationReport::new(format!("stochasticity:{}", family.descriptor().name), tol);
    for (s, t) in grid.pairs() {
        let u = family.eval(s, t)?;
        let mut worst: f64 = 0.0;
        for &kind in family.kinds() {
            let chk = u.stochastic_check(kind, tol)?;
            worst = worst.max(chk.max_deviation).max(-chk.min_entry);
        }
        report.push_pair(s, t, worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> ScalarTimeFunction {
        ScalarTimeFunction::parse(s).unwrap()
    }

    #[test]
    fn q2_closed_form_value() {
        let fam = q2(f("exp(-t)"), &Validation::default()).unwrap();
        let u = fam.eval(0.0, 2f64.ln()).unwrap();
        let expected = SquareMatrix::from_rows([[0.75, 0.25], [0.25, 0.75]]).unwrap();
        assert!(u.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn q3_first_branch_is_identity() {
        let fam = q3(1.0, &Validation::default()).unwrap();
        assert_eq!(fam.eval(0.0, 0.5).unwrap(), SquareMatrix::identity(2).unwrap());
        // closed at the cutoff
        assert_eq!(fam.eval(0.0, 1.0).unwrap().as_slice(), &[0.5; 4]);
    }

    #[test]
    fn q6_tends_to_identity_as_t_approaches_s() {
        let fam = q6(2.0, 0.5, f("exp(-t)"), &Validation::default()).unwrap();
        let u = fam.eval(0.0, 1e-12).unwrap();
        assert!(u.max_abs_diff(&SquareMatrix::identity(2).unwrap()).unwrap() < 1e-9);
    }

    #[test]
    fn q1_is_left_stochastic_only() {
        let fam = q1(f("0.3"), &Validation::default()).unwrap();
        let u = fam.eval(1.0, 2.0).unwrap();
        assert_eq!(u, SquareMatrix::from_rows([[0.3, 0.3], [0.7, 0.7]]).unwrap());
        assert!(u.is_square_stochastic(StochKind::Left, 1e-12).unwrap());
        assert!(!u.is_square_stochastic(StochKind::Right, 1e-12).unwrap());
    }

    #[test]
    fn constructor_claims() {
        let v = Validation::default();
        assert!(q1(f("1.5"), &v).is_err());
        assert!(q2(f("1 + 0.5*sin(t)"), &v).is_err());
        assert!(q2(f("t - 1"), &v).is_err());
        assert!(q3(0.0, &v).is_err());
        assert!(q4(f("t + 1"), &v).is_err());
        assert!(q5(f("2*t"), &v).is_err());
        assert!(q6(2.0, 1.0, f("exp(-t)"), &v).is_err(), "2mu = lambda must fail");
        assert!(q6(2.0, 0.0, f("exp(-t)"), &v).is_err());
        assert!(q7(-1.0, f("0.5"), &v).is_err());
        let err = q2(f("1 + 0.5*sin(t)"), &v).unwrap_err();
        match err {
            Error::Construction { family, condition, .. } => {
                assert_eq!(family, "q2");
                assert!(condition.contains("decreasing"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_rejects_reversed_times() {
        let fam = q3(1.0, &Validation::default()).unwrap();
        assert!(fam.eval(2.0, 1.0).is_err());
        assert!(fam.eval(-1.0, 1.0).is_err());
    }

    #[test]
    fn corrupted_q2_is_caught() {
        let psi = f("exp(-t)");
        let bad = SquareProcessFamily::from_fn(
            2,
            Descriptor::new("q2-corrupt"),
            vec![StochKind::Doubly],
            vec![],
            move |s, t| {
                let r = psi.eval(t).unwrap() / psi.eval(s).unwrap();
                // sign of r flipped in the diagonal
                SquareMatrix::from_rows([[0.5 * (1.0 - r), 0.5 * (1.0 - r)], [0.5 * (1.0 - r), 0.5 * (1.0 + r)]])
            },
        );
        let grid = TimeGrid::uniform(5.0, 12).unwrap();
        let rep = kce_residual_square(&bad, &grid, 1e-9).unwrap();
        assert!(rep.max_residual > 0.1);
        assert!(rep.worst.is_some());
        assert!(!rep.passed());
    }

    #[test]
    fn descriptor_display() {
        let d = Descriptor::new("q6").param("lambda", 2.0).param("mu", 0.5);
        assert_eq!(d.to_string(), "q6(lambda=2, mu=0.5)");
    }
}
