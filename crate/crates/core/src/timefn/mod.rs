//! Scalar functions of time used as family parameters.

mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parser::{ParseError, ParseErrorKind};

/// Divisors with magnitude below this are an evaluation error.
pub const MIN_DIVISOR: f64 = 1e-300;

/// Slack for monotonicity and range claims.
pub const CLAIM_SLACK: f64 = 1e-12;

pub const DEFAULT_HORIZON: f64 = 10.0;
pub const DEFAULT_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot evaluate `{expr}` at t = {t}: {reason}")]
pub struct EvalError {
    pub t: f64,
    pub expr: String,
    pub reason: String,
}

/// Syntax tree over the single variable `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        let fail = |reason: &str| EvalError {
            t,
            expr: self.to_string(),
            reason: reason.to_string(),
        };
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var => t,
            Expr::Neg(a) => -a.eval(t)?,
            Expr::Add(a, b) => a.eval(t)? + b.eval(t)?,
            Expr::Sub(a, b) => a.eval(t)? - b.eval(t)?,
            Expr::Mul(a, b) => a.eval(t)? * b.eval(t)?,
            Expr::Div(a, b) => {
                let num = a.eval(t)?;
                let den = b.eval(t)?;
                if den.abs() < MIN_DIVISOR {
                    return Err(fail("division by zero"));
                }
                num / den
            }
            Expr::Exp(a) => a.eval(t)?.exp(),
            Expr::Sin(a) => a.eval(t)?.sin(),
            Expr::Cos(a) => a.eval(t)?.cos(),
            Expr::Min(a, b) => a.eval(t)?.min(b.eval(t)?),
            Expr::Max(a, b) => a.eval(t)?.max(b.eval(t)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fail("result is not finite"))
        }
    }

    pub fn depends_on_t(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var => true,
            Expr::Neg(a) | Expr::Exp(a) | Expr::Sin(a) | Expr::Cos(a) => a.depends_on_t(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.depends_on_t() || b.depends_on_t(),
        }
    }
}

/// Fully parenthesized, re-parseable form.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) if *x < 0.0 => write!(f, "(-{:?})", -x),
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var => f.write_str("t"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarTimeFunction {
    Constant(f64),
    /// `p + q·t`
    Affine {
        p: f64,
        q: f64,
    },
    /// `p + q·exp(λt)`
    Exponential {
        p: f64,
        q: f64,
        lambda: f64,
    },
    /// `1 / (p + q·t)`
    Reciprocal {
        p: f64,
        q: f64,
    },
    /// `p + q·sin(ωt + φ)`
    Periodic {
        p: f64,
        q: f64,
        omega: f64,
        phase: f64,
    },
    /// `values[i]` on `[breakpoints[i-1], breakpoints[i])`, with open ends.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    Expression(Expr),
}

impl ScalarTimeFunction {
    /// Parses the expression grammar. Expressions free of `t` that evaluate
    /// to a finite value become [`ScalarTimeFunction::Constant`].
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let e = parser::parse_expr(src)?;
        if !e.depends_on_t() {
            if let Ok(c) = e.eval(0.0) {
                return Ok(ScalarTimeFunction::Constant(c));
            }
        }
        Ok(ScalarTimeFunction::Expression(e))
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, String> {
        if values.len() != breakpoints.len() + 1 {
            return Err(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                values.len()
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("breakpoints must be strictly increasing".into());
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err("breakpoints and values must be finite".into());
        }
        Ok(ScalarTimeFunction::PiecewiseConstant { breakpoints, values })
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        let check = |v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(EvalError {
                    t,
                    expr: self.to_string(),
                    reason: "result is not finite".into(),
                })
            }
        };
        match self {
            ScalarTimeFunction::Constant(c) => check(*c),
            ScalarTimeFunction::Affine { p, q } => check(p + q * t),
            ScalarTimeFunction::Exponential { p, q, lambda } => check(p + q * (lambda * t).exp()),
            ScalarTimeFunction::Reciprocal { p, q } => {
                let den = p + q * t;
                if den.abs() < MIN_DIVISOR {
                    return Err(EvalError {
                        t,
                        expr: self.to_string(),
                        reason: "division by zero".into(),
                    });
                }
                check(1.0 / den)
            }
            ScalarTimeFunction::Periodic { p, q, omega, phase } => check(p + q * (omega * t + phase).sin()),
            ScalarTimeFunction::PiecewiseConstant { breakpoints, values } => {
                let idx = breakpoints.partition_point(|&b| b <= t);
                check(values[idx])
            }
            ScalarTimeFunction::Expression(e) => e.eval(t),
        }
    }

    /// Checks a declared property by dense sampling on `[0, horizon]`.
    pub fn validate_claim(&self, claim: &FunctionClaim) -> Result<(), ClaimViolation> {
        let ts = claim.sample_times();
        let mut prev: Option<(f64, f64)> = None;
        for &t in &ts {
            let v = self.eval(t).map_err(|e| ClaimViolation {
                property: claim.property,
                t,
                value: f64::NAN,
                detail: e.to_string(),
            })?;
            let violated =
                match claim.property {
                    Property::Positive => (v <= 0.0).then(|| format!("f({t}) = {v} is not positive")),
                    Property::InUnitInterval => (!(-CLAIM_SLACK..=1.0 + CLAIM_SLACK).contains(&v))
                        .then(|| format!("f({t}) = {v} is outside [0, 1]")),
                    Property::Decreasing => prev
                        .and_then(|(pt, pv)| (v > pv + CLAIM_SLACK).then(|| format!("f({t}) = {v} > f({pt}) = {pv}"))),
                    Property::Increasing => prev
                        .and_then(|(pt, pv)| (v < pv - CLAIM_SLACK).then(|| format!("f({t}) = {v} < f({pt}) = {pv}"))),
                };
            if let Some(detail) = violated {
                return Err(ClaimViolation {
                    property: claim.property,
                    t,
                    value: v,
                    detail,
                });
            }
            prev = Some((t, v));
        }
        Ok(())
    }
}

impl fmt::Display for ScalarTimeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarTimeFunction::Constant(c) => write!(f, "{}", Expr::Num(*c)),
            ScalarTimeFunction::Affine { p, q } => {
                write!(f, "({} + {} * t)", Expr::Num(*p), Expr::Num(*q))
            }
            ScalarTimeFunction::Exponential { p, q, lambda } => write!(
                f,
                "({} + {} * exp({} * t))",
                Expr::Num(*p),
                Expr::Num(*q),
                Expr::Num(*lambda)
            ),
            ScalarTimeFunction::Reciprocal { p, q } => {
                write!(f, "(1.0 / ({} + {} * t))", Expr::Num(*p), Expr::Num(*q))
            }
            ScalarTimeFunction::Periodic { p, q, omega, phase } => write!(
                f,
                "({} + {} * sin({} * t + {}))",
                Expr::Num(*p),
                Expr::Num(*q),
                Expr::Num(*omega),
                Expr::Num(*phase)
            ),
            // not expressible in the grammar
            ScalarTimeFunction::PiecewiseConstant { breakpoints, values } => {
                write!(f, "piecewise(breakpoints={breakpoints:?}, values={values:?})")
            }
            ScalarTimeFunction::Expression(e) => write!(f, "{e}"),
        }
    }
}

impl From<f64> for ScalarTimeFunction {
    fn from(c: f64) -> Self {
        ScalarTimeFunction::Constant(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Positive,
    Decreasing,
    Increasing,
    InUnitInterval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionClaim {
    pub property: Property,
    pub horizon: f64,
    pub samples: usize,
}

impl FunctionClaim {
    pub fn new(property: Property, horizon: f64, samples: usize) -> Result<Self, String> {
        if samples < 2 {
            return Err(format!("sample count {samples} < 2"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(format!("horizon {horizon} must be positive and finite"));
        }
        Ok(FunctionClaim {
            property,
            horizon,
            samples,
        })
    }

    pub fn with_defaults(property: Property) -> Self {
        FunctionClaim {
            property,
            horizon: DEFAULT_HORIZON,
            samples: DEFAULT_SAMPLES,
        }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let n = self.samples - 1;
        (0..=n).map(|i| self.horizon * i as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{property:?} claim fails at t = {t}: {detail}")]
pub struct ClaimViolation {
    pub property: Property,
    pub t: f64,
    pub value: f64,
    pub detail: String,
}
