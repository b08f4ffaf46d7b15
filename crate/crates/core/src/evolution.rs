//! Distribution dynamics driven by a quadratic stochastic process.
//!
//! A 3-stochastic process moves `x` by the quadratic rule
//! `x'_k = Σ_ij P_ijk x_i x_j`; a `(1,2)`-stochastic process by the linear
//! rule `x'_k = ½ Σ_ij (P_kij + P_ikj) x_j`.

use serde::{Deserialize, Serialize};

use crate::cubic::{CubicMatrix, StochKind, STOCH_TOL};
use crate::error::{Error, Result};
use crate::families::{CubicProcessFamily, M1Params, M2Params};
use crate::fmt::g17;

/// Simplex tolerance on entries and on the total.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Largest total drift a step may renormalize away.
const RENORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    x: Vec<f64>,
}

impl Distribution {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        crate::cubic::check_dim(x.len())?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { offset: i });
        }
        if let Some(v) = x.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!("distribution has a negative entry {v}")));
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("distribution sums to {sum}, not 1")));
        }
        Ok(Distribution { x })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Clamps round-off below zero and renormalizes a drifted total.
    /// Entries below `-1e-12` are errors.
    fn from_step(mut x: Vec<f64>) -> Result<Self> {
        for v in x.iter_mut() {
            if *v < -SIMPLEX_TOL || !v.is_finite() {
                return Err(Error::Domain(format!("step left the simplex: entry {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > RENORM_TOL {
            return Err(Error::Domain(format!("step left the simplex: total {sum}")));
        }
        if sum != 1.0 {
            x.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Distribution { x })
    }
}

fn require_kind(p: &CubicMatrix, kind: StochKind, x: &Distribution) -> Result<()> {
    if p.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: x.dim(),
        });
    }
    let chk = p.is_stochastic(kind, STOCH_TOL)?;
    if !chk.ok {
        return Err(Error::Domain(format!(
            "matrix is not {}-stochastic (max deviation {}, min entry {})",
            kind.label(),
            chk.max_deviation,
            chk.min_entry
        )));
    }
    Ok(())
}

/// `x'_k = Σ_ij P_ijk x_i x_j` for 3-stochastic `P`.
pub fn step_quadratic(p: &CubicMatrix, x: &Distribution) -> Result<Distribution> {
    require_kind(p, StochKind::Three, x)?;
    let m = p.dim();
    let xs = x.as_slice();
    let mut out = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            let w = xs[i] * xs[j];
            for (k, o) in out.iter_mut().enumerate() {
                *o += p.get(i, j, k) * w;
            }
        }
    }
    Distribution::from_step(out)
}

/// `x'_k = ½ Σ_ij (P_kij + P_ikj) x_j` for `(1,2)`-stochastic `P`.
pub fn step_linear_12(p: &CubicMatrix, x: &Distribution) -> Result<Distribution> {
    require_kind(p, StochKind::OneTwo, x)?;
    let m = p.dim();
    let xs = x.as_slice();
    let out = (0..m)
        .map(|k| {
            let mut acc = 0.0;
            for i in 0..m {
                for (j, xj) in xs.iter().enumerate() {
                    acc += (p.get(k, i, j) + p.get(i, k, j)) * xj;
                }
            }
            0.5 * acc
        })
        .collect();
    Distribution::from_step(out)
}

/// Applies the rule selected by the family's kind.
pub fn step_for(family: &CubicProcessFamily, p: &CubicMatrix, x: &Distribution) -> Result<Distribution> {
    match family.kind() {
        StochKind::Three => step_quadratic(p, x),
        StochKind::OneTwo => step_linear_12(p, x),
        other => Err(Error::Domain(format!(
            "no evolution rule for {}-stochastic families",
            other.label()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    /// `x(tᵢ) = step(M[s₀, tᵢ], x₀)`.
    #[default]
    OneShot,
    /// `x(tᵢ) = step(M[tᵢ₋₁, tᵢ], x(tᵢ₋₁))` with `t₋₁ = s₀`.
    Iterated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub s0: f64,
    pub times: Vec<f64>,
    pub points: Vec<Distribution>,
    pub family: String,
    pub mode: TrajectoryMode,
}

impl Trajectory {
    /// Header `t,x0,...,x{m-1}` and one row per time, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let m = self.points.first().map_or(0, Distribution::dim);
        let mut out = String::from("t");
        for i in 0..m {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.points) {
            out.push_str(&g17(*t));
            for v in x.as_slice() {
                out.push(',');
                out.push_str(&g17(*v));
            }
            out.push('\n');
        }
        out
    }
}

fn check_times(s0: f64, times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Domain("trajectory needs at least one time".into()));
    }
    if !(times[0] > s0) {
        return Err(Error::Domain(format!("first time {} must exceed s0 = {s0}", times[0])));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("trajectory times must be strictly increasing".into()));
    }
    Ok(())
}

fn at_time(t: f64, e: Error) -> Error {
    match e {
        e @ Error::FamilyEval { .. } => e,
        other => Error::Domain(format!("at t={t}: {other}")),
    }
}

/// One distribution per time, each obtained from `x0` in a single
/// transition `M[s0, t]`.
pub fn trajectory(family: &CubicProcessFamily, x0: &Distribution, s0: f64, times: &[f64]) -> Result<Trajectory> {
    trajectory_with_mode(family, x0, s0, times, TrajectoryMode::OneShot)
}

pub fn trajectory_with_mode(
    family: &CubicProcessFamily,
    x0: &Distribution,
    s0: f64,
    times: &[f64],
    mode: TrajectoryMode,
) -> Result<Trajectory> {
    check_times(s0, times)?;
    let mut points = Vec::with_capacity(times.len());
    let (mut prev_t, mut prev_x) = (s0, x0.clone());
    for &t in times {
        let x = match mode {
            TrajectoryMode::OneShot => {
                let p = family.eval(s0, t)?;
                step_for(family, &p, x0).map_err(|e| at_time(t, e))?
            }
            TrajectoryMode::Iterated => {
                let p = family.eval(prev_t, t)?;
                step_for(family, &p, &prev_x).map_err(|e| at_time(t, e))?
            }
        };
        prev_t = t;
        prev_x = x.clone();
        points.push(x);
    }
    Ok(Trajectory {
        s0,
        times: times.to_vec(),
        points,
        family: family.descriptor().to_string(),
        mode,
    })
}

/// `(A(s), 1 - A(s))` with `A(s) = ½(g(s) + u11(s) + u21(s))`.
pub fn closed_form_m1(p: &M1Params, s: f64) -> Result<Distribution> {
    let a = p.a_of(s)?;
    Distribution::from_step(vec![a, 1.0 - a])
}

/// The `t → ∞` limit of the m2 dynamics started from `x_s` at time `s`.
pub fn closed_form_m2_limit(p: &M2Params, s: f64, x_s: &Distribution) -> Result<Distribution> {
    let inf = p
        .psi_inf
        .ok_or_else(|| Error::Domain("no limit of psi declared; the m2 limit needs psi_inf".into()))?;
    if x_s.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: x_s.dim(),
        });
    }
    let zeta = 1.0 + p.zeta11.eval(s)? + p.zeta21.eval(s)?;
    let g = (p.gamma11.eval(s)? + p.gamma21.eval(s)? + 1.0 / p.psi.eval(s)?) * inf;
    let [x1, x2] = [x_s.as_slice()[0], x_s.as_slice()[1]];
    let lim = 0.25 * (zeta + g) * x1 + 0.25 * (zeta - g) * x2;
    Distribution::from_step(vec![lim, 1.0 - lim])
}
