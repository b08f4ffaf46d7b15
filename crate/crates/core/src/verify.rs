//! Time grids, constructor sampling and residual reports.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::timefn::{FunctionClaim, Property, ScalarTimeFunction, DEFAULT_HORIZON, DEFAULT_SAMPLES};

/// Default tolerance for Kolmogorov-Chapman residuals.
pub const KCE_TOL: f64 = 1e-9;

const MERGE_EPS: f64 = 1e-12;

fn merge_points(mut pts: Vec<f64>) -> Vec<f64> {
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|b, a| (*b - *a).abs() <= MERGE_EPS);
    pts
}

fn linspace(t_max: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0];
    }
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}

/// Strictly increasing sample times in `[0, ∞)`, at least three of them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Domain(format!(
                "a time grid needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Domain("grid points must be finite and >= 0".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("grid points must be strictly increasing".into()));
        }
        Ok(TimeGrid { points })
    }

    /// `n` evenly spaced points on `[0, t_max]`.
    pub fn uniform(t_max: f64, n: usize) -> Result<Self> {
        if !(t_max > 0.0) {
            return Err(Error::Domain(format!("t_max = {t_max} must be positive")));
        }
        Self::new(linspace(t_max, n))
    }

    /// Adds points, merging near-duplicates.
    pub fn with_points(&self, extra: &[f64]) -> Result<Self> {
        let mut pts = self.points.clone();
        pts.extend_from_slice(extra);
        Self::new(merge_points(pts))
    }

    /// Adds each cutoff plus the midpoints to its neighbours, so triples with
    /// points on both sides and exactly on the cutoff occur.
    pub fn straddling(&self, cutoffs: &[f64]) -> Result<Self> {
        let mut grid = self.with_points(cutoffs)?;
        let mut mids = Vec::new();
        for &c in cutoffs {
            let idx = grid.points.iter().position(|&p| (p - c).abs() <= MERGE_EPS);
            if let Some(i) = idx {
                if i > 0 {
                    mids.push(0.5 * (grid.points[i - 1] + c));
                }
                if i + 1 < grid.points.len() {
                    mids.push(0.5 * (grid.points[i + 1] + c));
                }
            }
        }
        grid = grid.with_points(&mids)?;
        Ok(grid)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let p = &self.points;
        let mut out = Vec::new();
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                out.push((p[a], p[b]));
            }
        }
        out
    }

    /// All `(s, τ, t)` with `s < τ < t`.
    pub fn triples(&self) -> Vec<(f64, f64, f64)> {
        let p = &self.points;
        let mut out = Vec::new();
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                for c in b + 1..p.len() {
                    out.push((p[a], p[b], p[c]));
                }
            }
        }
        out
    }
}

/// How constructors sample their parameter functions when checking validity
/// conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub horizon: f64,
    /// Points for single-time conditions and function claims.
    pub samples: usize,
    /// Points whose ordered pairs are used for two-time conditions.
    pub pair_samples: usize,
    /// Always included, e.g. cutoffs and their neighbourhoods.
    pub extra_points: Vec<f64>,
}

impl Default for Validation {
    fn default() -> Self {
        Validation {
            horizon: DEFAULT_HORIZON,
            samples: DEFAULT_SAMPLES,
            pair_samples: 129,
            extra_points: Vec::new(),
        }
    }
}

impl Validation {
    pub fn with_horizon(horizon: f64) -> Self {
        Validation {
            horizon,
            ..Default::default()
        }
    }

    fn in_horizon(&self, extra: &[f64]) -> Vec<f64> {
        self.extra_points
            .iter()
            .chain(extra)
            .copied()
            .filter(|t| (0.0..=self.horizon).contains(t))
            .collect()
    }

    pub fn points(&self, extra: &[f64]) -> Vec<f64> {
        let mut pts = linspace(self.horizon, self.samples);
        pts.extend(self.in_horizon(extra));
        merge_points(pts)
    }

    pub fn pair_points(&self, extra: &[f64]) -> Vec<f64> {
        let mut pts = linspace(self.horizon, self.pair_samples);
        pts.extend(self.in_horizon(extra));
        merge_points(pts)
    }

    /// Ordered pairs `s < t` of [`pair_points`](Self::pair_points).
    pub fn pairs(&self, extra: &[f64]) -> Vec<(f64, f64)> {
        let p = self.pair_points(extra);
        let mut out = Vec::with_capacity(p.len() * p.len() / 2);
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                out.push((p[a], p[b]));
            }
        }
        out
    }

    pub fn claim(&self, property: Property) -> FunctionClaim {
        FunctionClaim {
            property,
            horizon: self.horizon,
            samples: self.samples.max(2),
        }
    }

    /// Validates a claim on a named parameter and converts a violation into
    /// a construction error.
    pub fn require(&self, family: &str, name: &str, f: &ScalarTimeFunction, property: Property) -> Result<()> {
        f.validate_claim(&self.claim(property)).map_err(|v| {
            Error::construction(
                family,
                format!("{name} {}", property_label(property)),
                format!("t={}", v.t),
                v.detail,
            )
        })
    }

    /// Checks `lo(t) - slack <= f(t) <= hi(t) + slack` at every sample point.
    pub fn require_between(
        &self,
        family: &str,
        condition: &str,
        extra: &[f64],
        mut value: impl FnMut(f64) -> Result<(f64, f64, f64)>,
    ) -> Result<()> {
        for t in self.points(extra) {
            let (lo, v, hi) = value(t)?;
            if v < lo - BAND_SLACK || v > hi + BAND_SLACK {
                return Err(Error::construction(
                    family,
                    condition,
                    format!("t={t}"),
                    format!("value {v} outside [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }
}

/// Slack for closed validity bands.
pub const BAND_SLACK: f64 = 1e-12;

fn property_label(p: Property) -> &'static str {
    match p {
        Property::Positive => "positive",
        Property::Decreasing => "decreasing",
        Property::Increasing => "increasing",
        Property::InUnitInterval => "in [0, 1]",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub t: f64,
    pub residual: f64,
}

/// Residual statistics of one check over a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub tol: f64,
    pub max_residual: f64,
    pub failures: usize,
    pub count: usize,
    pub worst: Option<Residual>,
    /// Maximum residual per named component, when a check has several.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<String, f64>,
    pub residuals: Vec<Residual>,
}

impl VerificationReport {
    pub fn new(check: impl Into<String>, tol: f64) -> Self {
        VerificationReport {
            check: check.into(),
            tol,
            max_residual: 0.0,
            failures: 0,
            count: 0,
            worst: None,
            components: BTreeMap::new(),
            residuals: Vec::new(),
        }
    }

    pub fn push(&mut self, r: Residual) {
        self.count += 1;
        if !(r.residual <= self.tol) {
            self.failures += 1;
        }
        // first occurrence wins on ties; NaN counts as worst
        let worse = self.worst.is_none()
            || r.residual > self.max_residual
            || (r.residual.is_nan() && !self.max_residual.is_nan());
        if worse {
            self.max_residual = r.residual;
            self.worst = Some(r);
        }
        self.residuals.push(r);
    }

    pub fn push_triple(&mut self, s: f64, tau: f64, t: f64, residual: f64) {
        self.push(Residual {
            s,
            tau: Some(tau),
            t,
            residual,
        });
    }

    pub fn push_pair(&mut self, s: f64, t: f64, residual: f64) {
        self.push(Residual {
            s,
            tau: None,
            t,
            residual,
        });
    }

    pub fn record_component(&mut self, name: &str, residual: f64) {
        let slot = self.components.entry(name.to_string()).or_insert(0.0);
        if residual > *slot || residual.is_nan() {
            *slot = residual;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    /// Merges another report into this one, as if its residuals had been
    /// pushed here.
    pub fn absorb(&mut self, other: &VerificationReport) {
        for r in &other.residuals {
            self.push(*r);
        }
        for (k, v) in &other.components {
            self.record_component(k, *v);
        }
    }
}
