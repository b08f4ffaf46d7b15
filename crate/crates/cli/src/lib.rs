//! Command-line harness: builds families from JSON configurations, runs
//! verification sweeps and simulations, and writes reports.
//!
//! Exit codes: 0 every check passed, 1 a check or family construction
//! failed, 2 configuration or parse error, 3 evaluation or output error.

// `!(a < b)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use qsp_core::evolution::trajectory_with_mode;
use qsp_core::families::{
    classify_time_dependence, direct_sum_30, kce_residual_cubic, m1_family, m2_family, m3_family, n_family, p3_flow,
    stochasticity_cubic, theorem_a_family,
};
use qsp_core::markov_square::{self, kce_residual_square, stochasticity_square};
use qsp_core::timefn::ParseError;
use qsp_core::twins::{twin_family_for, verify_nine_equations};
use qsp_core::{
    CubicProcessFamily, Error as CoreError, SquareProcessFamily, TimeDependence, TimeGrid, TwinMode, Validation,
    VerificationReport,
};

pub use config::{list_families, load_config, parse_config, FamilySpec, RunConfig, SquareSpec};

/// Environment variable that overrides `tolerances.kce_tol`.
pub const TOL_ENV: &str = "QSP_DEFAULT_TOL";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("config error: {field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },

    /// A family's validity condition failed; carries the counterexample.
    #[error("construction failed: {0}")]
    Construction(CoreError),

    #[error("evaluation error: {0}")]
    Eval(CoreError),

    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse { .. } => 2,
            CliError::Construction(_) => 1,
            CliError::Eval(_) | CliError::Output { .. } => 3,
        }
    }
}

fn construction(e: CoreError) -> CliError {
    match e {
        CoreError::Construction { .. } | CoreError::Domain(_) => CliError::Construction(e),
        other => CliError::Eval(other),
    }
}

/// Options from the command line that refine a configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub strict: bool,
    /// Overrides both tolerances.
    pub tol: Option<f64>,
}

/// Reads `QSP_DEFAULT_TOL`, if set.
pub fn env_tolerance() -> Result<Option<f64>, CliError> {
    match std::env::var(TOL_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(x) if x >= 0.0 && x.is_finite() => Ok(Some(x)),
            _ => Err(CliError::Config(format!(
                "{TOL_ENV}: expected a number >= 0, got {s:?}"
            ))),
        },
    }
}

/// Applies the environment value to `kce_tol`, then `--tol` to both.
pub fn apply_tolerances(cfg: &mut RunConfig, env: Option<f64>, opts: &RunOptions) -> Result<(), CliError> {
    if let Some(x) = env {
        cfg.tolerances.kce_tol = x;
    }
    if let Some(x) = opts.tol {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(CliError::Config(format!("--tol: expected a number >= 0, got {x}")));
        }
        cfg.tolerances.kce_tol = x;
        cfg.tolerances.stoch_tol = x;
    }
    Ok(())
}

pub enum Family {
    Square(SquareProcessFamily),
    Cubic(CubicProcessFamily),
}

impl Family {
    pub fn cutoffs(&self) -> &[f64] {
        match self {
            Family::Square(f) => f.cutoffs(),
            Family::Cubic(f) => f.cutoffs(),
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            Family::Square(_) => &[],
            Family::Cubic(f) => f.warnings(),
        }
    }
}

fn build_square(spec: &SquareSpec, v: &Validation) -> Result<SquareProcessFamily, CliError> {
    let built = match spec.clone() {
        SquareSpec::Q1 { g } => markov_square::q1(g, v),
        SquareSpec::Q2 { psi } => markov_square::q2(psi, v),
        SquareSpec::Q3 { b } => markov_square::q3(b, v),
        SquareSpec::Q4 { psi } => markov_square::q4(psi, v),
        SquareSpec::Q5 { f } => markov_square::q5(f, v),
        SquareSpec::Q6 { lambda, mu, theta } => markov_square::q6(lambda, mu, theta, v),
        SquareSpec::Q7 { a, g } => markov_square::q7(a, g, v),
    };
    built.map_err(construction)
}

/// Instantiates the configured family, running its validity checks.
pub fn build_family(cfg: &RunConfig, mode: TwinMode) -> Result<Family, CliError> {
    let v = &cfg.validation;
    let cubic = match &cfg.family {
        FamilySpec::Square(s) => return Ok(Family::Square(build_square(s, v)?)),
        FamilySpec::DirectSum(layers) => {
            let layers = layers
                .iter()
                .map(|l| build_square(l, v))
                .collect::<Result<Vec<_>, _>>()?;
            direct_sum_30(layers, v)
        }
        FamilySpec::M1(p) => m1_family(p.clone(), v),
        FamilySpec::M2(p) => m2_family(p.clone(), v),
        FamilySpec::M3(p) => m3_family(p.clone(), v),
        FamilySpec::TheoremA { a, b } => {
            p3_flow(a.clone(), b.clone(), v).and_then(|flow| theorem_a_family(flow, None, v))
        }
        FamilySpec::N(p) => n_family(p.clone(), v),
        FamilySpec::Twin(p) => twin_family_for(p, v, mode),
    };
    cubic.map(Family::Cubic).map_err(construction)
}

/// Report fields of one check, without the per-point residual list.
#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub check: String,
    pub tol: f64,
    pub max_residual: f64,
    pub failures: usize,
    pub count: usize,
    pub worst: Option<qsp_core::verify::Residual>,
    #[serde(skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub components: std::collections::BTreeMap<String, f64>,
    pub passed: bool,
}

impl From<&VerificationReport> for CheckSummary {
    fn from(r: &VerificationReport) -> Self {
        CheckSummary {
            check: r.check.clone(),
            tol: r.tol,
            max_residual: r.max_residual,
            failures: r.failures,
            count: r.count,
            worst: r.worst,
            components: r.components.clone(),
            passed: r.passed(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub family: String,
    pub descriptor: qsp_core::Descriptor,
    pub dimension: usize,
    pub kind: Vec<&'static str>,
    pub product: &'static str,
    pub grid: Vec<f64>,
    pub checks: Vec<CheckSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_dependence: Option<TimeDependence>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report fields always serialize");
        s.push('\n');
        s
    }

    pub fn max_residual(&self, prefix: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.check.starts_with(prefix))
            .map(|c| c.max_residual)
            .reduce(f64::max)
    }
}

fn square_stochasticity_as(
    family: &SquareProcessFamily,
    grid: &TimeGrid,
    kind: qsp_core::StochKind,
    tol: f64,
) -> Result<VerificationReport, CoreError> {
    let mut report = VerificationReport::new(
        format!("stochasticity:{}:{}", family.descriptor().name, kind.label()),
        tol,
    );
    for (s, t) in grid.pairs() {
        let chk = family.eval(s, t)?.stochastic_check(kind, tol)?;
        report.push_pair(s, t, chk.max_deviation.max(-chk.min_entry).max(0.0));
    }
    Ok(report)
}

/// Builds the family and runs stochasticity and KCE sweeps, plus the
/// nine-equation system for twin families.
pub fn run_verify(cfg: &RunConfig, opts: &RunOptions) -> Result<VerifyReport, CliError> {
    let mode = if opts.strict { TwinMode::Strict } else { TwinMode::Grid };
    let family = build_family(cfg, mode)?;
    let grid = cfg.grid.build(family.cutoffs())?;
    let tol = cfg.tolerances;
    let mut checks = Vec::new();
    let report = match &family {
        Family::Square(f) => {
            let stoch = match cfg.kind {
                Some(k) => square_stochasticity_as(f, &grid, k, tol.stoch_tol),
                None => stochasticity_square(f, &grid, tol.stoch_tol),
            }
            .map_err(CliError::Eval)?;
            checks.push(CheckSummary::from(&stoch));
            checks.push(CheckSummary::from(
                &kce_residual_square(f, &grid, tol.kce_tol).map_err(CliError::Eval)?,
            ));
            VerifyReport {
                family: cfg.family_name.clone(),
                descriptor: f.descriptor().clone(),
                dimension: f.dim(),
                kind: match cfg.kind {
                    Some(k) => vec![k.label()],
                    None => f.kinds().iter().map(|k| k.label()).collect(),
                },
                product: "matmul",
                grid: grid.points().to_vec(),
                checks,
                time_dependence: None,
                warnings: Vec::new(),
                passed: false,
            }
        }
        Family::Cubic(f) => {
            let stoch = stochasticity_cubic(f, &grid, cfg.kind, tol.stoch_tol).map_err(CliError::Eval)?;
            checks.push(CheckSummary::from(&stoch));
            checks.push(CheckSummary::from(
                &kce_residual_cubic(f, &grid, tol.kce_tol).map_err(CliError::Eval)?,
            ));
            if matches!(cfg.family, FamilySpec::Twin(_)) {
                let nine = verify_nine_equations(f, &grid, tol.kce_tol).map_err(CliError::Eval)?;
                checks.push(CheckSummary::from(&nine));
            }
            let td = classify_time_dependence(f, &grid, None, tol.kce_tol).map_err(CliError::Eval)?;
            VerifyReport {
                family: cfg.family_name.clone(),
                descriptor: f.descriptor().clone(),
                dimension: f.dim(),
                kind: vec![cfg.kind.unwrap_or(f.kind()).label()],
                product: f.product().label(),
                grid: grid.points().to_vec(),
                checks,
                time_dependence: Some(td),
                warnings: Vec::new(),
                passed: false,
            }
        }
    };
    let warnings = family.warnings().to_vec();
    let passed = report.checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        warnings,
        passed,
        ..report
    })
}

/// Builds the family and writes the trajectory CSV of the simulation block.
pub fn run_simulate(cfg: &RunConfig) -> Result<String, CliError> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("simulation: block required for simulate".into()))?;
    let family = match build_family(cfg, TwinMode::Grid)? {
        Family::Cubic(f) => f,
        Family::Square(_) => {
            return Err(CliError::Config(format!(
                "family: {:?} is a square family and has no quadratic evolution",
                cfg.family_name
            )))
        }
    };
    if sim.x0.dim() != family.dim() {
        return Err(CliError::Config(format!(
            "simulation.x0: expected {} entries, got {}",
            family.dim(),
            sim.x0.dim()
        )));
    }
    let traj = trajectory_with_mode(&family, &sim.x0, sim.s0, &sim.times, sim.mode).map_err(CliError::Eval)?;
    Ok(traj.to_csv())
}

fn square_json(m: usize, entries: &[f64]) -> String {
    #[derive(Serialize)]
    struct Repr<'a> {
        m: usize,
        entries: &'a [f64],
    }
    serde_json::to_string(&Repr { m, entries }).expect("plain numbers always serialize")
}

fn square_text(m: usize, entries: &[f64]) -> String {
    let mut out = format!("{m}\n");
    for row in entries.chunks(m) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Evaluates the family at `(s, t)`. `json` selects the JSON encoding,
/// otherwise the plain text one.
pub fn run_eval(cfg: &RunConfig, s: f64, t: f64, json: bool) -> Result<String, CliError> {
    if !(s.is_finite() && t.is_finite() && 0.0 <= s && s < t) {
        return Err(CliError::Config(format!("--s/--t: need 0 <= s < t, got s={s}, t={t}")));
    }
    let mut out = match build_family(cfg, TwinMode::Grid)? {
        Family::Cubic(f) => {
            let p = f.eval(s, t).map_err(CliError::Eval)?;
            if json {
                p.to_json()
            } else {
                p.to_text()
            }
        }
        Family::Square(f) => {
            let u = f.eval(s, t).map_err(CliError::Eval)?;
            if json {
                square_json(u.dim(), u.as_slice())
            } else {
                square_text(u.dim(), u.as_slice())
            }
        }
    };
    if !out.ends_with('\n') {
        out.push('\n');
    }
    Ok(out)
}

/// Writes `contents` to `path` as UTF-8.
pub fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.display().to_string(),
        source,
    })
}
