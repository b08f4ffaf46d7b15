//! Run configuration: JSON schema, validation and family instantiation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use qsp_core::evolution::TrajectoryMode;
use qsp_core::families::{M1Params, M2Params, M3Params, NParams};
use qsp_core::twins::{TwinBParams, TwinCParams};
use qsp_core::{Distribution, ScalarTimeFunction, StochKind, TimeGrid, TwinModelParams, Validation};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Expr(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    layers: Vec<RawLayer>,
    #[serde(default)]
    kind: Option<StochKind>,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    validation: RawValidation,
    #[serde(default)]
    simulation: Option<RawSimulation>,
    #[serde(default)]
    output: OutputSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    t_max: f64,
    points: usize,
    extra: Vec<f64>,
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid {
            t_max: 5.0,
            points: 12,
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub kce_tol: f64,
    pub stoch_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            kce_tol: qsp_core::verify::KCE_TOL,
            stoch_tol: qsp_core::cubic::STOCH_TOL,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawValidation {
    horizon: Option<f64>,
    samples: Option<usize>,
    pair_samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    x0: Vec<f64>,
    #[serde(default)]
    s0: f64,
    times: Vec<f64>,
    #[serde(default)]
    mode: TrajectoryMode,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub report: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub t_max: f64,
    pub points: usize,
    pub extra: Vec<f64>,
}

impl GridSpec {
    /// The configured grid plus each cutoff and its neighbouring midpoints.
    pub fn build(&self, cutoffs: &[f64]) -> Result<TimeGrid, CliError> {
        let in_range: Vec<f64> = cutoffs.iter().copied().filter(|c| *c <= self.t_max).collect();
        TimeGrid::uniform(self.t_max, self.points)
            .and_then(|g| g.with_points(&self.extra))
            .and_then(|g| g.straddling(&in_range))
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub x0: Distribution,
    pub s0: f64,
    pub times: Vec<f64>,
    pub mode: TrajectoryMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SquareSpec {
    Q1 {
        g: ScalarTimeFunction,
    },
    Q2 {
        psi: ScalarTimeFunction,
    },
    Q3 {
        b: f64,
    },
    Q4 {
        psi: ScalarTimeFunction,
    },
    Q5 {
        f: ScalarTimeFunction,
    },
    Q6 {
        lambda: f64,
        mu: f64,
        theta: ScalarTimeFunction,
    },
    Q7 {
        a: f64,
        g: ScalarTimeFunction,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Square(SquareSpec),
    DirectSum(Vec<SquareSpec>),
    M1(M1Params),
    M2(M2Params),
    M3(M3Params),
    TheoremA {
        a: ScalarTimeFunction,
        b: ScalarTimeFunction,
    },
    N(NParams),
    Twin(TwinModelParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family_name: String,
    pub family: FamilySpec,
    pub kind: Option<StochKind>,
    pub grid: GridSpec,
    pub tolerances: Tolerances,
    pub validation: Validation,
    pub simulation: Option<SimulationSpec>,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Expression in `t`.
    Function,
    Number,
    OptionalNumber,
}

pub struct CatalogEntry {
    pub name: &'static str,
    pub square: bool,
    pub params: &'static [(&'static str, ParamKind)],
    pub summary: &'static str,
}

use ParamKind::{Function as F, Number as N, OptionalNumber as O};

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry {
        name: "q1",
        square: true,
        params: &[("g", F)],
        summary: "[[g(s), g(s)], [1-g(s), 1-g(s)]]; left stochastic",
    },
    CatalogEntry {
        name: "q2",
        square: true,
        params: &[("psi", F)],
        summary: "1/2 [[1+r, 1-r], [1-r, 1+r]], r = psi(t)/psi(s); doubly stochastic",
    },
    CatalogEntry {
        name: "q3",
        square: true,
        params: &[("b", N)],
        summary: "identity for t < b, uniform 1/2 for t >= b; doubly stochastic",
    },
    CatalogEntry {
        name: "q4",
        square: true,
        params: &[("psi", F)],
        summary: "[[1, 0], [1-r, r]], r = psi(t)/psi(s); right stochastic",
    },
    CatalogEntry {
        name: "q5",
        square: true,
        params: &[("f", F)],
        summary: "rows [f(t), 1-f(t)]; right stochastic",
    },
    CatalogEntry {
        name: "q6",
        square: true,
        params: &[("lambda", N), ("mu", N), ("theta", F)],
        summary: "I - (1 - theta(t)/theta(s)) K, 0 < 2 mu < lambda; right stochastic",
    },
    CatalogEntry {
        name: "q7",
        square: true,
        params: &[("a", N), ("g", F)],
        summary: "identity for t < a, rows [g(t), 1-g(t)] for t >= a; right stochastic",
    },
    CatalogEntry {
        name: "direct_sum",
        square: false,
        params: &[],
        summary: "(3|0): one right stochastic square family per middle index, given in 'layers'",
    },
    CatalogEntry {
        name: "m1",
        square: false,
        params: &[("g", F), ("u11", F), ("u21", F)],
        summary: "(12|a0) lift of q1; 0 <= u11 <= g, 0 <= u21 <= 1-g",
    },
    CatalogEntry {
        name: "m2",
        square: false,
        params: &[
            ("psi", F),
            ("zeta11", F),
            ("zeta21", F),
            ("gamma11", F),
            ("gamma21", F),
            ("psi_inf", O),
        ],
        summary: "(12|a0) lift of q2 with entrywise band conditions",
    },
    CatalogEntry {
        name: "m3",
        square: false,
        params: &[("eta11", F), ("xi21", F), ("kappa11", F), ("kappa21", F), ("b", N)],
        summary: "(12|a0) lift of q3; kappa = eta/2, xi/2 before b",
    },
    CatalogEntry {
        name: "theorem_a",
        square: false,
        params: &[("a", F), ("b", F)],
        summary: "(12|a0) from the flow [[a, 1-b], [1-a, b]] with beta_ijk = a_ik/m",
    },
    CatalogEntry {
        name: "n",
        square: false,
        params: &[
            ("a", F),
            ("b", F),
            ("alpha", F),
            ("beta", F),
            ("gamma", F),
            ("delta", F),
        ],
        summary: "(12|a0) closed form over [[a, 1-b], [1-a, b]]",
    },
    CatalogEntry {
        name: "twin_a",
        square: false,
        params: &[],
        summary: "twin model, extinction: a = 1",
    },
    CatalogEntry {
        name: "twin_b",
        square: false,
        params: &[
            ("phi", F),
            ("phi_inf", O),
            ("b", F),
            ("c", F),
            ("u", F),
            ("v", F),
            ("w", F),
            ("alpha", F),
            ("beta", F),
        ],
        summary: "twin model, survival: entries h(s) phi(t); b..w default to 0",
    },
    CatalogEntry {
        name: "twin_c",
        square: false,
        params: &[("alpha0", F), ("beta0", F), ("cutoff", N)],
        summary: "twin model, cataclysm at the cutoff",
    },
];

pub fn catalog_entry(name: &str) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.name == name)
}

/// One line per family with its parameter signature.
pub fn list_families() -> String {
    let mut out = String::new();
    for e in CATALOG {
        let sig: Vec<String> = e
            .params
            .iter()
            .map(|(n, k)| match k {
                ParamKind::Function => format!("{n}: f(t)"),
                ParamKind::Number => format!("{n}: number"),
                ParamKind::OptionalNumber => format!("{n}?: number"),
            })
            .collect();
        let kind = if e.square { "square" } else { "cubic" };
        out.push_str(&format!(
            "{:<11} {kind:<7} ({}) {}\n",
            e.name,
            sig.join(", "),
            e.summary
        ));
    }
    out
}

struct Params<'a> {
    path: String,
    map: &'a BTreeMap<String, ParamValue>,
}

impl Params<'_> {
    fn field(&self, name: &str) -> String {
        format!("{}.{name}", self.path)
    }

    fn func(&self, name: &str) -> Result<ScalarTimeFunction, CliError> {
        match self.map.get(name) {
            None => Err(CliError::Config(format!("{}: missing parameter", self.field(name)))),
            Some(ParamValue::Number(x)) => Ok(ScalarTimeFunction::Constant(*x)),
            Some(ParamValue::Expr(src)) => ScalarTimeFunction::parse(src).map_err(|e| CliError::Parse {
                field: self.field(name),
                source: e,
            }),
        }
    }

    fn func_or_zero(&self, name: &str) -> Result<ScalarTimeFunction, CliError> {
        if self.map.contains_key(name) {
            self.func(name)
        } else {
            Ok(ScalarTimeFunction::Constant(0.0))
        }
    }

    fn opt_num(&self, name: &str) -> Result<Option<f64>, CliError> {
        match self.map.get(name) {
            None => Ok(None),
            Some(ParamValue::Number(x)) => Ok(Some(*x)),
            Some(ParamValue::Expr(src)) => match ScalarTimeFunction::parse(src) {
                Ok(ScalarTimeFunction::Constant(x)) => Ok(Some(x)),
                Ok(_) => Err(CliError::Config(format!(
                    "{}: expected a number, got an expression in t",
                    self.field(name)
                ))),
                Err(e) => Err(CliError::Parse {
                    field: self.field(name),
                    source: e,
                }),
            },
        }
    }

    fn num(&self, name: &str) -> Result<f64, CliError> {
        self.opt_num(name)?
            .ok_or_else(|| CliError::Config(format!("{}: missing parameter", self.field(name))))
    }
}

fn check_known(entry: &CatalogEntry, path: &str, map: &BTreeMap<String, ParamValue>) -> Result<(), CliError> {
    for key in map.keys() {
        if !entry.params.iter().any(|(n, _)| n == key) {
            let known: Vec<&str> = entry.params.iter().map(|(n, _)| *n).collect();
            return Err(CliError::Config(format!(
                "{path}.{key}: unknown parameter for family {:?} (expected one of {known:?})",
                entry.name
            )));
        }
    }
    Ok(())
}

fn square_spec(
    name: &str,
    path: &str,
    family_path: &str,
    map: &BTreeMap<String, ParamValue>,
) -> Result<SquareSpec, CliError> {
    let entry = catalog_entry(name)
        .filter(|e| e.square)
        .ok_or_else(|| CliError::Config(format!("{family_path}: unknown square family {name:?}")))?;
    check_known(entry, path, map)?;
    let p = Params {
        path: path.to_string(),
        map,
    };
    Ok(match name {
        "q1" => SquareSpec::Q1 { g: p.func("g")? },
        "q2" => SquareSpec::Q2 { psi: p.func("psi")? },
        "q3" => SquareSpec::Q3 { b: p.num("b")? },
        "q4" => SquareSpec::Q4 { psi: p.func("psi")? },
        "q5" => SquareSpec::Q5 { f: p.func("f")? },
        "q6" => SquareSpec::Q6 {
            lambda: p.num("lambda")?,
            mu: p.num("mu")?,
            theta: p.func("theta")?,
        },
        _ => SquareSpec::Q7 {
            a: p.num("a")?,
            g: p.func("g")?,
        },
    })
}

fn family_spec(raw: &RawConfig) -> Result<FamilySpec, CliError> {
    let name = raw.family.as_str();
    let entry = catalog_entry(name).ok_or_else(|| {
        let known: Vec<&str> = CATALOG.iter().map(|e| e.name).collect();
        CliError::Config(format!("family: unknown family {name:?} (known: {})", known.join(", ")))
    })?;
    if name != "direct_sum" && !raw.layers.is_empty() {
        return Err(CliError::Config(
            "layers: only the direct_sum family takes layers".into(),
        ));
    }
    if entry.square {
        return Ok(FamilySpec::Square(square_spec(name, "params", "family", &raw.params)?));
    }
    check_known(entry, "params", &raw.params)?;
    let p = Params {
        path: "params".into(),
        map: &raw.params,
    };
    Ok(match name {
        "direct_sum" => {
            if raw.layers.is_empty() {
                return Err(CliError::Config("layers: direct_sum needs at least two layers".into()));
            }
            let layers = raw
                .layers
                .iter()
                .enumerate()
                .map(|(n, l)| {
                    square_spec(
                        &l.family,
                        &format!("layers[{n}].params"),
                        &format!("layers[{n}].family"),
                        &l.params,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            FamilySpec::DirectSum(layers)
        }
        "m1" => FamilySpec::M1(M1Params {
            g: p.func("g")?,
            u11: p.func("u11")?,
            u21: p.func("u21")?,
        }),
        "m2" => FamilySpec::M2(M2Params {
            psi: p.func("psi")?,
            zeta11: p.func("zeta11")?,
            zeta21: p.func("zeta21")?,
            gamma11: p.func("gamma11")?,
            gamma21: p.func("gamma21")?,
            psi_inf: p.opt_num("psi_inf")?,
        }),
        "m3" => FamilySpec::M3(M3Params {
            eta11: p.func("eta11")?,
            xi21: p.func("xi21")?,
            kappa11: p.func("kappa11")?,
            kappa21: p.func("kappa21")?,
            b: p.num("b")?,
        }),
        "theorem_a" => FamilySpec::TheoremA {
            a: p.func("a")?,
            b: p.func("b")?,
        },
        "n" => FamilySpec::N(NParams {
            a: p.func("a")?,
            b: p.func("b")?,
            alpha: p.func("alpha")?,
            beta: p.func("beta")?,
            gamma: p.func("gamma")?,
            delta: p.func("delta")?,
        }),
        "twin_a" => FamilySpec::Twin(TwinModelParams::ExtinctionA),
        "twin_b" => FamilySpec::Twin(TwinModelParams::SurvivalB(TwinBParams {
            phi: p.func("phi")?,
            phi_inf: p.opt_num("phi_inf")?,
            b: p.func_or_zero("b")?,
            c: p.func_or_zero("c")?,
            u: p.func_or_zero("u")?,
            v: p.func_or_zero("v")?,
            w: p.func_or_zero("w")?,
            alpha: p.func("alpha")?,
            beta: p.func("beta")?,
        })),
        _ => FamilySpec::Twin(TwinModelParams::CataclysmC(TwinCParams {
            alpha0: p.func("alpha0")?,
            beta0: p.func("beta0")?,
            cutoff: p.num("cutoff")?,
        })),
    })
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    let family = family_spec(&raw)?;

    let g = &raw.grid;
    if !(g.t_max > 0.0 && g.t_max.is_finite()) {
        return Err(CliError::Config(format!(
            "grid.t_max: must be positive, got {}",
            g.t_max
        )));
    }
    if g.points < 3 {
        return Err(CliError::Config(format!(
            "grid.points: need at least 3, got {}",
            g.points
        )));
    }
    if let Some(x) = g
        .extra
        .iter()
        .find(|x| !(x.is_finite() && **x >= 0.0 && **x <= g.t_max))
    {
        return Err(CliError::Config(format!("grid.extra: point {x} outside [0, t_max]")));
    }
    let grid = GridSpec {
        t_max: g.t_max,
        points: g.points,
        extra: g.extra.clone(),
    };
    grid.build(&[])?;

    let t = raw.tolerances;
    for (name, x) in [("kce_tol", t.kce_tol), ("stoch_tol", t.stoch_tol)] {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(CliError::Config(format!(
                "tolerances.{name}: must be a finite number >= 0"
            )));
        }
    }
    if let Some(k) = raw.kind {
        if k.is_square() != catalog_entry(&raw.family).is_some_and(|e| e.square) {
            return Err(CliError::Config(format!(
                "kind: {:?} does not apply to family {:?}",
                k.label(),
                raw.family
            )));
        }
    }

    let simulation = match &raw.simulation {
        None => None,
        Some(s) => {
            let x0 = Distribution::new(s.x0.clone()).map_err(|e| CliError::Config(format!("simulation.x0: {e}")))?;
            if s.times.is_empty() {
                return Err(CliError::Config("simulation.times: at least one time is needed".into()));
            }
            if !(s.s0 >= 0.0 && s.s0.is_finite()) {
                return Err(CliError::Config(format!("simulation.s0: must be >= 0, got {}", s.s0)));
            }
            if !(s.times[0] > s.s0) || s.times.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(CliError::Config(
                    "simulation.times: must be strictly increasing and greater than s0".into(),
                ));
            }
            Some(SimulationSpec {
                x0,
                s0: s.s0,
                times: s.times.clone(),
                mode: s.mode,
            })
        }
    };

    let mut validation = Validation::default();
    let sim_max = simulation.as_ref().map_or(0.0, |s| *s.times.last().expect("nonempty"));
    validation.horizon = raw
        .validation
        .horizon
        .unwrap_or(validation.horizon.max(grid.t_max).max(sim_max));
    if !(validation.horizon > 0.0 && validation.horizon.is_finite()) {
        return Err(CliError::Config("validation.horizon: must be positive".into()));
    }
    if let Some(n) = raw.validation.samples {
        validation.samples = n;
    }
    if let Some(n) = raw.validation.pair_samples {
        validation.pair_samples = n;
    }
    if validation.samples < 2 || validation.pair_samples < 2 {
        return Err(CliError::Config(
            "validation: samples and pair_samples must be >= 2".into(),
        ));
    }

    Ok(RunConfig {
        family_name: raw.family.clone(),
        family,
        kind: raw.kind,
        grid,
        tolerances: raw.tolerances,
        validation,
        simulation,
        output: raw.output,
    })
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}
