//! TOML run and experiment configuration.
//!
//! Sections: `[region] [agents] [protocol] [mobility] [instrumentation]
//! [experiment]`. Unknown sections or keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{GeometryError, MobilityError, SimError};
use crate::experiments::{ExperimentPlan, SweepAxes};
use crate::geometry::{Point, Region};
use crate::params::{
    Calibration, DumpCells, Instrumentation, MobilityMode, PhaseOrder, SimParams, Sources,
    TransmissionScope,
};

pub const SEED_ENV: &str = "REDWAVE_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("regime {regime} violated: {detail}")]
    Regime { regime: Regime, detail: String },
    #[error("unsatisfiable geometry: {0}")]
    Geometry(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("invalid {SEED_ENV} value `{0}`")]
    SeedEnv(String),
}

impl ConfigError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "E_IO",
            ConfigError::Parse(_) => "E_PARSE",
            ConfigError::UnknownKey(_) => "E_UNKNOWN_KEY",
            ConfigError::MissingKey(_) => "E_MISSING_KEY",
            ConfigError::Regime { .. } => "E_REGIME",
            ConfigError::Geometry(_) => "E_GEOMETRY",
            ConfigError::Invalid(_) => "E_INVALID",
            ConfigError::SeedEnv(_) => "E_SEED_ENV",
        }
    }
}

impl From<SimError> for ConfigError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Geometry(g) => ConfigError::Geometry(g.to_string()),
            SimError::Mobility(MobilityError::Geometry(g)) => ConfigError::Geometry(g.to_string()),
            SimError::Mobility(m @ MobilityError::SupergridMismatch { .. }) => {
                ConfigError::Geometry(m.to_string())
            }
            other => ConfigError::Invalid(other.to_string()),
        }
    }
}

impl From<GeometryError> for ConfigError {
    fn from(e: GeometryError) -> Self {
        ConfigError::Geometry(e.to_string())
    }
}

/// Parameter regime a config may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `rho <= R / (2 sqrt 2)`.
    Sec3,
    /// `R / 2 <= rho <= alpha R^2 / sqrt(ln n)`.
    Sec4,
    /// `5R <= rho`, cellular walk, `rho` a multiple of the cell side.
    Sec5,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Sec3 => "sec3",
            Regime::Sec4 => "sec4",
            Regime::Sec5 => "sec5",
        })
    }
}

impl Regime {
    pub fn check(self, p: &SimParams) -> Result<(), ConfigError> {
        let (r, rho) = (p.radius, p.rho());
        let fail = |detail: String| Err(ConfigError::Regime { regime: self, detail });
        match self {
            Regime::Sec3 => {
                let max = r / (2.0 * std::f64::consts::SQRT_2);
                if p.mobility.is_cellular() {
                    return fail("requires the standard walk".into());
                }
                if rho > max * (1.0 + 1e-12) {
                    return fail(format!("rho = {rho} exceeds R/(2 sqrt 2) = {max}"));
                }
            }
            Regime::Sec4 => {
                let ln_n = (p.n as f64).ln();
                let max = p.instrumentation.calibration.alpha * r * r / ln_n.sqrt();
                if p.mobility.is_cellular() {
                    return fail("requires the standard walk".into());
                }
                if rho < r / 2.0 || rho > max * (1.0 + 1e-12) {
                    return fail(format!("rho = {rho} outside [R/2, alpha R^2/sqrt(ln n)] = [{}, {max}]", r / 2.0));
                }
            }
            Regime::Sec5 => {
                if !p.mobility.is_cellular() {
                    return fail("requires the cellular walk".into());
                }
                if rho < 5.0 * r * (1.0 - 1e-12) {
                    return fail(format!("rho = {rho} below 5R = {}", 5.0 * r));
                }
                let l = p.instrumentation.cell_side;
                if !crate::params::is_multiple(rho, l) {
                    return fail(format!("rho = {rho} is not a multiple of the cell side {l}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: SimParams,
    pub regime: Option<Regime>,
    /// Present when the file has an `[experiment]` section.
    pub plan: Option<ExperimentPlan>,
}

// ---- raw file layout ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    region: RawRegion,
    agents: RawAgents,
    protocol: RawProtocol,
    mobility: RawMobility,
    #[serde(default)]
    instrumentation: RawInstrumentation,
    experiment: Option<RawExperiment>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    shape: String,
    side: Option<f64>,
    radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgents {
    n: Option<usize>,
    #[serde(default)]
    density_one: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    radius: f64,
    k: Option<u32>,
    phase_order: Option<PhaseOrder>,
    scope: Option<TransmissionScope>,
    source_points: Option<Vec<[f64; 2]>>,
    source_agents: Option<Vec<usize>>,
    seed: Option<u64>,
    max_steps: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMobility {
    mode: String,
    rho: f64,
    burn_in: Option<u32>,
    regime: Option<Regime>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstrumentation {
    cell_side: Option<f64>,
    gamma: Option<f64>,
    cells: Option<bool>,
    supercells: Option<bool>,
    dump_cells: Option<DumpCells>,
    eta1: Option<f64>,
    eta2: Option<f64>,
    c0: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    replicas: u32,
    #[serde(default)]
    l: Vec<f64>,
    #[serde(default)]
    radius: Vec<f64>,
    #[serde(default)]
    rho: Vec<f64>,
    #[serde(default)]
    k: Vec<u32>,
    #[serde(default)]
    n: Vec<usize>,
    #[serde(default)]
    source_points: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    keep_records: bool,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("region", &["shape", "side", "radius"]),
    ("agents", &["n", "density_one"]),
    (
        "protocol",
        &["radius", "k", "phase_order", "scope", "source_points", "source_agents", "seed", "max_steps"],
    ),
    ("mobility", &["mode", "rho", "burn_in", "regime"]),
    (
        "instrumentation",
        &["cell_side", "gamma", "cells", "supercells", "dump_cells", "eta1", "eta2", "c0", "alpha"],
    ),
    ("experiment", &["replicas", "l", "radius", "rho", "k", "n", "source_points", "keep_records"]),
];

fn check_keys(table: &toml::Table) -> Result<(), ConfigError> {
    for (section, value) in table {
        let Some((_, keys)) = KNOWN.iter().find(|(s, _)| s == section) else {
            return Err(ConfigError::UnknownKey(section.clone()));
        };
        let toml::Value::Table(t) = value else {
            return Err(ConfigError::Parse(format!("`{section}` must be a table")));
        };
        if let Some(k) = t.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(format!("{section}.{k}")));
        }
    }
    for section in ["region", "agents", "protocol", "mobility"] {
        if !table.contains_key(section) {
            return Err(ConfigError::MissingKey(section.into()));
        }
    }
    Ok(())
}

fn points(v: &[[f64; 2]]) -> Vec<Point> {
    v.iter().map(|p| Point::new(p[0], p[1])).collect()
}

/// Parses configuration text. `seed_override` replaces the file's seed.
pub fn parse_str(text: &str, seed_override: Option<u64>) -> Result<Config, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
    check_keys(&table)?;
    let raw: RawFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;

    let region = match raw.region.shape.as_str() {
        "square" => Region::Square {
            side: raw.region.side.ok_or_else(|| ConfigError::MissingKey("region.side".into()))?,
        },
        "disk" => Region::Disk {
            radius: raw.region.radius.ok_or_else(|| ConfigError::MissingKey("region.radius".into()))?,
        },
        other => return Err(ConfigError::Invalid(format!("unknown region shape `{other}`"))),
    };
    region.validate()?;

    let n = match (raw.agents.n, raw.agents.density_one) {
        (_, true) => region.area().floor() as usize,
        (Some(n), false) => n,
        (None, false) => return Err(ConfigError::MissingKey("agents.n".into())),
    };

    let rho = raw.mobility.rho;
    let mobility = match raw.mobility.mode.as_str() {
        "standard" => MobilityMode::Standard { rho },
        "cellular" => MobilityMode::Cellular { rho },
        other => return Err(ConfigError::Invalid(format!("unknown mobility mode `{other}`"))),
    };

    let pr = raw.protocol;
    let mut params = SimParams::new(region, n, pr.radius, mobility);
    params.sources = match (pr.source_points, pr.source_agents) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Invalid(
                "source_points and source_agents are mutually exclusive".into(),
            ))
        }
        (Some(p), None) => Sources::Points(points(&p)),
        (None, Some(a)) => Sources::Agents(a),
        (None, None) => Sources::RandomAgent,
    };
    if let Some(k) = pr.k {
        params.k = k;
    }
    if let Some(o) = pr.phase_order {
        params.phase_order = o;
    }
    if let Some(s) = pr.scope {
        params.scope = s;
    }
    if let Some(s) = pr.seed {
        params.seed = s;
    }
    if let Some(s) = seed_override {
        params.seed = s;
    }
    if let Some(m) = pr.max_steps {
        params.max_steps = m;
    }
    if let Some(b) = raw.mobility.burn_in {
        params.burn_in = b;
    }

    let ri = raw.instrumentation;
    let d = Calibration::default();
    params.instrumentation = Instrumentation {
        cell_side: ri.cell_side.unwrap_or(params.instrumentation.cell_side),
        gamma: ri.gamma.unwrap_or(1.0),
        cells: ri.cells.unwrap_or(false),
        supercells: ri.supercells.unwrap_or(false),
        dump_cells: ri.dump_cells.unwrap_or_default(),
        calibration: Calibration {
            eta1: ri.eta1.unwrap_or(d.eta1),
            eta2: ri.eta2.unwrap_or(d.eta2),
            c0: ri.c0.unwrap_or(d.c0),
            alpha: ri.alpha.unwrap_or(d.alpha),
        },
    };

    let regime = raw.mobility.regime;
    let plan = raw.experiment.map(|e| ExperimentPlan {
        base: params.clone(),
        axes: SweepAxes {
            l: e.l,
            radius: e.radius,
            rho: e.rho,
            k: e.k,
            n: e.n,
            sources: e.source_points.iter().map(|s| Sources::Points(points(s))).collect(),
        },
        replicas: e.replicas,
        density_one: raw.agents.density_one,
        keep_records: e.keep_records,
    });

    let config = Config {
        params,
        regime,
        plan,
    };
    config.validate()?;
    Ok(config)
}

impl Config {
    /// Structural validation of every run the config describes, then the
    /// declared regime's guards.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let runs = match &self.plan {
            Some(plan) => {
                if plan.replicas == 0 {
                    return Err(ConfigError::Invalid("experiment.replicas must be at least 1".into()));
                }
                plan.points()
            }
            None => vec![self.params.clone()],
        };
        for p in &runs {
            p.validate()?;
            if let Some(r) = self.regime {
                r.check(p)?;
            }
            let ins = &p.instrumentation;
            if ins.cells || ins.supercells {
                crate::geometry::CellGrid::build(&p.region, ins.cell_side, ins.gamma)?;
            }
        }
        Ok(())
    }
}

/// Seed from `--seed`, else from the environment, else none.
pub fn seed_override(cli_seed: Option<u64>) -> Result<Option<u64>, ConfigError> {
    if cli_seed.is_some() {
        return Ok(cli_seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| ConfigError::SeedEnv(v)),
        Err(_) => Ok(None),
    }
}

pub fn parse_config(path: &Path, cli_seed: Option<u64>) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_str(&text, seed_override(cli_seed)?)
}

fn num(v: f64) -> String {
    // shortest representation that round-trips, always with a decimal point
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn point_list(pts: &[Point]) -> String {
    let items: Vec<String> = pts.iter().map(|p| format!("[{}, {}]", num(p.x), num(p.y))).collect();
    format!("[{}]", items.join(", "))
}

fn enum_str<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("unit enum")
}

/// Canonical config text: every field explicit, fixed key order.
pub fn emit(config: &Config) -> String {
    let p = &config.params;
    let mut s = String::new();
    s.push_str("[region]\n");
    match p.region {
        Region::Square { side } => {
            let _ = writeln!(s, "shape = \"square\"\nside = {}", num(side));
        }
        Region::Disk { radius } => {
            let _ = writeln!(s, "shape = \"disk\"\nradius = {}", num(radius));
        }
    }
    let density_one = config.plan.as_ref().is_some_and(|pl| pl.density_one);
    let _ = writeln!(s, "\n[agents]\nn = {}\ndensity_one = {density_one}", p.n);
    let _ = writeln!(
        s,
        "\n[protocol]\nradius = {}\nk = {}\nphase_order = {}\nscope = {}\nseed = {}\nmax_steps = {}",
        num(p.radius),
        p.k,
        enum_str(&p.phase_order),
        enum_str(&p.scope),
        p.seed,
        p.max_steps
    );
    match &p.sources {
        Sources::RandomAgent => {}
        Sources::Points(pts) => {
            let _ = writeln!(s, "source_points = {}", point_list(pts));
        }
        Sources::Agents(ids) => {
            let _ = writeln!(s, "source_agents = {ids:?}");
        }
    }
    let mode = if p.mobility.is_cellular() { "cellular" } else { "standard" };
    let _ = writeln!(
        s,
        "\n[mobility]\nmode = \"{mode}\"\nrho = {}\nburn_in = {}",
        num(p.rho()),
        p.burn_in
    );
    if let Some(r) = config.regime {
        let _ = writeln!(s, "regime = \"{r}\"");
    }
    let ins = &p.instrumentation;
    let c = ins.calibration;
    let _ = writeln!(
        s,
        "\n[instrumentation]\ncell_side = {}\ngamma = {}\ncells = {}\nsupercells = {}\ndump_cells = {}\neta1 = {}\neta2 = {}\nc0 = {}\nalpha = {}",
        num(ins.cell_side),
        num(ins.gamma),
        ins.cells,
        ins.supercells,
        enum_str(&ins.dump_cells),
        num(c.eta1),
        num(c.eta2),
        num(c.c0),
        num(c.alpha)
    );
    if let Some(plan) = &config.plan {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "));
        let _ = writeln!(
            s,
            "\n[experiment]\nreplicas = {}\nkeep_records = {}\nl = {}\nradius = {}\nrho = {}\nk = {:?}\nn = {:?}",
            plan.replicas,
            plan.keep_records,
            list(&plan.axes.l),
            list(&plan.axes.radius),
            list(&plan.axes.rho),
            plan.axes.k,
            plan.axes.n
        );
        let sets: Vec<String> = plan
            .axes
            .sources
            .iter()
            .filter_map(|src| match src {
                Sources::Points(pts) => Some(point_list(pts)),
                _ => None,
            })
            .collect();
        let _ = writeln!(s, "source_points = [{}]", sets.join(", "));
    }
    s
}
