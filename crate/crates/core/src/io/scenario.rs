use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::der::{BatterySystem, ConverterKind, DerFleet, InverterCurve, PvSystem};
use crate::error::{Error, Result};
use crate::estimator::validate_param_paths;
use crate::io::matpower::parse_matpower;
use crate::network::GridCase;
use crate::sim::{BadData, NoiseModel, OperatingPoint, ParamError, PvOperatingPoint};

pub const SCHEMA_VERSION: u32 = 1;

const CASE118: &str = include_str!("../../data/case118.m");
const THREE_BUS: &str = include_str!("../../data/three_bus.m");

const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("three-bus", include_str!("../../data/scenarios/three_bus.json")),
    ("ieee118-c1", include_str!("../../data/scenarios/ieee118_c1.json")),
    ("ieee118-c1-bad-data", include_str!("../../data/scenarios/ieee118_c1_bad_data.json")),
    ("ieee118-c1-unknown-rs", include_str!("../../data/scenarios/ieee118_c1_unknown_rs.json")),
    ("ieee118-c2b", include_str!("../../data/scenarios/ieee118_c2b.json")),
    ("soc48", include_str!("../../data/scenarios/soc48.json")),
    ("tiled-1062", include_str!("../../data/scenarios/tiled_1062.json")),
];

/// Names accepted by [`builtin_scenario`].
pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_SCENARIOS.iter().map(|(n, _)| *n)
}

/// Study regime: clean data, injected bad data, or unknown parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Regime {
    #[default]
    A,
    B,
    C,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::A => "A",
            Regime::B => "B",
            Regime::C => "C",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Regime::A),
            "B" | "b" => Ok(Regime::B),
            "C" | "c" => Ok(Regime::C),
            _ => Err(field_err("scenario", format!("expected A, B or C, got `{s}`"))),
        }
    }
}

/// A converter curve, either fitted or given directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CurveConfig {
    Sigmoid { m: f64, gamma: f64 },
    Datasheet { rated_w: f64, eta_10: f64, eta_100: f64 },
}

impl CurveConfig {
    fn build(&self, kind: ConverterKind) -> Result<InverterCurve<f64>> {
        match *self {
            CurveConfig::Sigmoid { m, gamma } => InverterCurve::new(m, gamma, kind),
            CurveConfig::Datasheet {
                rated_w,
                eta_10,
                eta_100,
            } => InverterCurve::from_datasheet(rated_w, eta_10, eta_100, kind),
        }
    }
}

/// A dedicated line from the named bus to a new measured POI bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiTie {
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvConfig {
    pub id: String,
    pub bus: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi: Option<PoiTie>,
    pub r_s: f64,
    pub r_sh: f64,
    pub i_0: f64,
    pub a: f64,
    pub scale: f64,
    pub i_ph_stc: f64,
    #[serde(default)]
    pub alpha_t: f64,
    pub inverter: CurveConfig,
    pub operating: PvOperatingPoint<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub id: String,
    pub bus: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi: Option<PoiTie>,
    pub c_cap: f64,
    pub r_se: f64,
    pub r_sd: f64,
    pub ocv_a: f64,
    pub ocv_b: f64,
    pub scale: f64,
    pub inverter: CurveConfig,
    pub rectifier: CurveConfig,
    pub soc0: f64,
    /// AC output per step `0..=time_steps`, per-unit, positive discharging.
    pub schedule: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DerConfig {
    Pv(PvConfig),
    Battery(BatteryConfig),
}

impl DerConfig {
    fn id(&self) -> &str {
        match self {
            DerConfig::Pv(p) => &p.id,
            DerConfig::Battery(b) => &b.id,
        }
    }
}

/// Replicate the case and chain the copies through `tie_bus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tiling {
    pub copies: usize,
    pub tie_bus: usize,
    pub r: f64,
    pub x: f64,
}

fn default_instances() -> usize {
    100
}

fn default_steps() -> usize {
    1
}

fn default_dt() -> f64 {
    300.0
}

/// Scenario file contents. `case` is `builtin:case118`, `builtin:three-bus`
/// or a path (MATPOWER `.m` or native `.json`) relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub case: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<Tiling>,
    #[serde(default)]
    pub scenario: Regime,
    #[serde(default)]
    pub ders: Vec<DerConfig>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub bad_data: Vec<BadData>,
    #[serde(default)]
    pub unknown_params: Vec<String>,
    #[serde(default)]
    pub param_errors: Vec<ParamError>,
    #[serde(default = "default_instances")]
    pub n_instances: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_steps")]
    pub time_steps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl ScenarioConfig {
    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Bad-data injections active under the regime.
    pub fn active_bad_data(&self) -> &[BadData] {
        if self.scenario == Regime::B {
            &self.bad_data
        } else {
            &[]
        }
    }

    pub fn active_param_errors(&self) -> &[ParamError] {
        if self.scenario == Regime::C {
            &self.param_errors
        } else {
            &[]
        }
    }

    pub fn active_unknowns(&self) -> &[String] {
        if self.scenario == Regime::C {
            &self.unknown_params
        } else {
            &[]
        }
    }
}

fn field_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Scenario {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// A scenario with its case loaded, DERs attached and schedules expanded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub case: GridCase<f64>,
    pub fleet: DerFleet<f64>,
    /// Operating points for steps `0..=time_steps`.
    pub schedule: Vec<OperatingPoint<f64>>,
    pub soc0: BTreeMap<String, f64>,
}

/// Read a grid case from MATPOWER text or native JSON.
pub fn load_case(path: &Path) -> Result<GridCase<f64>> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        case_from_json(&text)
    } else {
        parse_matpower(&text)
    }
}

pub fn case_from_json(text: &str) -> Result<GridCase<f64>> {
    serde_json::from_str::<GridCase<f64>>(text)?.rebuild()
}

pub fn case_to_json(case: &GridCase<f64>) -> Result<String> {
    Ok(serde_json::to_string_pretty(case)?)
}

/// Bundled cases: `case118` and `three-bus`.
pub fn builtin_case(name: &str) -> Result<GridCase<f64>> {
    match name {
        "case118" => parse_matpower(CASE118),
        "three-bus" => parse_matpower(THREE_BUS),
        _ => Err(field_err("case", format!("no bundled case `{name}`"))),
    }
}

fn resolve_case(spec: &str, base_dir: Option<&Path>) -> Result<GridCase<f64>> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return builtin_case(name);
    }
    let mut path = PathBuf::from(spec);
    if path.is_relative() {
        if let Some(dir) = base_dir {
            path = dir.join(path);
        }
    }
    load_case(&path).map_err(|e| match e {
        Error::Io(io) => field_err("case", format!("{}: {io}", path.display())),
        other => other,
    })
}

/// Parse and validate a scenario; relative case paths resolve against `base_dir`.
pub fn load_scenario(json: &str, base_dir: Option<&Path>) -> Result<Scenario> {
    let config = parse_config(json)?;
    let case = resolve_case(&config.case, base_dir)?;
    resolve(config, case)
}

pub fn parse_config(json: &str) -> Result<ScenarioConfig> {
    serde_json::from_str(json).map_err(|e| field_err("<document>", e.to_string()))
}

/// A scenario config from a file path or bundled name, plus the directory
/// its relative case path resolves against. `A`, `B` and `C` name the
/// IEEE-118 Case-1 study in each regime.
pub fn load_config(spec: &str) -> Result<(ScenarioConfig, Option<PathBuf>)> {
    let name = match spec {
        "A" => "ieee118-c1",
        "B" => "ieee118-c1-bad-data",
        "C" => "ieee118-c1-unknown-rs",
        other => other,
    };
    if let Some((_, text)) = BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name) {
        return Ok((parse_config(text)?, None));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| field_err("scenario", format!("{spec}: {e}")))?;
    Ok((parse_config(&text)?, path.parent().map(Path::to_path_buf)))
}

/// Load the case named by `config` and resolve.
pub fn resolve_config(config: ScenarioConfig, base_dir: Option<&Path>) -> Result<Scenario> {
    let case = resolve_case(&config.case, base_dir)?;
    resolve(config, case)
}

/// Load a scenario from a file path, or a bundled scenario by name.
pub fn open_scenario(spec: &str) -> Result<Scenario> {
    let (config, dir) = load_config(spec)?;
    resolve_config(config, dir.as_deref())
}

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let (_, text) = BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| field_err("scenario", format!("no bundled scenario `{name}`")))?;
    load_scenario(text, None)
}

/// Validate `config` against an already loaded `case` and attach its DERs.
pub fn resolve(mut config: ScenarioConfig, case: GridCase<f64>) -> Result<Scenario> {
    if config.schema != SCHEMA_VERSION {
        return Err(field_err(
            "schema",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", config.schema),
        ));
    }
    if config.n_instances < 1 {
        return Err(field_err("n_instances", "must be at least 1"));
    }
    if config.time_steps < 1 {
        return Err(field_err("time_steps", "must be at least 1"));
    }
    if !(config.dt > 0.0) {
        return Err(field_err("dt", "must be positive"));
    }
    config
        .noise
        .validate()
        .map_err(|e| field_err("noise", e.to_string()))?;
    for d in &config.ders {
        if let Some(s) = match d {
            DerConfig::Pv(p) => p.sigma,
            DerConfig::Battery(b) => b.sigma,
        } {
            config.noise.der_overrides.insert(d.id().to_string(), s);
        }
    }
    config
        .noise
        .validate()
        .map_err(|e| field_err("ders.sigma", e.to_string()))?;

    let mut case = match config.tile {
        Some(t) => {
            if t.copies < 1 {
                return Err(field_err("tile.copies", "must be at least 1"));
            }
            case.tiled(t.copies, t.tie_bus, t.r, t.x)
                .map_err(|e| field_err("tile", e.to_string()))?
        }
        None => case,
    };

    let mut fleet = DerFleet::default();
    let mut schedule = vec![OperatingPoint::default(); config.time_steps + 1];
    let mut soc0 = BTreeMap::new();
    let mut hosts = BTreeSet::new();
    for (k, d) in config.ders.iter().enumerate() {
        let field = format!("ders[{k}]");
        let (bus, poi) = match d {
            DerConfig::Pv(p) => (p.bus, p.poi),
            DerConfig::Battery(b) => (b.bus, b.poi),
        };
        if case.index_of(bus).is_err() {
            return Err(field_err(&format!("{field}.bus"), format!("bus {bus} not in case")));
        }
        let poi_bus = match poi {
            Some(t) => case
                .add_tie_bus(bus, t.r, t.x)
                .map_err(|e| field_err(&format!("{field}.poi"), e.to_string()))?,
            None => {
                if case.bus(bus)?.injection.is_some() {
                    return Err(field_err(
                        &format!("{field}.bus"),
                        format!("bus {bus} has load or generation; attach through `poi`"),
                    ));
                }
                bus
            }
        };
        if !hosts.insert(poi_bus) {
            return Err(field_err(
                &format!("{field}.bus"),
                format!("bus {poi_bus} already hosts a DER"),
            ));
        }
        case.mark_measured(poi_bus)?;
        let wrap = |e: Error| field_err(&field, e.to_string());
        match d {
            DerConfig::Pv(p) => {
                let sys = PvSystem {
                    id: p.id.clone(),
                    bus: poi_bus,
                    r_s: p.r_s,
                    r_sh: p.r_sh,
                    i_0: p.i_0,
                    a: p.a,
                    scale: p.scale,
                    i_ph_stc: p.i_ph_stc,
                    alpha_t: p.alpha_t,
                    inverter: p.inverter.build(ConverterKind::Inversion).map_err(wrap)?,
                };
                sys.validate().map_err(wrap)?;
                for op in &mut schedule {
                    op.pv.insert(p.id.clone(), p.operating);
                }
                fleet.pv.push(sys);
            }
            DerConfig::Battery(b) => {
                let sys = BatterySystem {
                    id: b.id.clone(),
                    bus: poi_bus,
                    c_cap: b.c_cap,
                    r_se: b.r_se,
                    r_sd: b.r_sd,
                    ocv_a: b.ocv_a,
                    ocv_b: b.ocv_b,
                    scale: b.scale,
                    inverter: b.inverter.build(ConverterKind::Inversion).map_err(wrap)?,
                    rectifier: b.rectifier.build(ConverterKind::Rectification).map_err(wrap)?,
                };
                sys.validate().map_err(wrap)?;
                if !(0.0..=1.0).contains(&b.soc0) {
                    return Err(field_err(&format!("{field}.soc0"), "must lie in [0, 1]"));
                }
                if b.schedule.len() != config.time_steps + 1 {
                    return Err(field_err(
                        &format!("{field}.schedule"),
                        format!(
                            "has {} entries, need time_steps + 1 = {}",
                            b.schedule.len(),
                            config.time_steps + 1
                        ),
                    ));
                }
                for (op, &p) in schedule.iter_mut().zip(&b.schedule) {
                    op.battery.insert(b.id.clone(), p);
                }
                soc0.insert(b.id.clone(), b.soc0);
                fleet.battery.push(sys);
            }
        }
    }
    fleet
        .validate()
        .map_err(|e| field_err("ders", e.to_string()))?;
    validate_param_paths(&config.unknown_params, &fleet)
        .map_err(|e| field_err("unknown_params", e.to_string()))?;
    crate::sim::perturb_parameters(&fleet, &config.param_errors)
        .map_err(|e| field_err("param_errors", e.to_string()))?;
    for bd in &config.bad_data {
        let known = match bd.target.split_once('.') {
            Some((owner, chan)) => {
                let der = fleet.pv.iter().any(|p| p.id == owner)
                    && matches!(chan, "z_v" | "z_i" | "z_ph")
                    || fleet.battery.iter().any(|b| b.id == owner) && matches!(chan, "z_v" | "z_i");
                let rtu = owner
                    .strip_prefix("bus")
                    .and_then(|s| s.parse::<usize>().ok())
                    .is_some_and(|id| case.has_rtu(id))
                    && matches!(chan, "p_z" | "q_z" | "v_z");
                der || rtu
            }
            None => false,
        };
        if !known {
            return Err(field_err(
                "bad_data",
                format!("unknown measurement `{}`", bd.target),
            ));
        }
    }
    Ok(Scenario {
        config,
        case,
        fleet,
        schedule,
        soc0,
    })
}
