//! Case, scenario and report I/O: a MATPOWER subset parser, the native JSON
//! case and scenario formats, and result files.

mod matpower;
mod report;
mod scenario;

pub use matpower::parse_matpower;
pub use report::{
    read_estimates, read_manifest, recompute_metrics, to_json, write_estimates, write_report, ESTIMATES_CSV,
    MANIFEST_JSON, METRICS_JSON, SOC_SERIES_CSV, TIMING_JSON,
};
pub use scenario::{
    builtin_case, builtin_names, builtin_scenario, case_from_json, case_to_json, load_case,
    load_config, load_scenario, open_scenario, parse_config, resolve, resolve_config, BatteryConfig, CurveConfig, DerConfig, PoiTie,
    PvConfig, Regime, Scenario, ScenarioConfig, Tiling, SCHEMA_VERSION,
};
