//! Ground-truth generation: combined AC/DC operating points, battery SoC
//! trajectories, and noisy, biased or parameter-perturbed measurement sets.

mod powerflow;
mod rng;
mod synth;
mod truth;

pub use powerflow::{solve_powerflow, PowerFlowOptions, PowerFlowSolution};
pub use rng::NoiseRng;
pub use synth::{
    inject_bad_data, param_value, perturb_parameters, synthesize_measurements, BadData,
    NoiseModel, ParamError,
};
pub use truth::{
    battery_dc_power, simulate_schedule, soc_next, solve_combined_powerflow, solve_pv_dc,
    step_soc, GroundTruth, OperatingPoint, PvOperatingPoint,
};
