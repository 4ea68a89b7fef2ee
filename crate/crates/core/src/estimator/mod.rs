//! Equality-constrained weighted least squares over measurement circuits.
//!
//! Every measured device is replaced by its measurement circuit with explicit
//! noise variables; the estimate minimizes the weighted noise norm subject to
//! the circuit's Kirchhoff constraints. Four routines share one solver: grid
//! only, PV only, battery only, and the combined grid with DER coupling
//! (optionally with unknown device parameters).

mod assemble;
mod blocks;
mod problem;
mod solver;

pub use assemble::{
    assemble_battery, assemble_combined, assemble_grid, assemble_pv, validate_param_paths,
    BatteryStep, PrevStep, BATTERY_PARAMS, PV_PARAMS,
};
pub use blocks::{BlockModel, Coupling, KclBlock, Pin};
pub use problem::{base_watts, Block, EstimationProblem, EtaLink, Slot, VarKind};
pub use solver::{kkt_residual, solve, solve_refreshed, Estimates, SolverOptions};
