//! Measurement records consumed by the estimators.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::der::{BatteryMeasurement, PvMeasurement};
use crate::error::Result;
use crate::network::feature_transform;
use crate::scalar::Scalar;

/// RTU reading at a bus. `p_z` is the active power drawn from the bus and
/// `q_z` the reactive power in admittance sign (positive capacitive), so the
/// measurement circuit is the admittance `(p_z + j q_z) / |V|_z^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtuMeasurement<T> {
    pub bus: usize,
    pub p_z: T,
    pub q_z: T,
    pub v_z: T,
    pub sigma: T,
}

impl<T: Scalar> RtuMeasurement<T> {
    /// Feature-transformed `(g_z, b_z)`.
    pub fn admittance(&self) -> Result<(T, T)> {
        feature_transform(self.p_z, self.q_z, self.v_z)
    }

    /// Reading implied by a bus injecting `(p_inj, q_inj)` at voltage magnitude `v`.
    pub fn from_injection(bus: usize, p_inj: T, q_inj: T, v: T, sigma: T) -> Self {
        Self {
            bus,
            p_z: -p_inj,
            q_z: q_inj,
            v_z: v,
            sigma,
        }
    }
}

/// All readings of one instance at one time step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet<T> {
    pub rtu: BTreeMap<usize, RtuMeasurement<T>>,
    pub pv: BTreeMap<String, PvMeasurement<T>>,
    pub battery: BTreeMap<String, BatteryMeasurement<T>>,
    /// Channels carrying an injected bias, e.g. `pv3.z_v`.
    #[serde(default)]
    pub biased: BTreeSet<String>,
}
