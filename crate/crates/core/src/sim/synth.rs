use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::der::{BatteryMeasurement, DerFleet, PvMeasurement};
use crate::error::{Error, Result};
use crate::measurement::{MeasurementSet, RtuMeasurement};
use crate::network::GridCase;
use crate::scalar::Scalar;
use crate::sim::rng::NoiseRng;
use crate::sim::truth::GroundTruth;

/// Measurement noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// RTU P, Q and |V|, per-unit.
    pub rtu_sigma: f64,
    /// DER voltages, currents and photocurrent pseudo-measurements, device units.
    pub der_sigma: f64,
    /// Per-DER replacements for `der_sigma`, keyed by DER id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub der_overrides: BTreeMap<String, f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rtu_sigma: 0.001,
            der_sigma: 0.1,
            der_overrides: BTreeMap::new(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtu_sigma >= 0.0
            && self.der_sigma >= 0.0
            && self.der_overrides.values().all(|s| *s >= 0.0))
        {
            return Err(Error::InvalidParameter("noise sigmas must be >= 0".into()));
        }
        Ok(())
    }

    pub fn der_sigma_for(&self, id: &str) -> f64 {
        self.der_overrides.get(id).copied().unwrap_or(self.der_sigma)
    }

    /// Sigma used for weighting: a zero sigma still needs a finite weight.
    fn weight_sigma(s: f64) -> f64 {
        if s > 0.0 {
            s
        } else {
            1e-3
        }
    }
}

/// Noisy readings of every RTU, PV and battery meter at one truth snapshot.
///
/// Draw order is fixed: RTUs by bus position `(P, Q, |V|)`, then PV systems
/// in fleet order `(V, I, I_PH)`, then batteries `(V, I)`.
pub fn synthesize_measurements<T: Scalar>(
    case: &GridCase<T>,
    fleet: &DerFleet<T>,
    truth: &GroundTruth<T>,
    noise: &NoiseModel,
    rng: &mut NoiseRng,
) -> Result<MeasurementSet<T>> {
    noise.validate()?;
    let mut out = MeasurementSet::default();
    let rs = T::of(NoiseModel::weight_sigma(noise.rtu_sigma));
    for (k, bus) in case.buses.iter().enumerate() {
        if !case.has_rtu(bus.id) {
            continue;
        }
        let (p, q) = truth.injections[k];
        let m = truth.magnitude(k);
        let mut r = RtuMeasurement::from_injection(bus.id, p, q, m, rs);
        r.p_z = r.p_z + T::of(rng.normal(noise.rtu_sigma));
        r.q_z = r.q_z + T::of(rng.normal(noise.rtu_sigma));
        r.v_z = r.v_z + T::of(rng.normal(noise.rtu_sigma));
        out.rtu.insert(bus.id, r);
    }
    for sys in &fleet.pv {
        let st = truth.pv.get(&sys.id).ok_or_else(|| Error::MissingMeasurement(sys.id.clone()))?;
        let sd = noise.der_sigma_for(&sys.id);
        let ds = T::of(NoiseModel::weight_sigma(sd));
        let z_v = st.v_pv + T::of(rng.normal(sd));
        let z_i = st.i_pv + T::of(rng.normal(sd));
        let z_ph = st.i_ph + T::of(rng.normal(sd));
        out.pv.insert(
            sys.id.clone(),
            PvMeasurement {
                z_v,
                z_i,
                z_ph,
                sigma_v: ds,
                sigma_i: ds,
                sigma_ph: ds,
            },
        );
    }
    for sys in &fleet.battery {
        let st = truth
            .battery
            .get(&sys.id)
            .ok_or_else(|| Error::MissingMeasurement(sys.id.clone()))?;
        let sd = noise.der_sigma_for(&sys.id);
        let ds = T::of(NoiseModel::weight_sigma(sd));
        let z_v = st.v_bt + T::of(rng.normal(sd));
        let z_i = st.i_bt + T::of(rng.normal(sd));
        out.battery.insert(
            sys.id.clone(),
            BatteryMeasurement {
                z_v,
                z_i,
                sigma_v: ds,
                sigma_i: ds,
            },
        );
    }
    Ok(out)
}

/// A multiplicative bias on one measurement channel, e.g. `pv3.z_v` or `bus12.p_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadData {
    pub target: String,
    pub bias: f64,
}

/// Scale each targeted reading by `1 + bias` and flag the channel.
pub fn inject_bad_data<T: Scalar>(
    meas: &MeasurementSet<T>,
    spec: &[BadData],
) -> Result<MeasurementSet<T>> {
    let mut out = meas.clone();
    for bd in spec {
        let unknown = || Error::UnknownTarget(bd.target.clone());
        let (owner, chan) = bd.target.split_once('.').ok_or_else(unknown)?;
        let f = T::of(1.0 + bd.bias);
        let slot: &mut T = if let Some(m) = out.pv.get_mut(owner) {
            match chan {
                "z_v" => &mut m.z_v,
                "z_i" => &mut m.z_i,
                "z_ph" => &mut m.z_ph,
                _ => return Err(unknown()),
            }
        } else if let Some(m) = out.battery.get_mut(owner) {
            match chan {
                "z_v" => &mut m.z_v,
                "z_i" => &mut m.z_i,
                _ => return Err(unknown()),
            }
        } else {
            let bus: usize = owner
                .strip_prefix("bus")
                .and_then(|s| s.parse().ok())
                .ok_or_else(unknown)?;
            let m = out.rtu.get_mut(&bus).ok_or_else(unknown)?;
            match chan {
                "p_z" => &mut m.p_z,
                "q_z" => &mut m.q_z,
                "v_z" => &mut m.v_z,
                _ => return Err(unknown()),
            }
        };
        *slot = *slot * f;
        out.biased.insert(bd.target.clone());
    }
    Ok(out)
}

/// A relative error applied to a nominal DER parameter, e.g. `pv1.r_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub path: String,
    pub rel_error: f64,
}

fn param_mut<'a, T: Scalar>(fleet: &'a mut DerFleet<T>, path: &str) -> Result<&'a mut T> {
    let unknown = || Error::UnknownParameter(path.to_string());
    let (id, name) = path.split_once('.').ok_or_else(unknown)?;
    if let Some(p) = fleet.pv.iter_mut().find(|p| p.id == id) {
        return match name {
            "r_s" => Ok(&mut p.r_s),
            "r_sh" => Ok(&mut p.r_sh),
            "i_0" => Ok(&mut p.i_0),
            "a" => Ok(&mut p.a),
            _ => Err(unknown()),
        };
    }
    if let Some(b) = fleet.battery.iter_mut().find(|b| b.id == id) {
        return match name {
            "r_se" => Ok(&mut b.r_se),
            "r_sd" => Ok(&mut b.r_sd),
            "c_cap" => Ok(&mut b.c_cap),
            "ocv_a" => Ok(&mut b.ocv_a),
            "ocv_b" => Ok(&mut b.ocv_b),
            _ => Err(unknown()),
        };
    }
    Err(unknown())
}

/// Value of a DER parameter by path.
pub fn param_value<T: Scalar>(fleet: &DerFleet<T>, path: &str) -> Result<T> {
    let mut f = fleet.clone();
    param_mut(&mut f, path).map(|v| *v)
}

/// The fleet handed to the estimator: listed parameters scaled by
/// `1 + rel_error`. Also returns the true values keyed by path.
pub fn perturb_parameters<T: Scalar>(
    fleet: &DerFleet<T>,
    errors: &[ParamError],
) -> Result<(DerFleet<T>, BTreeMap<String, T>)> {
    let mut out = fleet.clone();
    let mut truth = BTreeMap::new();
    for e in errors {
        let v = param_mut(&mut out, &e.path)?;
        truth.insert(e.path.clone(), *v);
        *v = *v * T::of(1.0 + e.rel_error);
    }
    Ok((out, truth))
}
