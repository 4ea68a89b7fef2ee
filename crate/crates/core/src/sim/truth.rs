use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::der::{
    diode_conductance, diode_current, BatteryState, BatterySystem, DerFleet,
    Dispatch, PvState, PvSystem,
};
use crate::error::{Error, Result};
use crate::estimator::base_watts;
use crate::network::GridCase;
use crate::scalar::Scalar;
use crate::sim::powerflow::{solve_powerflow, PowerFlowOptions};

/// Weather and setpoint of one PV plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvOperatingPoint<T> {
    /// W/m2.
    pub irradiance: T,
    /// Cell temperature, C.
    pub cell_temp: T,
    /// DC terminal voltage held by the tracker, volts.
    pub v_dc: T,
}

/// Inputs of one time step: PV conditions and battery AC schedules
/// (per-unit, positive while delivering to the grid).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint<T> {
    pub pv: BTreeMap<String, PvOperatingPoint<T>>,
    pub battery: BTreeMap<String, T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T> {
    pub step: usize,
    pub bus_ids: Vec<usize>,
    pub v_real: Vec<T>,
    pub v_imag: Vec<T>,
    /// Net injected `(P, Q)` per bus, per-unit, DER contributions included.
    pub injections: Vec<(T, T)>,
    pub pv: BTreeMap<String, PvState<T>>,
    pub battery: BTreeMap<String, BatteryState<T>>,
    pub dispatch: BTreeMap<String, Dispatch>,
    /// Converter efficiency in effect per DER.
    pub eta: BTreeMap<String, T>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn voltage(&self, k: usize) -> (T, T) {
        (self.v_real[k], self.v_imag[k])
    }

    pub fn magnitude(&self, k: usize) -> T {
        (self.v_real[k] * self.v_real[k] + self.v_imag[k] * self.v_imag[k]).sqrt()
    }
}

/// DC operating point of a PV plant at a held terminal voltage.
pub fn solve_pv_dc<T: Scalar>(sys: &PvSystem<T>, op: &PvOperatingPoint<T>) -> Result<PvState<T>> {
    let i_ph = sys.photocurrent(op.irradiance, op.cell_temp);
    let v = op.v_dc;
    // f(v_sh) = i_ph - i_d - v_sh / r_sh - (v_sh - v) / r_s, strictly decreasing
    let f = |x: T| i_ph - diode_current(x, sys.i_0, sys.a) - x / sys.r_sh - (x - v) / sys.r_s;
    let mut lo = v.min(T::zero()) - T::one();
    let mut hi = v.max(T::zero()) + T::one();
    while f(lo) < T::zero() {
        lo = lo - (hi - lo);
    }
    while f(hi) > T::zero() {
        hi = hi + (hi - lo);
    }
    // safeguarded Newton
    let mut x = T::of(0.5) * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx > T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let d = -(diode_conductance(x, sys.i_0, sys.a) + T::one() / sys.r_sh + T::one() / sys.r_s);
        let mut nx = x - fx / d;
        if !(nx > lo && nx < hi) {
            nx = T::of(0.5) * (lo + hi);
        }
        if (nx - x).abs() <= T::epsilon() * (T::one() + x.abs()) {
            x = nx;
            break;
        }
        x = nx;
    }
    let i_pv = (x - v) / sys.r_s;
    if i_pv < T::zero() {
        return Err(Error::InvalidParameter(format!(
            "PV `{}` absorbs power at v_dc = {v}",
            sys.id
        )));
    }
    Ok(PvState::new(sys, x, v, i_pv, i_ph))
}

/// Unit-level DC power behind a battery converter delivering `p_ac` per-unit,
/// and the efficiency in effect.
pub fn battery_dc_power<T: Scalar>(sys: &BatterySystem<T>, p_ac: T, base_mva: T) -> Result<(T, T)> {
    let s = sys.dc_to_pu(base_mva);
    if p_ac < T::zero() {
        let eta = sys.rectifier.efficiency(-p_ac * base_watts(base_mva))?;
        return Ok((eta * p_ac / s, eta));
    }
    // p_dc s eta(scale p_dc) = p_ac, increasing in p_dc
    let mut p = p_ac / s;
    for _ in 0..100 {
        let eta = sys.inverter.efficiency(sys.scale * p)?;
        let e = sys.inverter.gamma * (-sys.inverter.gamma * sys.scale * p).exp();
        let deta = eta * sys.scale * e / (T::one() + (-sys.inverter.gamma * sys.scale * p).exp());
        let f = p * s * eta - p_ac;
        let df = s * (eta + p * deta);
        let np = p - f / df;
        if (np - p).abs() <= T::of(4.0) * T::epsilon() * (T::one() + p.abs()) {
            p = np;
            break;
        }
        p = np;
    }
    Ok((p, sys.inverter.efficiency(sys.scale * p)?))
}

/// One trapezoidal step of `C dV/dt = -I - V / R_SD`.
pub fn soc_next<T: Scalar>(sys: &BatterySystem<T>, soc_prev: T, i_prev: T, i_t: T, dt: T) -> T {
    let h = dt / (T::of(2.0) * sys.r_sd);
    let half = T::of(0.5) * dt;
    (soc_prev * (sys.c_cap - h) - half * (i_t + i_prev)) / (sys.c_cap + h)
}

const SOC_SLACK: f64 = 1e-9;

fn check_soc<T: Scalar>(soc: T, step: usize) -> Result<()> {
    if soc < -T::of(SOC_SLACK) || soc > T::one() + T::of(SOC_SLACK) {
        return Err(Error::SocBoundViolation {
            step,
            soc: soc.as_f64(),
        });
    }
    Ok(())
}

/// SoC trajectory `V_SoC(0..=n_steps)` under a current profile
/// `i_bt[0..=n_steps]` (positive discharging), with self-discharge.
pub fn step_soc<T: Scalar>(
    sys: &BatterySystem<T>,
    soc0: T,
    i_bt: &[T],
    n_steps: usize,
    dt: T,
) -> Result<Vec<T>> {
    if !(soc0 >= T::zero() && soc0 <= T::one()) {
        return Err(Error::SocOutOfRange(soc0.as_f64()));
    }
    if i_bt.len() < n_steps + 1 {
        return Err(Error::InvalidParameter(format!(
            "current profile has {} samples, need {}",
            i_bt.len(),
            n_steps + 1
        )));
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(soc0);
    for t in 1..=n_steps {
        let s = soc_next(sys, out[t - 1], i_bt[t - 1], i_bt[t], dt);
        check_soc(s, t)?;
        out.push(s);
    }
    Ok(out)
}

/// Battery DC state at one step. With `prev = Some((soc, i))` the SoC moves
/// by one trapezoidal step together with the unknown current; otherwise
/// `soc0` is the state of charge.
fn solve_battery_dc<T: Scalar>(
    sys: &BatterySystem<T>,
    p_dc: T,
    soc0: T,
    prev: Option<(T, T)>,
    dt: T,
    step: usize,
) -> Result<BatteryState<T>> {
    // soc = alpha - beta i, v_bt = A - B i
    let (alpha, beta) = match prev {
        Some((s_prev, i_prev)) => {
            let h = dt / (T::of(2.0) * sys.r_sd);
            let d = sys.c_cap + h;
            (
                (s_prev * (sys.c_cap - h) - T::of(0.5) * dt * i_prev) / d,
                T::of(0.5) * dt / d,
            )
        }
        None => (soc0, T::zero()),
    };
    let a = sys.ocv_a + sys.ocv_b * alpha;
    let b = sys.ocv_b * beta + sys.r_se;
    let disc = a * a - T::of(4.0) * b * p_dc;
    if disc < T::zero() {
        return Err(Error::InvalidParameter(format!(
            "battery `{}` cannot deliver {p_dc} W per unit",
            sys.id
        )));
    }
    let i = T::of(2.0) * p_dc / (a + disc.sqrt());
    let soc = alpha - beta * i;
    check_soc(soc, step)?;
    // exact map even within the bound slack
    let v_oc = sys.ocv_a + sys.ocv_b * soc;
    let v_bt = v_oc - sys.r_se * i;
    Ok(BatteryState {
        v_soc: soc,
        v_oc,
        v_bt,
        i_bt: i,
        p_bt: i * v_bt,
    })
}

/// Ground truth of the combined circuit at one operating point.
///
/// `prev` carries each battery's `(V_SoC, I_Bt)` of the previous step; a
/// battery missing there starts from `soc0`.
pub fn solve_combined_powerflow<T: Scalar>(
    case: &GridCase<T>,
    fleet: &DerFleet<T>,
    op: &OperatingPoint<T>,
    soc0: &BTreeMap<String, T>,
    prev: &BTreeMap<String, (T, T)>,
    dt: T,
    step: usize,
) -> Result<GroundTruth<T>> {
    let n = case.n_buses();
    let mut extra = vec![(T::zero(), T::zero()); n];
    let mut pv_states = BTreeMap::new();
    let mut bt_states = BTreeMap::new();
    let mut dispatch = BTreeMap::new();
    let mut eta = BTreeMap::new();

    for sys in &fleet.pv {
        let o = op.pv.get(&sys.id).ok_or_else(|| Error::Scenario {
            field: format!("pv.{}", sys.id),
            msg: "no operating point".into(),
        })?;
        let st = solve_pv_dc(sys, o)?;
        let e = sys.inverter.efficiency(sys.scale * st.p_pv)?;
        let k = case.index_of(sys.bus)?;
        extra[k].0 = extra[k].0 + e * sys.dc_to_pu(case.base_mva) * st.p_pv;
        pv_states.insert(sys.id.clone(), st);
        eta.insert(sys.id.clone(), e);
    }
    for sys in &fleet.battery {
        let p_ac = op.battery.get(&sys.id).copied().unwrap_or(T::zero());
        let (p_dc, e) = battery_dc_power(sys, p_ac, case.base_mva)?;
        let s0 = soc0.get(&sys.id).copied().unwrap_or(T::of(0.5));
        let st = solve_battery_dc(sys, p_dc, s0, prev.get(&sys.id).copied(), dt, step)?;
        let k = case.index_of(sys.bus)?;
        extra[k].0 = extra[k].0 + p_ac;
        bt_states.insert(sys.id.clone(), st);
        dispatch.insert(sys.id.clone(), Dispatch::from_injection(p_ac.as_f64()));
        eta.insert(sys.id.clone(), e);
    }

    let pf = solve_powerflow(case, &extra, &PowerFlowOptions::default())?;
    Ok(GroundTruth {
        step,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        v_real: pf.v_real,
        v_imag: pf.v_imag,
        injections: pf.injections,
        pv: pv_states,
        battery: bt_states,
        dispatch,
        eta,
    })
}

/// Truth over steps `0..schedule.len()`; step 0 starts every battery at `soc0`.
pub fn simulate_schedule<T: Scalar>(
    case: &GridCase<T>,
    fleet: &DerFleet<T>,
    schedule: &[OperatingPoint<T>],
    soc0: &BTreeMap<String, T>,
    dt: T,
) -> Result<Vec<GroundTruth<T>>> {
    let mut out: Vec<GroundTruth<T>> = Vec::with_capacity(schedule.len());
    for (t, op) in schedule.iter().enumerate() {
        let prev: BTreeMap<String, (T, T)> = match out.last() {
            Some(g) => g
                .battery
                .iter()
                .map(|(id, s)| (id.clone(), (s.v_soc, s.i_bt)))
                .collect(),
            None => BTreeMap::new(),
        };
        out.push(solve_combined_powerflow(case, fleet, op, soc0, &prev, dt, t)?);
    }
    Ok(out)
}
