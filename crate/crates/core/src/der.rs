//! DC-side equivalent circuits: single-diode PV, zeroth-order battery with a
//! capacitor SoC subcircuit, sigmoid converter efficiency, and the AC/DC power
//! balance at the point of interconnection.
//!
//! DC quantities are in volts, amps and watts of one aggregated unit; a
//! system's `scale` multiplies the unit's DC power up to plant level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residual::{add_sym, LocalResidual};
use crate::scalar::Scalar;

/// Exponent argument beyond which the diode law continues linearly.
pub const DIODE_EXP_CLAMP: f64 = 40.0;

/// Watts per MW, for DC power to per-unit conversion.
pub const W_PER_MW: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConverterKind {
    /// DC to AC, `eta_inv`.
    Inversion,
    /// AC to DC, `eta_rec`.
    Rectification,
}

/// Truncated-sigmoid efficiency curve `eta(p) = m / (1 + exp(-gamma p))`, p >= 0 in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverterCurve<T> {
    pub m: T,
    pub gamma: T,
    pub kind: ConverterKind,
}

impl<T: Scalar> InverterCurve<T> {
    pub fn new(m: T, gamma: T, kind: ConverterKind) -> Result<Self> {
        if !(m > T::zero() && m <= T::of(2.0)) {
            return Err(Error::InvalidParameter(format!(
                "inverter asymptote {m} outside (0, 2]"
            )));
        }
        if !(gamma > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "inverter gamma {gamma} must be positive"
            )));
        }
        Ok(Self { m, gamma, kind })
    }

    /// Fit `(m, gamma)` through datasheet efficiencies at 10% and 100% of `rated_w`.
    ///
    /// With `u = exp(-gamma * rated_w / 10)` the two conditions reduce to
    /// `eta_10 (1 + u) = eta_100 (1 + u^10)`; the smaller root in (0, 1) is the
    /// physically meaningful (saturating) branch.
    pub fn from_datasheet(rated_w: T, eta_10: T, eta_100: T, kind: ConverterKind) -> Result<Self> {
        let (e1, e2) = (eta_10.as_f64(), eta_100.as_f64());
        let pr = rated_w.as_f64();
        if !(pr > 0.0) || !(0.0 < e1 && e1 < e2 && e2 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "datasheet points need 0 < eta_10 < eta_100 < 1 and positive rating (got {e1}, {e2}, {pr})"
            )));
        }
        let f = |u: f64| e1 * (1.0 + u) - e2 * (1.0 + u.powi(10));
        let u_peak = (e1 / (10.0 * e2)).powf(1.0 / 9.0);
        if f(u_peak) <= 0.0 {
            return Err(Error::InvalidParameter(
                "datasheet points cannot be matched by a sigmoid".into(),
            ));
        }
        let (mut lo, mut hi) = (0.0f64, u_peak);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = 0.5 * (lo + hi);
        let m = e1 * (1.0 + u);
        let gamma = -u.ln() / (0.1 * pr);
        Self::new(T::of(m), T::of(gamma), kind)
    }

    pub fn efficiency(&self, p: T) -> Result<T> {
        if p < T::zero() {
            return Err(Error::NegativeConverterPower(p.as_f64()));
        }
        Ok(self.m / (T::one() + (-self.gamma * p).exp()))
    }
}

/// Shockley diode current `i_0 (exp(v/a) - 1)`, continued linearly (C1) past
/// an exponent of [`DIODE_EXP_CLAMP`].
pub fn diode_current<T: Scalar>(v_sh: T, i_0: T, a: T) -> T {
    let arg = v_sh / a;
    let clamp = T::of(DIODE_EXP_CLAMP);
    if arg <= clamp {
        i_0 * arg.exp_m1()
    } else {
        i_0 * (clamp.exp() * (T::one() + arg - clamp) - T::one())
    }
}

/// `d i_d / d v_sh`.
pub fn diode_conductance<T: Scalar>(v_sh: T, i_0: T, a: T) -> T {
    let arg = (v_sh / a).min(T::of(DIODE_EXP_CLAMP));
    i_0 * arg.exp() / a
}

/// `d2 i_d / d v_sh2` (zero on the linear continuation).
pub fn diode_curvature<T: Scalar>(v_sh: T, i_0: T, a: T) -> T {
    let arg = v_sh / a;
    if arg <= T::of(DIODE_EXP_CLAMP) {
        i_0 * arg.exp() / (a * a)
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct PvSystem<T> {
    pub id: String,
    pub bus: usize,
    pub r_s: T,
    pub r_sh: T,
    pub i_0: T,
    /// Folded diode constant n k T / q, volts.
    pub a: T,
    /// Number of aggregated units behind the inverter.
    pub scale: T,
    /// Photocurrent at 1000 W/m2 and 25 C.
    pub i_ph_stc: T,
    /// Relative photocurrent temperature coefficient, 1/C.
    #[serde(default)]
    pub alpha_t: T,
    pub inverter: InverterCurve<T>,
}

impl<T: Scalar> PvSystem<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("r_s", self.r_s),
            ("r_sh", self.r_sh),
            ("i_0", self.i_0),
            ("a", self.a),
            ("scale", self.scale),
        ];
        for (name, v) in pos {
            if !(v > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "PV `{}`: {name} must be positive",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Photocurrent from irradiance (W/m2) and cell temperature (C).
    pub fn photocurrent(&self, irradiance: T, cell_temp: T) -> T {
        self.i_ph_stc * (irradiance / T::of(1000.0)) * (T::one() + self.alpha_t * (cell_temp - T::of(25.0)))
    }

    /// Watts of DC power to per-unit AC on `base_mva`.
    pub fn dc_to_pu(&self, base_mva: T) -> T {
        self.scale / (base_mva * T::of(W_PER_MW))
    }
}

/// PV and battery systems attached to a grid case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Default"))]
pub struct DerFleet<T> {
    #[serde(default)]
    pub pv: Vec<PvSystem<T>>,
    #[serde(default)]
    pub battery: Vec<BatterySystem<T>>,
}

impl<T> Default for DerFleet<T> {
    fn default() -> Self {
        Self {
            pv: Vec::new(),
            battery: Vec::new(),
        }
    }
}

impl<T: Scalar> DerFleet<T> {
    pub fn is_empty(&self) -> bool {
        self.pv.is_empty() && self.battery.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for id in self.pv.iter().map(|p| &p.id).chain(self.battery.iter().map(|b| &b.id)) {
            if !ids.insert(id) {
                return Err(Error::InvalidParameter(format!("duplicate DER id `{id}`")));
            }
        }
        self.pv.iter().try_for_each(PvSystem::validate)?;
        self.battery.iter().try_for_each(BatterySystem::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvState<T> {
    pub v_sh: T,
    pub v_pv: T,
    pub i_pv: T,
    pub i_d: T,
    pub i_ph: T,
    /// Unit-level DC power `i_pv * v_pv`, watts.
    pub p_pv: T,
}

impl<T: Scalar> PvState<T> {
    pub fn new(sys: &PvSystem<T>, v_sh: T, v_pv: T, i_pv: T, i_ph: T) -> Self {
        Self {
            v_sh,
            v_pv,
            i_pv,
            i_d: diode_current(v_sh, sys.i_0, sys.a),
            i_ph,
            p_pv: i_pv * v_pv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvMeasurement<T> {
    pub z_v: T,
    pub z_i: T,
    pub z_ph: T,
    pub sigma_v: T,
    pub sigma_i: T,
    pub sigma_ph: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PvNoise<T> {
    pub n_ph: T,
    pub n_i: T,
    pub n_v: T,
}

/// The four PV measurement-circuit residuals: photocurrent KCL, current meter,
/// series-resistor branch and voltage meter.
pub fn pv_residuals<T: Scalar>(
    state: &PvState<T>,
    sys: &PvSystem<T>,
    meas: &PvMeasurement<T>,
    noise: &PvNoise<T>,
) -> [T; 4] {
    let c = PvCircuit::new(meas, sys);
    let x = [
        state.v_sh, state.v_pv, state.i_pv, noise.n_ph, noise.n_i, noise.n_v, sys.r_s, sys.r_sh,
    ];
    let mut out = [T::zero(); 4];
    c.eval(&x, &mut out);
    out
}

/// PV measurement circuit over `[v_sh, v_pv, i_pv, n_ph, n_i, n_v, r_s, r_sh]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvCircuit<T> {
    pub z_ph: T,
    pub z_i: T,
    pub z_v: T,
    pub i_0: T,
    pub a: T,
}

impl<T: Scalar> PvCircuit<T> {
    pub const VARS: usize = 8;

    pub fn new(meas: &PvMeasurement<T>, sys: &PvSystem<T>) -> Self {
        Self {
            z_ph: meas.z_ph,
            z_i: meas.z_i,
            z_v: meas.z_v,
            i_0: sys.i_0,
            a: sys.a,
        }
    }
}

impl<T: Scalar> LocalResidual<T> for PvCircuit<T> {
    fn n_vars(&self) -> usize {
        Self::VARS
    }

    fn n_rows(&self) -> usize {
        4
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        let (v_sh, v_pv, i_pv, n_ph, n_i, n_v, r_s, r_sh) =
            (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
        out[0] = -self.z_ph - n_ph + diode_current(v_sh, self.i_0, self.a) + v_sh / r_sh + i_pv;
        out[1] = -i_pv + self.z_i + n_i;
        out[2] = i_pv - (v_sh - v_pv) / r_s;
        out[3] = -v_pv + self.z_v + n_v;
    }

    fn jacobian(&self, x: &[T], jac: &mut [T]) {
        let n = Self::VARS;
        let (v_sh, v_pv, r_s, r_sh) = (x[0], x[1], x[6], x[7]);
        let one = T::one();
        jac.iter_mut().for_each(|v| *v = T::zero());
        jac[0] = diode_conductance(v_sh, self.i_0, self.a) + one / r_sh;
        jac[2] = one;
        jac[3] = -one;
        jac[7] = -v_sh / (r_sh * r_sh);
        jac[n + 2] = -one;
        jac[n + 4] = one;
        jac[2 * n] = -one / r_s;
        jac[2 * n + 1] = one / r_s;
        jac[2 * n + 2] = one;
        jac[2 * n + 6] = (v_sh - v_pv) / (r_s * r_s);
        jac[3 * n + 1] = -one;
        jac[3 * n + 5] = one;
    }

    fn hessian(&self, x: &[T], lambda: &[T], h: &mut [T]) {
        let n = Self::VARS;
        let (v_sh, v_pv, r_s, r_sh) = (x[0], x[1], x[6], x[7]);
        let two = T::of(2.0);
        let (l1, l3) = (lambda[0], lambda[2]);
        add_sym(h, n, 0, 0, l1 * diode_curvature(v_sh, self.i_0, self.a));
        add_sym(h, n, 0, 7, -l1 / (r_sh * r_sh));
        add_sym(h, n, 7, 7, l1 * two * v_sh / (r_sh * r_sh * r_sh));
        add_sym(h, n, 0, 6, l3 / (r_s * r_s));
        add_sym(h, n, 1, 6, -l3 / (r_s * r_s));
        add_sym(h, n, 6, 6, -l3 * two * (v_sh - v_pv) / (r_s * r_s * r_s));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dispatch {
    Discharging,
    Charging,
}

impl Dispatch {
    /// Regime from a scheduled AC injection (positive = delivering to the grid).
    pub fn from_injection(p_ac: f64) -> Self {
        if p_ac < 0.0 {
            Dispatch::Charging
        } else {
            Dispatch::Discharging
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySystem<T> {
    pub id: String,
    pub bus: usize,
    /// Equivalent SoC capacitor, farads (coulombs per volt of V_SoC).
    pub c_cap: T,
    pub r_se: T,
    pub r_sd: T,
    pub ocv_a: T,
    pub ocv_b: T,
    pub scale: T,
    pub inverter: InverterCurve<T>,
    pub rectifier: InverterCurve<T>,
}

impl<T: Scalar> BatterySystem<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_cap", self.c_cap),
            ("r_se", self.r_se),
            ("r_sd", self.r_sd),
            ("scale", self.scale),
        ] {
            if !(v > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "battery `{}`: {name} must be positive",
                    self.id
                )));
            }
        }
        if self.ocv_b == T::zero() {
            return Err(Error::DegenerateOcvMap);
        }
        Ok(())
    }

    pub fn dc_to_pu(&self, base_mva: T) -> T {
        self.scale / (base_mva * T::of(W_PER_MW))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState<T> {
    pub v_soc: T,
    pub v_oc: T,
    pub v_bt: T,
    /// Positive while discharging.
    pub i_bt: T,
    /// Unit-level DC power `i_bt * v_bt`, watts.
    pub p_bt: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryMeasurement<T> {
    pub z_v: T,
    pub z_i: T,
    pub sigma_v: T,
    pub sigma_i: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatteryNoise<T> {
    pub n_i: T,
    pub n_v: T,
}

/// Result of an OCV/SoC map evaluation. `in_linear_band` is false outside the
/// 20-80% SoC range where the linear fit is not representative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcvValue<T> {
    pub value: T,
    pub in_linear_band: bool,
}

fn soc_band<T: Scalar>(soc: T) -> bool {
    soc >= T::of(0.2) && soc <= T::of(0.8)
}

pub fn ocv_from_soc<T: Scalar>(v_soc: T, sys: &BatterySystem<T>) -> Result<OcvValue<T>> {
    if sys.ocv_b == T::zero() {
        return Err(Error::DegenerateOcvMap);
    }
    if !(v_soc >= T::zero() && v_soc <= T::one()) {
        return Err(Error::SocOutOfRange(v_soc.as_f64()));
    }
    Ok(OcvValue {
        value: sys.ocv_a + sys.ocv_b * v_soc,
        in_linear_band: soc_band(v_soc),
    })
}

pub fn soc_from_ocv<T: Scalar>(v_oc: T, sys: &BatterySystem<T>) -> Result<OcvValue<T>> {
    if sys.ocv_b == T::zero() {
        return Err(Error::DegenerateOcvMap);
    }
    let soc = (v_oc - sys.ocv_a) / sys.ocv_b;
    if !(soc >= T::zero() && soc <= T::one()) {
        return Err(Error::SocOutOfRange(soc.as_f64()));
    }
    Ok(OcvValue {
        value: soc,
        in_linear_band: soc_band(soc),
    })
}

/// The three battery measurement-circuit residuals: current meter, series
/// resistor KVL and voltage meter.
pub fn battery_residuals<T: Scalar>(
    state: &BatteryState<T>,
    sys: &BatterySystem<T>,
    meas: &BatteryMeasurement<T>,
    noise: &BatteryNoise<T>,
) -> [T; 3] {
    let c = BatteryCircuit {
        z_i: meas.z_i,
        z_v: meas.z_v,
    };
    let x = [state.v_bt, state.v_oc, state.i_bt, noise.n_i, noise.n_v, sys.r_se];
    let mut out = [T::zero(); 3];
    c.eval(&x, &mut out);
    out
}

/// Battery measurement circuit over `[v_bt, v_oc, i_bt, n_i, n_v, r_se]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryCircuit<T> {
    pub z_i: T,
    pub z_v: T,
}

impl<T: Scalar> BatteryCircuit<T> {
    pub const VARS: usize = 6;
}

impl<T: Scalar> LocalResidual<T> for BatteryCircuit<T> {
    fn n_vars(&self) -> usize {
        Self::VARS
    }

    fn n_rows(&self) -> usize {
        3
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        let (v_bt, v_oc, i_bt, n_i, n_v, r_se) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        out[0] = -i_bt + self.z_i + n_i;
        out[1] = (v_bt - v_oc) / r_se + i_bt;
        out[2] = -v_bt + self.z_v + n_v;
    }

    fn jacobian(&self, x: &[T], jac: &mut [T]) {
        let n = Self::VARS;
        let (v_bt, v_oc, r_se) = (x[0], x[1], x[5]);
        let one = T::one();
        jac.iter_mut().for_each(|v| *v = T::zero());
        jac[2] = -one;
        jac[3] = one;
        jac[n] = one / r_se;
        jac[n + 1] = -one / r_se;
        jac[n + 2] = one;
        jac[n + 5] = -(v_bt - v_oc) / (r_se * r_se);
        jac[2 * n] = -one;
        jac[2 * n + 4] = one;
    }

    fn hessian(&self, x: &[T], lambda: &[T], h: &mut [T]) {
        let n = Self::VARS;
        let (v_bt, v_oc, r_se) = (x[0], x[1], x[5]);
        let l2 = lambda[1];
        let r2 = r_se * r_se;
        add_sym(h, n, 0, 5, -l2 / r2);
        add_sym(h, n, 1, 5, l2 / r2);
        add_sym(h, n, 5, 5, l2 * T::of(2.0) * (v_bt - v_oc) / (r2 * r_se));
    }
}

/// Trapezoidal SoC update written in open-circuit voltages, self-discharge neglected:
/// `(V_OC(t) - V_OC(t-dt)) / b + dt/(2C) [I(t) + I(t-dt)]` with `I = (V_OC - V_Bt) / R_SE`.
pub fn soc_update_residual<T: Scalar>(
    v_oc_t: T,
    v_oc_prev: T,
    v_bt_t: T,
    v_bt_prev: T,
    sys: &BatterySystem<T>,
    dt: T,
) -> Result<T> {
    if sys.ocv_b == T::zero() {
        return Err(Error::DegenerateOcvMap);
    }
    let c = SocTrapezoid {
        v_oc_prev,
        v_bt_prev,
        ocv_b: sys.ocv_b,
        c_cap: sys.c_cap,
        dt,
    };
    let mut out = [T::zero()];
    c.eval(&[v_oc_t, v_bt_t, sys.r_se], &mut out);
    Ok(out[0])
}

/// SoC trapezoid over `[v_oc, v_bt, r_se]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocTrapezoid<T> {
    pub v_oc_prev: T,
    pub v_bt_prev: T,
    pub ocv_b: T,
    pub c_cap: T,
    pub dt: T,
}

impl<T: Scalar> SocTrapezoid<T> {
    pub const VARS: usize = 3;

    fn k(&self) -> T {
        self.dt / (T::of(2.0) * self.c_cap)
    }
}

impl<T: Scalar> LocalResidual<T> for SocTrapezoid<T> {
    fn n_vars(&self) -> usize {
        Self::VARS
    }

    fn n_rows(&self) -> usize {
        1
    }

    fn eval(&self, x: &[T], out: &mut [T]) {
        let (v_oc, v_bt, r_se) = (x[0], x[1], x[2]);
        out[0] = (v_oc - self.v_oc_prev) / self.ocv_b
            + self.k() * ((v_oc - v_bt) / r_se + (self.v_oc_prev - self.v_bt_prev) / r_se);
    }

    fn jacobian(&self, x: &[T], jac: &mut [T]) {
        let (v_oc, v_bt, r_se) = (x[0], x[1], x[2]);
        let k = self.k();
        jac[0] = T::one() / self.ocv_b + k / r_se;
        jac[1] = -k / r_se;
        jac[2] = -k * (v_oc - v_bt + self.v_oc_prev - self.v_bt_prev) / (r_se * r_se);
    }

    fn hessian(&self, x: &[T], lambda: &[T], h: &mut [T]) {
        let (v_oc, v_bt, r_se) = (x[0], x[1], x[2]);
        let k = self.k() * lambda[0];
        let r2 = r_se * r_se;
        add_sym(h, 3, 0, 2, -k / r2);
        add_sym(h, 3, 1, 2, k / r2);
        add_sym(
            h,
            3,
            2,
            2,
            T::of(2.0) * k * (v_oc - v_bt + self.v_oc_prev - self.v_bt_prev) / (r2 * r_se),
        );
    }
}

/// AC quantities at a point of interconnection: bus voltage and the current
/// the converter injects into the grid, per-unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcTerminal<T> {
    pub v_real: T,
    pub v_imag: T,
    pub i_real: T,
    pub i_imag: T,
}

impl<T: Scalar> AcTerminal<T> {
    pub fn active_power(&self) -> T {
        self.v_real * self.i_real + self.v_imag * self.i_imag
    }

    /// `V^i I^r - V^r I^i`, zero at unity power factor.
    pub fn reactive_residual(&self) -> T {
        self.v_imag * self.i_real - self.v_real * self.i_imag
    }
}

/// PV inverter power balance at unity power factor. `dc_to_pu` converts the
/// unit's DC watts to per-unit plant power (see [`PvSystem::dc_to_pu`]).
pub fn pv_coupling_residuals<T: Scalar>(
    pv: &PvState<T>,
    ac: &AcTerminal<T>,
    eta_inv: T,
    dc_to_pu: T,
) -> (T, T) {
    (
        eta_inv * dc_to_pu * pv.i_pv * pv.v_pv - ac.active_power(),
        ac.reactive_residual(),
    )
}

/// Battery converter power balance: inverter losses on discharge, rectifier
/// losses on charge (both sides negative while charging).
pub fn battery_coupling_residuals<T: Scalar>(
    bt: &BatteryState<T>,
    ac: &AcTerminal<T>,
    eta_inv: T,
    eta_rec: T,
    dispatch: Dispatch,
    dc_to_pu: T,
) -> (T, T) {
    let p_dc = dc_to_pu * bt.i_bt * bt.v_bt;
    let r_p = match dispatch {
        Dispatch::Discharging => eta_inv * p_dc - ac.active_power(),
        Dispatch::Charging => p_dc - eta_rec * ac.active_power(),
    };
    (r_p, ac.reactive_residual())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pv() -> PvSystem<f64> {
        PvSystem {
            id: "pv".into(),
            bus: 3,
            r_s: 0.5,
            r_sh: 500.0,
            i_0: 1e-9,
            a: 1.5,
            scale: 1.0,
            i_ph_stc: 8.0,
            alpha_t: 0.0005,
            inverter: InverterCurve::new(0.97, 1e-3, ConverterKind::Inversion).unwrap(),
        }
    }

    pub(crate) fn battery() -> BatterySystem<f64> {
        BatterySystem {
            id: "bt".into(),
            bus: 1,
            c_cap: 3600.0,
            r_se: 0.05,
            r_sd: 1e12,
            ocv_a: 3.4,
            ocv_b: 0.6,
            scale: 1.0,
            inverter: InverterCurve::new(0.96, 1e-3, ConverterKind::Inversion).unwrap(),
            rectifier: InverterCurve::new(0.94, 1e-3, ConverterKind::Rectification).unwrap(),
        }
    }

    #[test]
    fn diode_examples() {
        assert_eq!(diode_current(0.0, 1e-6, 0.5), 0.0);
        assert!((diode_current(-1e6f64, 1e-6, 0.5) + 1e-6).abs() < 1e-18);
        let v = diode_current(0.5, 1e-6, 0.5);
        assert!((v - 1e-6 * (std::f64::consts::E - 1.0)).abs() < 1e-20);
        assert!((v - 1.718281828459045e-6).abs() < 1e-18);
    }

    #[test]
    fn diode_clamp_is_c1() {
        let (i0, a) = (1e-12, 0.1);
        let vj = DIODE_EXP_CLAMP * a;
        let below = diode_current(vj - 1e-9, i0, a);
        let above = diode_current(vj + 1e-9, i0, a);
        let slope = diode_conductance(vj, i0, a);
        assert!(((above - below) / 2e-9 - slope).abs() / slope < 1e-5);
        assert!(diode_current(vj * 3.0, i0, a).is_finite());
        assert!(diode_conductance(vj * 3.0, i0, a) == slope);
    }

    #[test]
    fn dark_panel_is_consistent() {
        let sys = pv();
        let st = PvState::new(&sys, 0.0, 0.0, 0.0, 0.0);
        let meas = PvMeasurement {
            z_v: 0.0,
            z_i: 0.0,
            z_ph: 0.0,
            sigma_v: 0.1,
            sigma_i: 0.1,
            sigma_ph: 0.1,
        };
        assert_eq!(pv_residuals(&st, &sys, &meas, &PvNoise::default()), [0.0; 4]);
    }

    #[test]
    fn battery_ohmic_drop() {
        let mut sys = battery();
        sys.r_se = 0.05;
        let st = BatteryState {
            v_soc: 0.5,
            v_oc: 3.9,
            v_bt: 3.4,
            i_bt: 10.0,
            p_bt: 34.0,
        };
        let meas = BatteryMeasurement {
            z_v: 3.4,
            z_i: 10.0,
            sigma_v: 0.1,
            sigma_i: 0.1,
        };
        let r = battery_residuals(&st, &sys, &meas, &BatteryNoise::default());
        assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
        // open circuit
        let st = BatteryState {
            v_bt: 3.9,
            i_bt: 0.0,
            ..st
        };
        let meas = BatteryMeasurement {
            z_v: 3.9,
            z_i: 0.0,
            ..meas
        };
        assert_eq!(
            battery_residuals(&st, &sys, &meas, &BatteryNoise::default()),
            [0.0; 3]
        );
    }

    #[test]
    fn ocv_map() {
        let sys = battery();
        assert_eq!(ocv_from_soc(0.0, &sys).unwrap().value, 3.4);
        assert!(!ocv_from_soc(0.0, &sys).unwrap().in_linear_band);
        assert!((ocv_from_soc(0.5, &sys).unwrap().value - 3.7).abs() < 1e-15);
        assert!(ocv_from_soc(0.5, &sys).unwrap().in_linear_band);
        assert!(ocv_from_soc(1.2, &sys).is_err());
        let mut flat = sys.clone();
        flat.ocv_b = 0.0;
        assert!(matches!(
            ocv_from_soc(0.5, &flat),
            Err(Error::DegenerateOcvMap)
        ));
    }

    #[test]
    fn soc_residual_examples() {
        let sys = battery();
        // idle battery
        let r = soc_update_residual(3.7, 3.7, 3.7, 3.7, &sys, 300.0).unwrap();
        assert_eq!(r, 0.0);
        let mut flat = sys.clone();
        flat.ocv_b = 0.0;
        assert!(soc_update_residual(3.7, 3.7, 3.7, 3.7, &flat, 300.0).is_err());
    }

    #[test]
    fn efficiency_examples() {
        let c = InverterCurve::new(2.0, 1.0, ConverterKind::Inversion).unwrap();
        assert_eq!(c.efficiency(0.0).unwrap(), 1.0);
        assert!((c.efficiency(3f64.ln()).unwrap() - 1.5).abs() < 1e-15);
        assert!((c.efficiency(1e3).unwrap() - 2.0).abs() < 1e-15);
        assert!(c.efficiency(-1.0).is_err());
        assert!(InverterCurve::new(2.5, 1.0, ConverterKind::Inversion).is_err());
        assert!(InverterCurve::new(1.0, 0.0, ConverterKind::Inversion).is_err());
    }

    #[test]
    fn datasheet_fit_hits_both_points() {
        let rated = 5.0e7;
        let c = InverterCurve::<f64>::from_datasheet(rated, 0.93, 0.975, ConverterKind::Inversion)
            .unwrap();
        assert!((c.efficiency(0.1 * rated).unwrap() - 0.93).abs() < 1e-12);
        assert!((c.efficiency(rated).unwrap() - 0.975).abs() < 1e-12);
        assert!(c.m > 0.975 && c.m <= 2.0);
        assert!(
            InverterCurve::<f64>::from_datasheet(rated, 0.98, 0.9, ConverterKind::Inversion)
                .is_err()
        );
    }

    #[test]
    fn coupling_examples() {
        let sys = pv();
        // 1 MW DC at eta 0.96 delivers 0.0096 pu on 100 MVA
        let st = PvState::new(&sys, 0.0, 1.0e3, 1.0e3, 0.0);
        let ac = AcTerminal {
            v_real: 1.0,
            v_imag: 0.0,
            i_real: 0.0096,
            i_imag: 0.0,
        };
        let (rp, rq) = pv_coupling_residuals(&st, &ac, 0.96, 1.0 / (100.0 * W_PER_MW));
        assert!(rp.abs() < 1e-15 && rq == 0.0);

        let dark = PvState::new(&sys, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            pv_coupling_residuals(&dark, &AcTerminal::default(), 0.96, 1.0),
            (0.0, 0.0)
        );

        // discharging 1 MW DC at eta 0.95 -> 0.95 MW AC
        let s = 1.0 / (100.0 * W_PER_MW);
        let bt = BatteryState {
            v_soc: 0.5,
            v_oc: 1000.0,
            v_bt: 1000.0,
            i_bt: 1000.0,
            p_bt: 1e6,
        };
        let ac = AcTerminal {
            v_real: 1.0,
            v_imag: 0.0,
            i_real: 0.0095,
            i_imag: 0.0,
        };
        let (rp, _) = battery_coupling_residuals(&bt, &ac, 0.95, 0.9, Dispatch::Discharging, s);
        assert!(rp.abs() < 1e-15);
        // charging: 1 MW drawn from the grid stores 0.9 MW
        let bt = BatteryState {
            i_bt: -900.0,
            p_bt: -0.9e6,
            ..bt
        };
        let ac = AcTerminal {
            i_real: -0.01,
            ..ac
        };
        let (rp, _) = battery_coupling_residuals(&bt, &ac, 0.95, 0.9, Dispatch::Charging, s);
        assert!(rp.abs() < 1e-15);
    }
}
