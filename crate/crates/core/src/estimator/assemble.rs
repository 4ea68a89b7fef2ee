use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::der::{
    BatteryCircuit, BatterySystem, DerFleet, Dispatch, PvCircuit, PvSystem, SocTrapezoid,
};
use crate::error::{Error, Result};
use crate::estimator::blocks::{BlockModel, Coupling, KclBlock, Pin};
use crate::estimator::problem::{base_watts, EstimationProblem, EtaLink, Slot, VarKind};
use crate::measurement::MeasurementSet;
use crate::network::{build_admittance, GridCase};
use crate::scalar::Scalar;

/// Parameters that may be declared unknown, per component family.
pub const PV_PARAMS: [&str; 2] = ["r_s", "r_sh"];
pub const BATTERY_PARAMS: [&str; 1] = ["r_se"];

/// Estimated terminal values of a battery at the previous time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevStep<T> {
    pub v_oc: T,
    pub v_bt: T,
}

/// Time-stepping context of a battery for one estimation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep<T> {
    pub step: usize,
    pub dt: T,
    pub dispatch: Dispatch,
    /// Required for every step after the initial one.
    pub prev: Option<PrevStep<T>>,
}

/// Check that every path names a declared parameter of a fleet component.
pub fn validate_param_paths<T: Scalar>(paths: &[String], fleet: &DerFleet<T>) -> Result<()> {
    for path in paths {
        let (id, name) = path
            .split_once('.')
            .ok_or_else(|| Error::UnknownParameter(path.clone()))?;
        let ok = fleet.pv.iter().any(|p| p.id == id) && PV_PARAMS.contains(&name)
            || fleet.battery.iter().any(|b| b.id == id) && BATTERY_PARAMS.contains(&name);
        if !ok {
            return Err(Error::UnknownParameter(path.clone()));
        }
    }
    Ok(())
}

struct Params<'a> {
    unknown: &'a [String],
    used: BTreeSet<&'a str>,
}

impl<'a> Params<'a> {
    fn new(unknown: &'a [String]) -> Self {
        Self {
            unknown,
            used: BTreeSet::new(),
        }
    }

    fn slot<T: Scalar>(
        &mut self,
        p: &mut EstimationProblem<T>,
        id: &str,
        name: &str,
        value: T,
    ) -> Slot<T> {
        let path = format!("{id}.{name}");
        match self.unknown.iter().find(|u| **u == path) {
            Some(u) => {
                self.used.insert(u.as_str());
                let j = p.add_var(path.clone(), VarKind::Parameter, T::zero(), value);
                p.unknown_params.push((path, j));
                Slot::Var(j)
            }
            None => Slot::Fixed(value),
        }
    }

    fn finish(self) -> Result<()> {
        match self.unknown.iter().find(|u| !self.used.contains(u.as_str())) {
            Some(u) => Err(Error::UnknownParameter(u.clone())),
            None => Ok(()),
        }
    }
}

fn weight<T: Scalar>(sigma: T) -> Result<T> {
    if !(sigma > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "measurement sigma {sigma} must be positive"
        )));
    }
    Ok(T::one() / (sigma * sigma))
}

struct GridVars {
    /// `(vr, vi)` variable per bus position.
    v: Vec<(usize, usize)>,
    /// RTU noise `(nr, ni)` per bus id.
    noise: BTreeMap<usize, (usize, usize)>,
}

fn add_grid<T: Scalar>(
    p: &mut EstimationProblem<T>,
    case: &GridCase<T>,
    meas: &MeasurementSet<T>,
) -> Result<GridVars> {
    let y = build_admittance(case)?;
    let v: Vec<(usize, usize)> = case
        .buses
        .iter()
        .map(|b| {
            (
                p.add_var(format!("bus{}.vr", b.id), VarKind::Voltage, T::zero(), T::one()),
                p.add_var(format!("bus{}.vi", b.id), VarKind::Voltage, T::zero(), T::zero()),
            )
        })
        .collect();
    let mut noise = BTreeMap::new();
    for (k, bus) in case.buses.iter().enumerate() {
        let rtu = if case.has_rtu(bus.id) {
            let m = meas
                .rtu
                .get(&bus.id)
                .ok_or_else(|| Error::MissingMeasurement(format!("RTU at bus {}", bus.id)))?;
            let w = weight(m.sigma)?;
            let nr = p.add_var(format!("bus{}.nr", bus.id), VarKind::Noise, w, T::zero());
            let ni = p.add_var(format!("bus{}.ni", bus.id), VarKind::Noise, w, T::zero());
            noise.insert(bus.id, (nr, ni));
            Some(m.admittance()?)
        } else if case.zero_injection_buses.contains(&bus.id) {
            None
        } else {
            // unmeasured bus with unknown injection: no KCL constraint
            continue;
        };
        let row = y.row(k);
        let own = row.iter().position(|e| e.0 == k).unwrap_or(0);
        let mut slots: Vec<Slot<T>> = row.iter().map(|e| Slot::Var(v[e.0].0)).collect();
        slots.extend(row.iter().map(|e| Slot::Var(v[e.0].1)));
        if let Some(&(nr, ni)) = noise.get(&bus.id) {
            slots.push(Slot::Var(nr));
            slots.push(Slot::Var(ni));
        }
        let block = KclBlock {
            admittance: row.iter().map(|e| (e.1, e.2)).collect(),
            own,
            rtu,
        };
        p.add_block(format!("kcl bus {}", bus.id), BlockModel::Kcl(block), slots);
    }

    // reference bus: angle pinned, magnitude measured
    let s = case
        .slack_index()
        .ok_or_else(|| Error::InvalidParameter("case has no slack bus".into()))?;
    let sid = case.buses[s].id;
    p.add_block(
        format!("reference angle bus {sid}"),
        BlockModel::Pin(Pin {
            target: T::zero(),
            noisy: false,
        }),
        vec![Slot::Var(v[s].1)],
    );
    match meas.rtu.get(&sid) {
        Some(m) => {
            let nv = p.add_var(format!("bus{sid}.nv"), VarKind::Noise, weight(m.sigma)?, T::zero());
            p.add_block(
                format!("reference magnitude bus {sid}"),
                BlockModel::Pin(Pin {
                    target: m.v_z,
                    noisy: true,
                }),
                vec![Slot::Var(v[s].0), Slot::Var(nv)],
            );
            p.initial[v[s].0] = m.v_z;
        }
        None => {
            let target = case.buses[s].v_set.unwrap_or(case.buses[s].v_real);
            p.add_block(
                format!("reference magnitude bus {sid}"),
                BlockModel::Pin(Pin {
                    target,
                    noisy: false,
                }),
                vec![Slot::Var(v[s].0)],
            );
        }
    }
    Ok(GridVars { v, noise })
}

struct DcVars {
    v: usize,
    i: usize,
}

fn add_pv<T: Scalar>(
    p: &mut EstimationProblem<T>,
    sys: &PvSystem<T>,
    meas: &MeasurementSet<T>,
    params: &mut Params<'_>,
) -> Result<DcVars> {
    sys.validate()?;
    let m = meas
        .pv
        .get(&sys.id)
        .ok_or_else(|| Error::MissingMeasurement(format!("PV `{}`", sys.id)))?;
    let id = &sys.id;
    let r_s = params.slot(p, id, "r_s", sys.r_s);
    let r_s0 = match r_s {
        Slot::Var(j) => p.initial[j],
        Slot::Fixed(v) => v,
    };
    let v_sh = p.add_var(
        format!("{id}.v_sh"),
        VarKind::State,
        T::zero(),
        m.z_v + r_s0 * m.z_i,
    );
    let v_pv = p.add_var(format!("{id}.v_pv"), VarKind::State, T::zero(), m.z_v);
    let i_pv = p.add_var(format!("{id}.i_pv"), VarKind::State, T::zero(), m.z_i);
    let n_ph = p.add_var(format!("{id}.n_ph"), VarKind::Noise, weight(m.sigma_ph)?, T::zero());
    let n_i = p.add_var(format!("{id}.n_i"), VarKind::Noise, weight(m.sigma_i)?, T::zero());
    let n_v = p.add_var(format!("{id}.n_v"), VarKind::Noise, weight(m.sigma_v)?, T::zero());
    let r_sh = params.slot(p, id, "r_sh", sys.r_sh);
    p.add_block(
        format!("pv circuit {id}"),
        BlockModel::Pv(PvCircuit::new(m, sys)),
        vec![
            Slot::Var(v_sh),
            Slot::Var(v_pv),
            Slot::Var(i_pv),
            Slot::Var(n_ph),
            Slot::Var(n_i),
            Slot::Var(n_v),
            r_s,
            r_sh,
        ],
    );
    p.diode_limits.push((v_sh, sys.a));
    Ok(DcVars { v: v_pv, i: i_pv })
}

fn add_battery<T: Scalar>(
    p: &mut EstimationProblem<T>,
    sys: &BatterySystem<T>,
    meas: &MeasurementSet<T>,
    step: &BatteryStep<T>,
    params: &mut Params<'_>,
) -> Result<DcVars> {
    sys.validate()?;
    let m = meas
        .battery
        .get(&sys.id)
        .ok_or_else(|| Error::MissingMeasurement(format!("battery `{}`", sys.id)))?;
    if step.step > 0 && step.prev.is_none() {
        return Err(Error::MissingPreviousStep {
            id: sys.id.clone(),
            step: step.step,
        });
    }
    let id = &sys.id;
    let r_se = params.slot(p, id, "r_se", sys.r_se);
    let r0 = match r_se {
        Slot::Var(j) => p.initial[j],
        Slot::Fixed(v) => v,
    };
    let v_oc0 = step.prev.map(|s| s.v_oc).unwrap_or(m.z_v + r0 * m.z_i);
    let v_bt = p.add_var(format!("{id}.v_bt"), VarKind::State, T::zero(), m.z_v);
    let v_oc = p.add_var(format!("{id}.v_oc"), VarKind::State, T::zero(), v_oc0);
    let i_bt = p.add_var(format!("{id}.i_bt"), VarKind::State, T::zero(), m.z_i);
    let n_i = p.add_var(format!("{id}.n_i"), VarKind::Noise, weight(m.sigma_i)?, T::zero());
    let n_v = p.add_var(format!("{id}.n_v"), VarKind::Noise, weight(m.sigma_v)?, T::zero());
    p.add_block(
        format!("battery circuit {id}"),
        BlockModel::Battery(BatteryCircuit {
            z_i: m.z_i,
            z_v: m.z_v,
        }),
        vec![
            Slot::Var(v_bt),
            Slot::Var(v_oc),
            Slot::Var(i_bt),
            Slot::Var(n_i),
            Slot::Var(n_v),
            r_se,
        ],
    );
    if let Some(prev) = step.prev {
        if sys.ocv_b == T::zero() {
            return Err(Error::DegenerateOcvMap);
        }
        p.add_block(
            format!("soc update {id}"),
            BlockModel::Soc(SocTrapezoid {
                v_oc_prev: prev.v_oc,
                v_bt_prev: prev.v_bt,
                ocv_b: sys.ocv_b,
                c_cap: sys.c_cap,
                dt: step.dt,
            }),
            vec![Slot::Var(v_oc), Slot::Var(v_bt), r_se],
        );
    }
    Ok(DcVars { v: v_bt, i: i_bt })
}

/// Stand-alone grid estimation over RTU and zero-injection KCL.
pub fn assemble_grid<T: Scalar>(
    case: &GridCase<T>,
    meas: &MeasurementSet<T>,
) -> Result<EstimationProblem<T>> {
    let mut p = EstimationProblem::default();
    add_grid(&mut p, case, meas)?;
    Ok(p)
}

/// Stand-alone PV estimation over its measurement circuit.
pub fn assemble_pv<T: Scalar>(
    sys: &PvSystem<T>,
    meas: &MeasurementSet<T>,
    unknown: &[String],
) -> Result<EstimationProblem<T>> {
    let mut p = EstimationProblem::default();
    let mut params = Params::new(unknown);
    add_pv(&mut p, sys, meas, &mut params)?;
    params.finish()?;
    p.check_identifiable(&p.initial.clone())?;
    Ok(p)
}

/// Stand-alone battery estimation chained on the previous step.
pub fn assemble_battery<T: Scalar>(
    sys: &BatterySystem<T>,
    meas: &MeasurementSet<T>,
    step: &BatteryStep<T>,
    unknown: &[String],
) -> Result<EstimationProblem<T>> {
    let mut p = EstimationProblem::default();
    let mut params = Params::new(unknown);
    add_battery(&mut p, sys, meas, step, &mut params)?;
    params.finish()?;
    p.check_identifiable(&p.initial.clone())?;
    Ok(p)
}

/// Joint grid, PV and battery estimation with inverter coupling at each
/// point of interconnection. Parameters listed in `unknown` become variables.
pub fn assemble_combined<T: Scalar>(
    case: &GridCase<T>,
    fleet: &DerFleet<T>,
    meas: &MeasurementSet<T>,
    steps: &BTreeMap<String, BatteryStep<T>>,
    unknown: &[String],
) -> Result<EstimationProblem<T>> {
    let mut p = EstimationProblem::default();
    let grid = add_grid(&mut p, case, meas)?;
    let mut params = Params::new(unknown);
    let base_w = base_watts(case.base_mva);

    let poi = |bus: usize, id: &str| -> Result<(usize, usize, usize, usize, (T, T), T)> {
        let k = case.index_of(bus)?;
        let &(nr, ni) = grid.noise.get(&bus).ok_or_else(|| {
            Error::MissingMeasurement(format!("RTU at point of interconnection of `{id}`"))
        })?;
        let m = &meas.rtu[&bus];
        Ok((grid.v[k].0, grid.v[k].1, nr, ni, m.admittance()?, m.p_z))
    };

    for sys in &fleet.pv {
        let dc = add_pv(&mut p, sys, meas, &mut params)?;
        let (vr, vi, nr, ni, (g, b), _) = poi(sys.bus, &sys.id)?;
        let m = &meas.pv[&sys.id];
        let eta = sys
            .inverter
            .efficiency((sys.scale * m.z_i * m.z_v).max(T::zero()))?;
        let blk = p.add_block(
            format!("pv coupling {}", sys.id),
            BlockModel::Coupling(Coupling::pv(g, b, sys.dc_to_pu(case.base_mva), eta)),
            [dc.v, dc.i, vr, vi, nr, ni].map(Slot::Var).to_vec(),
        );
        p.eta_links.push(EtaLink {
            block: blk,
            curve: sys.inverter,
            scale: sys.scale,
            base_w,
        });
    }
    for sys in &fleet.battery {
        let step = steps.get(&sys.id).ok_or_else(|| Error::MissingPreviousStep {
            id: sys.id.clone(),
            step: 0,
        })?;
        let dc = add_battery(&mut p, sys, meas, step, &mut params)?;
        let (vr, vi, nr, ni, (g, b), p_z) = poi(sys.bus, &sys.id)?;
        let m = &meas.battery[&sys.id];
        let eta_inv = sys
            .inverter
            .efficiency((sys.scale * m.z_i * m.z_v).max(T::zero()))?;
        let eta_rec = sys.rectifier.efficiency((p_z * base_w).abs())?;
        let blk = p.add_block(
            format!("battery coupling {}", sys.id),
            BlockModel::Coupling(Coupling::battery(
                g,
                b,
                sys.dc_to_pu(case.base_mva),
                eta_inv,
                eta_rec,
                step.dispatch,
            )),
            [dc.v, dc.i, vr, vi, nr, ni].map(Slot::Var).to_vec(),
        );
        p.eta_links.push(EtaLink {
            block: blk,
            curve: match step.dispatch {
                Dispatch::Discharging => sys.inverter,
                Dispatch::Charging => sys.rectifier,
            },
            scale: sys.scale,
            base_w,
        });
    }
    params.finish()?;
    p.check_identifiable(&p.initial.clone())?;
    Ok(p)
}
