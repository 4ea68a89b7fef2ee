mod common;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use gridfuse::der::{
    battery_coupling_residuals, diode_current, pv_coupling_residuals, pv_residuals, AcTerminal,
    ConverterKind, InverterCurve, PvMeasurement, PvNoise, PvState,
};
use gridfuse::estimator::{assemble_combined, BatteryStep, PrevStep};
use gridfuse::harness::Prepared;
use gridfuse::io::builtin_case;
use gridfuse::measurement::MeasurementSet;
use gridfuse::network::{build_admittance, Bus, BusKind, GridCase};
use gridfuse::sim::{
    battery_dc_power, inject_bad_data, perturb_parameters, solve_powerflow, solve_pv_dc,
    step_soc, BadData, ParamError, PowerFlowOptions, PvOperatingPoint,
};
use gridfuse::{BatterySystem64, Branch64, Error, PvSystem64};
use proptest::prelude::*;

fn battery(r_sd: f64) -> BatterySystem64 {
    BatterySystem64 {
        id: "bt".into(),
        bus: 1,
        c_cap: 3600.0,
        r_se: 0.05,
        r_sd,
        ocv_a: 3.4,
        ocv_b: 0.6,
        scale: 1.0,
        inverter: InverterCurve::new(0.97, 1e-3, ConverterKind::Inversion).unwrap(),
        rectifier: InverterCurve::new(0.97, 1e-3, ConverterKind::Rectification).unwrap(),
    }
}

#[test]
fn flat_network_stays_flat() {
    let mut buses: Vec<Bus<f64>> = (1..=3).map(Bus::new).collect();
    buses[0].kind = BusKind::Slack;
    buses[0].v_set = Some(1.0);
    let branches = vec![
        Branch64::from_impedance(1, 2, 0.01, 0.1, 0.0),
        Branch64::from_impedance(2, 3, 0.01, 0.1, 0.0),
    ];
    let case = GridCase::new(100.0, buses, branches).unwrap();
    let pf = solve_powerflow(&case, &[(0.0, 0.0); 3], &PowerFlowOptions::default()).unwrap();
    for k in 0..3 {
        assert!((pf.v_real[k] - 1.0).abs() < 1e-12 && pf.v_imag[k].abs() < 1e-12);
    }
}

#[test]
fn case118_matches_polar_oracle() {
    let case = builtin_case("case118").unwrap();
    let zero = vec![(0.0, 0.0); case.n_buses()];
    let pf = solve_powerflow(&case, &zero, &PowerFlowOptions::default()).unwrap();
    let (vr, vi) = common::polar_powerflow(&case, &zero);
    for k in 0..case.n_buses() {
        assert!(
            (pf.v_real[k] - vr[k]).abs() < 1e-8 && (pf.v_imag[k] - vi[k]).abs() < 1e-8,
            "bus {}",
            case.buses[k].id
        );
    }
}

#[test]
fn three_bus_truth_matches_oracle_and_couplings_close() {
    let scenario = common::noiseless("three-bus");
    let prep = Prepared::new(&scenario).unwrap();
    let case = &scenario.case;
    let y = build_admittance(case).unwrap();
    let fleet = &scenario.fleet;
    for truth in &prep.truth {
        let mut extra = vec![(0.0, 0.0); case.n_buses()];
        let pv = &fleet.pv[0];
        let st = &truth.pv[&pv.id];
        let k_pv = case.index_of(pv.bus).unwrap();
        extra[k_pv].0 += truth.eta[&pv.id] * pv.dc_to_pu(case.base_mva) * st.p_pv;
        let bt = &fleet.battery[0];
        let k_bt = case.index_of(bt.bus).unwrap();
        extra[k_bt].0 += scenario.schedule[truth.step].battery[&bt.id];

        let (vr, vi) = common::polar_powerflow(case, &extra);
        for k in 0..case.n_buses() {
            assert!((truth.v_real[k] - vr[k]).abs() < 1e-9);
            assert!((truth.v_imag[k] - vi[k]).abs() < 1e-9);
        }

        // buses 1 and 3 have no native injection: the network current is the converter's
        let ac = |k: usize| {
            let (ir, ii) = y.current(k, &truth.v_real, &truth.v_imag);
            AcTerminal {
                v_real: truth.v_real[k],
                v_imag: truth.v_imag[k],
                i_real: ir,
                i_imag: ii,
            }
        };
        let (rp, rq) =
            pv_coupling_residuals(st, &ac(k_pv), truth.eta[&pv.id], pv.dc_to_pu(case.base_mva));
        assert!(rp.abs() < 1e-10 && rq.abs() < 1e-10, "pv coupling {rp} {rq}");
        let e = truth.eta[&bt.id];
        let (rp, rq) = battery_coupling_residuals(
            &truth.battery[&bt.id],
            &ac(k_bt),
            e,
            e,
            truth.dispatch[&bt.id],
            bt.dc_to_pu(case.base_mva),
        );
        assert!(rp.abs() < 1e-10 && rq.abs() < 1e-10, "battery coupling {rp} {rq}");
    }
}

#[test]
fn pv_dc_point_matches_bisection_oracle() {
    let sys = PvSystem64 {
        id: "pv".into(),
        bus: 1,
        r_s: 0.5,
        r_sh: 500.0,
        i_0: 1e-9,
        a: 0.5,
        scale: 1.0,
        i_ph_stc: 8.0,
        alpha_t: 0.0,
        inverter: InverterCurve::new(0.97, 1e-3, ConverterKind::Inversion).unwrap(),
    };
    for v_pv in [0.0, 2.0, 5.0, 7.0, 8.0, 8.5] {
        let op = PvOperatingPoint {
            irradiance: 1000.0,
            cell_temp: 25.0,
            v_dc: v_pv,
        };
        let st = solve_pv_dc(&sys, &op).unwrap();
        // plain bisection on r1 with I_PV from r3
        let f = |x: f64| 8.0 - diode_current(x, sys.i_0, sys.a) - x / sys.r_sh - (x - v_pv) / sys.r_s;
        let (mut lo, mut hi) = (v_pv, v_pv + 8.0 * sys.r_s);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(st.v_sh, 0.5 * (lo + hi), max_relative = 1e-12);
        let meas = PvMeasurement {
            z_v: st.v_pv,
            z_i: st.i_pv,
            z_ph: 8.0,
            sigma_v: 0.1,
            sigma_i: 0.1,
            sigma_ph: 0.1,
        };
        let r = pv_residuals(&st, &sys, &meas, &PvNoise::default());
        assert!(r.iter().all(|v| v.abs() < 1e-10), "{r:?}");
    }
    let dark = PvState::new(&sys, 0.0, 0.0, 0.0, 0.0);
    let meas = PvMeasurement {
        z_v: 0.0,
        z_i: 0.0,
        z_ph: 0.0,
        sigma_v: 0.1,
        sigma_i: 0.1,
        sigma_ph: 0.1,
    };
    assert_eq!(pv_residuals(&dark, &sys, &meas, &PvNoise::default()), [0.0; 4]);
}

#[test]
fn constant_current_soc_drops_by_one_twelfth_per_step() {
    let sys = battery(f64::INFINITY);
    let traj = step_soc(&sys, 1.0, &[1.0; 13], 12, 300.0).unwrap();
    for w in traj.windows(2) {
        assert!((w[1] - w[0] + 1.0 / 12.0).abs() < 1e-12);
    }
    assert!((traj[12] - 0.0).abs() < 1e-12);
    assert!(matches!(
        step_soc(&sys, 0.5, &[1.0; 13], 12, 300.0),
        Err(Error::SocBoundViolation { .. })
    ));
}

#[test]
fn idle_battery_holds_or_self_discharges() {
    let traj = step_soc(&battery(f64::INFINITY), 0.6, &[0.0; 11], 10, 300.0).unwrap();
    assert!(traj.iter().all(|s| *s == 0.6));
    let traj = step_soc(&battery(1e4), 0.6, &[0.0; 11], 10, 300.0).unwrap();
    assert!(traj.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn symmetric_profile_returns_to_initial_soc() {
    // 48 five-minute steps: charge, then discharge the same charge back
    let mut i = vec![0.0];
    i.extend([-0.1; 23]);
    i.push(0.0);
    i.extend([0.1; 23]);
    i.push(0.0);
    assert_eq!(i.len(), 49);
    let traj = step_soc(&battery(f64::INFINITY), 0.5, &i, 48, 300.0).unwrap();
    assert!(traj[24] > 0.5);
    assert!((traj[48] - 0.5).abs() < 1e-12);
}

#[test]
fn discharge_energy_bookkeeping() {
    let sys = battery(1e9);
    let base = 100.0;
    for p_ac in [1e-7, 5e-7, 2e-6] {
        let (p_dc, eta) = battery_dc_power(&sys, p_ac, base).unwrap();
        assert_relative_eq!(p_dc * sys.dc_to_pu(base) * eta, p_ac, max_relative = 1e-10);
        assert_relative_eq!(eta, sys.inverter.efficiency(p_dc).unwrap(), max_relative = 1e-14);
    }
    let (p_dc, eta) = battery_dc_power(&sys, -1e-6, base).unwrap();
    assert!(p_dc < 0.0);
    assert_relative_eq!(p_dc * sys.dc_to_pu(base), eta * -1e-6, max_relative = 1e-12);
}

#[test]
fn noiseless_measurements_equal_truth_and_truth_satisfies_constraints() {
    let scenario = common::noiseless("three-bus");
    let prep = Prepared::new(&scenario).unwrap();
    let meas = &prep.measurements(0).unwrap()[0];
    let truth = &prep.truth[1];
    let pv = &truth.pv["pv1"];
    assert_eq!(meas.pv["pv1"].z_v, pv.v_pv);
    assert_eq!(meas.pv["pv1"].z_i, pv.i_pv);
    assert_eq!(meas.pv["pv1"].z_ph, pv.i_ph);
    assert_eq!(meas.battery["bt1"].z_v, truth.battery["bt1"].v_bt);
    for (k, bus) in scenario.case.buses.iter().enumerate() {
        if let Some(r) = meas.rtu.get(&bus.id) {
            assert_eq!(r.v_z, truth.magnitude(k));
            assert_eq!((-r.p_z, r.q_z), truth.injections[k]);
        }
    }

    let prev = &prep.truth[0].battery["bt1"];
    let steps = BTreeMap::from([(
        "bt1".to_string(),
        BatteryStep {
            step: 1,
            dt: scenario.config.dt,
            dispatch: truth.dispatch["bt1"],
            prev: Some(PrevStep {
                v_oc: prev.v_oc,
                v_bt: prev.v_bt,
            }),
        },
    )]);
    let p = assemble_combined(&scenario.case, &prep.est_fleet, meas, &steps, &[]).unwrap();
    let mut x = vec![0.0; p.n_vars()];
    let mut set = |name: String, v: f64| x[p.var(&name).unwrap()] = v;
    for (k, id) in truth.bus_ids.iter().enumerate() {
        set(format!("bus{id}.vr"), truth.v_real[k]);
        set(format!("bus{id}.vi"), truth.v_imag[k]);
    }
    set("pv1.v_sh".into(), pv.v_sh);
    set("pv1.v_pv".into(), pv.v_pv);
    set("pv1.i_pv".into(), pv.i_pv);
    let bt = &truth.battery["bt1"];
    set("bt1.v_bt".into(), bt.v_bt);
    set("bt1.v_oc".into(), bt.v_oc);
    set("bt1.i_bt".into(), bt.i_bt);
    let h = p.constraints(&x);
    for (r, v) in h.iter().enumerate() {
        assert!(v.abs() < 1e-8, "{}: {v}", p.block_of_row(r).unwrap().label);
    }
}

#[test]
fn measurement_noise_is_seeded_and_centred() {
    let scenario = common::scenario_with("three-bus", 100, 42);
    let prep = Prepared::new(&scenario).unwrap();
    let a = serde_json::to_string(&prep.measurements(3).unwrap()).unwrap();
    let b = serde_json::to_string(&prep.measurements(3).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, serde_json::to_string(&prep.measurements(4).unwrap()).unwrap());

    let truth = prep.truth[1].pv["pv1"].v_pv;
    let mean = (0..100)
        .map(|i| prep.measurements(i).unwrap()[0].pv["pv1"].z_v)
        .sum::<f64>()
        / 100.0;
    assert!((mean - truth).abs() < 4.0 * 0.1 / 10.0, "{mean} vs {truth}");
}

#[test]
fn bad_data_scales_and_flags_channels() {
    let mut meas = MeasurementSet::<f64>::default();
    meas.pv.insert(
        "pv3".into(),
        PvMeasurement {
            z_v: 500.0,
            z_i: 8.0,
            z_ph: 9.0,
            sigma_v: 0.1,
            sigma_i: 0.1,
            sigma_ph: 0.1,
        },
    );
    let same = inject_bad_data(&meas, &[BadData { target: "pv3.z_v".into(), bias: 0.0 }]).unwrap();
    assert_eq!(same.pv, meas.pv);
    let out = inject_bad_data(&meas, &[BadData { target: "pv3.z_v".into(), bias: 0.1 }]).unwrap();
    assert_relative_eq!(out.pv["pv3"].z_v, 550.0, max_relative = 1e-15);
    assert_eq!(out.pv["pv3"].z_i, 8.0);
    assert!(out.biased.contains("pv3.z_v") && !out.biased.contains("pv3.z_i"));
    assert!(matches!(
        inject_bad_data(&meas, &[BadData { target: "pv9.z_v".into(), bias: 0.1 }]),
        Err(Error::UnknownTarget(_))
    ));
}

#[test]
fn parameter_perturbation_reports_true_values() {
    let scenario = common::scenario_with("three-bus", 1, 1);
    let mut fleet = scenario.fleet.clone();
    fleet.pv[0].r_s = 0.5;
    let (same, t) = perturb_parameters(&fleet, &[]).unwrap();
    assert_eq!(same, fleet);
    assert!(t.is_empty());
    let errs = [
        ParamError { path: "pv1.r_s".into(), rel_error: 0.5 },
        ParamError { path: "pv1.i_0".into(), rel_error: 0.1 },
    ];
    let (out, truth) = perturb_parameters(&fleet, &errs).unwrap();
    assert_relative_eq!(out.pv[0].r_s, 0.75);
    assert_eq!(truth["pv1.r_s"], 0.5);
    assert_relative_eq!(out.pv[0].i_0, 1.1e-9);
    assert!(matches!(
        perturb_parameters(&fleet, &[ParamError { path: "pv1.nope".into(), rel_error: 0.1 }]),
        Err(Error::UnknownParameter(_))
    ));
}

proptest! {
    /// `C (soc_T - soc_0)` is minus the trapezoidal integral of the current.
    #[test]
    fn trapezoid_conserves_charge(i in proptest::collection::vec(-0.5f64..0.5, 2..40)) {
        let sys = battery(f64::INFINITY);
        let n = i.len() - 1;
        let traj = step_soc(&sys, 0.5, &i, n, 300.0).unwrap();
        let integral: f64 = i.windows(2).map(|w| 0.5 * 300.0 * (w[0] + w[1])).sum();
        prop_assert!((sys.c_cap * (traj[n] - traj[0]) + integral).abs() < 1e-9);
    }
}
