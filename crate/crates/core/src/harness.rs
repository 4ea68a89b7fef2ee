//! Monte-Carlo harness: per-instance noise synthesis, stand-alone and
//! combined estimation, and error statistics against simulated truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::der::{DerFleet, Dispatch};
use crate::error::{Error, Result};
use crate::estimator::{
    assemble_battery, assemble_combined, assemble_grid, assemble_pv, solve_refreshed,
    BatteryStep, EstimationProblem, Estimates, PrevStep, SolverOptions,
};
use crate::io::Scenario;
use crate::measurement::MeasurementSet;
use crate::metrics::{absolute_error, estimation_error, median_iqr, nrmse, variance_avg};
use crate::sim::{
    inject_bad_data, param_value, perturb_parameters, simulate_schedule, synthesize_measurements,
    GroundTruth, NoiseRng,
};

/// Estimation routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routine {
    Grid,
    Pv,
    Battery,
    /// Grid and DERs jointly; unknown parameters only in regime C.
    Combined,
    /// Grid and DERs jointly with every declared unknown parameter estimated.
    CombinedParam,
}

impl fmt::Display for Routine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Routine::Grid => "grid",
            Routine::Pv => "pv",
            Routine::Battery => "battery",
            Routine::Combined => "combined",
            Routine::CombinedParam => "combined-param",
        })
    }
}

impl std::str::FromStr for Routine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grid" => Routine::Grid,
            "pv" => Routine::Pv,
            "battery" => Routine::Battery,
            "combined" => Routine::Combined,
            "combined-param" => Routine::CombinedParam,
            _ => return Err(Error::InvalidParameter(format!("unknown routine `{s}`"))),
        })
    }
}

/// A group of routines scored together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Algorithm {
    pub name: String,
    pub routines: Vec<Routine>,
}

impl Algorithm {
    /// Grid, PV and battery estimated separately.
    pub fn standalone() -> Self {
        Self {
            name: "standalone".into(),
            routines: vec![Routine::Grid, Routine::Pv, Routine::Battery],
        }
    }

    pub fn combined() -> Self {
        Self {
            name: "combined".into(),
            routines: vec![Routine::Combined],
        }
    }

    pub fn single(r: Routine) -> Self {
        Self {
            name: r.to_string(),
            routines: vec![r],
        }
    }
}

/// One estimated quantity of one instance at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub instance: usize,
    pub step: usize,
    pub algorithm: String,
    pub family: String,
    pub component: String,
    pub estimate: f64,
    pub truth: f64,
}

/// An instance left out of one algorithm's statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub instance: usize,
    pub algorithm: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub regime: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub n_instances: usize,
    pub time_steps: usize,
    pub dt: f64,
    pub algorithms: Vec<String>,
    pub excluded: Vec<Exclusion>,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

type ByFamily<V> = BTreeMap<String, BTreeMap<String, V>>;

/// Statistics at the final step, keyed `family -> algorithm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub regime: String,
    pub step: usize,
    pub n_instances: usize,
    pub used: BTreeMap<String, usize>,
    pub excluded: BTreeMap<String, usize>,
    pub nrmse: ByFamily<Option<f64>>,
    pub var_avg: ByFamily<Option<f64>>,
    /// Mean absolute error in percent over instances and components.
    pub abs_error_mean: ByFamily<Option<f64>>,
    /// Signed estimation-error distribution of each unknown parameter, percent.
    pub param_error: ByFamily<ParamSummary>,
    /// Mean |SoC error| at the final step, percentage points.
    pub soc_abs_error_final: ByFamily<f64>,
}

/// Mean and worst absolute SoC error of one battery at one step, percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocPoint {
    pub step: usize,
    pub algorithm: String,
    pub battery: String,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub solves: usize,
    pub mean_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub threads: usize,
    pub total_s: f64,
    /// Per algorithm, one sample per instance covering all its steps.
    pub per_algorithm: BTreeMap<String, TimingSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub manifest: Manifest,
    pub records: Vec<EstimateRecord>,
    pub metrics: Metrics,
    pub soc_series: Vec<SocPoint>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses available parallelism.
    pub threads: Option<usize>,
    pub solver: SolverOptions,
    /// Instances to run; `None` uses the scenario's count.
    pub instances: Option<usize>,
    /// Algorithms to score; empty means stand-alone and combined.
    pub algorithms: Vec<Algorithm>,
}

/// Everything an instance needs that does not depend on its seed.
pub struct Prepared<'a> {
    pub scenario: &'a Scenario,
    pub truth: Vec<GroundTruth<f64>>,
    /// Fleet as the estimator sees it (perturbed in regime C).
    pub est_fleet: DerFleet<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        let c = &scenario.config;
        let truth = simulate_schedule(
            &scenario.case,
            &scenario.fleet,
            &scenario.schedule,
            &scenario.soc0,
            c.dt,
        )?;
        let (est_fleet, _) = perturb_parameters(&scenario.fleet, c.active_param_errors())?;
        Ok(Self {
            scenario,
            truth,
            est_fleet,
        })
    }

    /// Noisy (and, in regime B, biased) measurements for steps `1..=time_steps`.
    pub fn measurements(&self, instance: usize) -> Result<Vec<MeasurementSet<f64>>> {
        let sc = self.scenario;
        let mut rng = NoiseRng::for_instance(sc.config.base_seed, instance);
        self.truth[1..]
            .iter()
            .map(|t| {
                let m = synthesize_measurements(&sc.case, &sc.fleet, t, &sc.config.noise, &mut rng)?;
                inject_bad_data(&m, sc.config.active_bad_data())
            })
            .collect()
    }

    fn unknowns(&self, routine: Routine) -> &[String] {
        match routine {
            Routine::CombinedParam => &self.scenario.config.unknown_params,
            _ => self.scenario.config.active_unknowns(),
        }
    }
}

/// Outcome of one routine at one step.
#[derive(Debug, Clone)]
pub struct Solved {
    pub routine: Routine,
    /// Component id for per-device routines.
    pub component: Option<String>,
    pub problem: EstimationProblem<f64>,
    pub estimates: Estimates<f64>,
}

fn solve_checked(
    mut p: EstimationProblem<f64>,
    opts: &SolverOptions,
) -> Result<(EstimationProblem<f64>, Estimates<f64>)> {
    let e = solve_refreshed(&mut p, opts)?;
    if !e.converged {
        return Err(Error::NonConvergence {
            iterations: e.iterations,
            residual: e.kkt_residual,
        });
    }
    Ok((p, e))
}

fn own_unknowns(unknown: &[String], id: &str) -> Vec<String> {
    unknown
        .iter()
        .filter(|u| u.split_once('.').is_some_and(|(o, _)| o == id))
        .cloned()
        .collect()
}

/// Run the routines of `algo` over every step of one instance.
pub fn run_algorithm(
    prep: &Prepared<'_>,
    meas: &[MeasurementSet<f64>],
    algo: &Algorithm,
    opts: &SolverOptions,
) -> Result<Vec<(usize, Vec<Solved>)>> {
    let sc = prep.scenario;
    let fleet = &prep.est_fleet;
    let dt = sc.config.dt;
    let mut prev: BTreeMap<String, PrevStep<f64>> = prep.truth[0]
        .battery
        .iter()
        .map(|(id, s)| {
            (
                id.clone(),
                PrevStep {
                    v_oc: s.v_oc,
                    v_bt: s.v_bt,
                },
            )
        })
        .collect();
    let mut out = Vec::with_capacity(meas.len());
    for (k, m) in meas.iter().enumerate() {
        let step = k + 1;
        let steps: BTreeMap<String, BatteryStep<f64>> = fleet
            .battery
            .iter()
            .map(|b| {
                let p_inj = m.rtu.get(&b.bus).map(|r| -r.p_z).unwrap_or(0.0);
                (
                    b.id.clone(),
                    BatteryStep {
                        step,
                        dt,
                        dispatch: Dispatch::from_injection(p_inj),
                        prev: prev.get(&b.id).copied(),
                    },
                )
            })
            .collect();
        let mut solved = Vec::new();
        for &r in &algo.routines {
            let unknown = prep.unknowns(r);
            match r {
                Routine::Grid => {
                    let (p, e) = solve_checked(assemble_grid(&sc.case, m)?, opts)?;
                    solved.push(Solved {
                        routine: r,
                        component: None,
                        problem: p,
                        estimates: e,
                    });
                }
                Routine::Pv => {
                    for sys in &fleet.pv {
                        let own = own_unknowns(unknown, &sys.id);
                        let (p, e) = solve_checked(assemble_pv(sys, m, &own)?, opts)?;
                        solved.push(Solved {
                            routine: r,
                            component: Some(sys.id.clone()),
                            problem: p,
                            estimates: e,
                        });
                    }
                }
                Routine::Battery => {
                    for sys in &fleet.battery {
                        let own = own_unknowns(unknown, &sys.id);
                        let p = assemble_battery(sys, m, &steps[&sys.id], &own)?;
                        let (p, e) = solve_checked(p, opts)?;
                        solved.push(Solved {
                            routine: r,
                            component: Some(sys.id.clone()),
                            problem: p,
                            estimates: e,
                        });
                    }
                }
                Routine::Combined | Routine::CombinedParam => {
                    let p = assemble_combined(&sc.case, fleet, m, &steps, unknown)?;
                    let (p, e) = solve_checked(p, opts)?;
                    solved.push(Solved {
                        routine: r,
                        component: None,
                        problem: p,
                        estimates: e,
                    });
                }
            }
        }
        // chain battery states on this algorithm's own estimates
        for s in &solved {
            for b in &fleet.battery {
                let (Some(v_oc), Some(v_bt)) = (
                    s.problem.value(&s.estimates.x, &format!("{}.v_oc", b.id)),
                    s.problem.value(&s.estimates.x, &format!("{}.v_bt", b.id)),
                ) else {
                    continue;
                };
                prev.insert(b.id.clone(), PrevStep { v_oc, v_bt });
            }
        }
        out.push((step, solved));
    }
    Ok(out)
}

/// Score solved routines against truth.
pub fn extract_records(
    prep: &Prepared<'_>,
    instance: usize,
    algorithm: &str,
    steps: &[(usize, Vec<Solved>)],
) -> Result<Vec<EstimateRecord>> {
    let sc = prep.scenario;
    let mut out = Vec::new();
    for (step, solved) in steps {
        let truth = &prep.truth[*step];
        let mut push = |family: &str, component: String, estimate: f64, t: f64| {
            out.push(EstimateRecord {
                instance,
                step: *step,
                algorithm: algorithm.to_string(),
                family: family.to_string(),
                component,
                estimate,
                truth: t,
            })
        };
        for s in solved {
            let (p, x) = (&s.problem, &s.estimates.x);
            let val = |name: String| p.value(x, &name);
            for (k, bus) in sc.case.buses.iter().enumerate() {
                if let (Some(vr), Some(vi)) = (
                    val(format!("bus{}.vr", bus.id)),
                    val(format!("bus{}.vi", bus.id)),
                ) {
                    push("grid_vm", format!("bus{}", bus.id), vr.hypot(vi), truth.magnitude(k));
                }
            }
            for sys in &sc.fleet.pv {
                let t = &truth.pv[&sys.id];
                let (Some(v_pv), Some(v_sh), Some(i_pv)) = (
                    val(format!("{}.v_pv", sys.id)),
                    val(format!("{}.v_sh", sys.id)),
                    val(format!("{}.i_pv", sys.id)),
                ) else {
                    continue;
                };
                push("v_pv", sys.id.clone(), v_pv, t.v_pv);
                push("v_sh", sys.id.clone(), v_sh, t.v_sh);
                push("i_pv", sys.id.clone(), i_pv, t.i_pv);
                push("p_pv", sys.id.clone(), v_pv * i_pv, t.p_pv);
            }
            for sys in &sc.fleet.battery {
                let t = &truth.battery[&sys.id];
                let (Some(v_bt), Some(v_oc), Some(i_bt)) = (
                    val(format!("{}.v_bt", sys.id)),
                    val(format!("{}.v_oc", sys.id)),
                    val(format!("{}.i_bt", sys.id)),
                ) else {
                    continue;
                };
                // the estimator's OCV map is the nominal one
                let est_sys = prep
                    .est_fleet
                    .battery
                    .iter()
                    .find(|b| b.id == sys.id)
                    .unwrap_or(sys);
                push("v_bt", sys.id.clone(), v_bt, t.v_bt);
                push("v_oc", sys.id.clone(), v_oc, t.v_oc);
                push("i_bt", sys.id.clone(), i_bt, t.i_bt);
                push("p_bt", sys.id.clone(), v_bt * i_bt, t.p_bt);
                push(
                    "v_soc",
                    sys.id.clone(),
                    (v_oc - est_sys.ocv_a) / est_sys.ocv_b,
                    t.v_soc,
                );
            }
            for (path, j) in &p.unknown_params {
                push("param", path.clone(), x[*j], param_value(&sc.fleet, path)?);
            }
        }
    }
    Ok(out)
}

struct InstanceOutcome {
    records: Vec<EstimateRecord>,
    excluded: Vec<Exclusion>,
    seconds: Vec<(String, f64)>,
}

fn run_instance(
    prep: &Prepared<'_>,
    instance: usize,
    algos: &[Algorithm],
    opts: &SolverOptions,
) -> Result<InstanceOutcome> {
    let meas = prep.measurements(instance)?;
    let mut out = InstanceOutcome {
        records: Vec::new(),
        excluded: Vec::new(),
        seconds: Vec::new(),
    };
    for algo in algos {
        let t0 = Instant::now();
        let res = run_algorithm(prep, &meas, algo, opts)
            .and_then(|steps| extract_records(prep, instance, &algo.name, &steps));
        out.seconds.push((algo.name.clone(), t0.elapsed().as_secs_f64()));
        match res {
            Ok(r) => out.records.extend(r),
            Err(e) => out.excluded.push(Exclusion {
                instance,
                algorithm: algo.name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Run every instance of a scenario. Instance `i` draws its noise from
/// `base_seed + i`, so results do not depend on the thread count.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let start = Instant::now();
    let c = &scenario.config;
    let n = opts.instances.unwrap_or(c.n_instances);
    if n < 1 {
        return Err(Error::Scenario {
            field: "n_instances".into(),
            msg: "must be at least 1".into(),
        });
    }
    let algos = if opts.algorithms.is_empty() {
        vec![Algorithm::standalone(), Algorithm::combined()]
    } else {
        opts.algorithms.clone()
    };
    let prep = Prepared::new(scenario)?;
    let threads = opts
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<InstanceOutcome>> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| run_instance(&prep, i, &algos, &opts.solver))
            .collect()
    });

    let mut records = Vec::new();
    let mut excluded = Vec::new();
    let mut secs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        let o = o?;
        records.extend(o.records);
        excluded.extend(o.excluded);
        for (a, s) in o.seconds {
            secs.entry(a).or_default().push(s);
        }
    }
    let manifest = Manifest {
        scenario: c.name.clone(),
        regime: c.scenario.to_string(),
        config_hash: c.hash(),
        base_seed: c.base_seed,
        n_instances: n,
        time_steps: c.time_steps,
        dt: c.dt,
        algorithms: algos.iter().map(|a| a.name.clone()).collect(),
        excluded,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let metrics = compute_metrics(&records, &manifest);
    let soc_series = soc_series(&records);
    let per_algorithm = secs
        .into_iter()
        .map(|(a, v)| {
            let s = TimingSummary {
                solves: v.len(),
                mean_s: v.iter().sum::<f64>() / v.len() as f64,
                max_s: v.iter().copied().fold(0.0, f64::max),
            };
            (a, s)
        })
        .collect();
    Ok(RunReport {
        manifest,
        records,
        metrics,
        soc_series,
        timing: Timing {
            threads,
            total_s: start.elapsed().as_secs_f64(),
            per_algorithm,
        },
    })
}

/// `instance -> component -> (estimate, truth)` for one algorithm, family and step.
fn table<'a>(
    records: &'a [EstimateRecord],
    algorithm: &str,
    family: &str,
    step: usize,
) -> BTreeMap<usize, BTreeMap<&'a str, (f64, f64)>> {
    let mut t: BTreeMap<usize, BTreeMap<&str, (f64, f64)>> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.step == step && r.algorithm == algorithm && r.family == family)
    {
        t.entry(r.instance)
            .or_default()
            .insert(r.component.as_str(), (r.estimate, r.truth));
    }
    t
}

/// Final-step statistics from stored records; the only input besides the
/// records is the manifest, so stored estimates reproduce the metrics exactly.
pub fn compute_metrics(records: &[EstimateRecord], manifest: &Manifest) -> Metrics {
    let step = manifest.time_steps;
    let families: BTreeSet<&str> = records.iter().map(|r| r.family.as_str()).collect();
    let mut m = Metrics {
        scenario: manifest.scenario.clone(),
        regime: manifest.regime.clone(),
        step,
        n_instances: manifest.n_instances,
        used: BTreeMap::new(),
        excluded: BTreeMap::new(),
        nrmse: BTreeMap::new(),
        var_avg: BTreeMap::new(),
        abs_error_mean: BTreeMap::new(),
        param_error: BTreeMap::new(),
        soc_abs_error_final: BTreeMap::new(),
    };
    for a in &manifest.algorithms {
        let used: BTreeSet<usize> = records
            .iter()
            .filter(|r| &r.algorithm == a && r.step == step)
            .map(|r| r.instance)
            .collect();
        m.used.insert(a.clone(), used.len());
        m.excluded.insert(
            a.clone(),
            manifest.excluded.iter().filter(|e| &e.algorithm == a).count(),
        );
        for &fam in &families {
            let t = table(records, a, fam, step);
            if t.is_empty() {
                continue;
            }
            if fam == "param" {
                let mut errs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                for row in t.values() {
                    for (c, (e, tr)) in row {
                        if let Ok(v) = estimation_error(*e, *tr) {
                            errs.entry(c).or_default().push(v);
                        }
                    }
                }
                for (c, v) in errs {
                    if let Ok((median, iqr)) = median_iqr(&v) {
                        m.param_error.entry(c.to_string()).or_default().insert(
                            a.clone(),
                            ParamSummary {
                                median,
                                iqr,
                                n: v.len(),
                            },
                        );
                    }
                }
                continue;
            }
            // components present in every instance
            let comps: Vec<&str> = t
                .values()
                .next()
                .map(|r| r.keys().copied().collect())
                .unwrap_or_default();
            let rows: Vec<&BTreeMap<&str, (f64, f64)>> = t
                .values()
                .filter(|r| comps.iter().all(|c| r.contains_key(c)))
                .collect();
            let est: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| comps.iter().map(|c| r[c].0).collect())
                .collect();
            let truth: Vec<f64> = comps.iter().map(|c| rows[0][c].1).collect();
            let abs: Vec<f64> = rows
                .iter()
                .flat_map(|r| comps.iter().filter_map(|c| absolute_error(r[c].0, r[c].1).ok()))
                .collect();
            let entry = |map: &mut ByFamily<Option<f64>>, v: Option<f64>| {
                map.entry(fam.to_string()).or_default().insert(a.clone(), v);
            };
            entry(&mut m.nrmse, nrmse(&est, &truth).ok());
            entry(&mut m.var_avg, variance_avg(&est).ok());
            entry(
                &mut m.abs_error_mean,
                (!abs.is_empty()).then(|| abs.iter().sum::<f64>() / abs.len() as f64),
            );
        }
    }
    for p in soc_series(records).into_iter().filter(|p| p.step == step) {
        m.soc_abs_error_final
            .entry(p.battery)
            .or_default()
            .insert(p.algorithm, p.mean_abs_error);
    }
    m
}

/// Per-step absolute SoC error of every battery and algorithm.
pub fn soc_series(records: &[EstimateRecord]) -> Vec<SocPoint> {
    let mut acc: BTreeMap<(&str, &str, usize), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.family == "v_soc") {
        acc.entry((r.algorithm.as_str(), r.component.as_str(), r.step))
            .or_default()
            .push((r.estimate - r.truth).abs() * 100.0);
    }
    acc.into_iter()
        .map(|((a, b, step), v)| SocPoint {
            step,
            algorithm: a.to_string(),
            battery: b.to_string(),
            mean_abs_error: v.iter().sum::<f64>() / v.len() as f64,
            max_abs_error: v.iter().copied().fold(0.0, f64::max),
        })
        .collect()
}
