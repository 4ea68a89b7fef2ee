//! `gridfuse` command line: simulate, estimate, montecarlo, report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gridfuse::harness::{
    extract_records, run_algorithm, run_scenario, Algorithm, Prepared, RunOptions, Routine,
};
use gridfuse::io::{
    load_case, load_config, recompute_metrics, resolve, resolve_config, to_json, write_estimates,
    write_report, DerConfig, Regime, Scenario, ESTIMATES_CSV, METRICS_JSON,
};
use gridfuse::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "gridfuse", version, about = "Joint grid and DER state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario JSON file, bundled scenario name, or A/B/C for the IEEE-118 Case-1 study.
    #[arg(long, default_value = "three-bus")]
    scenario: String,
    /// Grid case (MATPOWER .m or native .json) replacing the scenario's case.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Override the scenario regime (A clean, B bad data, C unknown parameters).
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Synthesize noise-free measurements.
    #[arg(long)]
    zero_noise: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ground truth and one instance of noisy measurements.
    Simulate {
        #[command(flatten)]
        sc: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        instance: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate one instance with one routine.
    Estimate {
        #[command(flatten)]
        sc: ScenarioArgs,
        #[arg(long, default_value = "combined")]
        routine: String,
        #[arg(long, default_value_t = 0)]
        instance: usize,
        /// Write the instance's estimates.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full Monte-Carlo study.
    Montecarlo {
        #[command(flatten)]
        sc: ScenarioArgs,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Recompute metrics.json from stored estimates.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &ScenarioArgs, instances: Option<usize>) -> Result<Scenario, Error> {
    let (mut config, dir) = load_config(&args.scenario)?;
    if let Some(r) = &args.regime {
        config.scenario = r.parse::<Regime>()?;
    }
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    if args.zero_noise {
        config.noise.rtu_sigma = 0.0;
        config.noise.der_sigma = 0.0;
        config.noise.der_overrides.clear();
        for d in &mut config.ders {
            match d {
                DerConfig::Pv(p) => p.sigma = None,
                DerConfig::Battery(b) => b.sigma = None,
            }
        }
    }
    if let Some(n) = instances {
        config.n_instances = n;
    }
    match &args.case {
        Some(path) => resolve(config, load_case(path)?),
        None => resolve_config(config, dir.as_deref()),
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Error> {
    match std::env::var("GRIDFUSE_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| Error::Scenario {
            field: "GRIDFUSE_THREADS".into(),
            msg: format!("`{v}` is not a thread count"),
        }),
        Err(_) => Ok(flag),
    }
}

fn write(path: &Path, text: String) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Simulate { sc, instance, out } => {
            let scenario = load(&sc, None)?;
            let prep = Prepared::new(&scenario)?;
            let meas = prep.measurements(instance)?;
            write(&out.join("truth.json"), to_json(&prep.truth)?)?;
            write(&out.join("measurements.json"), to_json(&meas)?)?;
            write(&out.join("case.json"), to_json(&scenario.case)?)?;
            println!(
                "{}",
                json!({"steps": prep.truth.len(), "buses": scenario.case.n_buses(), "out": out})
            );
            Ok(0)
        }
        Command::Estimate {
            sc,
            routine,
            instance,
            out,
        } => {
            let routine: Routine = routine.parse()?;
            let scenario = load(&sc, None)?;
            let prep = Prepared::new(&scenario)?;
            let meas = prep.measurements(instance)?;
            let algo = Algorithm::single(routine);
            let opts = RunOptions::default().solver;
            let steps = match run_algorithm(&prep, &meas, &algo, &opts) {
                Ok(s) => s,
                Err(e @ Error::NonConvergence { .. }) => {
                    eprintln!("gridfuse: {e}");
                    return Ok(EXIT_NONCONVERGENCE);
                }
                Err(e) => return Err(e),
            };
            let summary: Vec<_> = steps
                .iter()
                .flat_map(|(step, solved)| {
                    solved.iter().map(move |s| {
                        json!({
                            "step": step,
                            "routine": s.routine.to_string(),
                            "component": s.component,
                            "objective": s.estimates.objective,
                            "kkt_residual": s.estimates.kkt_residual,
                            "iterations": s.estimates.iterations,
                            "converged": s.estimates.converged,
                        })
                    })
                })
                .collect();
            if let Some(dir) = out {
                let records = extract_records(&prep, instance, &algo.name, &steps)?;
                std::fs::create_dir_all(&dir)?;
                write_estimates(&dir.join(ESTIMATES_CSV), &records)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Montecarlo {
            sc,
            instances,
            out,
            threads: t,
        } => {
            let scenario = load(&sc, instances)?;
            let opts = RunOptions {
                threads: threads(t)?,
                ..RunOptions::default()
            };
            let report = run_scenario(&scenario, &opts)?;
            write_report(&report, &out)?;
            let used: usize = report.metrics.used.values().sum();
            println!(
                "{}",
                json!({
                    "instances": report.manifest.n_instances,
                    "used": report.metrics.used,
                    "excluded": report.metrics.excluded,
                    "seconds": report.timing.total_s,
                    "out": out,
                })
            );
            Ok(if used == 0 { EXIT_NONCONVERGENCE } else { 0 })
        }
        Command::Report { out } => {
            let metrics = recompute_metrics(&out)?;
            write(&out.join(METRICS_JSON), to_json(&metrics)?)?;
            print!("{}", to_json(&metrics)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("gridfuse: {e}");
            let code = match e {
                Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
                _ => EXIT_DATA,
            };
            ExitCode::from(code)
        }
    }
}
