mod common;

use std::fs;

use gridfuse::harness::{run_scenario, Algorithm, RunOptions};
use gridfuse::io::write_report;
use gridfuse::metrics::{estimation_error, median_iqr, nrmse, variance_avg};
use gridfuse::Error;
use proptest::collection::vec;
use proptest::prelude::*;

fn grid(ns: usize, nc: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (
        vec(vec(0.5f64..2.0, nc), ns),
        vec(0.5f64..2.0, nc),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn nrmse_matches_naive_double_loop((est, truth) in (1usize..8, 1usize..6).prop_flat_map(|(n, c)| grid(n, c))) {
        prop_assert!(close(nrmse(&est, &truth).unwrap(), common::naive_nrmse(&est, &truth)));
        prop_assert!(close(variance_avg(&est).unwrap(), common::naive_variance_avg(&est)));
    }

    #[test]
    fn nrmse_is_scale_invariant((est, truth) in grid(5, 3), k in 0.1f64..10.0) {
        let scaled: Vec<Vec<f64>> = est.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let t: Vec<f64> = truth.iter().map(|v| v * k).collect();
        let (a, b) = (nrmse(&est, &truth).unwrap(), nrmse(&scaled, &t).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
        let (va, vb) = (variance_avg(&est).unwrap(), variance_avg(&scaled).unwrap());
        prop_assert!((vb - k * k * va).abs() <= 1e-10 * vb.max(1e-12));
    }

    #[test]
    fn variance_is_translation_invariant((est, _) in grid(6, 4), c in -3.0f64..3.0) {
        let shifted: Vec<Vec<f64>> = est.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        let (a, b) = (variance_avg(&est).unwrap(), variance_avg(&shifted).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-6));
    }

    /// Adding an instance that matches the truth never raises the RMSE part.
    #[test]
    fn exact_instance_never_raises_rmse((mut est, truth) in grid(4, 3)) {
        let mean = |e: &[Vec<f64>]| e.iter().flatten().sum::<f64>() / (e.len() * truth.len()) as f64;
        let before = nrmse(&est, &truth).unwrap() * mean(&est);
        est.push(truth.clone());
        let after = nrmse(&est, &truth).unwrap() * mean(&est);
        prop_assert!(after <= before * (1.0 + 1e-12));
    }

    #[test]
    fn median_iqr_is_order_free(mut v in vec(-100.0f64..100.0, 1..40)) {
        let (m, iqr) = median_iqr(&v).unwrap();
        v.reverse();
        prop_assert_eq!(median_iqr(&v).unwrap(), (m, iqr));
        prop_assert!(iqr >= 0.0);
    }
}

#[test]
fn metric_worked_examples() {
    let est = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
    let truth = [2.0, 3.0];
    // squared errors 1, 1, 1, 1 over four entries; mean estimate 2.5
    assert!((nrmse(&est, &truth).unwrap() - 1.0 / 2.5).abs() < 1e-15);
    // each column has population variance 1
    assert!((variance_avg(&est).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(median_iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), (3.0, 2.0));
    assert_eq!(estimation_error(1.1, 1.0).unwrap().round(), 10.0);
    assert!(matches!(estimation_error(1.0, 0.0), Err(Error::UndefinedRelativeError)));
    assert!(matches!(nrmse(&[vec![0.0]], &[1.0]), Err(Error::ZeroMeanEstimate)));
    assert!(nrmse(&[vec![1.0, 2.0]], &[1.0]).is_err());
    assert!(median_iqr(&[]).is_err());
}

#[test]
fn serial_and_parallel_runs_write_identical_files() {
    let scenario = common::scenario_with("three-bus", 6, 41);
    let tmp = tempfile::tempdir().unwrap();
    for (threads, sub) in [(1, "serial"), (4, "parallel")] {
        let opts = RunOptions {
            threads: Some(threads),
            ..Default::default()
        };
        write_report(&run_scenario(&scenario, &opts).unwrap(), &tmp.path().join(sub)).unwrap();
    }
    let mut files: Vec<_> = fs::read_dir(tmp.path().join("serial"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert!(files.len() >= 4);
    for f in files {
        if f == "timing.json" {
            continue;
        }
        let a = fs::read(tmp.path().join("serial").join(&f)).unwrap();
        let b = fs::read(tmp.path().join("parallel").join(&f)).unwrap();
        assert!(a == b, "{f:?} differs");
    }
}

#[test]
fn zero_noise_gives_zero_nrmse() {
    let scenario = common::noiseless("three-bus");
    let report = run_scenario(&scenario, &RunOptions::default()).unwrap();
    let m = &report.metrics;
    assert!(!m.nrmse.is_empty());
    for (fam, by_algo) in &m.nrmse {
        for (algo, v) in by_algo {
            let v = v.unwrap();
            assert!(v < 1e-8, "{fam}/{algo}: {v:e}");
        }
    }
    assert!(m.excluded.values().all(|&n| n == 0));
}

#[test]
fn failed_instances_are_excluded_and_recorded() {
    let scenario = common::scenario_with("three-bus", 2, 1);
    let mut opts = RunOptions {
        algorithms: vec![Algorithm::combined()],
        ..Default::default()
    };
    opts.solver.max_iter = 1;
    let report = run_scenario(&scenario, &opts).unwrap();
    assert_eq!(report.manifest.excluded.len(), 2);
    assert!(report.manifest.excluded.iter().all(|e| e.algorithm == "combined"));
    assert_eq!(report.metrics.excluded["combined"], 2);
    assert_eq!(report.metrics.used["combined"], 0);
    assert!(report.records.is_empty());
}
