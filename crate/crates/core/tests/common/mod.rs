//! Shared oracles for the integration tests.
#![allow(dead_code)]

use gridfuse::der::{BatteryCircuit, Dispatch, PvCircuit, SocTrapezoid};
use gridfuse::estimator::{BlockModel, Coupling, KclBlock, Pin};
use gridfuse::io::{load_config, resolve_config, Scenario};
use gridfuse::network::{BusKind, GridCase};
use gridfuse::residual::LocalResidual;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Worst row-wise relative error of the analytic Jacobian against central
/// differences, and of the analytic Hessian of `lambda . h` against central
/// differences of `J^T lambda`.
pub fn fd_errors<R: LocalResidual<f64>>(model: &R, x: &[f64], lambda: &[f64]) -> (f64, f64) {
    let n = model.n_vars();
    let m = model.n_rows();
    let jac = model.dense_jacobian(x);
    let mut jac_err: f64 = 0.0;
    let mut fd = vec![vec![0.0; n]; m];
    for j in 0..n {
        let h = step(x[j]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (rp, rm) = (model.residuals(&xp), model.residuals(&xm));
        for r in 0..m {
            fd[r][j] = (rp[r] - rm[r]) / (2.0 * h);
        }
    }
    for r in 0..m {
        let scale = (0..n).map(|j| jac[r * n + j].abs()).fold(0.0, f64::max);
        let diff = (0..n).map(|j| (jac[r * n + j] - fd[r][j]).abs()).fold(0.0, f64::max);
        if scale > 0.0 {
            jac_err = jac_err.max(diff / scale);
        } else {
            jac_err = jac_err.max(diff);
        }
    }

    let grad = |x: &[f64]| -> Vec<f64> {
        let jac = model.dense_jacobian(x);
        (0..n)
            .map(|j| (0..m).map(|r| lambda[r] * jac[r * n + j]).sum())
            .collect()
    };
    let hess = model.dense_hessian(x, lambda);
    let g0 = grad(x);
    let mut hess_err: f64 = 0.0;
    for j in 0..n {
        let h = step(x[j]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (gp, gm) = (grad(&xp), grad(&xm));
        let col: Vec<f64> = (0..n).map(|i| (gp[i] - gm[i]) / (2.0 * h)).collect();
        let scale = (0..n).map(|i| hess[i * n + j].abs()).fold(0.0, f64::max);
        let diff = (0..n).map(|i| (hess[i * n + j] - col[i]).abs()).fold(0.0, f64::max);
        // differencing noise is relative to the gradient, so vanishing
        // columns are judged against that scale
        let floor = g0.iter().fold(1e-12f64, |m, v| m.max(v.abs())) * 1e-3 / x[j].abs().max(1.0);
        hess_err = hess_err.max(diff / scale.max(floor));
    }
    (jac_err, hess_err)
}

/// One random instance of every residual family, with a random point in its
/// physical range.
pub fn sample_families(r: &mut ChaCha8Rng) -> Vec<(&'static str, BlockModel<f64>, Vec<f64>)> {
    let mut out = Vec::new();

    let m = r.gen_range(2..6);
    let mut adm: Vec<(f64, f64)> = (0..m)
        .map(|_| (-r.gen_range(0.5..20.0), r.gen_range(2.0..100.0)))
        .collect();
    let own = r.gen_range(0..m);
    adm[own] = (
        -adm.iter().map(|a| a.0).sum::<f64>(),
        -adm.iter().map(|a| a.1).sum::<f64>(),
    );
    let volts = |r: &mut ChaCha8Rng, m: usize| -> Vec<f64> {
        let mag: Vec<f64> = (0..m).map(|_| r.gen_range(0.9..1.1)).collect();
        let ang: Vec<f64> = (0..m).map(|_| r.gen_range(-0.5..0.5)).collect();
        let mut x: Vec<f64> = mag.iter().zip(&ang).map(|(v, a)| v * a.cos()).collect();
        x.extend(mag.iter().zip(&ang).map(|(v, a)| v * a.sin()));
        x
    };
    let x = volts(r, m);
    out.push((
        "grid kcl",
        BlockModel::Kcl(KclBlock {
            admittance: adm.clone(),
            own,
            rtu: None,
        }),
        x.clone(),
    ));
    let mut xr = x;
    xr.extend([r.gen_range(-0.01..0.01), r.gen_range(-0.01..0.01)]);
    out.push((
        "rtu kcl",
        BlockModel::Kcl(KclBlock {
            admittance: adm,
            own,
            rtu: Some((r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0))),
        }),
        xr,
    ));

    out.push((
        "reference pin",
        BlockModel::Pin(Pin {
            target: r.gen_range(0.95..1.05),
            noisy: true,
        }),
        vec![r.gen_range(0.9..1.1), r.gen_range(-0.01..0.01)],
    ));

    let a = r.gen_range(0.3..1.5);
    let v_sh = r.gen_range(-2.0..(36.0 * a));
    let v_pv = v_sh - r.gen_range(0.0..3.0);
    out.push((
        "pv circuit",
        BlockModel::Pv(PvCircuit {
            z_ph: r.gen_range(0.0..10.0),
            z_i: r.gen_range(0.0..10.0),
            z_v: r.gen_range(0.0..20.0),
            i_0: 10f64.powf(r.gen_range(-10.0..-6.0)),
            a,
        }),
        vec![
            v_sh,
            v_pv,
            r.gen_range(0.0..10.0),
            r.gen_range(-0.3..0.3),
            r.gen_range(-0.3..0.3),
            r.gen_range(-0.3..0.3),
            r.gen_range(0.05..1.0),
            r.gen_range(50.0..1000.0),
        ],
    ));

    out.push((
        "battery circuit",
        BlockModel::Battery(BatteryCircuit {
            z_i: r.gen_range(-20.0..20.0),
            z_v: r.gen_range(3.0..4.2),
        }),
        vec![
            r.gen_range(3.0..4.2),
            r.gen_range(3.4..4.0),
            r.gen_range(-20.0..20.0),
            r.gen_range(-0.3..0.3),
            r.gen_range(-0.3..0.3),
            r.gen_range(0.01..0.2),
        ],
    ));

    out.push((
        "soc trapezoid",
        BlockModel::Soc(SocTrapezoid {
            v_oc_prev: r.gen_range(3.4..4.0),
            v_bt_prev: r.gen_range(3.0..4.2),
            ocv_b: r.gen_range(0.2..1.0),
            c_cap: r.gen_range(1000.0..10000.0),
            dt: r.gen_range(60.0..900.0),
        }),
        vec![
            r.gen_range(3.4..4.0),
            r.gen_range(3.0..4.2),
            r.gen_range(0.01..0.2),
        ],
    ));

    let ac = |r: &mut ChaCha8Rng| {
        let v = r.gen_range(0.9..1.1);
        let th: f64 = r.gen_range(-0.5..0.5);
        vec![
            v * th.cos(),
            v * th.sin(),
            r.gen_range(-0.01..0.01),
            r.gen_range(-0.01..0.01),
        ]
    };
    let mut x = vec![r.gen_range(5.0..9.0), r.gen_range(0.0..10.0)];
    x.extend(ac(r));
    out.push((
        "pv coupling",
        BlockModel::Coupling(Coupling::pv(
            r.gen_range(-1.0..0.0),
            r.gen_range(-0.1..0.1),
            r.gen_range(1e-3..1e-2),
            r.gen_range(0.9..0.99),
        )),
        x,
    ));
    for (name, dispatch) in [
        ("battery coupling discharging", Dispatch::Discharging),
        ("battery coupling charging", Dispatch::Charging),
    ] {
        let mut x = vec![r.gen_range(3.0..4.2), r.gen_range(-20.0..20.0)];
        x.extend(ac(r));
        out.push((
            name,
            BlockModel::Coupling(Coupling::battery(
                r.gen_range(-1.0..1.0),
                r.gen_range(-0.1..0.1),
                r.gen_range(1e-2..1.0),
                r.gen_range(0.9..0.99),
                r.gen_range(0.9..0.99),
                dispatch,
            )),
            x,
        ));
    }
    out
}

/// Polar power flow solved by dense Newton with a finite-difference Jacobian,
/// stamped directly from the branch list. `extra` adds `(P, Q)` per bus position.
/// Returns rectangular voltages.
pub fn polar_powerflow(case: &GridCase<f64>, extra: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let n = case.buses.len();
    let pos = |id: usize| case.buses.iter().position(|b| b.id == id).unwrap();
    let mut g = vec![vec![0.0; n]; n];
    let mut b = vec![vec![0.0; n]; n];
    for br in &case.branches {
        let (f, t) = (pos(br.from), pos(br.to));
        g[f][f] += br.g;
        g[t][t] += br.g;
        b[f][f] += br.b + br.shunt_b / 2.0;
        b[t][t] += br.b + br.shunt_b / 2.0;
        g[f][t] -= br.g;
        g[t][f] -= br.g;
        b[f][t] -= br.b;
        b[t][f] -= br.b;
    }
    for (k, bus) in case.buses.iter().enumerate() {
        g[k][k] += bus.shunt_g;
        b[k][k] += bus.shunt_b;
    }
    let spec: Vec<(f64, f64)> = case
        .buses
        .iter()
        .zip(extra)
        .map(|(bus, e)| {
            let (p, q) = bus.injection.unwrap_or((0.0, 0.0));
            (p + e.0, q + e.1)
        })
        .collect();
    let slack = case.buses.iter().position(|b| b.kind == BusKind::Slack).unwrap();
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| b.v_set.unwrap_or(1.0))
        .collect();
    let mut va = vec![0.0; n];
    let th_idx: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let vm_idx: Vec<usize> = (0..n)
        .filter(|&k| case.buses[k].kind == BusKind::Pq)
        .collect();

    let mismatch = |vm: &[f64], va: &[f64]| -> Vec<f64> {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for k in 0..n {
            for l in 0..n {
                if g[k][l] == 0.0 && b[k][l] == 0.0 {
                    continue;
                }
                let d = va[k] - va[l];
                p[k] += vm[k] * vm[l] * (g[k][l] * d.cos() + b[k][l] * d.sin());
                q[k] += vm[k] * vm[l] * (g[k][l] * d.sin() - b[k][l] * d.cos());
            }
        }
        th_idx
            .iter()
            .map(|&k| p[k] - spec[k].0)
            .chain(vm_idx.iter().map(|&k| q[k] - spec[k].1))
            .collect()
    };
    let unpack = |z: &[f64], vm: &mut Vec<f64>, va: &mut Vec<f64>| {
        for (i, &k) in th_idx.iter().enumerate() {
            va[k] = z[i];
        }
        for (i, &k) in vm_idx.iter().enumerate() {
            vm[k] = z[th_idx.len() + i];
        }
    };
    let mut z: Vec<f64> = th_idx
        .iter()
        .map(|&k| va[k])
        .chain(vm_idx.iter().map(|&k| vm[k]))
        .collect();
    for _ in 0..30 {
        unpack(&z, &mut vm, &mut va);
        let f0 = mismatch(&vm, &va);
        if f0.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-12 {
            break;
        }
        let dim = z.len();
        let mut jac = vec![vec![0.0; dim]; dim];
        for j in 0..dim {
            let h = 1e-7;
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let (mut a1, mut t1, mut a2, mut t2) = (vm.clone(), va.clone(), vm.clone(), va.clone());
            unpack(&zp, &mut a1, &mut t1);
            unpack(&zm, &mut a2, &mut t2);
            let (fp, fm) = (mismatch(&a1, &t1), mismatch(&a2, &t2));
            for i in 0..dim {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let dz = dense_solve(jac, f0.iter().map(|v| -v).collect());
        for (zi, d) in z.iter_mut().zip(dz) {
            *zi += d;
        }
    }
    unpack(&z, &mut vm, &mut va);
    (
        vm.iter().zip(&va).map(|(m, a)| m * a.cos()).collect(),
        vm.iter().zip(&va).map(|(m, a)| m * a.sin()).collect(),
    )
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f == 0.0 {
                continue;
            }
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Brute-force NRMSE: element-by-element double loop.
pub fn naive_nrmse(est: &[Vec<f64>], truth: &[f64]) -> f64 {
    let mut sq = 0.0;
    let mut sum = 0.0;
    let mut count = 0.0;
    for n in 0..est.len() {
        for c in 0..truth.len() {
            let e = est[n][c] - truth[c];
            sq += e * e;
            sum += est[n][c];
            count += 1.0;
        }
    }
    (sq / count).sqrt() / (sum / count)
}

/// Brute-force average population variance.
pub fn naive_variance_avg(est: &[Vec<f64>]) -> f64 {
    let n_c = est[0].len();
    let n_s = est.len() as f64;
    let mut total = 0.0;
    for c in 0..n_c {
        let mut mean = 0.0;
        for row in est {
            mean += row[c];
        }
        mean /= n_s;
        let mut var = 0.0;
        for row in est {
            var += (row[c] - mean) * (row[c] - mean);
        }
        total += var / n_s;
    }
    total / n_c as f64
}

/// A bundled scenario with its noise switched off.
pub fn noiseless(name: &str) -> Scenario {
    let (mut cfg, dir) = load_config(name).unwrap();
    cfg.noise.rtu_sigma = 0.0;
    cfg.noise.der_sigma = 0.0;
    cfg.noise.der_overrides.clear();
    for d in &mut cfg.ders {
        match d {
            gridfuse::io::DerConfig::Pv(p) => p.sigma = None,
            gridfuse::io::DerConfig::Battery(b) => b.sigma = None,
        }
    }
    resolve_config(cfg, dir.as_deref()).unwrap()
}

/// A bundled scenario with a different instance count and seed.
pub fn scenario_with(name: &str, n: usize, seed: u64) -> Scenario {
    let (mut cfg, dir) = load_config(name).unwrap();
    cfg.n_instances = n;
    cfg.base_seed = seed;
    resolve_config(cfg, dir.as_deref()).unwrap()
}
