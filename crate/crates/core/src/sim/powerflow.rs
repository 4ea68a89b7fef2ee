use crate::error::{Error, Result};
use crate::network::{build_admittance, Admittance, BusKind, GridCase};
use crate::scalar::Scalar;
use crate::sparse::{minimum_degree, LuFactors, Triplets};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution<T> {
    pub v_real: Vec<T>,
    pub v_imag: Vec<T>,
    /// Net injected `(P, Q)` per bus position, evaluated at the solution.
    pub injections: Vec<(T, T)>,
    pub iterations: usize,
    pub mismatch: T,
}

fn injected<T: Scalar>(y: &Admittance<T>, k: usize, vr: &[T], vi: &[T]) -> (T, T, T, T) {
    let (ir, ii) = y.current(k, vr, vi);
    (vr[k] * ir + vi[k] * ii, vi[k] * ir - vr[k] * ii, ir, ii)
}

/// Rectangular Newton-Raphson power flow.
///
/// `extra` adds per-bus injections (per-unit, by bus position) on top of the
/// case's own. The reference bus is held at its regulated magnitude and zero
/// angle; generator buses regulate `|V|`; all other buses hold `(P, Q)`.
/// Initial voltages come from the case, rotated so the reference angle is 0.
pub fn solve_powerflow<T: Scalar>(
    case: &GridCase<T>,
    extra: &[(T, T)],
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution<T>> {
    let n = case.n_buses();
    let y = build_admittance(case)?;
    let s = case
        .slack_index()
        .ok_or_else(|| Error::InvalidParameter("case has no slack bus".into()))?;
    let sb = &case.buses[s];
    let v_ref = sb
        .v_set
        .unwrap_or_else(|| (sb.v_real * sb.v_real + sb.v_imag * sb.v_imag).sqrt());
    let th0 = sb.v_imag.atan2(sb.v_real);
    let (c0, s0) = (th0.cos(), th0.sin());

    let mut vr = Vec::with_capacity(n);
    let mut vi = Vec::with_capacity(n);
    for b in &case.buses {
        let (mut r, mut i) = (b.v_real * c0 + b.v_imag * s0, b.v_imag * c0 - b.v_real * s0);
        if let (BusKind::Pv, Some(vs)) = (b.kind, b.v_set) {
            let m = (r * r + i * i).sqrt();
            if m > T::zero() {
                r = r * vs / m;
                i = i * vs / m;
            }
        }
        vr.push(r);
        vi.push(i);
    }
    vr[s] = v_ref;
    vi[s] = T::zero();

    let target: Vec<(T, T)> = case
        .buses
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let (p, q) = b.injection.unwrap_or((T::zero(), T::zero()));
            let (ep, eq) = extra.get(k).copied().unwrap_or((T::zero(), T::zero()));
            (p + ep, q + eq)
        })
        .collect();

    let mismatch = |vr: &[T], vi: &[T]| -> Vec<T> {
        let mut f = vec![T::zero(); 2 * n];
        for k in 0..n {
            let b = &case.buses[k];
            let (p, q, _, _) = injected(&y, k, vr, vi);
            match b.kind {
                BusKind::Slack => {
                    f[2 * k] = vr[k] - v_ref;
                    f[2 * k + 1] = vi[k];
                }
                BusKind::Pv => {
                    let vs = b.v_set.unwrap_or(T::one());
                    f[2 * k] = p - target[k].0;
                    f[2 * k + 1] = vr[k] * vr[k] + vi[k] * vi[k] - vs * vs;
                }
                BusKind::Pq => {
                    f[2 * k] = p - target[k].0;
                    f[2 * k + 1] = q - target[k].1;
                }
            }
        }
        f
    };

    let tol = T::of(opts.tol);
    let mut f = mismatch(&vr, &vi);
    let mut norm = f.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let mut order: Option<Vec<usize>> = None;
    let mut it = 0;
    while norm >= tol {
        if it == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: norm.as_f64(),
            });
        }
        it += 1;
        let mut t = Triplets::with_capacity(2 * n, 2 * n, 8 * n);
        for k in 0..n {
            let b = &case.buses[k];
            let (rp, rq) = (2 * k, 2 * k + 1);
            if b.kind == BusKind::Slack {
                t.push(rp, 2 * k, T::one());
                t.push(rq, 2 * k + 1, T::one());
                continue;
            }
            let (_, _, ir, ii) = injected(&y, k, &vr, &vi);
            for &(l, g, bb) in y.row(k) {
                let mut dp_r = vr[k] * g + vi[k] * bb;
                let mut dp_i = -vr[k] * bb + vi[k] * g;
                let mut dq_r = vi[k] * g - vr[k] * bb;
                let mut dq_i = -vi[k] * bb - vr[k] * g;
                if l == k {
                    dp_r = dp_r + ir;
                    dp_i = dp_i + ii;
                    dq_r = dq_r - ii;
                    dq_i = dq_i + ir;
                }
                t.push(rp, 2 * l, dp_r);
                t.push(rp, 2 * l + 1, dp_i);
                if b.kind == BusKind::Pq {
                    t.push(rq, 2 * l, dq_r);
                    t.push(rq, 2 * l + 1, dq_i);
                }
            }
            if b.kind == BusKind::Pv {
                let two = T::of(2.0);
                t.push(rq, 2 * k, two * vr[k]);
                t.push(rq, 2 * k + 1, two * vi[k]);
            }
        }
        let jac = t.to_csc();
        let q = order.get_or_insert_with(|| minimum_degree(&jac.symmetric_adjacency()));
        let lu = LuFactors::factor(&jac, q, T::of(0.1), T::epsilon() * jac.max_abs())
            .map_err(|_| Error::SingularJacobian)?;
        let rhs: Vec<T> = f.iter().map(|v| -*v).collect();
        let dx = lu.solve(&rhs);
        for k in 0..n {
            vr[k] = vr[k] + dx[2 * k];
            vi[k] = vi[k] + dx[2 * k + 1];
        }
        f = mismatch(&vr, &vi);
        norm = f.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: f64::NAN,
            });
        }
    }
    let injections = (0..n)
        .map(|k| {
            let (p, q, _, _) = injected(&y, k, &vr, &vi);
            (p, q)
        })
        .collect();
    Ok(PowerFlowSolution {
        v_real: vr,
        v_imag: vi,
        injections,
        iterations: it,
        mismatch: norm,
    })
}
