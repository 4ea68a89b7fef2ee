use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::problem::{EstimationProblem, Slot};
use crate::residual::LocalResidual;
use crate::scalar::Scalar;
use crate::sparse::{minimum_degree, CscMatrix, LuFactors, Triplets};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Infinity norm of the KKT residual at convergence.
    pub tol: f64,
    pub max_iter: usize,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Full steps allowed to raise the merit before falling back to a line search.
    pub watchdog_steps: usize,
    /// First diagonal shift tried when the KKT matrix fails to factor.
    pub regularization: f64,
    pub regularization_growth: f64,
    pub max_regularizations: usize,
    /// Diagonal pivot preference of the LU.
    pub pivot_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            backtrack_factor: 0.5,
            max_backtracks: 20,
            watchdog_steps: 3,
            regularization: 1e-10,
            regularization_growth: 100.0,
            max_regularizations: 3,
            pivot_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates<T> {
    pub x: Vec<T>,
    pub lambda: Vec<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub converged: bool,
}

struct Kkt<T> {
    matrix: CscMatrix<T>,
    residual: Vec<T>,
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn two_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// KKT residual `[2 W x + J^T lambda; h(x)]`.
pub fn kkt_residual<T: Scalar>(p: &EstimationProblem<T>, x: &[T], lambda: &[T]) -> Vec<T> {
    let n = p.n_vars();
    let mut r = vec![T::zero(); n + p.n_rows];
    for j in 0..n {
        r[j] = T::of(2.0) * p.weights[j] * x[j];
    }
    let mut local = Vec::new();
    let mut jac = Vec::new();
    for b in &p.blocks {
        b.gather(x, &mut local);
        let rows = b.model.n_rows();
        let nv = local.len();
        b.model.eval(&local, &mut r[n + b.row..n + b.row + rows]);
        jac.clear();
        jac.resize(rows * nv, T::zero());
        b.model.jacobian(&local, &mut jac);
        for (c, s) in b.slots.iter().enumerate() {
            if let Slot::Var(j) = *s {
                for k in 0..rows {
                    r[j] = r[j] + jac[k * nv + c] * lambda[b.row + k];
                }
            }
        }
    }
    r
}

fn assemble_kkt<T: Scalar>(p: &EstimationProblem<T>, x: &[T], lambda: &[T], shift: T) -> Kkt<T> {
    let n = p.n_vars();
    let dim = n + p.n_rows;
    let mut t = Triplets::with_capacity(dim, dim, 8 * dim);
    let two = T::of(2.0);
    for j in 0..n {
        t.push(j, j, two * p.weights[j] + shift);
    }
    for r in 0..p.n_rows {
        t.push(n + r, n + r, -shift);
    }
    let mut local = Vec::new();
    let mut jac = Vec::new();
    let mut hess = Vec::new();
    for b in &p.blocks {
        b.gather(x, &mut local);
        let rows = b.model.n_rows();
        let nv = local.len();
        jac.clear();
        jac.resize(rows * nv, T::zero());
        b.model.jacobian(&local, &mut jac);
        for (c, s) in b.slots.iter().enumerate() {
            if let Slot::Var(j) = *s {
                for k in 0..rows {
                    let v = jac[k * nv + c];
                    t.push(n + b.row + k, j, v);
                    t.push(j, n + b.row + k, v);
                }
            }
        }
        if !b.model.is_affine() {
            hess.clear();
            hess.resize(nv * nv, T::zero());
            b.model
                .hessian(&local, &lambda[b.row..b.row + rows], &mut hess);
            for (c1, s1) in b.slots.iter().enumerate() {
                let Slot::Var(j1) = *s1 else { continue };
                for (c2, s2) in b.slots.iter().enumerate() {
                    let Slot::Var(j2) = *s2 else { continue };
                    t.push(j1, j2, hess[c1 * nv + c2]);
                }
            }
        }
    }
    Kkt {
        matrix: t.to_csc(),
        residual: kkt_residual(p, x, lambda),
    }
}

fn describe<T: Scalar>(p: &EstimationProblem<T>, col: usize) -> String {
    let n = p.n_vars();
    if col < n {
        format!("variable {}", p.names[col])
    } else {
        p.block_of_row(col - n)
            .map(|b| b.label.clone())
            .unwrap_or_else(|| format!("row {}", col - n))
    }
}

/// Newton step on the KKT system, with diagonal regularization retried when
/// the factorization hits a singular pivot.
fn newton_step<T: Scalar>(
    p: &EstimationProblem<T>,
    x: &[T],
    lambda: &[T],
    order: &mut Option<Vec<usize>>,
    opts: &SolverOptions,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut shift = T::zero();
    let mut attempt = 0;
    loop {
        let kkt = assemble_kkt(p, x, lambda, shift);
        let q = order.get_or_insert_with(|| minimum_degree(&kkt.matrix.symmetric_adjacency()));
        let zero_tol = T::epsilon() * kkt.matrix.max_abs();
        match LuFactors::factor(&kkt.matrix, q, T::of(opts.pivot_threshold), zero_tol) {
            Ok(lu) => {
                let rhs: Vec<T> = kkt.residual.iter().map(|v| -*v).collect();
                return Ok((lu.solve(&rhs), kkt.residual));
            }
            Err(e) => {
                if attempt >= opts.max_regularizations {
                    return Err(Error::SingularKkt {
                        block: describe(p, e.col),
                    });
                }
                shift = if attempt == 0 {
                    T::of(opts.regularization)
                } else {
                    shift * T::of(opts.regularization_growth)
                };
                attempt += 1;
            }
        }
    }
}

/// Solve `min sum w x^2 s.t. h(x) = 0` by Lagrange-Newton from `init`.
///
/// Non-convergence within `max_iter` is reported through `converged = false`;
/// a KKT matrix that stays singular after regularization is an error.
pub fn solve<T: Scalar>(
    p: &EstimationProblem<T>,
    init: &[T],
    lambda0: Option<&[T]>,
    opts: &SolverOptions,
) -> Result<Estimates<T>> {
    let n = p.n_vars();
    let m = p.n_rows;
    let mut x = init.to_vec();
    let mut lambda = lambda0
        .map(|l| l.to_vec())
        .unwrap_or_else(|| vec![T::zero(); m]);
    let tol = T::of(opts.tol);
    let mut order = None;
    let mut res = kkt_residual(p, &x, &lambda);
    let mut iterations = 0;
    let mut converged = inf_norm(&res) < tol;

    // watchdog: the merit may rise for a few full steps; if it has not
    // dropped below the saved point by then, resume from there with a line search
    let mut saved: Option<(Vec<T>, Vec<T>, Vec<T>)> = None;
    let mut relaxed = 0;
    let mut force_search = false;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (step, _) = newton_step(p, &x, &lambda, &mut order, opts)?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularKkt {
                block: "non-finite Newton step".into(),
            });
        }
        // junction limiting on diode voltages
        let mut alpha = T::one();
        for &(j, a) in &p.diode_limits {
            let lim = T::of(2.0) * a;
            let d = step[j].abs();
            if d > lim {
                alpha = alpha.min(lim / d);
            }
        }
        let merit0 = two_norm(&res);
        let merit_ref = saved.as_ref().map_or(merit0, |s| two_norm(&s.2));
        let mut trial_x = x.clone();
        let mut trial_l = lambda.clone();
        let mut trial_res;
        let mut bt = 0;
        loop {
            for j in 0..n {
                trial_x[j] = x[j] + alpha * step[j];
            }
            for r in 0..m {
                trial_l[r] = lambda[r] + alpha * step[n + r];
            }
            trial_res = kkt_residual(p, &trial_x, &trial_l);
            let merit = two_norm(&trial_res);
            let finite = merit.is_finite();
            let decrease = T::one() - T::of(1e-4) * alpha;
            if finite && merit <= decrease * merit_ref {
                saved = None;
                relaxed = 0;
                force_search = false;
                break;
            }
            if finite && !force_search && relaxed < opts.watchdog_steps {
                if saved.is_none() {
                    saved = Some((x.clone(), lambda.clone(), res.clone()));
                }
                relaxed += 1;
                break;
            }
            if !force_search {
                if let Some((sx, sl, sr)) = saved.take() {
                    // watchdog expired: back to the saved point
                    x = sx;
                    lambda = sl;
                    res = sr;
                    relaxed = 0;
                    force_search = true;
                    trial_res = res.clone();
                    trial_x = x.clone();
                    trial_l = lambda.clone();
                    break;
                }
                force_search = true;
            }
            if finite && merit <= decrease * merit0 || bt == opts.max_backtracks {
                force_search = false;
                break;
            }
            bt += 1;
            alpha = alpha * T::of(opts.backtrack_factor);
        }
        if trial_res.iter().all(|v| v.is_finite()) {
            x = trial_x;
            lambda = trial_l;
            res = trial_res;
        }
        converged = inf_norm(&res) < tol;
    }

    Ok(Estimates {
        objective: p.objective(&x),
        kkt_residual: inf_norm(&res),
        x,
        lambda,
        iterations,
        converged,
    })
}

/// Solve, then re-evaluate converter efficiencies at the estimated power and
/// solve once more from the first solution.
pub fn solve_refreshed<T: Scalar>(
    p: &mut EstimationProblem<T>,
    opts: &SolverOptions,
) -> Result<Estimates<T>> {
    let init = p.initial.clone();
    let first = solve(p, &init, None, opts)?;
    if p.eta_links.is_empty() || !first.converged {
        return Ok(first);
    }
    p.refresh_efficiencies(&first.x)?;
    let mut second = solve(p, &first.x, Some(&first.lambda), opts)?;
    second.iterations += first.iterations;
    Ok(second)
}
