//! Inner solvers for the local minimization sub-problems.
//!
//! Quadratic costs over affine-equality/box constraint sets go through a
//! primal active-set method with a warm-started working set and a cached KKT
//! factorization, so a sub-problem that is re-solved every consensus round
//! costs one back-substitution in the steady state. Smooth nonconvex costs
//! (the range-only mapping terms) go through a damped Newton iteration from
//! the previous outer iterate.

use crate::error::{Error, Result};
use crate::flops::Flops;
use crate::objective::{ConstraintSet, LocalObjective, QuadPenalty};
use nalgebra::{DMatrix, DVector};

/// Cap on active-set changes / damping iterations per sub-problem solve.
pub const INNER_ITERATION_CAP: usize = 200;
/// KKT residual tolerance for constrained convex sub-problems.
pub const KKT_TOL: f64 = 1e-9;
/// Gradient-norm tolerance for nonconvex sub-problems.
pub const STATIONARITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Lower,
    Upper,
}

type Bound = (usize, Side);

/// Warm-start data carried between repeated solves of sub-problems that share
/// a constraint set: last solution, working set, and the factorization built
/// for that working set.
#[derive(Default)]
pub struct ActiveSetState {
    x: Option<DVector<f64>>,
    working: Vec<Bound>,
    cached: Option<(Vec<Bound>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, usize)>,
}

impl ActiveSetState {
    /// Seeds the warm start with a known feasible point.
    pub fn with_seed(x: DVector<f64>) -> Self {
        Self {
            x: Some(x),
            working: Vec::new(),
            cached: None,
        }
    }
}

/// Minimizes `0.5 x'Px + q'x` over `constraint` (`P` positive definite on the
/// feasible subspace). Returns the minimizer with KKT residual at most
/// [`KKT_TOL`], or an [`Error::InnerSolver`] carrying the best iterate.
pub fn solve_constrained_qp(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    constraint: &ConstraintSet,
    state: &mut ActiveSetState,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    let n = q.len();
    match constraint {
        ConstraintSet::Free => {
            flops.cholesky(n);
            flops.factored_solve(n);
            let chol = nalgebra::Cholesky::new(p.clone())
                .ok_or_else(|| Error::Factorization("QP matrix not positive definite".into()))?;
            Ok(chol.solve(&(-q)))
        }
        _ => active_set(p, q, constraint, state, flops),
    }
}

fn empty_eq(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    (DMatrix::zeros(0, n), DVector::zeros(0))
}

fn active_set(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    constraint: &ConstraintSet,
    state: &mut ActiveSetState,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    let n = q.len();
    let owned;
    let (aeq, beq): (&DMatrix<f64>, &DVector<f64>) = match constraint.equalities() {
        Some((a, b)) => (a, b),
        None => {
            owned = empty_eq(n);
            (&owned.0, &owned.1)
        }
    };
    let me = aeq.nrows();
    let inf = f64::INFINITY;
    let default_lo = DVector::from_element(n, -inf);
    let default_hi = DVector::from_element(n, inf);
    let (lower, upper) = constraint.bounds().unwrap_or((&default_lo, &default_hi));

    let mut x = match &state.x {
        Some(x0) if x0.len() == n && constraint.violation(x0) <= 1e-8 => x0.clone(),
        _ => {
            state.working.clear();
            state.cached = None;
            feasible_start(p, constraint, aeq, beq, lower, upper, flops)?
        }
    };
    // Keep the warm working set only where the iterate actually sits on the
    // bound (it does after a successful previous solve); bounds are otherwise
    // added one at a time as they block, which keeps the KKT rows independent.
    let mut working: Vec<Bound> = Vec::new();
    for &(i, side) in &state.working {
        if i >= n {
            continue;
        }
        let b = match side {
            Side::Lower => lower[i],
            Side::Upper => upper[i],
        };
        if b.is_finite() && (x[i] - b).abs() <= 1e-9 * (1.0 + b.abs()) {
            working.push((i, side));
            x[i] = b;
        }
    }
    working.sort_unstable();
    working.dedup();

    let mut best_residual = f64::INFINITY;
    for _ in 0..INNER_ITERATION_CAP {
        // Equality-QP step on the working set: [P C'; C 0][s; lam] = [-g; 0].
        let g = p * &x + q;
        flops.matvec(n, n);
        let k = me + working.len();
        let dim = n + k;
        let reuse = matches!(&state.cached, Some((w, _, d)) if *w == working && *d == dim);
        if !reuse {
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(p);
            for r in 0..me {
                for c in 0..n {
                    kkt[(n + r, c)] = aeq[(r, c)];
                    kkt[(c, n + r)] = aeq[(r, c)];
                }
            }
            for (w, &(i, _)) in working.iter().enumerate() {
                kkt[(n + me + w, i)] = 1.0;
                kkt[(i, n + me + w)] = 1.0;
            }
            flops.lu(dim);
            state.cached = Some((working.clone(), kkt.lu(), dim));
        }
        let (_, lu, _) = state.cached.as_ref().unwrap();
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        flops.factored_solve(dim);
        let sol = match lu.solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            // Rank-deficient working set (a bound became dependent on the
            // equalities): drop the newest bound and refactor.
            _ => {
                state.cached = None;
                if working.pop().is_none() {
                    return Err(Error::Factorization(
                        "singular KKT system in active-set QP".into(),
                    ));
                }
                continue;
            }
        };
        let step = sol.rows(0, n).into_owned();

        let step_norm = step.amax();
        if step_norm <= 1e-11 * (1.0 + x.amax()) {
            // Stationary on the working set; check bound multiplier signs.
            // With g + C'lam = 0: lower-active bounds need lam <= 0,
            // upper-active need lam >= 0.
            let mut drop_idx: Option<usize> = None;
            let mut worst = 1e-11;
            for (w, &(_, side)) in working.iter().enumerate() {
                let lam = sol[n + me + w];
                let infeas = match side {
                    Side::Lower => lam,
                    Side::Upper => -lam,
                };
                if infeas > worst {
                    worst = infeas;
                    drop_idx = Some(w);
                }
            }
            match drop_idx {
                Some(w) => {
                    working.remove(w);
                    continue;
                }
                None => {
                    let residual = kkt_residual(p, q, constraint, &x, flops);
                    if residual <= KKT_TOL {
                        state.x = Some(x.clone());
                        state.working = working;
                        return Ok(x);
                    }
                    best_residual = best_residual.min(residual);
                    break;
                }
            }
        }

        // Step toward the sub-problem minimizer, stopping at the first
        // blocking bound.
        let mut alpha = 1.0f64;
        let mut blocking: Option<Bound> = None;
        for i in 0..n {
            if working.binary_search(&(i, Side::Lower)).is_ok()
                || working.binary_search(&(i, Side::Upper)).is_ok()
            {
                continue;
            }
            if step[i] < -1e-14 && lower[i].is_finite() {
                let a = (lower[i] - x[i]) / step[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Side::Lower));
                }
            } else if step[i] > 1e-14 && upper[i].is_finite() {
                let a = (upper[i] - x[i]) / step[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Side::Upper));
                }
            }
        }
        x.axpy(alpha, &step, 1.0);
        flops.axpy(n);
        if let Some(b) = blocking {
            x[b.0] = match b.1 {
                Side::Lower => lower[b.0],
                Side::Upper => upper[b.0],
            };
            let pos = working.binary_search(&b).unwrap_err();
            working.insert(pos, b);
        }
    }

    let residual = best_residual.min(kkt_residual(p, q, constraint, &x, flops));
    state.x = Some(x.clone());
    state.working = working;
    Err(Error::InnerSolver {
        message: "active-set QP exceeded its iteration cap".into(),
        residual,
        best: x.as_slice().to_vec(),
    })
}

/// Feasible starting point: least-norm equality solution pushed inside the
/// bounds, with a few alternating repair passes.
fn feasible_start(
    p: &DMatrix<f64>,
    constraint: &ConstraintSet,
    aeq: &DMatrix<f64>,
    beq: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    let n = p.nrows();
    let me = aeq.nrows();
    let clamp = |x: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(n, x.iter().enumerate().map(|(i, &v)| v.clamp(lower[i], upper[i])))
    };
    if me == 0 {
        return Ok(clamp(&DVector::zeros(n)));
    }
    // min ||x - target||^2 s.t. Aeq x = beq, re-clamped a few times.
    let dim = n + me;
    let mut kkt = DMatrix::zeros(dim, dim);
    for i in 0..n {
        kkt[(i, i)] = 1.0;
    }
    for r in 0..me {
        for c in 0..n {
            kkt[(n + r, c)] = aeq[(r, c)];
            kkt[(c, n + r)] = aeq[(r, c)];
        }
    }
    flops.lu(dim);
    let lu = kkt.lu();
    let mut target = DVector::zeros(n);
    for _ in 0..16 {
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&target);
        rhs.rows_mut(n, me).copy_from(beq);
        flops.factored_solve(dim);
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Factorization("rank-deficient equality constraints".into()))?;
        let x = sol.rows(0, n).into_owned();
        if constraint.violation(&x) <= 1e-9 {
            return Ok(x);
        }
        target = clamp(&x);
    }
    Err(Error::Infeasible(
        "could not find a feasible starting point for the QP".into(),
    ))
}

/// Max-norm KKT residual of `min 0.5x'Px + q'x` over the constraint set at
/// `x`: stationarity projected onto the feasible directions, equality and
/// bound feasibility.
pub fn kkt_residual(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    constraint: &ConstraintSet,
    x: &DVector<f64>,
    flops: &mut Flops,
) -> f64 {
    let n = q.len();
    let g = p * x + q;
    flops.matvec(n, n);
    let mut res = constraint.violation(x);
    match constraint.equalities() {
        Some((aeq, _)) if aeq.nrows() > 0 => {
            // Stationarity modulo the equality rows: minimize ||g + Aeq' nu||
            // over nu (least squares), then measure the remainder, with bound
            // complementarity folded in by zeroing admissible directions.
            let at = aeq.transpose();
            let gram = aeq * &at;
            flops.matmul(aeq.nrows(), n, aeq.nrows());
            let rhs = -(aeq * &g);
            flops.matvec(aeq.nrows(), n);
            let nu = match nalgebra::Cholesky::new(gram) {
                Some(ch) => ch.solve(&rhs),
                None => return f64::INFINITY,
            };
            let resid = g + &at * &nu;
            flops.matvec(n, aeq.nrows());
            stationarity_with_bounds(&resid, constraint, x).max(res)
        }
        _ => {
            res = res.max(stationarity_with_bounds(&g, constraint, x));
            res
        }
    }
}

fn stationarity_with_bounds(g: &DVector<f64>, constraint: &ConstraintSet, x: &DVector<f64>) -> f64 {
    let mut res: f64 = 0.0;
    let bounds = constraint.bounds();
    for i in 0..g.len() {
        let (at_lower, at_upper) = match bounds {
            Some((lo, hi)) => (
                lo[i].is_finite() && x[i] - lo[i] <= 1e-9 * (1.0 + lo[i].abs()),
                hi[i].is_finite() && hi[i] - x[i] <= 1e-9 * (1.0 + hi[i].abs()),
            ),
            None => (false, false),
        };
        let v = if at_lower {
            (-g[i]).max(0.0) // pushing below the lower bound is admissible
        } else if at_upper {
            g[i].max(0.0)
        } else {
            g[i].abs()
        };
        res = res.max(v);
    }
    res
}

/// Damped Newton minimization of
/// `f(x) + lin'x + sum_a w_a ||Phi_a x - t_a||^2` for smooth (possibly
/// nonconvex) unconstrained objectives, from `start` (warm start contract of
/// the ADMM primal update). Stops at gradient max-norm [`STATIONARITY_TOL`].
pub fn damped_newton_argmin(
    objective: &dyn LocalObjective,
    lin: &DVector<f64>,
    penalties: &[QuadPenalty],
    start: &DVector<f64>,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    let n = objective.dim();
    let value = |x: &DVector<f64>, flops: &mut Flops| -> f64 {
        let mut v = objective.eval(x, flops) + lin.dot(x);
        flops.dot(n);
        for pen in penalties {
            let r = pen.map.apply(x, flops) - &pen.target;
            v += pen.weight * r.norm_squared();
            flops.dot(r.len());
        }
        v
    };
    let grad = |x: &DVector<f64>, flops: &mut Flops| -> DVector<f64> {
        let mut g = objective.grad(x, flops) + lin;
        flops.add(n as u64);
        for pen in penalties {
            let r = pen.map.apply(x, flops) - &pen.target;
            pen.map.add_transpose_apply(&r, 2.0 * pen.weight, &mut g, flops);
        }
        g
    };

    let mut x = start.clone();
    let mut fx = value(&x, flops);
    let mut damping = 1e-6;
    let mut best = (x.clone(), f64::INFINITY);
    for _ in 0..INNER_ITERATION_CAP {
        let g = grad(&x, flops);
        let gnorm = g.amax();
        if gnorm < best.1 {
            best = (x.clone(), gnorm);
        }
        if gnorm <= STATIONARITY_TOL {
            return Ok(x);
        }
        let mut h = objective.hess(&x, flops)?;
        for pen in penalties {
            pen.map.add_gram(2.0 * pen.weight, &mut h, flops);
        }
        // Levenberg damping: retry with larger damping until the step both
        // factors and decreases the value.
        let mut accepted = false;
        for _ in 0..60 {
            let mut hd = h.clone();
            for i in 0..n {
                hd[(i, i)] += damping;
            }
            flops.cholesky(n);
            if let Some(ch) = nalgebra::Cholesky::new(hd) {
                flops.factored_solve(n);
                let step = ch.solve(&(-&g));
                let cand = &x + &step;
                flops.axpy(n);
                let fc = value(&cand, flops);
                if fc.is_finite() && fc <= fx + 1e-14 * fx.abs() {
                    x = cand;
                    fx = fc;
                    damping = (damping * 0.25).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::InnerSolver {
        message: "damped Newton exceeded its iteration cap".into(),
        residual: best.1,
        best: best.0.as_slice().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn box_qp_clamps_active_coordinate() {
        // min 0.5||x - c||^2 with c outside the box: KKT oracle says the
        // violating coordinate sits at its bound, the rest at c.
        let n = 3;
        let p = DMatrix::identity(n, n);
        let c = DVector::from_vec(vec![0.4, 2.5, -0.3]);
        let q = -&c;
        let cons = ConstraintSet::Box {
            lower: DVector::from_element(n, 0.0),
            upper: DVector::from_element(n, 1.0),
        };
        let mut state = ActiveSetState::default();
        let x = solve_constrained_qp(&p, &q, &cons, &mut state, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!(x[0], 0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-10);
        assert!(kkt_residual(&p, &q, &cons, &x, &mut Flops::new()) <= KKT_TOL);
    }

    #[test]
    fn equality_qp_matches_kkt_linear_system() {
        // min 0.5||x||^2 s.t. x0 + x1 = 2: solution (1, 1, 0).
        let p = DMatrix::identity(3, 3);
        let q = DVector::zeros(3);
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0]);
        let cons = ConstraintSet::Affine { a, b };
        let mut state = ActiveSetState::default();
        let x = solve_constrained_qp(&p, &q, &cons, &mut state, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn composite_qp_warm_start_reuses_working_set() {
        // min 0.5||x - c||^2 s.t. x0 = x1 (equality), 0 <= x <= 1.
        let p = DMatrix::identity(2, 2);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let cons = ConstraintSet::Composite {
            a,
            b: DVector::zeros(1),
            lower: DVector::from_element(2, 0.0),
            upper: DVector::from_element(2, 1.0),
        };
        let mut state = ActiveSetState::default();
        for (c0, c1, want) in [(2.0, 4.0, 1.0), (1.8, 3.0, 1.0), (0.2, 0.4, 0.3)] {
            let q = DVector::from_vec(vec![-c0, -c1]);
            let x = solve_constrained_qp(&p, &q, &cons, &mut state, &mut Flops::new()).unwrap();
            assert_abs_diff_eq!(x[0], want, epsilon = 1e-9);
            assert_abs_diff_eq!(x[1], want, epsilon = 1e-9);
        }
    }

    #[test]
    fn damped_newton_solves_rosenbrock_like_bowl() {
        let obj = crate::objective::FunctionObjective::new(
            2,
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] - x[0] * x[0]).powi(2),
            |x| {
                nalgebra::dvector![
                    2.0 * (x[0] - 1.0) - 40.0 * x[0] * (x[1] - x[0] * x[0]),
                    20.0 * (x[1] - x[0] * x[0])
                ]
            },
        )
        .with_hess(|x| {
            nalgebra::dmatrix![
                2.0 - 40.0 * (x[1] - 3.0 * x[0] * x[0]), -40.0 * x[0];
                -40.0 * x[0], 20.0
            ]
        });
        let x = damped_newton_argmin(
            &obj,
            &DVector::zeros(2),
            &[],
            &DVector::from_vec(vec![-1.0, 1.0]),
            &mut Flops::new(),
        )
        .unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-6);
    }
}
