//! Primal-dual interior-point solver for convex QPs with equality and box
//! constraints:
//!
//! ```text
//! minimize   0.5 x'Px + q'x
//! subject to A x = b,    l <= x <= u   (entries of l, u may be infinite)
//! ```
//!
//! This is the centralized oracle for the constrained benchmark; the
//! distributed algorithms' local sub-problems go through the independent
//! active-set path instead, so the two routes share no solver code.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality rows.
    pub eq_duals: DVector<f64>,
    /// Multipliers of the lower/upper bounds (zero on infinite bounds).
    pub lower_duals: DVector<f64>,
    pub upper_duals: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-9;

/// Infeasible-start primal-dual path following with a fraction-to-boundary
/// rule and a fixed centering factor.
pub fn solve_qp(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    aeq: &DMatrix<f64>,
    beq: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<IpmSolution> {
    let n = q.len();
    let me = aeq.nrows();
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(Error::Infeasible(format!(
                "bound {i}: lower {} > upper {}",
                lower[i], upper[i]
            )));
        }
    }
    let bounded_lo: Vec<usize> = (0..n).filter(|&i| lower[i].is_finite()).collect();
    let bounded_hi: Vec<usize> = (0..n).filter(|&i| upper[i].is_finite()).collect();

    // Strictly interior start for the bounded coordinates.
    let mut x = DVector::zeros(n);
    for i in 0..n {
        if lower[i].is_finite() && upper[i].is_finite() {
            x[i] = 0.5 * (lower[i] + upper[i]);
        } else if lower[i].is_finite() {
            x[i] = lower[i] + 1.0;
        } else if upper[i].is_finite() {
            x[i] = upper[i] - 1.0;
        }
    }
    let mut nu = DVector::zeros(me);
    let mut lam_lo = DVector::from_element(n, 0.0);
    let mut lam_hi = DVector::from_element(n, 0.0);
    for &i in &bounded_lo {
        lam_lo[i] = 1.0;
    }
    for &i in &bounded_hi {
        lam_hi[i] = 1.0;
    }

    let slack_lo = |x: &DVector<f64>, i: usize| x[i] - lower[i];
    let slack_hi = |x: &DVector<f64>, i: usize| upper[i] - x[i];

    let mut best: Option<(f64, IpmSolution)> = None;
    for iter in 0..MAX_ITER {
        // Residuals.
        let r_dual = p * &x + q + aeq.transpose() * &nu - &lam_lo + &lam_hi;
        let r_eq = aeq * &x - beq;
        let mut comp: f64 = 0.0;
        let mut pairs = 0usize;
        for &i in &bounded_lo {
            comp += lam_lo[i] * slack_lo(&x, i);
            pairs += 1;
        }
        for &i in &bounded_hi {
            comp += lam_hi[i] * slack_hi(&x, i);
            pairs += 1;
        }
        let mu = if pairs > 0 { comp / pairs as f64 } else { 0.0 };
        let comp_inf = bounded_lo
            .iter()
            .map(|&i| lam_lo[i] * slack_lo(&x, i))
            .chain(bounded_hi.iter().map(|&i| lam_hi[i] * slack_hi(&x, i)))
            .fold(0.0f64, f64::max);
        let residual = r_dual
            .abs()
            .max()
            .max(if me > 0 { r_eq.abs().max() } else { 0.0 })
            .max(comp_inf);

        let candidate = IpmSolution {
            x: x.clone(),
            eq_duals: nu.clone(),
            lower_duals: lam_lo.clone(),
            upper_duals: lam_hi.clone(),
            kkt_residual: residual,
            iterations: iter,
        };
        if best.as_ref().map_or(true, |(r, _)| residual < *r) {
            best = Some((residual, candidate));
        }
        if residual <= TOL {
            return Ok(best.unwrap().1);
        }

        // Newton step on the perturbed KKT system with the bound multipliers
        // eliminated: [P + D, A'; A, 0] with
        // D = diag(lam_lo/s_lo + lam_hi/s_hi).
        let sigma_mu = 0.2 * mu;
        let dim = n + me;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        for &i in &bounded_lo {
            kkt[(i, i)] += lam_lo[i] / slack_lo(&x, i);
        }
        for &i in &bounded_hi {
            kkt[(i, i)] += lam_hi[i] / slack_hi(&x, i);
        }
        for r in 0..me {
            for c in 0..n {
                kkt[(n + r, c)] = aeq[(r, c)];
                kkt[(c, n + r)] = aeq[(r, c)];
            }
            // Tiny regularization keeps the factorization well defined.
            kkt[(n + r, n + r)] = -1e-12;
        }
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            let mut v = -r_dual[i];
            if lower[i].is_finite() {
                v += (sigma_mu - lam_lo[i] * slack_lo(&x, i)) / slack_lo(&x, i);
            }
            if upper[i].is_finite() {
                v -= (sigma_mu - lam_hi[i] * slack_hi(&x, i)) / slack_hi(&x, i);
            }
            rhs[i] = v;
        }
        for r in 0..me {
            rhs[n + r] = -r_eq[r];
        }
        let lu = kkt.lu();
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Factorization("singular KKT system in the interior point solver".into()))?;
        let dx = sol.rows(0, n).into_owned();
        let dnu = sol.rows(n, me).into_owned();

        let mut dlam_lo = DVector::zeros(n);
        let mut dlam_hi = DVector::zeros(n);
        for &i in &bounded_lo {
            let s = slack_lo(&x, i);
            dlam_lo[i] = (sigma_mu - lam_lo[i] * s - lam_lo[i] * dx[i]) / s;
        }
        for &i in &bounded_hi {
            let s = slack_hi(&x, i);
            dlam_hi[i] = (sigma_mu - lam_hi[i] * s + lam_hi[i] * dx[i]) / s;
        }

        // Fraction-to-boundary step.
        let mut alpha: f64 = 1.0;
        for &i in &bounded_lo {
            if dx[i] < 0.0 {
                alpha = alpha.min(-0.995 * slack_lo(&x, i) / dx[i]);
            }
            if dlam_lo[i] < 0.0 {
                alpha = alpha.min(-0.995 * lam_lo[i] / dlam_lo[i]);
            }
        }
        for &i in &bounded_hi {
            if dx[i] > 0.0 {
                alpha = alpha.min(0.995 * slack_hi(&x, i) / dx[i]);
            }
            if dlam_hi[i] < 0.0 {
                alpha = alpha.min(-0.995 * lam_hi[i] / dlam_hi[i]);
            }
        }
        x.axpy(alpha, &dx, 1.0);
        nu.axpy(alpha, &dnu, 1.0);
        lam_lo.axpy(alpha, &dlam_lo, 1.0);
        lam_hi.axpy(alpha, &dlam_hi, 1.0);
    }

    let (residual, sol) = best.unwrap();
    Err(Error::InnerSolver {
        message: format!("interior point solver stalled after {MAX_ITER} iterations"),
        residual,
        best: sol.x.as_slice().to_vec(),
    })
}
