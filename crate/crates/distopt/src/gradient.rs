//! Distributed gradient descent family: decreasing-step DGD, EXTRA,
//! distributed dual averaging (DDA), DIGing, and the canonical fixed-step
//! form that subsumes the fixed-step variants.
//!
//! All methods mix neighbor iterates through a symmetric doubly stochastic
//! weight row and step along local gradients; they differ in what extra
//! state makes fixed-step exact convergence possible (EXTRA's iterate
//! history, DIGing's gradient tracker, the canonical form's accumulated
//! consensus residual z).

use crate::error::{Error, Result};
use crate::exec::{Algorithm, NetworkInfo, RoundSnapshot, VarSet};
use crate::flops::Flops;
use crate::graph::WeightRow;
use crate::objective::LocalObjective;
use nalgebra::DVector;

/// Step-size schedule for the decreasing-step methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// `alpha(k) = alpha0 / sqrt(k)` for k >= 1, `alpha0` at k = 0.
    SqrtDecreasing,
}

impl StepSchedule {
    pub fn at(&self, alpha0: f64, k: usize) -> f64 {
        match self {
            StepSchedule::Constant => alpha0,
            StepSchedule::SqrtDecreasing => {
                if k == 0 {
                    alpha0
                } else {
                    alpha0 / (k as f64).sqrt()
                }
            }
        }
    }
}

fn finite_or_divergence(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration: 0 })
    }
}

/// `w_ii * own + sum_j w_ij * vals[j]` over the association list `vals`.
fn mix(
    own: &DVector<f64>,
    weights: &WeightRow,
    vals: &[(usize, &DVector<f64>)],
    flops: &mut Flops,
) -> DVector<f64> {
    let n = own.len();
    let mut out = own * weights.self_weight;
    flops.scale(n);
    for &(j, w) in &weights.neighbors {
        let v = vals
            .iter()
            .find(|(jj, _)| *jj == j)
            .expect("neighbor value missing from snapshot")
            .1;
        out.axpy(w, v, 1.0);
        flops.axpy(n);
    }
    out
}

// ---------------------------------------------------------------------------
// DGD (decreasing step)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dgd {
    pub alpha0: f64,
    pub schedule: StepSchedule,
}

impl Dgd {
    pub fn decreasing(alpha0: f64) -> Self {
        Self {
            alpha0,
            schedule: StepSchedule::SqrtDecreasing,
        }
    }

    pub fn constant(alpha0: f64) -> Self {
        Self {
            alpha0,
            schedule: StepSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgdState {
    pub x: DVector<f64>,
    pub alpha0: f64,
    pub schedule: StepSchedule,
    pub k: usize,
}

/// `x <- w_ii x + sum_j w_ij x_j - alpha(k) grad f(x)`, then advance the
/// schedule.
pub fn dgd_step(
    state: &DgdState,
    neighbor_x: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<DgdState> {
    let alpha = state.schedule.at(state.alpha0, state.k);
    let g = objective.grad(&state.x, flops);
    finite_or_divergence(&g)?;
    let mut x = mix(&state.x, weights, neighbor_x, flops);
    x.axpy(-alpha, &g, 1.0);
    flops.axpy(x.len());
    finite_or_divergence(&x)?;
    Ok(DgdState {
        x,
        alpha0: state.alpha0,
        schedule: state.schedule,
        k: state.k + 1,
    })
}

impl Algorithm for Dgd {
    type State = DgdState;

    fn name(&self) -> &'static str {
        "dgd"
    }

    fn init(
        &self,
        _node: usize,
        _objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        _flops: &mut Flops,
    ) -> Result<Self::State> {
        Ok(DgdState {
            x: x0.clone(),
            alpha0: self.alpha0,
            schedule: self.schedule,
            k: 0,
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new().with("x", state.x.clone())
    }

    fn step(
        &self,
        _round: usize,
        _node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let vals: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "x")))
            .collect();
        dgd_step(state, &vals, weights, objective, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

// ---------------------------------------------------------------------------
// EXTRA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Extra {
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct ExtraState {
    pub x: DVector<f64>,
    /// `(x^{k-1}, grad f(x^{k-1}))`; `None` before the bootstrap step.
    pub history: Option<(DVector<f64>, DVector<f64>)>,
    pub alpha: f64,
}

/// First EXTRA iteration: `x^1 = sum_j w_ij x_j^0 - alpha grad f(x^0)`.
pub fn extra_bootstrap(
    state: &ExtraState,
    neighbor_x: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<ExtraState> {
    let g = objective.grad(&state.x, flops);
    finite_or_divergence(&g)?;
    let mut x = mix(&state.x, weights, neighbor_x, flops);
    x.axpy(-state.alpha, &g, 1.0);
    flops.axpy(x.len());
    finite_or_divergence(&x)?;
    Ok(ExtraState {
        x,
        history: Some((state.x.clone(), g)),
        alpha: state.alpha,
    })
}

/// EXTRA update combining the mixed current and previous iterates with the
/// gradient difference:
///
/// ```text
/// x^{k+1} = x^k + [W x^k]_i - 0.5 (x_i^{k-1} + [W x^{k-1}]_i)
///           - alpha (grad f(x^k) - grad f(x^{k-1}))
/// ```
pub fn extra_step(
    state: &ExtraState,
    neighbor_cur: &[(usize, &DVector<f64>)],
    neighbor_prev: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<ExtraState> {
    let (x_prev, grad_prev) = state
        .history
        .as_ref()
        .ok_or_else(|| Error::MissingHistory("EXTRA step before its bootstrap".into()))?;
    let n = state.x.len();
    let g = objective.grad(&state.x, flops);
    finite_or_divergence(&g)?;
    let mix_cur = mix(&state.x, weights, neighbor_cur, flops);
    let mix_prev = mix(x_prev, weights, neighbor_prev, flops);
    let mut x = &state.x + &mix_cur;
    x.axpy(-0.5, x_prev, 1.0);
    x.axpy(-0.5, &mix_prev, 1.0);
    x.axpy(-state.alpha, &g, 1.0);
    x.axpy(state.alpha, grad_prev, 1.0);
    flops.add(10 * n as u64);
    finite_or_divergence(&x)?;
    Ok(ExtraState {
        x,
        history: Some((state.x.clone(), g)),
        alpha: state.alpha,
    })
}

impl Algorithm for Extra {
    type State = ExtraState;

    fn name(&self) -> &'static str {
        "extra"
    }

    fn init(
        &self,
        _node: usize,
        _objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        _flops: &mut Flops,
    ) -> Result<Self::State> {
        Ok(ExtraState {
            x: x0.clone(),
            history: None,
            alpha: self.alpha,
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        // The previous iterate travels with the current one; before the
        // bootstrap it duplicates x (unused by the bootstrap update).
        let prev = state
            .history
            .as_ref()
            .map(|(p, _)| p.clone())
            .unwrap_or_else(|| state.x.clone());
        VarSet::new().with("x", state.x.clone()).with("x_prev", prev)
    }

    fn step(
        &self,
        _round: usize,
        _node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let cur: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "x")))
            .collect();
        if state.history.is_none() {
            return extra_bootstrap(state, &cur, weights, objective, flops);
        }
        let prev: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "x_prev")))
            .collect();
        extra_step(state, &cur, &prev, weights, objective, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

// ---------------------------------------------------------------------------
// DDA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dda {
    pub alpha0: f64,
}

#[derive(Debug, Clone)]
pub struct DdaState {
    /// Aggregated dual / gradient sum (communicated).
    pub z: DVector<f64>,
    /// Primal iterate, always inside the constraint set.
    pub x: DVector<f64>,
    pub alpha0: f64,
    pub k: usize,
}

/// DDA update: mix the dual aggregates (full doubly stochastic row, self
/// included, so dual mass is conserved), add the fresh local gradient, then
/// take the proximal step
/// `x = argmin_{x in X} { x'z + (1/alpha) 0.5||x||^2 } = proj_X(-alpha z)`.
pub fn dda_step(
    state: &DdaState,
    neighbor_z: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<DdaState> {
    let alpha = StepSchedule::SqrtDecreasing.at(state.alpha0, state.k);
    let g = objective.grad(&state.x, flops);
    finite_or_divergence(&g)?;
    let mut z = mix(&state.z, weights, neighbor_z, flops);
    z += &g;
    flops.add(z.len() as u64);
    finite_or_divergence(&z)?;
    let target = &z * (-alpha);
    flops.scale(z.len());
    let x = objective.prox_project(&target, flops)?;
    finite_or_divergence(&x)?;
    Ok(DdaState {
        z,
        x,
        alpha0: state.alpha0,
        k: state.k + 1,
    })
}

impl Algorithm for Dda {
    type State = DdaState;

    fn name(&self) -> &'static str {
        "dda"
    }

    fn required_capabilities(&self) -> &'static [&'static str] {
        &["prox"]
    }

    fn init(
        &self,
        _node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        // x0 is projected so the iterate invariant (x in X) holds from the
        // start.
        let x = objective.prox_project(x0, flops)?;
        Ok(DdaState {
            z: DVector::zeros(objective.dim()),
            x,
            alpha0: self.alpha0,
            k: 0,
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new()
            .with("x", state.x.clone())
            .with("z", state.z.clone())
    }

    fn step(
        &self,
        _round: usize,
        _node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let vals: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "z")))
            .collect();
        dda_step(state, &vals, weights, objective, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

// ---------------------------------------------------------------------------
// Canonical fixed-step form
// ---------------------------------------------------------------------------

/// Canonical two-variable fixed-step DGD; `(zeta0, zeta1, zeta2, zeta3) =
/// (1/2, 1, 0, 0)` with `z^0 = 0` reproduces EXTRA.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub alpha: f64,
    pub zeta: [f64; 4],
}

impl Canonical {
    pub fn extra_params(alpha: f64) -> Self {
        Self {
            alpha,
            zeta: [0.5, 1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct CanonicalState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub alpha: f64,
    pub zeta: [f64; 4],
}

/// Canonical update:
///
/// ```text
/// x' = x + z0*z - z1*(x - [Wx]_i) + z2*(z - [Wz]_i)
///      - alpha grad f((1 - z3) x + z3 [Wx]_i)
/// z' = z - x + [Wx]_i
/// ```
pub fn canonical_step(
    state: &CanonicalState,
    neighbor_x: &[(usize, &DVector<f64>)],
    neighbor_z: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<CanonicalState> {
    let [z0, z1, z2, z3] = state.zeta;
    if !state.zeta.iter().all(|z| z.is_finite()) || !(state.alpha > 0.0) {
        return Err(Error::Argument("canonical form needs finite zetas and alpha > 0".into()));
    }
    let n = state.x.len();
    let mix_x = mix(&state.x, weights, neighbor_x, flops);
    let grad_point = if z3 == 0.0 {
        state.x.clone()
    } else {
        let mut p = &state.x * (1.0 - z3);
        p.axpy(z3, &mix_x, 1.0);
        flops.add(3 * n as u64);
        p
    };
    let g = objective.grad(&grad_point, flops);
    finite_or_divergence(&g)?;

    let mut x = state.x.clone();
    x.axpy(z0, &state.z, 1.0);
    x.axpy(-z1, &state.x, 1.0);
    x.axpy(z1, &mix_x, 1.0);
    if z2 != 0.0 {
        let mix_z = mix(&state.z, weights, neighbor_z, flops);
        x.axpy(z2, &state.z, 1.0);
        x.axpy(-z2, &mix_z, 1.0);
        flops.add(4 * n as u64);
    }
    x.axpy(-state.alpha, &g, 1.0);
    flops.add(8 * n as u64);
    finite_or_divergence(&x)?;

    let mut z = &state.z - &state.x;
    z += &mix_x;
    flops.add(2 * n as u64);
    Ok(CanonicalState {
        x,
        z,
        alpha: state.alpha,
        zeta: state.zeta,
    })
}

impl Algorithm for Canonical {
    type State = CanonicalState;

    fn name(&self) -> &'static str {
        "canonical"
    }

    fn init(
        &self,
        _node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        _flops: &mut Flops,
    ) -> Result<Self::State> {
        Ok(CanonicalState {
            x: x0.clone(),
            z: DVector::zeros(objective.dim()),
            alpha: self.alpha,
            zeta: self.zeta,
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new()
            .with("x", state.x.clone())
            .with("z", state.z.clone())
    }

    fn step(
        &self,
        _round: usize,
        _node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let xs: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "x")))
            .collect();
        let zs: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "z")))
            .collect();
        canonical_step(state, &xs, &zs, weights, objective, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

// ---------------------------------------------------------------------------
// DIGing
// ---------------------------------------------------------------------------

/// Gradient-tracking method with fixed step: consensus on the iterates plus
/// consensus on a tracker y whose network sum always equals the sum of the
/// current local gradients.
#[derive(Debug, Clone)]
pub struct Diging {
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct DigingState {
    pub x: DVector<f64>,
    /// Gradient tracker (communicated alongside x).
    pub y: DVector<f64>,
    /// Cached grad f(x^k).
    pub grad_prev: DVector<f64>,
    pub alpha: f64,
}

/// DIGing update:
///
/// ```text
/// x^{k+1} = [W x^k]_i - alpha y_i^k
/// y^{k+1} = [W y^k]_i + grad f(x^{k+1}) - grad f(x^k)
/// ```
pub fn diging_step(
    state: &DigingState,
    neighbor_x: &[(usize, &DVector<f64>)],
    neighbor_y: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<DigingState> {
    let n = state.x.len();
    let mut x = mix(&state.x, weights, neighbor_x, flops);
    x.axpy(-state.alpha, &state.y, 1.0);
    flops.axpy(n);
    finite_or_divergence(&x)?;
    let g = objective.grad(&x, flops);
    finite_or_divergence(&g)?;
    let mut y = mix(&state.y, weights, neighbor_y, flops);
    y += &g;
    y -= &state.grad_prev;
    flops.add(2 * n as u64);
    finite_or_divergence(&y)?;
    Ok(DigingState {
        x,
        y,
        grad_prev: g,
        alpha: state.alpha,
    })
}

impl Algorithm for Diging {
    type State = DigingState;

    fn name(&self) -> &'static str {
        "diging"
    }

    fn init(
        &self,
        _node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        // Tracker starts at the local gradient so the tracking identity holds
        // from iteration zero.
        let g = objective.grad(x0, flops);
        Ok(DigingState {
            x: x0.clone(),
            y: g.clone(),
            grad_prev: g,
            alpha: self.alpha,
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new()
            .with("x", state.x.clone())
            .with("y", state.y.clone())
    }

    fn step(
        &self,
        _round: usize,
        _node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let xs: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "x")))
            .collect();
        let ys: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "y")))
            .collect();
        diging_step(state, &xs, &ys, weights, objective, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ConstraintSet, FunctionObjective, QuadraticObjective};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn zero_objective(n: usize) -> FunctionObjective {
        FunctionObjective::new(n, |_| 0.0, move |x| DVector::zeros(x.len()))
    }

    fn scalar_quadratic(a: f64) -> QuadraticObjective {
        // f(x) = 0.5 (x - a)^2
        QuadraticObjective::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, -a),
            0.5 * a * a,
            ConstraintSet::Free,
        )
    }

    fn half_half_row(node: usize, other: usize) -> WeightRow {
        WeightRow {
            node,
            self_weight: 0.5,
            neighbors: vec![(other, 0.5)],
        }
    }

    fn single_node_row() -> WeightRow {
        WeightRow {
            node: 0,
            self_weight: 1.0,
            neighbors: vec![],
        }
    }

    #[test]
    fn dgd_pure_consensus_with_zero_gradient() {
        // x = (0, 2), W = [[1/2,1/2],[1/2,1/2]]: both nodes output 1.
        let obj = zero_objective(1);
        let x0 = DVector::from_element(1, 0.0);
        let x1 = DVector::from_element(1, 2.0);
        let s0 = DgdState {
            x: x0.clone(),
            alpha0: 0.3,
            schedule: StepSchedule::SqrtDecreasing,
            k: 0,
        };
        let next = dgd_step(&s0, &[(1, &x1)], &half_half_row(0, 1), &obj, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!(next.x[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dgd_single_node_gradient_step() {
        // N = 1, f = 0.5 x^2, x = 1, alpha = 0.1 -> 0.9.
        let obj = scalar_quadratic(0.0);
        let s = DgdState {
            x: DVector::from_element(1, 1.0),
            alpha0: 0.1,
            schedule: StepSchedule::Constant,
            k: 0,
        };
        let next = dgd_step(&s, &[], &single_node_row(), &obj, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!(next.x[0], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn dgd_step_schedule() {
        // alpha0 = 0.5 at k = 4: effective step 0.25.
        assert_abs_diff_eq!(StepSchedule::SqrtDecreasing.at(0.5, 4), 0.25);
        assert_abs_diff_eq!(StepSchedule::SqrtDecreasing.at(0.5, 0), 0.5);
        let obj = FunctionObjective::new(1, |_| 0.0, |_| DVector::from_element(1, 1.0));
        let s = DgdState {
            x: DVector::zeros(1),
            alpha0: 0.5,
            schedule: StepSchedule::SqrtDecreasing,
            k: 4,
        };
        let next = dgd_step(&s, &[], &single_node_row(), &obj, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!(next.x[0], -0.25, epsilon = 1e-15);
        assert_eq!(next.k, 5);
    }

    #[test]
    fn extra_consensus_fixed_point() {
        let obj = scalar_quadratic(1.0);
        let xstar = DVector::from_element(1, 1.0);
        let state = ExtraState {
            x: xstar.clone(),
            history: Some((xstar.clone(), obj.grad(&xstar, &mut Flops::new()))),
            alpha: 0.4,
        };
        let next = extra_step(
            &state,
            &[(1, &xstar)],
            &[(1, &xstar)],
            &half_half_row(0, 1),
            &obj,
            &mut Flops::new(),
        )
        .unwrap();
        assert_abs_diff_eq!(next.x[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn extra_missing_history_errors() {
        let obj = scalar_quadratic(0.0);
        let state = ExtraState {
            x: DVector::zeros(1),
            history: None,
            alpha: 0.1,
        };
        let err = extra_step(&state, &[], &[], &single_node_row(), &obj, &mut Flops::new()).unwrap_err();
        assert!(matches!(err, Error::MissingHistory(_)));
    }

    /// Dense-matrix EXTRA recursion on the stacked iterates: the independent
    /// oracle for the per-node implementation.
    fn dense_extra(w: &DMatrix<f64>, a: &[f64], alpha: f64, iters: usize) -> Vec<DVector<f64>> {
        let n = w.nrows();
        let grad = |x: &DVector<f64>| -> DVector<f64> {
            DVector::from_iterator(n, x.iter().zip(a).map(|(xi, ai)| xi - ai))
        };
        let eye = DMatrix::identity(n, n);
        let wtil = (&eye + w) * 0.5;
        let x0 = DVector::zeros(n);
        let mut xp = x0.clone();
        let mut x = w * &x0 - grad(&x0) * alpha;
        let mut traj = vec![x.clone()];
        for _ in 1..iters {
            let xn = &x + w * &x - &wtil * &xp - (grad(&x) - grad(&xp)) * alpha;
            xp = x;
            x = xn;
            traj.push(x.clone());
        }
        traj
    }

    #[test]
    fn extra_matches_dense_oracle_on_two_node_quadratic() {
        let alpha = 0.3;
        let a = [0.0, 2.0];
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let oracle = dense_extra(&w, &a, alpha, 50);

        let objs: Vec<QuadraticObjective> = a.iter().map(|&ai| scalar_quadratic(ai)).collect();
        let mut states: Vec<ExtraState> = (0..2)
            .map(|_| ExtraState {
                x: DVector::zeros(1),
                history: None,
                alpha,
            })
            .collect();
        let rows = [half_half_row(0, 1), half_half_row(1, 0)];
        for step_idx in 0..50 {
            let snapshot: Vec<(DVector<f64>, DVector<f64>)> = states
                .iter()
                .map(|s| {
                    let prev = s.history.as_ref().map(|(p, _)| p.clone()).unwrap_or_else(|| s.x.clone());
                    (s.x.clone(), prev)
                })
                .collect();
            let mut next = Vec::new();
            for i in 0..2 {
                let j = 1 - i;
                let cur = [(j, &snapshot[j].0)];
                let prev = [(j, &snapshot[j].1)];
                let s = if states[i].history.is_none() {
                    extra_bootstrap(&states[i], &cur, &rows[i], &objs[i], &mut Flops::new()).unwrap()
                } else {
                    extra_step(&states[i], &cur, &prev, &rows[i], &objs[i], &mut Flops::new()).unwrap()
                };
                next.push(s);
            }
            states = next;
            for i in 0..2 {
                assert_abs_diff_eq!(states[i].x[0], oracle[step_idx][i], epsilon = 1e-12);
            }
        }
        // And the trajectory converges to the centralized optimum x* = 1.
        assert_abs_diff_eq!(states[0].x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn canonical_extra_params_match_extra_trajectory() {
        let alpha = 0.3;
        let a = [0.0, 2.0];
        let oracle = dense_extra(
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            &a,
            alpha,
            40,
        );
        let objs: Vec<QuadraticObjective> = a.iter().map(|&ai| scalar_quadratic(ai)).collect();
        let mut states: Vec<CanonicalState> = (0..2)
            .map(|_| CanonicalState {
                x: DVector::zeros(1),
                z: DVector::zeros(1),
                alpha,
                zeta: [0.5, 1.0, 0.0, 0.0],
            })
            .collect();
        let rows = [half_half_row(0, 1), half_half_row(1, 0)];
        for step_idx in 0..40 {
            let snap: Vec<(DVector<f64>, DVector<f64>)> =
                states.iter().map(|s| (s.x.clone(), s.z.clone())).collect();
            let mut next = Vec::new();
            for i in 0..2 {
                let j = 1 - i;
                let xs = [(j, &snap[j].0)];
                let zs = [(j, &snap[j].1)];
                next.push(
                    canonical_step(&states[i], &xs, &zs, &rows[i], &objs[i], &mut Flops::new())
                        .unwrap(),
                );
            }
            states = next;
            for i in 0..2 {
                assert_abs_diff_eq!(states[i].x[0], oracle[step_idx][i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn canonical_all_zetas_zero_is_local_gradient_descent() {
        let obj = scalar_quadratic(0.0);
        let state = CanonicalState {
            x: DVector::from_element(1, 1.0),
            z: DVector::zeros(1),
            alpha: 0.1,
            zeta: [0.0; 4],
        };
        let other = DVector::from_element(1, 5.0);
        let next = canonical_step(
            &state,
            &[(1, &other)],
            &[(1, &other)],
            &half_half_row(0, 1),
            &obj,
            &mut Flops::new(),
        )
        .unwrap();
        // x ignores the mixing entirely: plain local gradient step.
        assert_abs_diff_eq!(next.x[0], 0.9, epsilon = 1e-15);
        // z accumulates the consensus residual [Wx]_i - x_i = 3 - 1.
        assert_abs_diff_eq!(next.z[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn canonical_consensus_with_zero_z_is_uniform_gradient_step() {
        let obj = scalar_quadratic(0.0);
        let xstar = DVector::from_element(1, 2.0);
        let state = CanonicalState {
            x: xstar.clone(),
            z: DVector::zeros(1),
            alpha: 0.25,
            zeta: [0.5, 1.0, 0.0, 0.0],
        };
        let next = canonical_step(
            &state,
            &[(1, &xstar)],
            &[(1, &DVector::zeros(1))],
            &half_half_row(0, 1),
            &obj,
            &mut Flops::new(),
        )
        .unwrap();
        // grad f(2) = 2, step 0.25: x' = 2 - 0.5.
        assert_abs_diff_eq!(next.x[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn dda_unconstrained_closed_form() {
        // Single node, zero gradient, z = v: x = -alpha v.
        let obj = zero_objective(2);
        let state = DdaState {
            z: DVector::from_vec(vec![2.0, -4.0]),
            x: DVector::zeros(2),
            alpha0: 0.5,
            k: 0,
        };
        let next = dda_step(&state, &[], &single_node_row(), &obj, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!(next.x[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next.x[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn dda_box_clamps_positive_duals_to_zero() {
        let obj = FunctionObjective::new(2, |_| 0.0, |x| DVector::zeros(x.len()))
            .with_constraint(ConstraintSet::Box {
                lower: DVector::zeros(2),
                upper: DVector::from_element(2, 1.0),
            });
        let state = DdaState {
            z: DVector::from_vec(vec![3.0, 0.7]),
            x: DVector::zeros(2),
            alpha0: 0.5,
            k: 0,
        };
        let next = dda_step(&state, &[], &single_node_row(), &obj, &mut Flops::new()).unwrap();
        assert_eq!(next.x, DVector::zeros(2));
    }

    #[test]
    fn dda_zero_gradients_stay_at_prox_minimizer() {
        let obj = zero_objective(1);
        let mut state = DdaState {
            z: DVector::zeros(1),
            x: DVector::zeros(1),
            alpha0: 0.5,
            k: 0,
        };
        for _ in 0..5 {
            state = dda_step(&state, &[], &single_node_row(), &obj, &mut Flops::new()).unwrap();
            assert_abs_diff_eq!(state.z[0], 0.0);
            assert_abs_diff_eq!(state.x[0], 0.0);
        }
    }

    #[test]
    fn diging_single_node_is_gradient_descent_with_tracker() {
        let obj = scalar_quadratic(0.0);
        let mut flops = Flops::new();
        let g0 = obj.grad(&DVector::from_element(1, 1.0), &mut flops);
        let mut state = DigingState {
            x: DVector::from_element(1, 1.0),
            y: g0.clone(),
            grad_prev: g0,
            alpha: 0.1,
        };
        for _ in 0..10 {
            state = diging_step(&state, &[], &[], &single_node_row(), &obj, &mut flops).unwrap();
            // Tracker equals the current gradient.
            assert_abs_diff_eq!(state.y[0], state.x[0], epsilon = 1e-15);
        }
        // Ten steps of (1 - 0.1)^k from 1.
        assert_abs_diff_eq!(state.x[0], 0.9f64.powi(10), epsilon = 1e-12);
    }

    #[test]
    fn diging_tracking_identity_on_random_quadratic() {
        // sum_i y_i^k == sum_i grad f_i(x_i^k) for k = 0..50 (telescoping).
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 3;
        let dim = 4;
        let targets: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0)))
            .collect();
        let objs: Vec<QuadraticObjective> = targets
            .iter()
            .map(|t| {
                QuadraticObjective::new(
                    DMatrix::identity(dim, dim),
                    -t,
                    0.5 * t.norm_squared(),
                    ConstraintSet::Free,
                )
            })
            .collect();
        let graph = crate::graph::CommGraph::chain(n).unwrap();
        let weights = crate::graph::WeightMatrix::metropolis(&graph);
        let rows: Vec<WeightRow> = (0..n).map(|i| weights.row(&graph, i)).collect();
        let mut flops = Flops::new();
        let mut states: Vec<DigingState> = (0..n)
            .map(|i| {
                let x0 = DVector::zeros(dim);
                let g = objs[i].grad(&x0, &mut flops);
                DigingState {
                    x: x0,
                    y: g.clone(),
                    grad_prev: g,
                    alpha: 0.2,
                }
            })
            .collect();
        for _ in 0..50 {
            let mut ysum = DVector::zeros(dim);
            let mut gsum = DVector::zeros(dim);
            for i in 0..n {
                ysum += &states[i].y;
                gsum += objs[i].grad(&states[i].x, &mut flops);
            }
            assert_abs_diff_eq!((ysum - gsum).abs().max(), 0.0, epsilon = 1e-9);

            let snap: Vec<(DVector<f64>, DVector<f64>)> =
                states.iter().map(|s| (s.x.clone(), s.y.clone())).collect();
            let mut next = Vec::new();
            for i in 0..n {
                let xs: Vec<(usize, &DVector<f64>)> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| (j, &snap[j].0))
                    .collect();
                let ys: Vec<(usize, &DVector<f64>)> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| (j, &snap[j].1))
                    .collect();
                next.push(diging_step(&states[i], &xs, &ys, &rows[i], &objs[i], &mut flops).unwrap());
            }
            states = next;
        }
    }

    #[test]
    fn diging_two_node_quadratic_converges() {
        let graph = crate::graph::CommGraph::chain(2).unwrap();
        let weights =
            crate::graph::WeightMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));
        let net = crate::exec::Network {
            graph: &graph,
            weights: &weights,
        };
        let objectives: Vec<Box<dyn LocalObjective>> = vec![
            Box::new(scalar_quadratic(0.0)),
            Box::new(scalar_quadratic(2.0)),
        ];
        let x0 = vec![DVector::zeros(1); 2];
        let trace = crate::exec::run_rounds(
            &Diging { alpha: 0.3 },
            &net,
            &objectives,
            &x0,
            &crate::exec::MseSpec::shared(DVector::from_element(1, 1.0)),
            &crate::exec::StopRule::new(1e-10, 500),
        )
        .unwrap();
        assert!(trace.converged(), "{:?}", trace.termination);
    }
}
