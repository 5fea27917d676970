//! Local cost functions: the per-node view of the separable problem.
//!
//! Every node owns a [`LocalObjective`]: value/gradient (and optionally
//! Hessian) evaluation, a constraint set descriptor, and a penalized-argmin
//! capability
//!
//! ```text
//! argmin_{x in C}  f_i(x) + lin'x + sum_a w_a ||Phi_a x - t_a||^2
//! ```
//!
//! which is what the ADMM-family primal updates, the NEXT surrogate step and
//! the DDA projection reduce to.

use crate::error::{Error, Result};
use crate::flops::Flops;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::cell::RefCell;

/// Constraint set descriptor attached to a local objective.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Free,
    /// Componentwise bounds; entries may be +-infinity.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// Affine equalities `A x = b`.
    Affine { a: DMatrix<f64>, b: DVector<f64> },
    /// Affine equalities plus componentwise bounds.
    Composite {
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
}

impl ConstraintSet {
    pub fn is_free(&self) -> bool {
        matches!(self, ConstraintSet::Free)
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConstraintSet::Free => 0.0,
            ConstraintSet::Box { lower, upper } => box_violation(x, lower, upper),
            ConstraintSet::Affine { a, b } => (a * x - b).abs().max(),
            ConstraintSet::Composite { a, b, lower, upper } => {
                let eq = (a * x - b).abs().max();
                eq.max(box_violation(x, lower, upper))
            }
        }
    }

    pub fn satisfied(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.violation(x) <= tol
    }

    pub fn bounds(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        match self {
            ConstraintSet::Box { lower, upper } | ConstraintSet::Composite { lower, upper, .. } => {
                Some((lower, upper))
            }
            _ => None,
        }
    }

    pub fn equalities(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match self {
            ConstraintSet::Affine { a, b } | ConstraintSet::Composite { a, b, .. } => Some((a, b)),
            _ => None,
        }
    }
}

fn box_violation(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> f64 {
    let mut v: f64 = 0.0;
    for i in 0..x.len() {
        v = v.max(lower[i] - x[i]).max(x[i] - upper[i]);
    }
    v.max(0.0)
}

/// Linear map inside a quadratic penalty term `w ||Phi x - t||^2`.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyMap {
    Identity,
    /// 0/1 coordinate selector: row r picks `indices[r]` of x.
    Select(Vec<usize>),
    Dense(DMatrix<f64>),
}

impl PenaltyMap {
    pub fn output_dim(&self, n: usize) -> usize {
        match self {
            PenaltyMap::Identity => n,
            PenaltyMap::Select(idx) => idx.len(),
            PenaltyMap::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>, flops: &mut Flops) -> DVector<f64> {
        match self {
            PenaltyMap::Identity => x.clone(),
            PenaltyMap::Select(idx) => DVector::from_iterator(idx.len(), idx.iter().map(|&i| x[i])),
            PenaltyMap::Dense(m) => {
                flops.matvec(m.nrows(), m.ncols());
                m * x
            }
        }
    }

    /// Accumulates `scale * Phi' y` into `out`.
    pub fn add_transpose_apply(
        &self,
        y: &DVector<f64>,
        scale: f64,
        out: &mut DVector<f64>,
        flops: &mut Flops,
    ) {
        match self {
            PenaltyMap::Identity => {
                out.axpy(scale, y, 1.0);
                flops.axpy(out.len());
            }
            PenaltyMap::Select(idx) => {
                for (r, &i) in idx.iter().enumerate() {
                    out[i] += scale * y[r];
                }
                flops.add(2 * idx.len() as u64);
            }
            PenaltyMap::Dense(m) => {
                out.gemv_tr(scale, m, y, 1.0);
                flops.matvec(m.nrows(), m.ncols());
            }
        }
    }

    /// Accumulates `scale * Phi' Phi` into the dense matrix `out`.
    pub fn add_gram(&self, scale: f64, out: &mut DMatrix<f64>, flops: &mut Flops) {
        match self {
            PenaltyMap::Identity => {
                for i in 0..out.nrows() {
                    out[(i, i)] += scale;
                }
                flops.add(out.nrows() as u64);
            }
            PenaltyMap::Select(idx) => {
                for &i in idx {
                    out[(i, i)] += scale;
                }
                flops.add(idx.len() as u64);
            }
            PenaltyMap::Dense(m) => {
                let gram = m.transpose() * m;
                flops.matmul(m.ncols(), m.nrows(), m.ncols());
                *out += gram * scale;
                flops.add((out.nrows() * out.ncols()) as u64);
            }
        }
    }
}

/// One quadratic penalty anchor `weight * ||map(x) - target||^2`.
#[derive(Debug, Clone)]
pub struct QuadPenalty {
    pub weight: f64,
    pub map: PenaltyMap,
    pub target: DVector<f64>,
}

impl QuadPenalty {
    pub fn anchored(weight: f64, target: DVector<f64>) -> Self {
        Self {
            weight,
            map: PenaltyMap::Identity,
            target,
        }
    }
}

/// Which optional capabilities an objective provides (value and gradient are
/// always required).
#[derive(Debug, Clone, Copy, Default)]
pub struct Capabilities {
    pub hess: bool,
    pub argmin: bool,
    pub prox: bool,
}

/// A node's private cost function.
pub trait LocalObjective {
    /// Decision-variable length n.
    fn dim(&self) -> usize;

    fn capabilities(&self) -> Capabilities;

    fn eval(&self, x: &DVector<f64>, flops: &mut Flops) -> f64;

    fn grad(&self, x: &DVector<f64>, flops: &mut Flops) -> DVector<f64>;

    fn hess(&self, _x: &DVector<f64>, _flops: &mut Flops) -> Result<DMatrix<f64>> {
        Err(Error::Argument("objective has no Hessian capability".into()))
    }

    fn constraint(&self) -> &ConstraintSet;

    /// `argmin_{x in C} f(x) + lin'x + sum_a w_a ||Phi_a x - t_a||^2`.
    fn penalized_argmin(
        &self,
        lin: &DVector<f64>,
        penalties: &[QuadPenalty],
        flops: &mut Flops,
    ) -> Result<DVector<f64>>;

    /// Euclidean projection of `target` onto the constraint set, i.e. the
    /// dual-averaging update `argmin_{x in C} x'z + (1/alpha) psi(x)` with
    /// `psi = 0.5||x||^2` written as `proj_C(-alpha z)`.
    fn prox_project(&self, target: &DVector<f64>, flops: &mut Flops) -> Result<DVector<f64>>;

    /// `(P, q)` when the objective is exactly `0.5 x'Px + q'x + c`; lets
    /// quadratic sub-problem solvers reuse the objective's cached
    /// factorizations.
    fn as_quadratic(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        None
    }

    /// Whether the Hessian is iterate-independent (lets solvers keep a single
    /// factorization).
    fn hessian_constant(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Quadratic objectives (least squares, control energy)
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
struct QuadCache {
    /// Penalty structure the cached factorization was built for.
    sig: Option<Vec<(f64, PenaltyMap)>>,
    chol: Option<Cholesky<f64, Dyn>>,
}

/// `f(x) = 0.5 x'P x + q'x + c` with `P` symmetric positive semidefinite,
/// optionally subject to a constraint set.
pub struct QuadraticObjective {
    p: DMatrix<f64>,
    q: DVector<f64>,
    c: f64,
    constraint: ConstraintSet,
    cache: RefCell<QuadCache>,
    qp_state: RefCell<crate::admm::inner::ActiveSetState>,
}

impl QuadraticObjective {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, c: f64, constraint: ConstraintSet) -> Self {
        assert_eq!(p.nrows(), p.ncols());
        assert_eq!(p.nrows(), q.len());
        Self {
            p,
            q,
            c,
            constraint,
            cache: RefCell::new(QuadCache::default()),
            qp_state: RefCell::new(crate::admm::inner::ActiveSetState::default()),
        }
    }

    /// Weighted least squares `||z - H x||^2_{Winv}` in quadratic form:
    /// `P = 2 H' Winv H`, `q = -2 H' Winv z`, `c = z' Winv z`.
    pub fn from_weighted_lls(h: &DMatrix<f64>, w_inv: &DMatrix<f64>, z: &DVector<f64>) -> Self {
        let ht_winv = h.transpose() * w_inv;
        let p = (&ht_winv * h) * 2.0;
        let q = -(&ht_winv * z) * 2.0;
        let c = (w_inv * z).dot(z);
        Self::new(p, q, c, ConstraintSet::Free)
    }

    pub fn with_constraint(mut self, constraint: ConstraintSet) -> Self {
        self.constraint = constraint;
        self
    }

    /// Seeds the constrained-QP warm start with a known feasible point.
    pub fn with_qp_seed(self, seed: DVector<f64>) -> Self {
        *self.qp_state.borrow_mut() = crate::admm::inner::ActiveSetState::with_seed(seed);
        self
    }

    pub fn quadratic_term(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.q
    }

    /// Assembles the penalized quadratic: `(P + sum 2w Phi'Phi,
    /// q + lin - sum 2w Phi't)`.
    fn penalized_form(
        &self,
        lin: &DVector<f64>,
        penalties: &[QuadPenalty],
        flops: &mut Flops,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut lhs = self.p.clone();
        let mut rhs = &self.q + lin;
        flops.add(n as u64);
        for pen in penalties {
            pen.map.add_gram(2.0 * pen.weight, &mut lhs, flops);
            pen.map
                .add_transpose_apply(&pen.target, -2.0 * pen.weight, &mut rhs, flops);
        }
        (lhs, rhs)
    }
}

impl LocalObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            hess: true,
            argmin: true,
            prox: true,
        }
    }

    fn eval(&self, x: &DVector<f64>, flops: &mut Flops) -> f64 {
        flops.matvec(self.dim(), self.dim());
        flops.dot(self.dim());
        flops.dot(self.dim());
        0.5 * (&self.p * x).dot(x) + self.q.dot(x) + self.c
    }

    fn grad(&self, x: &DVector<f64>, flops: &mut Flops) -> DVector<f64> {
        flops.matvec(self.dim(), self.dim());
        flops.add(self.dim() as u64);
        &self.p * x + &self.q
    }

    fn hess(&self, _x: &DVector<f64>, _flops: &mut Flops) -> Result<DMatrix<f64>> {
        Ok(self.p.clone())
    }

    fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    fn penalized_argmin(
        &self,
        lin: &DVector<f64>,
        penalties: &[QuadPenalty],
        flops: &mut Flops,
    ) -> Result<DVector<f64>> {
        let n = self.dim();
        if self.constraint.is_free() {
            // One linear solve; the factorization is reused while the penalty
            // structure (weights and maps, not targets) stays fixed.
            let mut cache = self.cache.borrow_mut();
            let sig: Vec<(f64, PenaltyMap)> =
                penalties.iter().map(|p| (p.weight, p.map.clone())).collect();
            if cache.sig.as_ref() != Some(&sig) || cache.chol.is_none() {
                let (lhs, _) = self.penalized_form(lin, penalties, flops);
                flops.cholesky(n);
                let chol = Cholesky::new(lhs).ok_or_else(|| {
                    Error::Factorization("penalized quadratic is not positive definite".into())
                })?;
                cache.sig = Some(sig);
                cache.chol = Some(chol);
            }
            let mut rhs = &self.q + lin;
            flops.add(n as u64);
            for pen in penalties {
                pen.map
                    .add_transpose_apply(&pen.target, -2.0 * pen.weight, &mut rhs, flops);
            }
            rhs.neg_mut();
            flops.factored_solve(n);
            Ok(cache.chol.as_ref().unwrap().solve(&rhs))
        } else {
            let (lhs, rhs) = self.penalized_form(lin, penalties, flops);
            let mut state = self.qp_state.borrow_mut();
            crate::admm::inner::solve_constrained_qp(&lhs, &rhs, &self.constraint, &mut state, flops)
        }
    }

    fn prox_project(&self, target: &DVector<f64>, flops: &mut Flops) -> Result<DVector<f64>> {
        project_onto(target, &self.constraint, &self.qp_state, flops)
    }

    fn as_quadratic(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        Some((&self.p, &self.q))
    }

    fn hessian_constant(&self) -> bool {
        true
    }
}

/// Euclidean projection onto a constraint set; boxes in closed form, affine
/// parts through the constrained-QP inner solver.
pub(crate) fn project_onto(
    target: &DVector<f64>,
    constraint: &ConstraintSet,
    qp_state: &RefCell<crate::admm::inner::ActiveSetState>,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    match constraint {
        ConstraintSet::Free => Ok(target.clone()),
        ConstraintSet::Box { lower, upper } => {
            flops.add(2 * target.len() as u64);
            Ok(DVector::from_iterator(
                target.len(),
                target
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| t.clamp(lower[i], upper[i])),
            ))
        }
        _ => {
            let n = target.len();
            let lhs = DMatrix::identity(n, n);
            let rhs = -target;
            let mut state = qp_state.borrow_mut();
            crate::admm::inner::solve_constrained_qp(&lhs, &rhs, constraint, &mut state, flops)
        }
    }
}

// ---------------------------------------------------------------------------
// Closure-backed objective for tests and toy problems
// ---------------------------------------------------------------------------

type EvalFn = Box<dyn Fn(&DVector<f64>) -> f64>;
type GradFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;
type HessFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64>>;

/// Objective defined by closures; Hessian optional. Penalized argmin runs a
/// damped Newton iteration when a Hessian is available.
pub struct FunctionObjective {
    dim: usize,
    eval_fn: EvalFn,
    grad_fn: GradFn,
    hess_fn: Option<HessFn>,
    constraint: ConstraintSet,
    qp_state: RefCell<crate::admm::inner::ActiveSetState>,
    warm: RefCell<Option<DVector<f64>>>,
}

impl FunctionObjective {
    pub fn new(
        dim: usize,
        eval_fn: impl Fn(&DVector<f64>) -> f64 + 'static,
        grad_fn: impl Fn(&DVector<f64>) -> DVector<f64> + 'static,
    ) -> Self {
        Self {
            dim,
            eval_fn: Box::new(eval_fn),
            grad_fn: Box::new(grad_fn),
            hess_fn: None,
            constraint: ConstraintSet::Free,
            qp_state: RefCell::new(crate::admm::inner::ActiveSetState::default()),
            warm: RefCell::new(None),
        }
    }

    pub fn with_hess(mut self, hess_fn: impl Fn(&DVector<f64>) -> DMatrix<f64> + 'static) -> Self {
        self.hess_fn = Some(Box::new(hess_fn));
        self
    }

    pub fn with_constraint(mut self, constraint: ConstraintSet) -> Self {
        self.constraint = constraint;
        self
    }
}

impl LocalObjective for FunctionObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            hess: self.hess_fn.is_some(),
            argmin: self.hess_fn.is_some(),
            prox: true,
        }
    }

    fn eval(&self, x: &DVector<f64>, flops: &mut Flops) -> f64 {
        flops.add(2 * self.dim as u64);
        (self.eval_fn)(x)
    }

    fn grad(&self, x: &DVector<f64>, flops: &mut Flops) -> DVector<f64> {
        flops.add(2 * self.dim as u64);
        (self.grad_fn)(x)
    }

    fn hess(&self, x: &DVector<f64>, flops: &mut Flops) -> Result<DMatrix<f64>> {
        flops.add((self.dim * self.dim) as u64);
        match &self.hess_fn {
            Some(h) => Ok(h(x)),
            None => Err(Error::Argument("objective has no Hessian capability".into())),
        }
    }

    fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    fn penalized_argmin(
        &self,
        lin: &DVector<f64>,
        penalties: &[QuadPenalty],
        flops: &mut Flops,
    ) -> Result<DVector<f64>> {
        if self.hess_fn.is_none() {
            return Err(Error::Argument(
                "objective has no penalized-argmin capability".into(),
            ));
        }
        if !self.constraint.is_free() {
            return Err(Error::Argument(
                "constrained argmin unsupported for closure objectives".into(),
            ));
        }
        let start = self
            .warm
            .borrow()
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.dim));
        let out = crate::admm::inner::damped_newton_argmin(self, lin, penalties, &start, flops)?;
        *self.warm.borrow_mut() = Some(out.clone());
        Ok(out)
    }

    fn prox_project(&self, target: &DVector<f64>, flops: &mut Flops) -> Result<DVector<f64>> {
        project_onto(target, &self.constraint, &self.qp_state, flops)
    }
}

/// Central finite-difference gradient of `eval` at `x`, the independent
/// oracle for gradient checks.
pub fn central_difference_gradient<F>(eval: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        let step = h * (1.0 + x[i].abs());
        xp[i] += step;
        xm[i] -= step;
        g[i] = (eval(&xp) - eval(&xm)) / (2.0 * step);
    }
    g
}
