//! Distributed sequential convex programming: Network Newton-K and NEXT.
//!
//! NN-K attacks the penalty reformulation
//! `min alpha sum_i f_i(x_i) + 0.5 x'(I - W)x` with an approximate Newton
//! step. The joint Hessian splits as `H = D - B` with block-diagonal
//! `D_i = alpha hess f_i + 2 wbar_ii I`, and the Newton direction is expanded
//! in the Neumann series of `D^{-1}B`: each extra term is one more exchange
//! of the direction iterate d with the neighbors, so an outer iteration
//! costs K + 1 communication rounds.
//!
//! NEXT tracks the network gradient through dynamic consensus and minimizes
//! a strongly convex local surrogate of the global cost each round; with the
//! quadratic surrogate (NEXT-Q) the local model uses the problem Hessian.

use crate::error::{Error, Result};
use crate::exec::{Algorithm, NetworkInfo, RoundSnapshot, VarSet};
use crate::flops::Flops;
use crate::graph::WeightRow;
use crate::objective::{LocalObjective, QuadPenalty};
use nalgebra::{Cholesky, DVector, Dyn};

fn finite_or_divergence(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration: 0 })
    }
}

// ---------------------------------------------------------------------------
// Network Newton-K
// ---------------------------------------------------------------------------

/// Network Newton with K inner (Hessian-approximation) rounds per update.
#[derive(Debug, Clone)]
pub struct NetworkNewton {
    /// Penalty weight on the local costs.
    pub alpha: f64,
    /// Step size of the Newton step.
    pub epsilon: f64,
    /// Number of inner communication rounds (NN-0 uses the initialization).
    pub k_inner: usize,
}

#[derive(Debug, Clone)]
pub struct NnkState {
    pub x: DVector<f64>,
    /// Newton-direction iterate, exchanged during inner rounds.
    pub d: DVector<f64>,
    /// Penalized gradient.
    pub g: DVector<f64>,
    /// Factorized local Hessian block `D_i`.
    pub d_chol: Option<Cholesky<f64, Dyn>>,
    pub alpha: f64,
    pub epsilon: f64,
    pub k_inner: usize,
}

/// Outer phase: refresh `D_i = alpha hess f_i(x) + 2 wbar_ii I` and
/// `g_i = alpha grad f_i(x) + sum_{N_i + i} wbar_ij x_j`, then initialize the
/// inner iterate `d = -D_i^{-1} g_i`. `wbar` is the row of `I - W`.
pub fn nnk_outer_step(
    state: &NnkState,
    neighbor_x: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<NnkState> {
    let n = state.x.len();
    let wbar_ii = 1.0 - weights.self_weight;
    let grad = objective.grad(&state.x, flops);
    finite_or_divergence(&grad)?;

    // g = alpha grad + (1 - w_ii) x_i - sum_j w_ij x_j.
    let mut g = &grad * state.alpha;
    g.axpy(wbar_ii, &state.x, 1.0);
    flops.add(4 * n as u64);
    for &(j, w) in &weights.neighbors {
        let xj = neighbor_x
            .iter()
            .find(|(jj, _)| *jj == j)
            .expect("neighbor value missing")
            .1;
        g.axpy(-w, xj, 1.0);
        flops.axpy(n);
    }

    let d_chol = match &state.d_chol {
        Some(c) if objective.hessian_constant() => c.clone(),
        _ => {
            let mut d_mat = objective.hess(&state.x, flops)? * state.alpha;
            for i in 0..n {
                d_mat[(i, i)] += 2.0 * wbar_ii;
            }
            flops.add((n * n + n) as u64);
            flops.cholesky(n);
            Cholesky::new(d_mat).ok_or_else(|| {
                Error::Factorization(
                    "NN-K block D_i is not positive definite (alpha too small relative to wbar_ii)"
                        .into(),
                )
            })?
        }
    };
    flops.factored_solve(n);
    let d = -d_chol.solve(&g);
    finite_or_divergence(&d)?;
    Ok(NnkState {
        x: state.x.clone(),
        d,
        g,
        d_chol: Some(d_chol),
        alpha: state.alpha,
        epsilon: state.epsilon,
        k_inner: state.k_inner,
    })
}

/// One inner Hessian-approximation round:
/// `d <- D_i^{-1} [ wbar_ii d_i - g_i - sum_j wbar_ij d_j ]`
/// (note `wbar_ij = -w_ij` off the diagonal).
pub fn nnk_inner_step(
    state: &NnkState,
    neighbor_d: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    flops: &mut Flops,
) -> Result<NnkState> {
    let n = state.x.len();
    let chol = state
        .d_chol
        .as_ref()
        .ok_or_else(|| Error::MissingHistory("inner step before the outer phase".into()))?;
    let wbar_ii = 1.0 - weights.self_weight;
    let mut rhs = &state.d * wbar_ii;
    rhs -= &state.g;
    flops.add(2 * n as u64);
    for &(j, w) in &weights.neighbors {
        let dj = neighbor_d
            .iter()
            .find(|(jj, _)| *jj == j)
            .expect("neighbor value missing")
            .1;
        rhs.axpy(w, dj, 1.0);
        flops.axpy(n);
    }
    flops.factored_solve(n);
    let d = chol.solve(&rhs);
    finite_or_divergence(&d)?;
    Ok(NnkState {
        d,
        ..state.clone()
    })
}

/// Applies the approximate Newton direction: `x <- x + epsilon d`.
pub fn nnk_apply(state: &NnkState, flops: &mut Flops) -> NnkState {
    let mut next = state.clone();
    next.x.axpy(state.epsilon, &state.d, 1.0);
    flops.axpy(state.x.len());
    next
}

impl Algorithm for NetworkNewton {
    type State = NnkState;

    fn name(&self) -> &'static str {
        "nn-k"
    }

    fn required_capabilities(&self) -> &'static [&'static str] {
        &["hess"]
    }

    fn rounds_per_iteration(&self) -> usize {
        self.k_inner + 1
    }

    fn init(
        &self,
        _node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        _flops: &mut Flops,
    ) -> Result<Self::State> {
        if self.alpha <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::Argument("NN-K needs alpha > 0 and epsilon > 0".into()));
        }
        let n = objective.dim();
        Ok(NnkState {
            x: x0.clone(),
            d: DVector::zeros(n),
            g: DVector::zeros(n),
            d_chol: None,
            alpha: self.alpha,
            epsilon: self.epsilon,
            k_inner: self.k_inner,
        })
    }

    fn publics(&self, state: &Self::State, round: usize) -> VarSet {
        // Round 0 exchanges x; inner rounds exchange the direction iterate.
        if round == 0 {
            VarSet::new().with("x", state.x.clone())
        } else {
            VarSet::new().with("d", state.d.clone())
        }
    }

    fn privates(&self, state: &Self::State) -> VarSet {
        VarSet::new().with("g", state.g.clone())
    }

    fn step(
        &self,
        round: usize,
        _node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let next = if round == 0 {
            let xs: Vec<(usize, &DVector<f64>)> = weights
                .neighbors
                .iter()
                .map(|&(j, _)| (j, snapshot.var(j, "x")))
                .collect();
            nnk_outer_step(state, &xs, weights, objective, flops)?
        } else {
            let ds: Vec<(usize, &DVector<f64>)> = weights
                .neighbors
                .iter()
                .map(|&(j, _)| (j, snapshot.var(j, "d")))
                .collect();
            nnk_inner_step(state, &ds, weights, flops)?
        };
        if round == self.k_inner {
            Ok(nnk_apply(&next, flops))
        } else {
            Ok(next)
        }
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

// ---------------------------------------------------------------------------
// NEXT
// ---------------------------------------------------------------------------

/// Surrogate family for the NEXT local model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// First-order model regularized by `tau/2 ||x - x_a||^2`.
    Linear { tau: f64 },
    /// Second-order model with the problem Hessian plus `tau I` damping;
    /// `tau = None` picks `1e-6 (1 + ||hess||_inf)`.
    Quadratic { tau: Option<f64> },
}

/// NEXT with a decreasing step `alpha(k) = alpha0 / (1 + mu k)`.
#[derive(Debug, Clone)]
pub struct Next {
    pub alpha0: f64,
    pub mu: f64,
    pub surrogate: Surrogate,
}

impl Next {
    /// NEXT-Q: quadratic surrogate, one tuned parameter (alpha0), mu fixed.
    pub fn quadratic(alpha0: f64, mu: f64) -> Self {
        Self {
            alpha0,
            mu,
            surrogate: Surrogate::Quadratic { tau: None },
        }
    }
}

#[derive(Debug, Clone)]
pub struct NextState {
    pub x: DVector<f64>,
    /// Dynamic-consensus gradient tracker (public).
    pub y: DVector<f64>,
    /// Combined iterate (public).
    pub z: DVector<f64>,
    /// Network-gradient estimate minus the own gradient.
    pub pi: DVector<f64>,
    /// Cached grad f(x^k).
    pub grad: DVector<f64>,
    /// Resolved surrogate damping.
    pub tau: f64,
    pub k: usize,
    nodes: usize,
}

/// Minimizes the quadratic surrogate
/// `grad f(xa)'(x - xa) + 0.5 (x - xa)'(hess f(xa) + tau I)(x - xa)
///  + pi'(x - xa)` over the objective's constraint set.
pub fn quadratic_surrogate_argmin(
    x_anchor: &DVector<f64>,
    pi: &DVector<f64>,
    objective: &dyn LocalObjective,
    tau: Option<f64>,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    let n = objective.dim();
    if objective.as_quadratic().is_some() {
        // For f itself quadratic the surrogate equals
        // f(x) + (pi - tau xa)'x + (tau/2)||x||^2 up to constants, which is a
        // penalized argmin with one anchor; reuses the objective's caches.
        let tau = match tau {
            Some(t) => t,
            None => {
                let (p, _) = objective.as_quadratic().unwrap();
                let hinf = p.abs().max() * n as f64;
                1e-6 * (1.0 + hinf)
            }
        };
        let penalties = [QuadPenalty::anchored(tau * 0.5, x_anchor.clone())];
        return objective.penalized_argmin(pi, &penalties, flops);
    }
    let mut h = objective.hess(x_anchor, flops)?;
    let tau = tau.unwrap_or_else(|| {
        let hinf = h
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        1e-6 * (1.0 + hinf)
    });
    for i in 0..n {
        h[(i, i)] += tau;
    }
    flops.add(n as u64);
    let g = objective.grad(x_anchor, flops);
    // min 0.5 x'Hx + (g + pi - H xa)'x over the constraint set.
    let q = &g + pi - &h * x_anchor;
    flops.matvec(n, n);
    flops.add(2 * n as u64);
    match objective.constraint() {
        crate::objective::ConstraintSet::Free => {
            flops.cholesky(n);
            flops.factored_solve(n);
            let chol = Cholesky::new(h).ok_or_else(|| {
                Error::Argument("surrogate is indefinite after damping; increase tau".into())
            })?;
            Ok(chol.solve(&(-q)))
        }
        cons => {
            let mut state = crate::admm::inner::ActiveSetState::default();
            crate::admm::inner::solve_constrained_qp(&h, &q, cons, &mut state, flops)
        }
    }
}

/// Damping that puts the surrogate's curvature on the scale of the global
/// cost it models: the tracked term pi carries roughly N-1 robots' worth of
/// gradient, so the local Hessian is topped up by (N-1) times its mean
/// eigenvalue. Reduces to (nearly) pure Newton at N = 1.
fn scaled_default_tau(objective: &dyn LocalObjective, x0: &DVector<f64>, nodes: usize, flops: &mut Flops) -> Result<f64> {
    let n = objective.dim() as f64;
    let h = objective.hess(x0, flops)?;
    let mean_eig = h.trace() / n;
    let hinf = h
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    Ok((nodes as f64 - 1.0) * mean_eig + 1e-6 * (1.0 + hinf))
}

fn surrogate_argmin(
    surrogate: &Surrogate,
    tau: f64,
    x_anchor: &DVector<f64>,
    pi: &DVector<f64>,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    match surrogate {
        Surrogate::Quadratic { .. } => {
            quadratic_surrogate_argmin(x_anchor, pi, objective, Some(tau), flops)
        }
        Surrogate::Linear { tau } => {
            // argmin g'(x-xa) + pi'(x-xa) + tau/2 ||x-xa||^2 over the set:
            // the projection of xa - (g + pi)/tau.
            let g = objective.grad(x_anchor, flops);
            let n = x_anchor.len();
            let mut t = x_anchor.clone();
            t.axpy(-1.0 / tau, &g, 1.0);
            t.axpy(-1.0 / tau, pi, 1.0);
            flops.add(4 * n as u64);
            objective.prox_project(&t, flops)
        }
    }
}

/// The five NEXT updates, reading the prior-round `(z, y)` of the neighbors.
pub fn next_step(
    alg: &Next,
    state: &NextState,
    neighbor_z: &[(usize, &DVector<f64>)],
    neighbor_y: &[(usize, &DVector<f64>)],
    weights: &WeightRow,
    objective: &dyn LocalObjective,
    flops: &mut Flops,
) -> Result<NextState> {
    let n = state.x.len();
    let mixv = |own: &DVector<f64>, vals: &[(usize, &DVector<f64>)], flops: &mut Flops| {
        let mut out = own * weights.self_weight;
        flops.scale(n);
        for &(j, w) in &weights.neighbors {
            let v = vals.iter().find(|(jj, _)| *jj == j).expect("missing neighbor").1;
            out.axpy(w, v, 1.0);
            flops.axpy(n);
        }
        out
    };

    let x = mixv(&state.z, neighbor_z, flops);
    finite_or_divergence(&x)?;
    let gx = objective.grad(&x, flops);
    finite_or_divergence(&gx)?;
    let mut y = mixv(&state.y, neighbor_y, flops);
    y += &gx;
    y -= &state.grad;
    flops.add(2 * n as u64);
    let mut pi = &y * state.nodes as f64;
    pi -= &gx;
    flops.add(2 * n as u64);
    let x_tilde = surrogate_argmin(&alg.surrogate, state.tau, &x, &pi, objective, flops)?;
    let alpha = alg.alpha0 / (1.0 + alg.mu * state.k as f64);
    let mut z = x.clone();
    z.axpy(alpha, &x_tilde, 1.0);
    z.axpy(-alpha, &x, 1.0);
    flops.add(4 * n as u64);
    finite_or_divergence(&z)?;
    Ok(NextState {
        x,
        y,
        z,
        pi,
        grad: gx,
        tau: state.tau,
        k: state.k + 1,
        nodes: state.nodes,
    })
}

impl Algorithm for Next {
    type State = NextState;

    fn name(&self) -> &'static str {
        "next"
    }

    fn required_capabilities(&self) -> &'static [&'static str] {
        match self.surrogate {
            Surrogate::Quadratic { .. } => &["hess", "argmin"],
            Surrogate::Linear { .. } => &["prox"],
        }
    }

    fn init(
        &self,
        _node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        net: &NetworkInfo,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        if self.alpha0 <= 0.0 || self.mu < 0.0 {
            return Err(Error::Argument("NEXT needs alpha0 > 0 and mu >= 0".into()));
        }
        let tau = match self.surrogate {
            Surrogate::Quadratic { tau: Some(t) } => t,
            Surrogate::Quadratic { tau: None } => {
                scaled_default_tau(objective, x0, net.nodes, flops)?
            }
            Surrogate::Linear { tau } => tau,
        };
        let g = objective.grad(x0, flops);
        let mut pi = &g * net.nodes as f64;
        pi -= &g;
        let x_tilde = surrogate_argmin(&self.surrogate, tau, x0, &pi, objective, flops)?;
        let mut z = x0.clone();
        z.axpy(self.alpha0, &x_tilde, 1.0);
        z.axpy(-self.alpha0, x0, 1.0);
        Ok(NextState {
            x: x0.clone(),
            y: g.clone(),
            z,
            pi,
            grad: g,
            tau,
            k: 1,
            nodes: net.nodes,
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new()
            .with("z", state.z.clone())
            .with("y", state.y.clone())
    }

    fn privates(&self, state: &Self::State) -> VarSet {
        VarSet::new()
            .with("x", state.x.clone())
            .with("pi", state.pi.clone())
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
        let zs: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "z")))
            .collect();
        let ys: Vec<(usize, &DVector<f64>)> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| (j, snapshot.var(j, "y")))
            .collect();
        next_step(self, state, &zs, &ys, weights, objective, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}
