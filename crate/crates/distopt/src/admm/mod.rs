//! Consensus ADMM (C-ADMM) and the separable-variable variant SOVA.
//!
//! C-ADMM relaxes the edge agreement constraints `x_i = x_j` through an
//! augmented Lagrangian whose auxiliary edge variables have the closed form
//! `z_ij = (x_i + x_j)/2`, leaving a dual ascent step followed by a local
//! penalized minimization:
//!
//! ```text
//! y_i <- y_i + rho * sum_j (x_i - x_j)
//! x_i <- argmin f_i(x) + x'y_i + rho * sum_j ||x - (x_i + x_j)/2||^2
//! ```
//!
//! SOVA generalizes the agreement to `Phi_ij x_i = Phi_ji x_j`, letting each
//! node carry only the sub-vector relevant to it; C-ADMM is exactly SOVA with
//! identity maps.
//!
//! The local minimization is solved to completion each round: one cached
//! linear solve for quadratic costs, a warm-started active-set QP for
//! constrained convex costs, and damped Newton for smooth nonconvex costs
//! (see [`inner`]).

pub mod inner;

use crate::error::{Error, Result};
use crate::exec::{Algorithm, NetworkInfo, RoundSnapshot, VarSet};
use crate::flops::Flops;
use crate::graph::WeightRow;
use crate::objective::{LocalObjective, PenaltyMap, QuadPenalty};
use nalgebra::DVector;

fn ensure_finite(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        // The executor rewrites the iteration index into the trace.
        Err(Error::Divergence { iteration: 0 })
    }
}

// ---------------------------------------------------------------------------
// C-ADMM
// ---------------------------------------------------------------------------

/// Consensus ADMM with penalty / dual step `rho`.
#[derive(Debug, Clone)]
pub struct Cadmm {
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct CadmmState {
    /// Primal iterate (public).
    pub x: DVector<f64>,
    /// Aggregated edge dual (private).
    pub y: DVector<f64>,
}

/// One C-ADMM update: dual ascent on the neighborhood disagreement, then the
/// exact penalized local minimization (dual first, primal second).
pub fn cadmm_step(
    state: &CadmmState,
    neighbor_x: &[&DVector<f64>],
    objective: &dyn LocalObjective,
    rho: f64,
    flops: &mut Flops,
) -> Result<CadmmState> {
    let n = state.x.len();
    let mut y = state.y.clone();
    for xj in neighbor_x {
        y.axpy(rho, &state.x, 1.0);
        y.axpy(-rho, xj, 1.0);
        flops.axpy(n);
        flops.axpy(n);
    }
    let penalties: Vec<QuadPenalty> = neighbor_x
        .iter()
        .map(|xj| {
            flops.axpy(n);
            QuadPenalty::anchored(rho, (&state.x + *xj) * 0.5)
        })
        .collect();
    let x = objective.penalized_argmin(&y, &penalties, flops)?;
    ensure_finite(&x)?;
    Ok(CadmmState { x, y })
}

/// `argmin_x f(x) + dual'x + sum_a w_a ||x - a||^2`, dispatched on the
/// objective class: quadratic costs solve one (cached) linear system,
/// constrained convex costs run the warm-started active-set QP, smooth
/// nonconvex costs run damped Newton from the previous iterate.
pub fn local_penalized_argmin(
    objective: &dyn LocalObjective,
    dual: &DVector<f64>,
    anchors: &[(f64, DVector<f64>)],
    flops: &mut Flops,
) -> Result<DVector<f64>> {
    let penalties: Vec<QuadPenalty> = anchors
        .iter()
        .map(|(w, a)| QuadPenalty::anchored(*w, a.clone()))
        .collect();
    objective.penalized_argmin(dual, &penalties, flops)
}

impl Algorithm for Cadmm {
    type State = CadmmState;

    fn name(&self) -> &'static str {
        "cadmm"
    }

    fn required_capabilities(&self) -> &'static [&'static str] {
        &["argmin"]
    }

    fn init(
        &self,
        _node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        _flops: &mut Flops,
    ) -> Result<Self::State> {
        if self.rho <= 0.0 {
            return Err(Error::Argument("C-ADMM needs rho > 0".into()));
        }
        Ok(CadmmState {
            x: x0.clone(),
            y: DVector::zeros(objective.dim()),
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new().with("x", state.x.clone())
    }

    fn privates(&self, state: &Self::State) -> VarSet {
        VarSet::new().with("y", state.y.clone())
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
        let neighbor_x: Vec<&DVector<f64>> = weights
            .neighbors
            .iter()
            .map(|&(j, _)| snapshot.var(j, "x"))
            .collect();
        cadmm_step(state, &neighbor_x, objective, self.rho, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

// ---------------------------------------------------------------------------
// SOVA
// ---------------------------------------------------------------------------

/// Mapping pair on one edge: this node's map and the neighbor's map into the
/// edge's common space.
#[derive(Debug, Clone)]
pub struct EdgeMaps {
    pub own: PenaltyMap,
    pub theirs: PenaltyMap,
}

/// SOVA: each node optimizes a reduced sub-vector, coupled to each neighbor
/// through the agreement constraint `Phi_ij x_i = Phi_ji x_j`.
#[derive(Debug, Clone)]
pub struct Sova {
    pub rho: f64,
    /// `maps[i]` lists `(neighbor j, edge maps)` for node i, sorted by j.
    pub maps: Vec<Vec<(usize, EdgeMaps)>>,
    /// Per-node reduced dimensions.
    pub dims: Vec<usize>,
}

impl Sova {
    pub fn new(rho: f64, dims: Vec<usize>, maps: Vec<Vec<(usize, EdgeMaps)>>) -> Result<Self> {
        for (i, list) in maps.iter().enumerate() {
            for (j, em) in list {
                let rows_own = em.own.output_dim(dims[i]);
                let rows_theirs = em.theirs.output_dim(dims[*j]);
                if rows_own != rows_theirs {
                    return Err(Error::Mapping(format!(
                        "edge ({i},{j}): maps have {rows_own} vs {rows_theirs} rows"
                    )));
                }
                if let PenaltyMap::Select(idx) = &em.own {
                    if idx.iter().any(|&r| r >= dims[i]) {
                        return Err(Error::Mapping(format!(
                            "edge ({i},{j}): selector exceeds node {i} dimension {}",
                            dims[i]
                        )));
                    }
                }
            }
        }
        Ok(Self { rho, dims, maps })
    }

    /// C-ADMM expressed as SOVA: identity maps on every edge, full dimension
    /// everywhere.
    pub fn identity(rho: f64, graph: &crate::graph::CommGraph, dim: usize) -> Self {
        let maps = (0..graph.node_count())
            .map(|i| {
                graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        (
                            j,
                            EdgeMaps {
                                own: PenaltyMap::Identity,
                                theirs: PenaltyMap::Identity,
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        Self {
            rho,
            maps,
            dims: vec![dim; graph.node_count()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SovaState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

/// One SOVA update. `neighbor_mapped[k] = (own map on that edge, the already
/// mapped neighbor value `Phi_ji x_j`)`.
pub fn sova_step(
    state: &SovaState,
    neighbor_mapped: &[(&PenaltyMap, DVector<f64>)],
    objective: &dyn LocalObjective,
    rho: f64,
    flops: &mut Flops,
) -> Result<SovaState> {
    let n = state.x.len();
    let mut y = state.y.clone();
    let mut penalties = Vec::with_capacity(neighbor_mapped.len());
    for (own, mapped_theirs) in neighbor_mapped {
        if mapped_theirs.len() != own.output_dim(n) {
            return Err(Error::Mapping(format!(
                "mapped neighbor value has {} rows, edge map produces {}",
                mapped_theirs.len(),
                own.output_dim(n)
            )));
        }
        let own_mapped = own.apply(&state.x, flops);
        let diff = &own_mapped - mapped_theirs;
        flops.axpy(diff.len());
        own.add_transpose_apply(&diff, rho, &mut y, flops);
        let target = (&own_mapped + mapped_theirs) * 0.5;
        flops.axpy(target.len());
        penalties.push(QuadPenalty {
            weight: rho,
            map: (*own).clone(),
            target,
        });
    }
    let x = objective.penalized_argmin(&y, &penalties, flops)?;
    ensure_finite(&x)?;
    Ok(SovaState { x, y })
}

impl Algorithm for Sova {
    type State = SovaState;

    fn name(&self) -> &'static str {
        "sova"
    }

    fn required_capabilities(&self) -> &'static [&'static str] {
        &["argmin"]
    }

    fn uniform_public_dims(&self) -> bool {
        false
    }

    fn init(
        &self,
        node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        _net: &NetworkInfo,
        _flops: &mut Flops,
    ) -> Result<Self::State> {
        if self.rho <= 0.0 {
            return Err(Error::Argument("SOVA needs rho > 0".into()));
        }
        if objective.dim() != self.dims[node] || x0.len() != self.dims[node] {
            return Err(Error::Mapping(format!(
                "node {node}: objective dim {} / x0 dim {} vs declared {}",
                objective.dim(),
                x0.len(),
                self.dims[node]
            )));
        }
        Ok(SovaState {
            x: x0.clone(),
            y: DVector::zeros(self.dims[node]),
        })
    }

    fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
        VarSet::new().with("x", state.x.clone())
    }

    fn privates(&self, state: &Self::State) -> VarSet {
        VarSet::new().with("y", state.y.clone())
    }

    fn step(
        &self,
        _round: usize,
        node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        _weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State> {
        let neighbor_mapped: Vec<(&PenaltyMap, DVector<f64>)> = self.maps[node]
            .iter()
            .map(|(j, em)| {
                let xj = snapshot.var(*j, "x");
                (&em.own, em.theirs.apply(xj, flops))
            })
            .collect();
        sova_step(state, &neighbor_mapped, objective, self.rho, flops)
    }

    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
        &state.x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{run_rounds_full, ExecOptions, MseSpec, Network, StopRule};
    use crate::graph::{CommGraph, WeightMatrix};
    use crate::objective::{ConstraintSet, QuadraticObjective};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn quad_toward(a: Vec<f64>) -> Box<dyn LocalObjective> {
        // f(x) = 0.5||x - a||^2.
        let n = a.len();
        let a = DVector::from_vec(a);
        Box::new(QuadraticObjective::new(
            DMatrix::identity(n, n),
            -a.clone(),
            0.5 * a.norm_squared(),
            ConstraintSet::Free,
        ))
    }

    #[test]
    fn consensus_optimum_is_fixed_point() {
        // All x_j equal, y = 0, grad f(x) = 0 there: nothing moves.
        let obj = quad_toward(vec![2.0, -1.0]);
        let x = DVector::from_vec(vec![2.0, -1.0]);
        let state = CadmmState {
            x: x.clone(),
            y: DVector::zeros(2),
        };
        let next = cadmm_step(&state, &[&x, &x], obj.as_ref(), 1.3, &mut Flops::new()).unwrap();
        assert_abs_diff_eq!((&next.x - &x).abs().max(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.y.abs().max(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_argmin_matches_dense_solve() {
        // f = 0.5||x - a||^2 with neighbor anchors: the x-update solves
        // (1 + 2 rho deg) x = a - y + 2 rho sum_j m_j. Verified against an
        // independently assembled dense system.
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let obj = quad_toward(a.as_slice().to_vec());
        let rho = 0.7;
        let x_i = DVector::from_vec(vec![0.2, 0.1, -0.3]);
        let xj1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let xj2 = DVector::from_vec(vec![-0.5, 0.5, 1.5]);
        let y = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        let state = CadmmState { x: x_i.clone(), y };
        let next = cadmm_step(&state, &[&xj1, &xj2], obj.as_ref(), rho, &mut Flops::new()).unwrap();

        let deg = 2.0;
        let m1 = (&x_i + &xj1) * 0.5;
        let m2 = (&x_i + &xj2) * 0.5;
        let lhs = DMatrix::identity(3, 3) * (1.0 + 2.0 * rho * deg);
        let rhs = &a - &next.y + (&m1 + &m2) * (2.0 * rho);
        let expect = lhs.lu().solve(&rhs).unwrap();
        assert_abs_diff_eq!((&next.x - expect).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_node_scalar_converges_for_each_rho() {
        // f_i = 0.5(x - a_i)^2 with a = (0, 2); both nodes must reach 1.
        for rho in [0.1, 1.0, 10.0] {
            let graph = CommGraph::chain(2).unwrap();
            let weights = WeightMatrix::metropolis(&graph);
            let net = Network {
                graph: &graph,
                weights: &weights,
            };
            let objectives = vec![quad_toward(vec![0.0]), quad_toward(vec![2.0])];
            let x0 = vec![DVector::zeros(1), DVector::zeros(1)];
            let trace = crate::exec::run_rounds(
                &Cadmm { rho },
                &net,
                &objectives,
                &x0,
                &MseSpec::shared(DVector::from_element(1, 1.0)),
                &StopRule::new(1e-14, 2000),
            )
            .unwrap();
            assert!(trace.converged(), "rho={rho}: {:?}", trace.termination);
        }
    }

    #[test]
    fn dual_sum_stays_zero() {
        // Antisymmetric dual increments on undirected edges: sum_i y_i = 0.
        let graph = CommGraph::new(4, &[(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)]).unwrap();
        let weights = WeightMatrix::metropolis(&graph);
        let net = Network {
            graph: &graph,
            weights: &weights,
        };
        let objectives: Vec<Box<dyn LocalObjective>> = vec![
            quad_toward(vec![1.0, 0.0]),
            quad_toward(vec![-1.0, 2.0]),
            quad_toward(vec![0.5, 0.5]),
            quad_toward(vec![3.0, -2.0]),
        ];
        let x0 = vec![DVector::zeros(2); 4];
        let (_, states) = run_rounds_full(
            &Cadmm { rho: 0.8 },
            &net,
            &objectives,
            &x0,
            &MseSpec::shared(DVector::from_vec(vec![0.875, 0.125])),
            &StopRule::new(1e-13, 60),
            &ExecOptions::default(),
        )
        .unwrap();
        let dual_sum = states.iter().fold(DVector::zeros(2), |acc, s| acc + &s.y);
        assert_abs_diff_eq!(dual_sum.abs().max(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn sova_disjoint_edge_contributes_nothing() {
        // Maps with an empty common space: zero dual increment, pure local solve.
        let obj = quad_toward(vec![1.0, 2.0]);
        let state = SovaState {
            x: DVector::zeros(2),
            y: DVector::zeros(2),
        };
        let own = PenaltyMap::Select(vec![]);
        let next = sova_step(
            &state,
            &[(&own, DVector::zeros(0))],
            obj.as_ref(),
            1.0,
            &mut Flops::new(),
        )
        .unwrap();
        assert_abs_diff_eq!(next.y.abs().max(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((&next.x - DVector::from_vec(vec![1.0, 2.0])).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sova_identity_equals_cadmm_trajectory() {
        // C-ADMM is the Phi = I special case at the same rho; the two code
        // paths must produce identical trajectories.
        let graph = CommGraph::chain(3).unwrap();
        let weights = WeightMatrix::metropolis(&graph);
        let net = Network {
            graph: &graph,
            weights: &weights,
        };
        let mk = || -> Vec<Box<dyn LocalObjective>> {
            vec![
                quad_toward(vec![0.0, 1.0]),
                quad_toward(vec![2.0, -1.0]),
                quad_toward(vec![4.0, 3.0]),
            ]
        };
        let x0 = vec![DVector::zeros(2); 3];
        let reference = DVector::from_vec(vec![2.0, 1.0]);
        let stop = StopRule::new(-1.0, 100); // run exactly 100 iterations
        let rho = 0.9;
        let a = crate::exec::run_rounds(
            &Cadmm { rho },
            &net,
            &mk(),
            &x0,
            &MseSpec::shared(reference.clone()),
            &stop,
        )
        .unwrap();
        let sova = Sova::identity(rho, &graph, 2);
        let b = crate::exec::run_rounds(
            &sova,
            &net,
            &mk(),
            &x0,
            &MseSpec::shared(reference),
            &stop,
        )
        .unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_abs_diff_eq!(ra.mse, rb.mse, epsilon = 1e-10 * (1.0 + ra.mse));
        }
    }

    #[test]
    fn sova_dimension_mismatch_is_mapping_error() {
        let obj = quad_toward(vec![1.0, 2.0]);
        let state = SovaState {
            x: DVector::zeros(2),
            y: DVector::zeros(2),
        };
        let own = PenaltyMap::Select(vec![0]);
        let err = sova_step(
            &state,
            &[(&own, DVector::zeros(2))],
            obj.as_ref(),
            1.0,
            &mut Flops::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Mapping(_)));
    }
}
