//! Synchronous round executor.
//!
//! Every algorithm runs inside the same loop: per iteration, each node
//! communicates its public variables to its graph neighbors, receives theirs,
//! and then computes its next state from the prior-round snapshot only.
//! Updates are pure functions of `(own state, neighbor snapshot)`, so the
//! order in which nodes are processed within a round cannot change the
//! result, and a fixed seed reproduces a trace exactly.
//!
//! The executor also does the bookkeeping the benchmarks need: per-iteration
//! MSE against a reference solution, cumulative floats transmitted (every
//! undirected edge carries both directions), a deterministic flop count, and
//! measured processor time of the update closures.

use crate::error::{Error, Result};
use crate::flops::Flops;
use crate::graph::{CommGraph, WeightMatrix, WeightRow};
use crate::objective::LocalObjective;
use nalgebra::DVector;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Named variable sets (the P_i / Q_i of the general framework)
// ---------------------------------------------------------------------------

/// Ordered set of named vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarSet {
    entries: Vec<(&'static str, DVector<f64>)>,
}

impl VarSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &'static str, value: DVector<f64>) -> Self {
        self.entries.push((name, value));
        self
    }

    pub fn get(&self, name: &str) -> &DVector<f64> {
        &self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .unwrap_or_else(|| panic!("no public variable `{name}`"))
            .1
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.entries.iter().map(|(_, v)| v.len()).collect()
    }

    /// Total float count of the set.
    pub fn float_len(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A node's public/private variables, as exchanged by the round executor.
#[derive(Debug, Clone)]
pub struct NodeEnvelope {
    pub id: usize,
    pub publics: VarSet,
    pub privates: VarSet,
}

/// Prior-round public variables of every node; all a step may read besides
/// its own state.
pub struct RoundSnapshot<'a> {
    publics: &'a [VarSet],
}

impl<'a> RoundSnapshot<'a> {
    pub fn of(&self, node: usize) -> &VarSet {
        &self.publics[node]
    }

    pub fn var(&self, node: usize, name: &str) -> &DVector<f64> {
        self.publics[node].get(name)
    }
}

/// Static facts an algorithm may bake into its per-node state at init time
/// (coordinated parameters in the framework's R_i).
#[derive(Debug, Clone, Copy)]
pub struct NetworkInfo {
    pub nodes: usize,
}

// ---------------------------------------------------------------------------
// Algorithm trait
// ---------------------------------------------------------------------------

/// A distributed update rule: per-node state plus a pure step function.
pub trait Algorithm {
    type State: Clone;

    fn name(&self) -> &'static str;

    /// Objective capabilities the rule needs on every node.
    fn required_capabilities(&self) -> &'static [&'static str] {
        &[]
    }

    /// Communication rounds per iteration (e.g. `K + 1` for NN-K).
    fn rounds_per_iteration(&self) -> usize {
        1
    }

    /// Whether public variable dimensions are identical across nodes.
    fn uniform_public_dims(&self) -> bool {
        true
    }

    fn init(
        &self,
        node: usize,
        objective: &dyn LocalObjective,
        x0: &DVector<f64>,
        net: &NetworkInfo,
        flops: &mut Flops,
    ) -> Result<Self::State>;

    /// Public variables the node exposes for round `round` of an iteration.
    fn publics(&self, state: &Self::State, round: usize) -> VarSet;

    fn privates(&self, _state: &Self::State) -> VarSet {
        VarSet::new()
    }

    fn step(
        &self,
        round: usize,
        node: usize,
        state: &Self::State,
        snapshot: &RoundSnapshot,
        weights: &WeightRow,
        objective: &dyn LocalObjective,
        flops: &mut Flops,
    ) -> Result<Self::State>;

    /// The node's current solution estimate.
    fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64>;
}

// ---------------------------------------------------------------------------
// Stopping rule and trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Converged { iteration: usize },
    IterationCap { iteration: usize },
    Diverged { iteration: usize },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Converged { .. } => "converged",
            Termination::IterationCap { .. } => "iteration_cap",
            Termination::Diverged { .. } => "diverged",
        }
    }
}

/// Convergence / divergence / iteration-cap thresholds.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub tol_mse: f64,
    pub cap: usize,
    pub blowup: f64,
}

impl StopRule {
    pub fn new(tol_mse: f64, cap: usize) -> Self {
        Self {
            tol_mse,
            cap,
            blowup: 1e12,
        }
    }
}

impl Default for StopRule {
    fn default() -> Self {
        // 10^4 decision-variable updates, convergence below 1e-6.
        Self::new(1e-6, 10_000)
    }
}

/// Total decision function: converged / diverged / cap, else keep going.
pub fn check_stop(mse: f64, iteration: usize, rule: &StopRule) -> Option<Termination> {
    if mse.is_finite() && mse <= rule.tol_mse {
        return Some(Termination::Converged { iteration });
    }
    if !mse.is_finite() || mse >= rule.blowup {
        return Some(Termination::Diverged { iteration });
    }
    if iteration >= rule.cap {
        return Some(Termination::IterationCap { iteration });
    }
    None
}

/// One per-iteration record of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub mse: f64,
    /// Floats transmitted network-wide since the start.
    pub cum_floats: u64,
    /// Deterministic flop count since the start.
    pub cum_ops: u64,
    /// Measured processor time of update closures, summed network-wide.
    /// Excluded from determinism guarantees.
    pub cum_seconds: f64,
}

/// Per-iteration MSE and resource counters, plus the termination reason.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    pub nodes: usize,
}

impl RunTrace {
    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("trace has at least the initial record")
    }

    pub fn final_mse(&self) -> f64 {
        self.final_record().mse
    }

    pub fn iterations(&self) -> usize {
        self.final_record().iteration
    }

    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Converged { .. })
    }

    /// First iteration whose MSE is at or below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.mse <= threshold)
            .map(|r| r.iteration)
    }

    /// The deterministic fields of every record (everything but seconds);
    /// used by the bit-identity tests.
    pub fn deterministic_fields(&self) -> Vec<(usize, u64, u64, [u8; 8])> {
        self.records
            .iter()
            .map(|r| (r.iteration, r.cum_floats, r.cum_ops, r.mse.to_le_bytes()))
            .collect()
    }
}

/// Reference solution(s) the per-iteration MSE is computed against.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Every node is measured against the same centralized solution.
    Shared(DVector<f64>),
    /// Per-node references (reduced-variable methods like SOVA).
    PerNode(Vec<DVector<f64>>),
}

/// MSE specification: reference plus the optional normalization by the
/// squared reference norm.
#[derive(Debug, Clone)]
pub struct MseSpec {
    pub reference: Reference,
    pub normalize: bool,
}

impl MseSpec {
    pub fn shared(reference: DVector<f64>) -> Self {
        Self {
            reference: Reference::Shared(reference),
            normalize: false,
        }
    }

    pub fn per_node(references: Vec<DVector<f64>>) -> Self {
        Self {
            reference: Reference::PerNode(references),
            normalize: false,
        }
    }

    fn compute<'a>(&self, estimates: impl Iterator<Item = &'a DVector<f64>>, nodes: usize) -> f64 {
        let mut sum = 0.0;
        match &self.reference {
            Reference::Shared(r) => {
                for e in estimates {
                    sum += (e - r).norm_squared();
                }
            }
            Reference::PerNode(refs) => {
                for (e, r) in estimates.zip(refs.iter()) {
                    sum += (e - r).norm_squared();
                }
            }
        }
        let mut mse = sum / nodes as f64;
        if self.normalize {
            let scale = match &self.reference {
                Reference::Shared(r) => r.norm_squared(),
                Reference::PerNode(refs) => {
                    refs.iter().map(|r| r.norm_squared()).sum::<f64>() / nodes as f64
                }
            };
            mse /= scale;
        }
        mse
    }
}

/// Execution options; the default processes nodes in id order.
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Permutation in which node updates are computed within a round.
    /// Results are identical for any permutation (synchrony contract).
    pub update_order: Option<Vec<usize>>,
}

/// Communication topology plus consensus weights.
pub struct Network<'a> {
    pub graph: &'a CommGraph,
    pub weights: &'a WeightMatrix,
}

// ---------------------------------------------------------------------------
// Executor
// ---------------------------------------------------------------------------

pub fn run_rounds<A: Algorithm>(
    alg: &A,
    net: &Network,
    objectives: &[Box<dyn LocalObjective>],
    x0: &[DVector<f64>],
    mse: &MseSpec,
    stop: &StopRule,
) -> Result<RunTrace> {
    run_rounds_full(alg, net, objectives, x0, mse, stop, &ExecOptions::default()).map(|(t, _)| t)
}

pub fn run_rounds_with<A: Algorithm>(
    alg: &A,
    net: &Network,
    objectives: &[Box<dyn LocalObjective>],
    x0: &[DVector<f64>],
    mse: &MseSpec,
    stop: &StopRule,
    opts: &ExecOptions,
) -> Result<RunTrace> {
    run_rounds_full(alg, net, objectives, x0, mse, stop, opts).map(|(t, _)| t)
}

/// Like [`run_rounds`] but also returns the final per-node states, for
/// stationarity and feasibility checks on the converged iterates.
pub fn run_rounds_full<A: Algorithm>(
    alg: &A,
    net: &Network,
    objectives: &[Box<dyn LocalObjective>],
    x0: &[DVector<f64>],
    mse: &MseSpec,
    stop: &StopRule,
    opts: &ExecOptions,
) -> Result<(RunTrace, Vec<A::State>)> {
    let n = net.graph.node_count();
    if objectives.len() != n || x0.len() != n {
        return Err(Error::Argument(format!(
            "expected one objective and one initial iterate per node ({n})"
        )));
    }
    for (node, obj) in objectives.iter().enumerate() {
        let caps = obj.capabilities();
        for &req in alg.required_capabilities() {
            let ok = match req {
                "hess" => caps.hess,
                "argmin" => caps.argmin,
                "prox" => caps.prox,
                other => return Err(Error::Argument(format!("unknown capability `{other}`"))),
            };
            if !ok {
                return Err(Error::MissingCapability {
                    node,
                    capability: match req {
                        "hess" => "hess",
                        "argmin" => "argmin",
                        _ => "prox",
                    },
                });
            }
        }
    }
    let order: Vec<usize> = match &opts.update_order {
        Some(p) => {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::Argument("update order is not a permutation".into()));
            }
            p.clone()
        }
        None => (0..n).collect(),
    };

    let info = NetworkInfo { nodes: n };
    let rows: Vec<WeightRow> = (0..n).map(|i| net.weights.row(net.graph, i)).collect();

    let mut meters: Vec<(Flops, f64)> = vec![(Flops::new(), 0.0); n];
    let mut states: Vec<A::State> = Vec::with_capacity(n);
    for i in 0..n {
        let t = Instant::now();
        let state = alg.init(i, objectives[i].as_ref(), &x0[i], &info, &mut meters[i].0)?;
        meters[i].1 += t.elapsed().as_secs_f64();
        states.push(state);
    }

    let mut records = Vec::new();
    let mse0 = mse.compute(states.iter().map(|s| alg.estimate(s)), n);
    // The initial record carries zero counters: no round has run yet.
    records.push(TraceRecord {
        iteration: 0,
        mse: mse0,
        cum_floats: 0,
        cum_ops: 0,
        cum_seconds: 0.0,
    });

    let mut cum_floats: u64 = 0;
    let mut k = 0usize;

    let termination = loop {
        if let Some(term) = check_stop(records.last().unwrap().mse, k, stop) {
            break term;
        }
        k += 1;
        let mut diverged = false;
        'rounds: for round in 0..alg.rounds_per_iteration() {
            let publics: Vec<VarSet> = states.iter().map(|s| alg.publics(s, round)).collect();
            debug_assert!(schema_uniform(&publics, alg.uniform_public_dims()));
            for i in 0..n {
                cum_floats += (publics[i].float_len() * net.graph.degree(i)) as u64;
            }
            let snapshot = RoundSnapshot { publics: &publics };
            let mut next: Vec<Option<A::State>> = (0..n).map(|_| None).collect();
            for &i in &order {
                let t = Instant::now();
                let stepped = alg.step(
                    round,
                    i,
                    &states[i],
                    &snapshot,
                    &rows[i],
                    objectives[i].as_ref(),
                    &mut meters[i].0,
                );
                meters[i].1 += t.elapsed().as_secs_f64();
                match stepped {
                    Ok(s) => next[i] = Some(s),
                    Err(Error::Divergence { .. }) => {
                        diverged = true;
                        break 'rounds;
                    }
                    Err(e) => return Err(e),
                }
            }
            states = next.into_iter().map(Option::unwrap).collect();
        }
        let mse_k = if diverged {
            f64::INFINITY
        } else {
            mse.compute(states.iter().map(|s| alg.estimate(s)), n)
        };
        // Init costs fold into the first iteration's increment.
        records.push(TraceRecord {
            iteration: k,
            mse: mse_k,
            cum_floats,
            cum_ops: meters.iter().map(|m| m.0.count()).sum::<u64>(),
            cum_seconds: meters.iter().map(|m| m.1).sum::<f64>(),
        });
        if diverged {
            break Termination::Diverged { iteration: k };
        }
    };

    Ok((
        RunTrace {
            records,
            termination,
            nodes: n,
        },
        states,
    ))
}

fn schema_uniform(publics: &[VarSet], check_dims: bool) -> bool {
    let Some(first) = publics.first() else {
        return true;
    };
    publics.iter().all(|p| {
        p.names() == first.names() && (!check_dims || p.dims() == first.dims())
    })
}

/// Envelopes (id, publics, privates) for every node; diagnostic view of the
/// framework's per-node variable split.
pub fn envelopes<A: Algorithm>(alg: &A, states: &[A::State]) -> Vec<NodeEnvelope> {
    states
        .iter()
        .enumerate()
        .map(|(id, s)| NodeEnvelope {
            id,
            publics: alg.publics(s, 0),
            privates: alg.privates(s),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CommGraph;
    use crate::objective::FunctionObjective;
    use approx::assert_abs_diff_eq;

    /// Pure consensus: x <- w_ii x + sum w_ij x_j. Used to pin down executor
    /// semantics independent of any real optimizer.
    struct Consensus;

    #[derive(Clone)]
    struct ConsensusState {
        x: DVector<f64>,
    }

    impl Algorithm for Consensus {
        type State = ConsensusState;

        fn name(&self) -> &'static str {
            "consensus"
        }

        fn init(
            &self,
            _node: usize,
            _objective: &dyn LocalObjective,
            x0: &DVector<f64>,
            _net: &NetworkInfo,
            _flops: &mut Flops,
        ) -> Result<Self::State> {
            Ok(ConsensusState { x: x0.clone() })
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
            _objective: &dyn LocalObjective,
            flops: &mut Flops,
        ) -> Result<Self::State> {
            let x = weights.mix(&state.x, |j| snapshot.var(j, "x"), flops);
            Ok(ConsensusState { x })
        }

        fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
            &state.x
        }
    }

    fn setup(n: usize) -> (CommGraph, WeightMatrix, Vec<Box<dyn LocalObjective>>, Vec<DVector<f64>>) {
        let graph = CommGraph::chain(n).unwrap();
        let weights = WeightMatrix::metropolis(&graph);
        let objectives: Vec<Box<dyn LocalObjective>> = (0..n)
            .map(|_| {
                Box::new(FunctionObjective::new(1, |_| 0.0, |x| DVector::zeros(x.len())))
                    as Box<dyn LocalObjective>
            })
            .collect();
        let x0: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_element(1, i as f64)).collect();
        (graph, weights, objectives, x0)
    }

    #[test]
    fn zero_iteration_cap_gives_initial_record_only() {
        let (graph, weights, objectives, x0) = setup(3);
        let net = Network { graph: &graph, weights: &weights };
        let trace = run_rounds(
            &Consensus,
            &net,
            &objectives,
            &x0,
            &MseSpec::shared(DVector::from_element(1, 1.0)),
            &StopRule::new(1e-30, 0),
        )
        .unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.final_record().cum_floats, 0);
        assert_eq!(trace.final_record().cum_ops, 0);
        assert!(matches!(trace.termination, Termination::IterationCap { iteration: 0 }));
    }

    #[test]
    fn float_accounting_matches_closed_form() {
        let (graph, weights, objectives, x0) = setup(4);
        let net = Network { graph: &graph, weights: &weights };
        let trace = run_rounds(
            &Consensus,
            &net,
            &objectives,
            &x0,
            &MseSpec::shared(DVector::from_element(1, 1.5)),
            &StopRule::new(1e-30, 7),
        )
        .unwrap();
        // p = 1 float per node per round, 2|E| = 6 directed edges.
        let k = trace.iterations() as u64;
        assert_eq!(trace.final_record().cum_floats, k * 1 * 6);
    }

    #[test]
    fn consensus_reaches_weighted_average() {
        let (graph, weights, objectives, x0) = setup(5);
        let net = Network { graph: &graph, weights: &weights };
        let trace = run_rounds(
            &Consensus,
            &net,
            &objectives,
            &x0,
            &MseSpec::shared(DVector::from_element(1, 2.0)),
            &StopRule::new(1e-20, 10_000),
        )
        .unwrap();
        // Doubly stochastic mixing preserves the average (= 2 here).
        assert!(trace.converged(), "{:?}", trace.termination);
        assert_abs_diff_eq!(trace.final_mse(), 0.0, epsilon = 1e-18);
    }

    #[test]
    fn update_order_permutation_leaves_trace_identical() {
        let (graph, weights, objectives, x0) = setup(5);
        let net = Network { graph: &graph, weights: &weights };
        let mse = MseSpec::shared(DVector::from_element(1, 2.0));
        let stop = StopRule::new(1e-9, 50);
        let a = run_rounds(&Consensus, &net, &objectives, &x0, &mse, &stop).unwrap();
        let objectives2 = setup(5).2;
        let b = run_rounds_with(
            &Consensus,
            &net,
            &objectives2,
            &x0,
            &mse,
            &stop,
            &ExecOptions {
                update_order: Some(vec![4, 2, 0, 3, 1]),
            },
        )
        .unwrap();
        assert_eq!(a.deterministic_fields(), b.deterministic_fields());
    }

    #[test]
    fn check_stop_decisions() {
        let rule = StopRule::new(1e-6, 10);
        assert!(matches!(
            check_stop(0.0, 0, &rule),
            Some(Termination::Converged { iteration: 0 })
        ));
        assert!(matches!(
            check_stop(1.0, 10, &rule),
            Some(Termination::IterationCap { iteration: 10 })
        ));
        assert_eq!(check_stop(1.0, 9, &rule), None);
        assert!(matches!(
            check_stop(1e-7, 3, &rule),
            Some(Termination::Converged { .. })
        ));
        assert!(matches!(
            check_stop(1e13, 2, &rule),
            Some(Termination::Diverged { .. })
        ));
        assert!(matches!(
            check_stop(f64::NAN, 2, &rule),
            Some(Termination::Diverged { .. })
        ));
    }

    #[test]
    fn counters_nondecreasing() {
        let (graph, weights, objectives, x0) = setup(4);
        let net = Network { graph: &graph, weights: &weights };
        let trace = run_rounds(
            &Consensus,
            &net,
            &objectives,
            &x0,
            &MseSpec::shared(DVector::from_element(1, 1.5)),
            &StopRule::new(1e-30, 25),
        )
        .unwrap();
        for w in trace.records.windows(2) {
            assert!(w[1].cum_floats >= w[0].cum_floats);
            assert!(w[1].cum_ops >= w[0].cum_ops);
            assert!(w[1].cum_seconds >= w[0].cum_seconds);
        }
    }

    #[test]
    fn missing_capability_names_node() {
        struct NeedsHess;
        impl Algorithm for NeedsHess {
            type State = ConsensusState;
            fn name(&self) -> &'static str {
                "needs-hess"
            }
            fn required_capabilities(&self) -> &'static [&'static str] {
                &["hess"]
            }
            fn init(
                &self,
                _node: usize,
                _objective: &dyn LocalObjective,
                x0: &DVector<f64>,
                _net: &NetworkInfo,
                _flops: &mut Flops,
            ) -> Result<Self::State> {
                Ok(ConsensusState { x: x0.clone() })
            }
            fn publics(&self, state: &Self::State, _round: usize) -> VarSet {
                VarSet::new().with("x", state.x.clone())
            }
            fn step(
                &self,
                _round: usize,
                _node: usize,
                state: &Self::State,
                _snapshot: &RoundSnapshot,
                _weights: &WeightRow,
                _objective: &dyn LocalObjective,
                _flops: &mut Flops,
            ) -> Result<Self::State> {
                Ok(state.clone())
            }
            fn estimate<'a>(&self, state: &'a Self::State) -> &'a DVector<f64> {
                &state.x
            }
        }

        let (graph, weights, objectives, x0) = setup(3);
        let net = Network { graph: &graph, weights: &weights };
        let err = run_rounds(
            &NeedsHess,
            &net,
            &objectives,
            &x0,
            &MseSpec::shared(DVector::zeros(1)),
            &StopRule::default(),
        )
        .unwrap_err();
        match err {
            Error::MissingCapability { node, capability } => {
                assert_eq!(node, 0);
                assert_eq!(capability, "hess");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
