//! Communication topology and doubly stochastic consensus weights.
//!
//! A [`CommGraph`] is an undirected, connected graph over node ids `0..N`.
//! Consensus mixing uses Metropolis weights,
//!
//! ```text
//! w_ij = 1 / max{|N_i|, |N_j|}        for j in N_i,
//! w_ii = 1 - sum_{j in N_i} w_ij,
//! ```
//!
//! which are symmetric and doubly stochastic and require only one neighbor
//! exchange to construct.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Undirected connected communication topology.
#[derive(Debug, Clone)]
pub struct CommGraph {
    n: usize,
    /// Edges as ordered pairs (i, j) with i < j, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor lists.
    adj: Vec<Vec<usize>>,
    /// Node coordinates when the graph came from a range-limited construction.
    positions: Option<Vec<[f64; 2]>>,
}

impl CommGraph {
    /// Builds a graph from an edge list and verifies connectivity.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("graph needs at least one node".into()));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Argument(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Argument(format!("edge ({a},{b}) out of range")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &canon {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let graph = Self {
            n,
            edges: canon,
            adj,
            positions: None,
        };
        let components = graph.components();
        if components.len() > 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(graph)
    }

    /// Path graph 0-1-2-...-(N-1); every node has degree at most two.
    pub fn chain(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Argument(format!("chain graph needs N >= 2, got {n}")));
        }
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Self::new(n, &edges)
    }

    /// Connects every pair of nodes within `radius` of each other.
    ///
    /// Fails with the component partition if the resulting graph is
    /// disconnected, so the caller can enlarge the radius or resample.
    pub fn range_limited(positions: &[[f64; 2]], radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Argument("communication radius must be positive".into()));
        }
        let n = positions.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                if dx == 0.0 && dy == 0.0 {
                    return Err(Error::Argument(format!("positions {i} and {j} coincide")));
                }
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, j));
                }
            }
        }
        let mut graph = Self::new(n, &edges)?;
        graph.positions = Some(positions.to_vec());
        Ok(graph)
    }

    /// Smallest inter-node distance at which the range-limited graph on these
    /// positions is connected (the bottleneck edge of a minimum spanning tree).
    pub fn connectivity_radius(positions: &[[f64; 2]]) -> f64 {
        let n = positions.len();
        if n < 2 {
            return 0.0;
        }
        // Prim's algorithm; the answer is the largest edge used.
        let dist = |i: usize, j: usize| -> f64 {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            (dx * dx + dy * dy).sqrt()
        };
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        best[0] = 0.0;
        let mut bottleneck: f64 = 0.0;
        for _ in 0..n {
            let mut u = usize::MAX;
            let mut ubest = f64::INFINITY;
            for v in 0..n {
                if !in_tree[v] && best[v] < ubest {
                    ubest = best[v];
                    u = v;
                }
            }
            in_tree[u] = true;
            bottleneck = bottleneck.max(best[u]);
            for v in 0..n {
                if !in_tree[v] {
                    best[v] = best[v].min(dist(u, v));
                }
            }
        }
        bottleneck
    }

    /// Samples node positions uniformly in the unit square and connects nodes
    /// within `radius`, resampling (up to `max_retries`) until connected.
    pub fn random_connected<R: Rng>(
        n: usize,
        radius: f64,
        rng: &mut R,
        max_retries: usize,
    ) -> Result<Self> {
        let mut last_err = Error::Argument("no attempts made".into());
        for _ in 0..max_retries.max(1) {
            let positions: Vec<[f64; 2]> =
                (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            match Self::range_limited(&positions, radius) {
                Ok(g) => return Ok(g),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of directed edges, `2|E|`; every undirected edge carries floats
    /// in both directions.
    pub fn directed_edge_count(&self) -> usize {
        2 * self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    /// Longest shortest path, by BFS from every node.
    pub fn diameter(&self) -> usize {
        let mut diameter = 0;
        for s in 0..self.n {
            let mut dist = vec![usize::MAX; self.n];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            diameter = diameter.max(*dist.iter().max().unwrap());
        }
        diameter
    }

    /// Connected components (singleton list on a connected graph).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut components = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    /// Second-smallest eigenvalue of the graph Laplacian (diagnostic only).
    pub fn fiedler_value(&self) -> f64 {
        let mut lap = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            lap[(i, i)] = self.degree(i) as f64;
        }
        for &(a, b) in &self.edges {
            lap[(a, b)] = -1.0;
            lap[(b, a)] = -1.0;
        }
        let mut eigs: Vec<f64> = lap.symmetric_eigen().eigenvalues.iter().copied().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if self.n > 1 {
            eigs[1]
        } else {
            0.0
        }
    }

    /// Edge-list text format: first line `N`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Argument("empty edge list".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Argument(format!("bad node count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let a: usize = it
                .next()
                .ok_or_else(|| Error::Argument(format!("bad edge line `{line}`")))?
                .parse()
                .map_err(|e| Error::Argument(format!("bad edge line `{line}`: {e}")))?;
            let b: usize = it
                .next()
                .ok_or_else(|| Error::Argument(format!("bad edge line `{line}`")))?
                .parse()
                .map_err(|e| Error::Argument(format!("bad edge line `{line}`: {e}")))?;
            edges.push((a, b));
        }
        Self::new(n, &edges)
    }
}

/// One row of a [`WeightMatrix`]: the node's own weight plus the weights of
/// its graph neighbors. This is all a node may read during a round.
#[derive(Debug, Clone)]
pub struct WeightRow {
    pub node: usize,
    pub self_weight: f64,
    pub neighbors: Vec<(usize, f64)>,
}

impl WeightRow {
    /// Mixes neighbor vectors including self: `w_ii v_i + sum_j w_ij v_j`.
    pub fn mix<'a, F>(&self, own: &DVector<f64>, mut neighbor: F, flops: &mut crate::Flops) -> DVector<f64>
    where
        F: FnMut(usize) -> &'a DVector<f64>,
    {
        let mut out = own * self.self_weight;
        flops.scale(own.len());
        for &(j, w) in &self.neighbors {
            out.axpy(w, neighbor(j), 1.0);
            flops.axpy(own.len());
        }
        out
    }
}

/// Symmetric doubly stochastic consensus weights over a [`CommGraph`].
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
}

impl WeightMatrix {
    /// Metropolis weights: `w_ij = 1/max{|N_i|, |N_j|}` on edges, diagonal
    /// absorbing the remainder.
    pub fn metropolis(graph: &CommGraph) -> Self {
        let n = graph.node_count();
        let mut w = DMatrix::zeros(n, n);
        for &(a, b) in graph.edges() {
            let val = 1.0 / graph.degree(a).max(graph.degree(b)) as f64;
            w[(a, b)] = val;
            w[(b, a)] = val;
        }
        for i in 0..n {
            let off: f64 = graph.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self { w }
    }

    /// Wraps an explicit weight matrix (unchecked; use [`Self::validate`]).
    pub fn from_matrix(w: DMatrix<f64>) -> Self {
        Self { w }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn node_count(&self) -> usize {
        self.w.nrows()
    }

    pub fn row(&self, graph: &CommGraph, i: usize) -> WeightRow {
        WeightRow {
            node: i,
            self_weight: self.w[(i, i)],
            neighbors: graph
                .neighbors(i)
                .iter()
                .map(|&j| (j, self.w[(i, j)]))
                .collect(),
        }
    }

    /// Checks symmetry, row/column sums, nonnegativity and the sparsity
    /// pattern against `graph` to tolerance `tol`.
    pub fn validate(&self, graph: &CommGraph, tol: f64) -> Result<()> {
        let n = self.w.nrows();
        if n != graph.node_count() {
            return Err(Error::Argument("weight matrix size mismatch".into()));
        }
        for i in 0..n {
            let row_sum: f64 = self.w.row(i).sum();
            let col_sum: f64 = self.w.column(i).sum();
            if (row_sum - 1.0).abs() > tol || (col_sum - 1.0).abs() > tol {
                return Err(Error::Numerical(format!(
                    "row/column {i} sums to ({row_sum}, {col_sum})"
                )));
            }
            for j in 0..n {
                if (self.w[(i, j)] - self.w[(j, i)]).abs() > tol {
                    return Err(Error::Numerical(format!("asymmetric at ({i},{j})")));
                }
                if self.w[(i, j)] < -tol {
                    return Err(Error::Numerical(format!("negative weight at ({i},{j})")));
                }
                let is_edge = i != j && graph.neighbors(i).binary_search(&j).is_ok();
                if i != j && !is_edge && self.w[(i, j)].abs() > tol {
                    return Err(Error::Numerical(format!("weight off the graph at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eigs: Vec<f64> = self
            .w
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eigs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_graphs() {
        assert_eq!(CommGraph::chain(2).unwrap().edge_count(), 1);
        let g4 = CommGraph::chain(4).unwrap();
        assert_eq!(g4.edges(), &[(0, 1), (1, 2), (2, 3)]);
        let g10 = CommGraph::chain(10).unwrap();
        assert_eq!(g10.edge_count(), 9);
        assert_eq!(g10.diameter(), 9);
        assert!(g10.neighbors(5).len() <= 2);
        assert!(matches!(CommGraph::chain(1), Err(Error::Argument(_))));
    }

    #[test]
    fn range_limited_edges_and_disconnect() {
        let g = CommGraph::range_limited(&[[0.0, 0.0], [1.0, 0.0]], 2.0).unwrap();
        assert_eq!(g.edge_count(), 1);

        let err = CommGraph::range_limited(&[[0.0, 0.0], [3.0, 0.0]], 2.0).unwrap_err();
        match err {
            Error::Disconnected { components } => {
                assert_eq!(components, vec![vec![0], vec![1]]);
            }
            other => panic!("expected Disconnected, got {other:?}"),
        }

        // 5 points on a unit-spaced line, radius 1.5: the path graph.
        let line: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 0.0]).collect();
        let g = CommGraph::range_limited(&line, 1.5).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn metropolis_three_chain_and_triangle() {
        // Degrees (1,2,1): w_01 = w_12 = 1/2, diagonal (1/2, 0, 1/2).
        let w = WeightMatrix::metropolis(&CommGraph::chain(3).unwrap());
        let m = w.matrix();
        assert_abs_diff_eq!(m[(0, 1)], 0.5);
        assert_abs_diff_eq!(m[(1, 2)], 0.5);
        assert_abs_diff_eq!(m[(0, 0)], 0.5);
        assert_abs_diff_eq!(m[(1, 1)], 0.0);
        assert_abs_diff_eq!(m[(2, 2)], 0.5);

        // Triangle: all degrees 2, off-diagonals 1/2, diagonal 0.
        let g = CommGraph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = WeightMatrix::metropolis(&g);
        for i in 0..3 {
            assert_abs_diff_eq!(w.matrix()[(i, i)], 0.0);
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(w.matrix()[(i, j)], 0.5);
                }
            }
        }
    }

    #[test]
    fn metropolis_two_nodes_follows_formula() {
        // Both degrees are 1, so the printed formula gives w_01 = 1 and zero
        // diagonal (the swap matrix). Still symmetric doubly stochastic.
        let g = CommGraph::chain(2).unwrap();
        let w = WeightMatrix::metropolis(&g);
        assert_abs_diff_eq!(w.matrix()[(0, 1)], 1.0);
        assert_abs_diff_eq!(w.matrix()[(0, 0)], 0.0);
        w.validate(&g, 1e-12).unwrap();
    }

    #[test]
    fn metropolis_doubly_stochastic_over_random_graphs() {
        // 100 seeded random geometric graphs; double stochasticity and
        // symmetry to 1e-12, eigenvalues in (-1, 1] with a simple unit
        // eigenvalue to 1e-9.
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5 + (seed % 21) as usize;
            let g = CommGraph::random_connected(n, 0.45, &mut rng, 64).unwrap();
            let w = WeightMatrix::metropolis(&g);
            w.validate(&g, 1e-12).unwrap();
            let eigs = w.eigenvalues();
            assert!(eigs[0] > -1.0 + 1e-9, "seed {seed}: lambda_min {}", eigs[0]);
            let top = eigs[eigs.len() - 1];
            assert_abs_diff_eq!(top, 1.0, epsilon = 1e-9);
            if eigs.len() > 1 {
                assert!(
                    eigs[eigs.len() - 2] < 1.0 - 1e-9,
                    "seed {seed}: unit eigenvalue not simple"
                );
            }
        }
    }

    #[test]
    fn fiedler_positive_on_connected() {
        let g = CommGraph::chain(6).unwrap();
        assert!(g.fiedler_value() > 1e-9);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = CommGraph::new(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("4\n"));
        let back = CommGraph::from_edge_list(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
    }
}
