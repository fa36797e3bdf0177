//! Strongly connected directed graphs with self-loops.
//!
//! An edge `(i, j)` means client `j` transmits to client `i`, so `j` is an
//! in-neighbor of `i`: client `i` pulls `x_j` (and receives `y_j`) over that
//! link. Self-loops are implicit and never stored. The measured constants are
//! the diameter `D(G)` and the maximal edge utility `K(G)`, the two graph
//! quantities entering the conservative contraction radii.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to generate a strongly connected graph for m={m}, radius={radius} within {attempts} attempts")]
    GenerationFailed { m: usize, radius: f64, attempts: u32 },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("invalid graph file: {0}")]
    BadFile(String),
}

/// Directed graph on nodes `0..m` with implicit self-loops.
///
/// Edges are kept in a sorted set so iteration order (and therefore every
/// seeded draw made per edge) is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    m: usize,
    /// `(receiver, sender)` pairs, excluding self-loops.
    edges: BTreeSet<(usize, usize)>,
}

/// Diameter and maximal edge utility of a strongly connected digraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphMetrics {
    pub diameter: usize,
    pub edge_utility: usize,
}

impl Digraph {
    /// Build from explicit `(receiver, sender)` pairs. Self-loops and
    /// duplicates are dropped; indices must be `< m`.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        assert!(m >= 1, "graph needs at least one node");
        let edges = edges
            .into_iter()
            .filter(|&(i, j)| i != j)
            .inspect(|&(i, j)| assert!(i < m && j < m, "edge ({i},{j}) out of range for m={m}"))
            .collect();
        Digraph { m, edges }
    }

    /// Complete digraph: every ordered pair is a link.
    pub fn complete(m: usize) -> Self {
        let edges = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| i != j);
        Self::from_edges(m, edges)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Directed edges `(receiver, sender)`, self-loops excluded, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, receiver: usize, sender: usize) -> bool {
        receiver == sender || self.edges.contains(&(receiver, sender))
    }

    /// In-neighbors of `i`: senders `j` with a link `j → i` (excludes `i`).
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.m).filter(|&j| j != i && self.edges.contains(&(i, j))).collect()
    }

    /// Out-neighbors of `i`: receivers `j` of links `i → j` (excludes `i`).
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.m).filter(|&j| j != i && self.edges.contains(&(j, i))).collect()
    }

    /// Adjacency in transmission direction: `succ[j]` lists nodes reachable
    /// from `j` in one hop (the receivers of `j`), ascending.
    fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            succ[j].push(i);
        }
        for s in &mut succ {
            s.sort_unstable();
        }
        succ
    }

    /// Serialize as the edge-list text format: first line `m`, then one
    /// `i j` line per directed link `i → j` (sender first, self-loops omitted).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.m).unwrap();
        // stored as (receiver, sender); emitted as "sender receiver"
        let mut lines: Vec<(usize, usize)> = self.edges.iter().map(|&(r, s)| (s, r)).collect();
        lines.sort_unstable();
        for (s, r) in lines {
            writeln!(out, "{s} {r}").unwrap();
        }
        out
    }

    /// Parse the edge-list text format written by [`Digraph::to_edge_list`].
    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let m: usize = lines
            .next()
            .ok_or_else(|| GraphError::BadFile("empty file".into()))?
            .trim()
            .parse()
            .map_err(|e| GraphError::BadFile(format!("bad node count: {e}")))?;
        if m == 0 {
            return Err(GraphError::BadFile("node count must be positive".into()));
        }
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let s: usize = it
                .next()
                .ok_or_else(|| GraphError::BadFile(format!("line {}: missing sender", lineno + 2)))?
                .parse()
                .map_err(|e| GraphError::BadFile(format!("line {}: {e}", lineno + 2)))?;
            let r: usize = it
                .next()
                .ok_or_else(|| GraphError::BadFile(format!("line {}: missing receiver", lineno + 2)))?
                .parse()
                .map_err(|e| GraphError::BadFile(format!("line {}: {e}", lineno + 2)))?;
            if s >= m || r >= m {
                return Err(GraphError::BadFile(format!("line {}: node out of range", lineno + 2)));
            }
            if s != r {
                edges.push((r, s));
            }
        }
        Ok(Self::from_edges(m, edges))
    }
}

/// True iff every ordered pair of nodes is connected by a directed path.
///
/// Double BFS from node 0: forward reachability plus reachability in the
/// reversed graph covers all pairs. The test suite cross-checks this against
/// an independent Tarjan SCC oracle.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    if g.m == 1 {
        return true;
    }
    let succ = g.successors();
    let mut pred = vec![Vec::new(); g.m];
    for &(i, j) in &g.edges {
        pred[i].push(j);
    }
    reaches_all(&succ, g.m) && reaches_all(&pred, g.m)
}

fn reaches_all(adj: &[Vec<usize>], m: usize) -> bool {
    let mut seen = vec![false; m];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == m
}

/// Generate a directed random geometric graph on the unit square.
///
/// Nodes are placed uniformly with the seeded generator; every undirected
/// pair within `radius` becomes two directed links; self-loops are implicit.
/// If the sample is not strongly connected, positions are resampled with
/// sub-seed `seed + attempt` so the triple `(m, radius, seed)` stays
/// reproducible. Fails after `RGG_RETRY_BUDGET` attempts.
pub fn generate_rgg(m: usize, radius: f64, seed: u64) -> Result<Digraph, GraphError> {
    generate_rgg_with_budget(m, radius, seed, RGG_RETRY_BUDGET)
}

pub const RGG_RETRY_BUDGET: u32 = 1000;

pub fn generate_rgg_with_budget(
    m: usize,
    radius: f64,
    seed: u64,
    budget: u32,
) -> Result<Digraph, GraphError> {
    assert!(m >= 1, "m must be positive");
    assert!(radius > 0.0, "radius must be positive");
    use rand::Rng;
    use rand::SeedableRng;
    for attempt in 0..budget {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let pts: Vec<(f64, f64)> =
            (0..m).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let dx = pts[i].0 - pts[j].0;
                let dy = pts[i].1 - pts[j].1;
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, j));
                    edges.push((j, i));
                }
            }
        }
        let g = Digraph::from_edges(m, edges);
        if is_strongly_connected(&g) {
            return Ok(g);
        }
    }
    Err(GraphError::GenerationFailed { m, radius, attempts: budget })
}

/// BFS distances from `src` in transmission direction; self-loops do not
/// count as steps. `usize::MAX` marks unreachable nodes.
fn bfs_distances(succ: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; succ.len()];
    dist[src] = 0;
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in &succ[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Diameter `D(G)` and maximal edge utility `K(G)`.
///
/// `K(G)` counts, per directed edge, how many ordered-pair shortest paths
/// pass through it when exactly one path is selected per pair; the selected
/// path walks back from the target choosing the lowest-index predecessor at
/// the previous BFS distance. The maximum count over non-self-loop edges is
/// `K(G)`. The `m = 1` graph uses the degenerate convention `D = K = 1`.
pub fn metrics(g: &Digraph) -> Result<GraphMetrics, GraphError> {
    if !is_strongly_connected(g) {
        return Err(GraphError::NotStronglyConnected);
    }
    if g.m == 1 {
        return Ok(GraphMetrics { diameter: 1, edge_utility: 1 });
    }
    let succ = g.successors();
    let mut pred = vec![Vec::new(); g.m];
    for &(i, j) in &g.edges {
        pred[i].push(j);
    }
    for p in &mut pred {
        p.sort_unstable();
    }

    let mut diameter = 0usize;
    let mut usage: std::collections::HashMap<(usize, usize), usize> = Default::default();
    for s in 0..g.m {
        let dist = bfs_distances(&succ, s);
        for t in 0..g.m {
            if t == s {
                continue;
            }
            diameter = diameter.max(dist[t]);
            // walk back from t along lowest-index predecessors
            let mut v = t;
            while v != s {
                let d = dist[v];
                let u = *pred[v]
                    .iter()
                    .find(|&&u| dist[u] + 1 == d)
                    .expect("strongly connected graph has a predecessor on a shortest path");
                *usage.entry((u, v)).or_insert(0) += 1;
                v = u;
            }
        }
    }
    let edge_utility = usage.values().copied().max().unwrap_or(1);
    Ok(GraphMetrics { diameter, edge_utility })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent Tarjan SCC oracle (iterative).
    fn tarjan_scc_count(m: usize, succ: &[Vec<usize>]) -> usize {
        let mut index = vec![usize::MAX; m];
        let mut lowlink = vec![0usize; m];
        let mut on_stack = vec![false; m];
        let mut stack = Vec::new();
        let mut next_index = 0usize;
        let mut comps = 0usize;

        for root in 0..m {
            if index[root] != usize::MAX {
                continue;
            }
            // (node, child cursor)
            let mut call: Vec<(usize, usize)> = vec![(root, 0)];
            index[root] = next_index;
            lowlink[root] = next_index;
            next_index += 1;
            stack.push(root);
            on_stack[root] = true;

            while let Some(&mut (v, ref mut cursor)) = call.last_mut() {
                if *cursor < succ[v].len() {
                    let w = succ[v][*cursor];
                    *cursor += 1;
                    if index[w] == usize::MAX {
                        index[w] = next_index;
                        lowlink[w] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        call.push((w, 0));
                    } else if on_stack[w] {
                        lowlink[v] = lowlink[v].min(index[w]);
                    }
                } else {
                    call.pop();
                    if let Some(&(parent, _)) = call.last() {
                        lowlink[parent] = lowlink[parent].min(lowlink[v]);
                    }
                    if lowlink[v] == index[v] {
                        comps += 1;
                        while let Some(w) = stack.pop() {
                            on_stack[w] = false;
                            if w == v {
                                break;
                            }
                        }
                    }
                }
            }
        }
        comps
    }

    fn scc_oracle(g: &Digraph) -> bool {
        let succ = g.successors();
        tarjan_scc_count(g.m(), &succ) == 1
    }

    #[test]
    fn single_node_is_trivially_connected() {
        let g = generate_rgg(1, 0.1, 7).unwrap();
        assert_eq!(g.m(), 1);
        assert_eq!(g.num_edges(), 0);
        assert!(is_strongly_connected(&g));
    }

    #[test]
    fn full_radius_gives_complete_digraph() {
        let g = generate_rgg(10, std::f64::consts::SQRT_2, 42).unwrap();
        assert_eq!(g.num_edges(), 10 * 9);
        assert_eq!(g, Digraph::complete(10));
    }

    #[test]
    fn rgg_is_strongly_connected_per_scc_oracle() {
        let g = generate_rgg(10, 0.4, 1).unwrap();
        assert!(scc_oracle(&g));
        assert!(is_strongly_connected(&g));
    }

    #[test]
    fn rgg_is_deterministic() {
        let a = generate_rgg(12, 0.5, 9).unwrap();
        let b = generate_rgg(12, 0.5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_node_connectivity_cases() {
        let both = Digraph::from_edges(2, [(0, 1), (1, 0)]);
        assert!(is_strongly_connected(&both));
        let one_way = Digraph::from_edges(2, [(0, 1)]);
        assert!(!is_strongly_connected(&one_way));
    }

    #[test]
    fn connectivity_matches_oracle_on_random_graphs() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let m = rng.random_range(2..8);
            let mut edges = Vec::new();
            for i in 0..m {
                for j in 0..m {
                    if i != j && rng.random::<f64>() < 0.35 {
                        edges.push((i, j));
                    }
                }
            }
            let g = Digraph::from_edges(m, edges);
            assert_eq!(is_strongly_connected(&g), scc_oracle(&g));
        }
    }

    #[test]
    fn complete_digraph_metrics() {
        let g = Digraph::complete(3);
        let gm = metrics(&g).unwrap();
        assert_eq!(gm.diameter, 1);
        assert_eq!(gm.edge_utility, 1);
        for m in 2..7 {
            assert_eq!(metrics(&Digraph::complete(m)).unwrap().diameter, 1);
        }
    }

    #[test]
    fn single_node_metrics_convention() {
        let g = Digraph::from_edges(1, []);
        let gm = metrics(&g).unwrap();
        assert_eq!(gm, GraphMetrics { diameter: 1, edge_utility: 1 });
    }

    #[test]
    fn metrics_requires_strong_connectivity() {
        let g = Digraph::from_edges(2, [(0, 1)]);
        assert!(matches!(metrics(&g), Err(GraphError::NotStronglyConnected)));
    }

    /// Exhaustive shortest-path oracle: all-pairs distances by repeated
    /// relaxation, then the same lowest-index-predecessor selection rule,
    /// counting edge usage per selected path.
    fn brute_force_metrics(g: &Digraph) -> GraphMetrics {
        let m = g.m();
        let inf = usize::MAX / 2;
        let mut dist = vec![vec![inf; m]; m];
        for i in 0..m {
            dist[i][i] = 0;
        }
        for (r, s) in g.edges() {
            dist[s][r] = 1;
        }
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    dist[i][j] = dist[i][j].min(dist[i][k] + dist[k][j]);
                }
            }
        }
        let mut diameter = 0;
        let mut usage: std::collections::HashMap<(usize, usize), usize> = Default::default();
        for s in 0..m {
            for t in 0..m {
                if s == t {
                    continue;
                }
                diameter = diameter.max(dist[s][t]);
                let mut v = t;
                while v != s {
                    let u = (0..m)
                        .find(|&u| u != v && g.has_edge(v, u) && dist[s][u] + 1 == dist[s][v])
                        .unwrap();
                    *usage.entry((u, v)).or_insert(0) += 1;
                    v = u;
                }
            }
        }
        GraphMetrics { diameter, edge_utility: usage.values().copied().max().unwrap_or(1) }
    }

    #[test]
    fn directed_three_cycle_metrics_match_enumeration() {
        // transmissions 0→1→2→0, stored as (receiver, sender)
        let g = Digraph::from_edges(3, [(1, 0), (2, 1), (0, 2)]);
        let gm = metrics(&g).unwrap();
        assert_eq!(gm.diameter, 2);
        assert_eq!(gm, brute_force_metrics(&g));
        // every pair's unique shortest path loads each edge three times
        assert_eq!(gm.edge_utility, 3);
    }

    #[test]
    fn edge_utility_matches_brute_force_on_small_graphs() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
        let mut checked = 0;
        while checked < 60 {
            let m = rng.random_range(2..=6);
            let mut edges = Vec::new();
            for i in 0..m {
                for j in 0..m {
                    if i != j && rng.random::<f64>() < 0.5 {
                        edges.push((i, j));
                    }
                }
            }
            let g = Digraph::from_edges(m, edges);
            if !is_strongly_connected(&g) {
                continue;
            }
            assert_eq!(metrics(&g).unwrap(), brute_force_metrics(&g));
            checked += 1;
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let g = generate_rgg(8, 0.55, 3).unwrap();
        let text = g.to_edge_list();
        let back = Digraph::from_edge_list(&text).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn edge_list_rejects_garbage() {
        assert!(Digraph::from_edge_list("").is_err());
        assert!(Digraph::from_edge_list("3\n0 9\n").is_err());
        assert!(Digraph::from_edge_list("x\n").is_err());
    }

    #[test]
    fn generation_failure_reports_parameters() {
        let err = generate_rgg_with_budget(25, 0.01, 3, 5).unwrap_err();
        match err {
            GraphError::GenerationFailed { m, radius, attempts } => {
                assert_eq!(m, 25);
                assert_eq!(attempts, 5);
                assert!(radius < 0.02);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
