//! Canonical maximum bipartite matching.
//!
//! OPT is computed by Hopcroft–Karp with a fixed exploration order: left
//! nodes (balls, in arrival order) are scanned by index, each adjacency list
//! in instance order, and BFS layers are built from free left nodes in index
//! order. The resulting matching is a deterministic function of the graph,
//! which makes the edge-usage vector `F(ω)` and hence `f` well defined.
//! A different canonical rule would give a different, equally valid `f`.

use std::collections::VecDeque;

use crate::instance::{ArrivalSequence, Instance};

const INF: u32 = u32::MAX;

/// A set of `(left, right)` pairs, sorted by left node.
///
/// Left nodes are ball nodes of a [`RealizedGraph`] or ball types of an
/// [`Instance`], depending on context; right nodes are bin indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        Matching { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Bin matched to left node `l`.
    pub fn partner_of(&self, l: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&l, |&(a, _)| a)
            .ok()
            .map(|i| self.pairs[i].1)
    }

    /// True if no left or right node repeats and every pair satisfies `is_edge`.
    pub fn is_valid(&self, is_edge: impl Fn(usize, usize) -> bool) -> bool {
        let mut lefts = std::collections::HashSet::new();
        let mut rights = std::collections::HashSet::new();
        self.pairs
            .iter()
            .all(|&(l, r)| lefts.insert(l) && rights.insert(r) && is_edge(l, r))
    }
}

/// The graph of one realized arrival sequence: one left node per arrived ball.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealizedGraph {
    num_bins: usize,
    ball_types: Vec<usize>,
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
}

impl RealizedGraph {
    pub fn with_bins(num_bins: usize) -> Self {
        RealizedGraph {
            num_bins,
            ball_types: Vec::new(),
            offsets: vec![0],
            adjacency: Vec::new(),
        }
    }

    pub fn from_sequence(inst: &Instance, seq: &ArrivalSequence) -> Self {
        let mut g = RealizedGraph::with_bins(inst.num_bins());
        for &y in &seq.draws {
            g.push_ball(y, inst.neighbors(y));
        }
        g
    }

    /// Appends a ball of (type or class) `ty` adjacent to `neighbors`.
    pub fn push_ball(&mut self, ty: usize, neighbors: &[usize]) {
        debug_assert!(neighbors.iter().all(|&z| z < self.num_bins));
        self.ball_types.push(ty);
        self.adjacency.extend_from_slice(neighbors);
        self.offsets.push(self.adjacency.len());
    }

    pub fn num_balls(&self) -> usize {
        self.ball_types.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn ball_type(&self, i: usize) -> usize {
        self.ball_types[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Mutable state of a (possibly partial) bipartite matching.
#[derive(Debug, Clone)]
pub struct MatchState {
    pub left: Vec<Option<usize>>,
    pub right: Vec<Option<usize>>,
}

impl MatchState {
    pub fn empty(num_left: usize, num_right: usize) -> Self {
        MatchState {
            left: vec![None; num_left],
            right: vec![None; num_right],
        }
    }

    pub fn size(&self) -> usize {
        self.left.iter().filter(|m| m.is_some()).count()
    }

    pub fn unmatch_left(&mut self, l: usize) {
        if let Some(r) = self.left[l].take() {
            self.right[r] = None;
        }
    }
}

/// Hopcroft–Karp over `adj`, starting from `state` (warm start allowed).
///
/// `alive(l, k)` filters the `k`-th entry of `adj[l]`; removed edges are
/// skipped without rebuilding the lists. Pairs of `state` must be alive.
pub fn hopcroft_karp_with<F>(adj: &[Vec<usize>], state: &mut MatchState, alive: F)
where
    F: Fn(usize, usize) -> bool,
{
    let n = adj.len();
    let mut dist = vec![INF; n];
    let mut queue = VecDeque::with_capacity(n);
    loop {
        queue.clear();
        for l in 0..n {
            if state.left[l].is_none() {
                dist[l] = 0;
                queue.push_back(l);
            } else {
                dist[l] = INF;
            }
        }
        let mut found = false;
        while let Some(l) = queue.pop_front() {
            for (k, &r) in adj[l].iter().enumerate() {
                if !alive(l, k) {
                    continue;
                }
                match state.right[r] {
                    None => found = true,
                    Some(l2) if dist[l2] == INF => {
                        dist[l2] = dist[l] + 1;
                        queue.push_back(l2);
                    }
                    Some(_) => {}
                }
            }
        }
        if !found {
            break;
        }
        let mut augmented = false;
        for l in 0..n {
            if state.left[l].is_none() && augment(adj, state, &mut dist, &alive, l) {
                augmented = true;
            }
        }
        if !augmented {
            break;
        }
    }
}

fn augment<F>(adj: &[Vec<usize>], state: &mut MatchState, dist: &mut [u32], alive: &F, l: usize) -> bool
where
    F: Fn(usize, usize) -> bool,
{
    let d = dist[l];
    for (k, &r) in adj[l].iter().enumerate() {
        if !alive(l, k) {
            continue;
        }
        let ok = match state.right[r] {
            None => true,
            Some(l2) => dist[l2] == d.wrapping_add(1) && augment(adj, state, dist, alive, l2),
        };
        if ok {
            state.right[r] = Some(l);
            state.left[l] = Some(r);
            return true;
        }
    }
    dist[l] = INF;
    false
}

/// Maximum matching of the realized graph under the canonical rule.
pub fn max_matching(g: &RealizedGraph) -> Matching {
    let adj: Vec<Vec<usize>> = (0..g.num_balls()).map(|i| g.neighbors(i).to_vec()).collect();
    let mut state = MatchState::empty(adj.len(), g.num_bins());
    hopcroft_karp_with(&adj, &mut state, |_, _| true);
    Matching::new(
        state
            .left
            .iter()
            .enumerate()
            .filter_map(|(l, r)| r.map(|r| (l, r)))
            .collect(),
    )
}

/// OPT on one arrival sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptOutcome {
    pub size: usize,
    /// `edge_counts[e]`: balls of `e`'s type matched across `e`. Indexed like
    /// [`Instance::edges`]; can exceed 1 when several balls share a type.
    pub edge_counts: Vec<u32>,
}

pub fn opt_value(inst: &Instance, seq: &ArrivalSequence) -> OptOutcome {
    let g = RealizedGraph::from_sequence(inst, seq);
    let m = max_matching(&g);
    let mut edge_counts = vec![0u32; inst.num_edges()];
    for &(ball, z) in &m.pairs {
        let y = g.ball_type(ball);
        let e = inst.find_edge(y, z).expect("matched pair is an instance edge");
        edge_counts[e] += 1;
    }
    OptOutcome {
        size: m.len(),
        edge_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(num_bins: usize, balls: &[&[usize]]) -> RealizedGraph {
        let mut g = RealizedGraph::with_bins(num_bins);
        for (i, nb) in balls.iter().enumerate() {
            g.push_ball(i, nb);
        }
        g
    }

    #[test]
    fn canonical_small_example() {
        // a: {z1, z2}, b: {z1}
        let g = graph(2, &[&[0, 1], &[0]]);
        let m = max_matching(&g);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_and_complete() {
        assert!(max_matching(&graph(3, &[])).is_empty());
        assert!(max_matching(&graph(0, &[&[], &[]])).is_empty());
        let g = graph(3, &[&[0, 1, 2], &[0, 1, 2], &[0, 1, 2]]);
        assert_eq!(max_matching(&g).len(), 3);
    }

    #[test]
    fn first_arrival_wins_a_contested_bin() {
        let g = graph(1, &[&[0], &[0]]);
        assert_eq!(max_matching(&g).pairs, vec![(0, 0)]);
    }

    #[test]
    fn warm_start_reaches_maximum() {
        let adj = vec![vec![0, 1], vec![0], vec![1, 2]];
        let mut st = MatchState::empty(3, 3);
        st.left[0] = Some(0);
        st.right[0] = Some(0);
        hopcroft_karp_with(&adj, &mut st, |_, _| true);
        assert_eq!(st.size(), 3);
    }

    #[test]
    fn alive_filter_removes_edges() {
        let adj = vec![vec![0, 1], vec![0]];
        let mut st = MatchState::empty(2, 2);
        hopcroft_karp_with(&adj, &mut st, |l, k| !(l == 0 && k == 1));
        assert_eq!(st.size(), 1);
    }
}
