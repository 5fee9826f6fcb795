//! Online allocation policies.
//!
//! - [`GreedyPolicy`]: uniformly random empty neighbor.
//! - [`NonAdaptivePlan`]: two matchings drawn from `μ`; the first ball of a
//!   type follows the first matching, the second ball the second, later balls
//!   are dropped.
//! - [`AdaptivePolicy`]: each ball draws `x ∈ [0, r_y)` and tries the bins
//!   owning `x` in two interval partitions of `[0, r_y]`, first `I` then `J`.

use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::decompose::{sample_matching, MatchingDistribution};
use crate::instance::Instance;
use crate::matching::RealizedGraph;
use crate::offline_stats::{FractionalMatching, POLYTOPE_TOL};
use crate::{Error, Result};

/// Contract shared by all online policies.
///
/// `neighbors` is the arriving ball's adjacency and `full[z]` the current
/// occupancy. The returned bin, if any, must be an empty neighbor.
pub trait OnlinePolicy {
    fn assign(&mut self, ty: usize, neighbors: &[usize], full: &[bool], rng: &mut dyn RngCore) -> Option<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Adaptive,
    NonAdaptive,
    Greedy,
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(PolicyKind::Adaptive),
            "nonadaptive" => Ok(PolicyKind::NonAdaptive),
            "greedy" => Ok(PolicyKind::Greedy),
            _ => Err(Error::invalid("policy", format!("unknown policy {s}"))),
        }
    }
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Adaptive => "adaptive",
            PolicyKind::NonAdaptive => "nonadaptive",
            PolicyKind::Greedy => "greedy",
        }
    }
}

/// How the adaptive policy treats the dummy bin that stands for OPT's drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DummyMode {
    /// The dummy is never available: a dummy first choice falls through to
    /// the second choice.
    #[default]
    AlwaysFull,
    /// The dummy absorbs the ball: a dummy first choice drops it.
    AlwaysEmpty,
}

impl FromStr for DummyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always-full" => Ok(DummyMode::AlwaysFull),
            "always-empty" => Ok(DummyMode::AlwaysEmpty),
            _ => Err(Error::invalid("dummy", format!("unknown dummy mode {s}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GreedyPolicy;

impl OnlinePolicy for GreedyPolicy {
    fn assign(&mut self, _ty: usize, neighbors: &[usize], full: &[bool], rng: &mut dyn RngCore) -> Option<usize> {
        let empty = neighbors.iter().filter(|&&z| !full[z]).count();
        if empty == 0 {
            return None;
        }
        let pick = rng.gen_range(0..empty);
        neighbors.iter().copied().filter(|&z| !full[z]).nth(pick)
    }
}

/// Two priority matchings and the per-type arrival counters.
#[derive(Debug, Clone)]
pub struct NonAdaptivePlan {
    pub first: Vec<Option<usize>>,
    pub second: Vec<Option<usize>>,
    arrivals: Vec<u32>,
}

/// Samples the two priority matchings independently from `μ`.
pub fn build_nonadaptive(mu: &MatchingDistribution, num_types: usize, rng: &mut dyn RngCore) -> NonAdaptivePlan {
    let mut plan = NonAdaptivePlan {
        first: vec![None; num_types],
        second: vec![None; num_types],
        arrivals: vec![0; num_types],
    };
    for &(y, z) in &sample_matching(mu, rng).pairs {
        plan.first[y] = Some(z);
    }
    for &(y, z) in &sample_matching(mu, rng).pairs {
        plan.second[y] = Some(z);
    }
    plan
}

impl NonAdaptivePlan {
    pub fn step(&mut self, ty: usize, full: &[bool]) -> Option<usize> {
        self.arrivals[ty] += 1;
        let target = match self.arrivals[ty] {
            1 => self.first[ty],
            2 => self.second[ty],
            _ => None,
        };
        target.filter(|&z| !full[z])
    }
}

impl OnlinePolicy for NonAdaptivePlan {
    fn assign(&mut self, ty: usize, _neighbors: &[usize], full: &[bool], _rng: &mut dyn RngCore) -> Option<usize> {
        self.step(ty, full)
    }
}

/// A choice in a type's partition: the `k`-th neighbor, or the dummy bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Neighbor(usize),
    Dummy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartEntry {
    pub slot: Slot,
    pub f: f64,
    /// `I` interval `[start, end)`.
    pub i: (f64, f64),
    /// `J` interval `[start, end)`.
    pub j: (f64, f64),
}

/// The `I` and `J` partitions of `[0, r]` for one ball type.
///
/// Entries are in descending-`f` order. `I` lays them out left to right;
/// `J` is `I` shifted left by the largest value, wrapping the first entry to
/// the right end.
#[derive(Debug, Clone, PartialEq)]
pub struct TypePartition {
    pub rate: f64,
    pub entries: Vec<PartEntry>,
    i_ends: Vec<f64>,
}

impl TypePartition {
    /// `values` are `(slot, f)` pairs already in the desired order.
    fn from_ordered(rate: f64, values: Vec<(Slot, f64)>) -> Self {
        let shift = values.first().map_or(0.0, |v| v.1);
        let mut entries = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        for (idx, (slot, f)) in values.into_iter().enumerate() {
            let i = (acc, acc + f);
            let j = if idx == 0 {
                (rate - f, rate)
            } else {
                (acc - shift, acc + f - shift)
            };
            entries.push(PartEntry { slot, f, i, j });
            acc += f;
        }
        // Pin the right end to the rate so the final interval is exactly closed.
        if let Some(last) = entries.last_mut() {
            last.i.1 = rate;
        }
        let i_ends = entries.iter().map(|e| e.i.1).collect();
        TypePartition { rate, entries, i_ends }
    }

    /// Sorts `(slot, f)` by descending `f`, real neighbors before the dummy on
    /// ties, then by the supplied tie-break key.
    fn from_unordered(rate: f64, mut values: Vec<(Slot, f64, usize)>) -> Self {
        values.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| (a.0 == Slot::Dummy).cmp(&(b.0 == Slot::Dummy)))
                .then_with(|| a.2.cmp(&b.2))
        });
        TypePartition::from_ordered(rate, values.into_iter().map(|(s, f, _)| (s, f)).collect())
    }

    /// Entry of `I` containing `x`.
    pub fn first_index(&self, x: f64) -> usize {
        self.i_ends
            .partition_point(|&end| end <= x)
            .min(self.entries.len() - 1)
    }

    /// Entry of `J` containing `x`.
    pub fn second_index(&self, x: f64) -> usize {
        let shift = self.entries[0].f;
        if x >= self.rate - shift {
            return 0;
        }
        let rest = &self.i_ends[1..];
        1 + rest
            .partition_point(|&end| end - shift <= x)
            .min(rest.len().saturating_sub(1))
    }

    pub fn choices(&self, x: f64) -> (Slot, Slot) {
        (
            self.entries[self.first_index(x)].slot,
            self.entries[self.second_index(x)].slot,
        )
    }

    /// Ordered pairs `(first, second)` with probability `|I_a ∩ J_b| / r`.
    pub fn pair_distribution(&self) -> Vec<((Slot, Slot), f64)> {
        let n = self.entries.len();
        // J in order of start: entries 1..n, then entry 0.
        let j_order: Vec<usize> = (1..n).chain(std::iter::once(0)).collect();
        let mut out = Vec::new();
        let (mut a, mut b) = (0, 0);
        while a < n && b < n {
            let ia = self.entries[a].i;
            let jb = self.entries[j_order[b]].j;
            let len = ia.1.min(jb.1) - ia.0.max(jb.0);
            if len > 0.0 {
                out.push(((self.entries[a].slot, self.entries[j_order[b]].slot), len / self.rate));
            }
            if ia.1 <= jb.1 {
                a += 1;
            } else {
                b += 1;
            }
        }
        out
    }

    /// Measure of `{x : first and second choice coincide}`.
    pub fn overlap_measure(&self) -> f64 {
        self.entries.iter().map(|e| overlap(e.i, e.j)).sum()
    }

    /// `|J_e \ I_e|` for the entry holding `slot`.
    pub fn second_only_measure(&self, slot: Slot) -> f64 {
        self.entries
            .iter()
            .find(|e| e.slot == slot)
            .map_or(0.0, |e| (e.j.1 - e.j.0) - overlap(e.i, e.j))
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Partitions for every ball type (or ball class, for procedural families).
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPartitions {
    pub types: Vec<TypePartition>,
}

/// Builds the `I`/`J` partitions of every type from `f`. The dummy entry
/// carries `r_y − f_y` and is ordered among the real edges by its value.
pub fn build_partitions(inst: &Instance, f: &FractionalMatching) -> Result<IntervalPartitions> {
    let mut types = Vec::with_capacity(inst.num_types());
    for (y, t) in inst.types().iter().enumerate() {
        let fy = f.type_marginal(y);
        if fy > t.rate + POLYTOPE_TOL {
            return Err(Error::invalid(
                format!("f_y[{}]", t.id),
                format!("{fy} exceeds the rate {}", t.rate),
            ));
        }
        let mut values: Vec<(Slot, f64, usize)> = t
            .neighbors
            .iter()
            .enumerate()
            .map(|(k, &z)| (Slot::Neighbor(k), f.edge(inst.edge_index(y, k)).max(0.0), z))
            .collect();
        values.push((Slot::Dummy, (t.rate - fy).max(0.0), usize::MAX));
        types.push(TypePartition::from_unordered(t.rate, values));
    }
    Ok(IntervalPartitions { types })
}

/// Partition for a ball class whose `k` neighbors share one edge value:
/// each neighbor gets `rate·matched/k`, the dummy `rate·(1 − matched)`.
/// Neighbor positions break ties, so the sorted neighbor list is the order.
pub fn symmetric_partition(rate: f64, k: usize, matched: f64) -> TypePartition {
    let matched = matched.clamp(0.0, 1.0);
    let mut values: Vec<(Slot, f64, usize)> =
        (0..k).map(|p| (Slot::Neighbor(p), rate * matched / k as f64, p)).collect();
    values.push((Slot::Dummy, rate * (1.0 - matched), usize::MAX));
    TypePartition::from_unordered(rate, values)
}

/// Probability of each ordered `(first, second)` choice for type `y`.
pub fn pair_distribution(parts: &IntervalPartitions, y: usize) -> Vec<((Slot, Slot), f64)> {
    parts.types[y].pair_distribution()
}

#[derive(Debug, Clone)]
pub struct AdaptivePolicy {
    parts: Arc<IntervalPartitions>,
    mode: DummyMode,
}

impl AdaptivePolicy {
    pub fn new(parts: Arc<IntervalPartitions>, mode: DummyMode) -> Self {
        AdaptivePolicy { parts, mode }
    }
}

/// Applies the two-choice rule to a drawn `(first, second)` pair.
pub fn resolve_choice(
    (first, second): (Slot, Slot),
    neighbors: &[usize],
    full: &[bool],
    mode: DummyMode,
) -> Option<usize> {
    let open = |s: Slot| match s {
        Slot::Neighbor(k) => Some(neighbors[k]).filter(|&z| !full[z]),
        Slot::Dummy => None,
    };
    if first == Slot::Dummy && mode == DummyMode::AlwaysEmpty {
        return None;
    }
    open(first).or_else(|| open(second))
}

pub fn adaptive_step(
    parts: &IntervalPartitions,
    ty: usize,
    neighbors: &[usize],
    full: &[bool],
    mode: DummyMode,
    rng: &mut dyn RngCore,
) -> Option<usize> {
    let p = &parts.types[ty];
    let x = rng.gen::<f64>() * p.rate;
    resolve_choice(p.choices(x), neighbors, full, mode)
}

impl OnlinePolicy for AdaptivePolicy {
    fn assign(&mut self, ty: usize, neighbors: &[usize], full: &[bool], rng: &mut dyn RngCore) -> Option<usize> {
        adaptive_step(&self.parts, ty, neighbors, full, self.mode, rng)
    }
}

/// Outcome of one policy run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub matched: usize,
    /// `X_z`: whether bin `z` ended up full.
    pub occupied: Vec<bool>,
}

/// Feeds the balls of `g` to `policy` in arrival order.
///
/// # Panics
/// If the policy returns a full bin or a non-neighbor.
pub fn run_policy(policy: &mut dyn OnlinePolicy, g: &RealizedGraph, rng: &mut dyn RngCore) -> RunOutcome {
    let mut full = vec![false; g.num_bins()];
    let mut matched = 0;
    for i in 0..g.num_balls() {
        let nb = g.neighbors(i);
        if let Some(z) = policy.assign(g.ball_type(i), nb, &full, rng) {
            assert!(nb.contains(&z), "policy returned non-neighbor bin {z}");
            assert!(!full[z], "policy returned full bin {z}");
            full[z] = true;
            matched += 1;
        }
    }
    RunOutcome {
        matched,
        occupied: full,
    }
}
