//! Paired Monte-Carlo evaluation of online policies against OPT, plus exact
//! expected values on small instances.
//!
//! Every trial draws one arrival sequence and runs both the policy and the
//! canonical OPT on it, so ALG and OPT are compared on the same `ω`. The
//! competitive ratio is the ratio of means `E[ALG] / E[OPT]`.

use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::decompose::MatchingDistribution;
use crate::hardness::{CuckooClass, CuckooFamily};
use crate::instance::{ArrivalSampler, Instance};
use crate::matching::{max_matching, RealizedGraph};
use crate::policies::{
    build_nonadaptive, run_policy, AdaptivePolicy, DummyMode, GreedyPolicy, IntervalPartitions, OnlinePolicy,
    PolicyKind, Slot, symmetric_partition,
};
use crate::rng::{self, Stream, StreamRng};
use crate::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Largest bin count accepted by [`exact_value_adaptive`].
pub const MAX_DP_BINS: usize = 14;

/// Source of realized arrival graphs.
pub trait ArrivalModel: Sync {
    fn num_bins(&self) -> usize;
    fn horizon(&self) -> usize;
    fn sample_graph(&self, rng: &mut StreamRng) -> RealizedGraph;
}

/// I.i.d. arrivals from an explicit instance.
pub struct InstanceModel<'a> {
    inst: &'a Instance,
    sampler: ArrivalSampler,
}

impl<'a> InstanceModel<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        InstanceModel {
            inst,
            sampler: ArrivalSampler::new(inst),
        }
    }
}

impl ArrivalModel for InstanceModel<'_> {
    fn num_bins(&self) -> usize {
        self.inst.num_bins()
    }

    fn horizon(&self) -> usize {
        self.inst.horizon()
    }

    fn sample_graph(&self, rng: &mut StreamRng) -> RealizedGraph {
        RealizedGraph::from_sequence(self.inst, &self.sampler.sample(rng))
    }
}

impl ArrivalModel for CuckooFamily {
    fn num_bins(&self) -> usize {
        self.n
    }

    fn horizon(&self) -> usize {
        self.n
    }

    fn sample_graph(&self, rng: &mut StreamRng) -> RealizedGraph {
        CuckooFamily::sample_graph(self, rng)
    }
}

/// A policy together with the offline data it needs; instantiated afresh
/// for every trial.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Greedy,
    NonAdaptive {
        mu: Arc<MatchingDistribution>,
        num_types: usize,
    },
    Adaptive {
        parts: Arc<IntervalPartitions>,
        mode: DummyMode,
    },
}

impl PolicySpec {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicySpec::Greedy => PolicyKind::Greedy,
            PolicySpec::NonAdaptive { .. } => PolicyKind::NonAdaptive,
            PolicySpec::Adaptive { .. } => PolicyKind::Adaptive,
        }
    }

    pub fn instantiate(&self, rng: &mut StreamRng) -> Box<dyn OnlinePolicy> {
        match self {
            PolicySpec::Greedy => Box::new(GreedyPolicy),
            PolicySpec::NonAdaptive { mu, num_types } => Box::new(build_nonadaptive(mu, *num_types, rng)),
            PolicySpec::Adaptive { parts, mode } => Box::new(AdaptivePolicy::new(parts.clone(), *mode)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialRow {
    pub trial: u64,
    pub matched: u64,
    pub opt: u64,
    /// Seed of the trial's arrival stream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub policy: String,
    pub trials: u64,
    pub mean_alg: f64,
    pub mean_opt: f64,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub rows: Vec<TrialRow>,
    pub estimate: RatioEstimate,
}

impl Simulation {
    /// Standard error of the mean matched count.
    pub fn alg_stderr(&self) -> f64 {
        stderr_of(self.rows.iter().map(|r| r.matched as f64))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_csv(&self.rows, self.estimate.policy.as_str(), out)
    }
}

fn stderr_of(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

fn ratio_of_sums(alg: u64, opt: u64) -> f64 {
    if opt == 0 {
        if alg == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        alg as f64 / opt as f64
    }
}

/// Runs `trials` paired trials. Deterministic given `master_seed`,
/// regardless of the rayon thread count.
///
/// # Panics
/// If a policy ever matches more balls than OPT on the same sequence.
pub fn simulate(model: &dyn ArrivalModel, spec: &PolicySpec, trials: u64, master_seed: u64) -> Simulation {
    simulate_with(model, spec, trials, master_seed, DEFAULT_RESAMPLES)
}

pub fn simulate_with(
    model: &dyn ArrivalModel,
    spec: &PolicySpec,
    trials: u64,
    master_seed: u64,
    resamples: usize,
) -> Simulation {
    assert!(trials >= 1, "at least one trial is required");
    let rows: Vec<TrialRow> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = rng::derive_seed(master_seed, Stream::Arrivals, t);
            let g = model.sample_graph(&mut rng::from_seed(seed));
            let opt = max_matching(&g).len() as u64;
            let mut prng = rng::stream(master_seed, Stream::Policy, t);
            let mut policy = spec.instantiate(&mut prng);
            let matched = run_policy(policy.as_mut(), &g, &mut prng).matched as u64;
            assert!(matched <= opt, "trial {t}: ALG {matched} exceeds OPT {opt}");
            TrialRow {
                trial: t,
                matched,
                opt,
                seed,
            }
        })
        .collect();

    let alg: u64 = rows.iter().map(|r| r.matched).sum();
    let opt: u64 = rows.iter().map(|r| r.opt).sum();
    let ratio = ratio_of_sums(alg, opt);
    let (lo, hi) = if rows.len() >= 2 && resamples > 0 {
        bootstrap_ci(&rows, resamples, rng::derive_seed(master_seed, Stream::Bootstrap, 0))
            .expect("at least two trials")
    } else {
        (ratio, ratio)
    };
    let n = trials as f64;
    Simulation {
        estimate: RatioEstimate {
            policy: spec.kind().name().to_string(),
            trials,
            mean_alg: alg as f64 / n,
            mean_opt: opt as f64 / n,
            ratio,
            ci_low: lo.min(ratio),
            ci_high: hi.max(ratio),
            master_seed,
        },
        rows,
    }
}

/// Adaptive partitions for the procedural cuckoo family.
///
/// Every type in a class sees the same neighbor structure up to relabeling,
/// so each class gets a symmetric partition whose matched share is the
/// fraction of that class's balls OPT matches, estimated over `samples`
/// sampled graphs.
pub fn cuckoo_partitions(family: &CuckooFamily, samples: u64, seed: u64) -> Result<IntervalPartitions> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be positive"));
    }
    let counts = (0..samples)
        .into_par_iter()
        .map(|s| {
            let g = family.sample_graph(&mut rng::stream(seed, Stream::Estimation, s));
            let mut c = [[0u64; 2]; 3];
            for i in 0..g.num_balls() {
                c[g.ball_type(i)][1] += 1;
            }
            for &(ball, _) in &max_matching(&g).pairs {
                c[g.ball_type(ball)][0] += 1;
            }
            c
        })
        .reduce(
            || [[0u64; 2]; 3],
            |mut a, b| {
                for k in 0..3 {
                    a[k][0] += b[k][0];
                    a[k][1] += b[k][1];
                }
                a
            },
        );
    let rates = family.type_rates();
    let classes = [CuckooClass::Pair, CuckooClass::Triple, CuckooClass::Complete];
    let types = classes
        .iter()
        .map(|&c| {
            let [hit, seen] = counts[c as usize];
            let matched = if seen == 0 { 1.0 } else { hit as f64 / seen as f64 };
            let rate = if rates[c as usize] > 0.0 { rates[c as usize] } else { 1.0 };
            symmetric_partition(rate, family.class_degree(c), matched)
        })
        .collect();
    Ok(IntervalPartitions { types })
}

/// Writes rows as `trial,policy,matched,opt,seed`.
pub fn write_csv<W: Write>(rows: &[TrialRow], policy: &str, mut out: W) -> io::Result<()> {
    writeln!(out, "trial,policy,matched,opt,seed")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.trial, policy, r.matched, r.opt, r.seed)?;
    }
    out.flush()
}

const BOOTSTRAP_CHUNK: usize = 256;

/// Percentile bootstrap (95%) of the ratio of means over trial-level pairs.
pub fn bootstrap_ci(rows: &[TrialRow], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if rows.len() < 2 {
        return Err(Error::invalid("rows", "bootstrap needs at least two trials"));
    }
    if resamples == 0 {
        return Err(Error::invalid("resamples", "must be positive"));
    }
    let n = rows.len();
    let chunks = resamples.div_ceil(BOOTSTRAP_CHUNK);
    let mut stats: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng::stream(seed, Stream::Bootstrap, c as u64 + 1);
            let count = BOOTSTRAP_CHUNK.min(resamples - c * BOOTSTRAP_CHUNK);
            (0..count)
                .map(|_| {
                    let (mut a, mut o) = (0u64, 0u64);
                    for _ in 0..n {
                        let r = &rows[rng.gen_range(0..n)];
                        a += r.matched;
                        o += r.opt;
                    }
                    ratio_of_sums(a, o)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| stats[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok((pick(0.025), pick(0.975)))
}

/// Exact `E[ALG]` of the adaptive policy by forward dynamic programming over
/// the set of full bins.
pub fn exact_value_adaptive(inst: &Instance, parts: &IntervalPartitions, mode: DummyMode) -> Result<f64> {
    let nz = inst.num_bins();
    if nz > MAX_DP_BINS {
        return Err(Error::CapExceeded {
            what: "DP state space (bins)",
            size: nz as u128,
            cap: MAX_DP_BINS as u128,
        });
    }
    let b = inst.horizon() as f64;
    // (weight, first bin, second bin, dummy-first drops)
    let mut branches: Vec<(f64, Option<usize>, Option<usize>, bool)> = Vec::new();
    for (y, t) in inst.types().iter().enumerate() {
        let bin = |s: Slot| match s {
            Slot::Neighbor(k) => Some(t.neighbors[k]),
            Slot::Dummy => None,
        };
        for ((first, second), p) in parts.types[y].pair_distribution() {
            let drops = first == Slot::Dummy && mode == DummyMode::AlwaysEmpty;
            branches.push((t.rate / b * p, bin(first), bin(second), drops));
        }
    }
    let states = 1usize << nz;
    let mut dist = vec![0.0; states];
    let mut next = vec![0.0; states];
    dist[0] = 1.0;
    for _ in 0..inst.horizon() {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (s, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let is_open = |z: Option<usize>| z.filter(|&z| s & (1 << z) == 0);
            for &(w, first, second, drops) in &branches {
                let target = if drops { None } else { is_open(first).or_else(|| is_open(second)) };
                let t = target.map_or(s, |z| s | (1 << z));
                next[t] += p * w;
            }
        }
        std::mem::swap(&mut dist, &mut next);
    }
    Ok(dist
        .iter()
        .enumerate()
        .map(|(s, &p)| p * s.count_ones() as f64)
        .sum())
}

fn pow_nonneg(base: f64, exp: usize) -> f64 {
    if exp == 0 {
        1.0
    } else if base <= 0.0 {
        0.0
    } else {
        (exp as f64 * base.ln()).exp()
    }
}

/// Probability that a bin ends up full under the two-matching policy, given
/// the rates of the types it is assigned to in the first and second matching.
/// `same` marks the case where both matchings assign it to the same type.
pub fn bin_fill_probability(first: Option<f64>, second: Option<f64>, same: bool, horizon: usize) -> f64 {
    let b = horizon as f64;
    match (first, second) {
        (None, None) => 0.0,
        (Some(r), None) => 1.0 - pow_nonneg(1.0 - r / b, horizon),
        (Some(r), Some(_)) if same => 1.0 - pow_nonneg(1.0 - r / b, horizon),
        (None, Some(r)) => {
            let p = r / b;
            1.0 - pow_nonneg(1.0 - p, horizon) - b * p * pow_nonneg(1.0 - p, horizon - 1)
        }
        (Some(r1), Some(r2)) => {
            let (p, q) = (r1 / b, r2 / b);
            let rest = (1.0 - p - q).max(0.0);
            1.0 - pow_nonneg(rest, horizon) - b * q * pow_nonneg(rest, horizon - 1)
        }
    }
}

/// Exact `E[ALG]` of the two-matching policy.
///
/// The two matchings are independent draws from `μ`, so each bin's fill
/// probability depends only on the per-bin assignment marginals of `μ`.
pub fn exact_value_nonadaptive(inst: &Instance, mu: &MatchingDistribution) -> f64 {
    let nz = inst.num_bins();
    // per bin: (type, probability) of being assigned in one matching
    let mut assign: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nz];
    for (e, m) in mu.marginals(inst).into_iter().enumerate() {
        if m > 0.0 {
            let (y, z) = inst.edges().nth(e).unwrap();
            assign[z].push((y, m));
        }
    }
    let b = inst.horizon();
    let mut total = 0.0;
    for list in &assign {
        let empty = (1.0 - list.iter().map(|x| x.1).sum::<f64>()).max(0.0);
        for &(y1, p1) in list {
            let r1 = inst.rate(y1);
            total += p1 * empty * bin_fill_probability(Some(r1), None, false, b);
            total += empty * p1 * bin_fill_probability(None, Some(r1), false, b);
            for &(y2, p2) in list {
                total += p1 * p2 * bin_fill_probability(Some(r1), Some(inst.rate(y2)), y1 == y2, b);
            }
        }
    }
    total
}

/// The same expectation summed explicitly over all ordered atom pairs.
pub fn exact_value_nonadaptive_by_pairs(inst: &Instance, mu: &MatchingDistribution, cap: usize) -> Result<f64> {
    let k = mu.atoms().len();
    if k.saturating_mul(k) > cap {
        return Err(Error::CapExceeded {
            what: "atom pairs",
            size: (k * k) as u128,
            cap: cap as u128,
        });
    }
    let nz = inst.num_bins();
    let owner = |pairs: &[(usize, usize)]| {
        let mut v = vec![None; nz];
        for &(y, z) in pairs {
            v[z] = Some(y);
        }
        v
    };
    let owners: Vec<Vec<Option<usize>>> = mu.atoms().iter().map(|a| owner(&a.matching.pairs)).collect();
    let b = inst.horizon();
    let mut total = 0.0;
    for (a1, o1) in mu.atoms().iter().zip(&owners) {
        for (a2, o2) in mu.atoms().iter().zip(&owners) {
            let w = a1.weight * a2.weight;
            for z in 0..nz {
                let same = o1[z].is_some() && o1[z] == o2[z];
                total += w * bin_fill_probability(o1[z].map(|y| inst.rate(y)), o2[z].map(|y| inst.rate(y)), same, b);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::decompose;
    use crate::instance::{normalize_instance, BallTypeFile, InstanceFile};
    use crate::matching::Matching;
    use crate::offline_stats::{exact_f, FractionalMatching, Metadata, Source};
    use crate::policies::build_partitions;

    fn inst(bins: &[&str], types: &[(&str, f64, &[&str])], horizon: usize) -> Instance {
        normalize_instance(InstanceFile {
            bins: bins.iter().map(|s| s.to_string()).collect(),
            ball_types: types
                .iter()
                .map(|(id, r, nb)| BallTypeFile {
                    id: id.to_string(),
                    rate: *r,
                    neighbors: nb.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
            horizon: Some(horizon),
        })
        .unwrap()
    }

    fn fm(i: &Instance, v: Vec<f64>) -> FractionalMatching {
        FractionalMatching::from_values(
            i,
            v,
            Metadata {
                source: Source::File,
                samples: 0,
                seed: 0,
                stderr: vec![],
                opt_mean: None,
            },
        )
    }

    #[test]
    fn adaptive_dp_trivial() {
        let i = inst(&["z"], &[("y", 1.0, &["z"])], 1);
        let parts = build_partitions(&i, &fm(&i, vec![1.0])).unwrap();
        assert_eq!(exact_value_adaptive(&i, &parts, DummyMode::AlwaysFull).unwrap(), 1.0);
    }

    #[test]
    fn adaptive_dp_two_by_two() {
        let i = inst(&["z1", "z2"], &[("a", 1.0, &["z1", "z2"]), ("b", 1.0, &["z1", "z2"])], 2);
        let parts = build_partitions(&i, &fm(&i, vec![0.5; 4])).unwrap();
        let v = exact_value_adaptive(&i, &parts, DummyMode::AlwaysFull).unwrap();
        assert!((v - 2.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn dp_cap() {
        let bins: Vec<String> = (0..15).map(|j| format!("z{j}")).collect();
        let refs: Vec<&str> = bins.iter().map(|s| s.as_str()).collect();
        let i = inst(&refs, &[("y", 1.0, &["z0"])], 1);
        let parts = build_partitions(&i, &fm(&i, vec![1.0])).unwrap();
        assert!(exact_value_adaptive(&i, &parts, DummyMode::AlwaysFull).is_err());
    }

    #[test]
    fn case_table_limits() {
        let b = 1_000_000;
        let e = std::f64::consts::E;
        let cases = [
            (bin_fill_probability(None, None, false, b), 0.0),
            (bin_fill_probability(Some(1.0), None, false, b), 1.0 - 1.0 / e),
            (bin_fill_probability(Some(1.0), Some(1.0), true, b), 1.0 - 1.0 / e),
            (bin_fill_probability(None, Some(1.0), false, b), 1.0 - 2.0 / e),
            (bin_fill_probability(Some(1.0), Some(1.0), false, b), 1.0 - 2.0 / (e * e)),
        ];
        for (got, want) in cases {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        // p + q = 1 with b = 2 must not produce NaN
        let v = bin_fill_probability(Some(1.0), Some(1.0), false, 2);
        assert!((v - 1.0).abs() < 1e-15, "{v}");
    }

    #[test]
    fn nonadaptive_point_mass() {
        let i = inst(&["z"], &[("y", 1.0, &["z"])], 1);
        let mu = MatchingDistribution::point_mass(Matching::new(vec![(0, 0)]));
        assert!((exact_value_nonadaptive(&i, &mu) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn factorized_equals_pairwise() {
        let i = crate::instance::generate_random_instance(4, 3, 2, crate::instance::RateMode::Fractional, 8).unwrap();
        let f = exact_f(&i).unwrap();
        let mu = decompose(&i, &f).unwrap();
        let a = exact_value_nonadaptive(&i, &mu);
        let b = exact_value_nonadaptive_by_pairs(&i, &mu, 1 << 20).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        assert!(exact_value_nonadaptive_by_pairs(&i, &mu, 1).is_err());
    }

    #[test]
    fn bootstrap_edge_cases() {
        let rows: Vec<TrialRow> = (0..10)
            .map(|t| TrialRow {
                trial: t,
                matched: 3,
                opt: 3,
                seed: 0,
            })
            .collect();
        assert_eq!(bootstrap_ci(&rows, 500, 1).unwrap(), (1.0, 1.0));
        assert!(bootstrap_ci(&rows[..1], 500, 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = [TrialRow {
            trial: 0,
            matched: 2,
            opt: 3,
            seed: 99,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, "greedy", &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "trial,policy,matched,opt,seed\n0,greedy,2,3,99\n");
    }
}
