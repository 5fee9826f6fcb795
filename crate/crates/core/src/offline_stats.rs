//! The fractional matching `f` induced by OPT.
//!
//! `f_e` is the probability that the canonical offline optimum uses edge `e`.
//! It is computed exactly on tiny instances by enumerating every arrival
//! sequence, and estimated by Monte-Carlo otherwise.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instance::{ArrivalSampler, ArrivalSequence, Instance};
use crate::matching::opt_value;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Slack allowed on the marginal caps `f_y ≤ min(r_y, 1)` and `f_z ≤ 1`.
pub const POLYTOPE_TOL: f64 = 1e-9;

/// Default enumeration cap for [`exact_f`].
pub const DEFAULT_EXACT_CAP: u128 = 1_000_000;

/// Samples per estimation chunk. Each chunk draws from its own derived
/// stream, so the estimate does not depend on the thread count.
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Exact,
    MonteCarlo,
    File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub source: Source,
    pub samples: u64,
    pub seed: u64,
    /// Standard error per edge; zero for exact values.
    pub stderr: Vec<f64>,
    /// Mean OPT over the samples (exact expectation for [`Source::Exact`]).
    pub opt_mean: Option<f64>,
}

/// Per-edge values indexed like [`Instance::edges`], with node marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalMatching {
    values: Vec<f64>,
    type_marginals: Vec<f64>,
    bin_marginals: Vec<f64>,
    pub meta: Metadata,
}

impl FractionalMatching {
    /// Wraps raw edge values without checking the polytope constraints.
    pub fn from_values(inst: &Instance, values: Vec<f64>, meta: Metadata) -> Self {
        assert_eq!(values.len(), inst.num_edges());
        let mut type_marginals = vec![0.0; inst.num_types()];
        let mut bin_marginals = vec![0.0; inst.num_bins()];
        for (e, (y, z)) in inst.edges().enumerate() {
            type_marginals[y] += values[e];
            bin_marginals[z] += values[e];
        }
        FractionalMatching {
            values,
            type_marginals,
            bin_marginals,
            meta,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn edge(&self, e: usize) -> f64 {
        self.values[e]
    }

    /// `f_y`
    pub fn type_marginal(&self, y: usize) -> f64 {
        self.type_marginals[y]
    }

    /// `f_z`
    pub fn bin_marginal(&self, z: usize) -> f64 {
        self.bin_marginals[z]
    }

    pub fn bin_marginals(&self) -> &[f64] {
        &self.bin_marginals
    }

    /// `Σ_e f_e`, the expected OPT size.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Checks `f_e ≥ 0`, `f_y ≤ min(r_y, 1)` and `f_z ≤ 1`, each up to `tol`.
    pub fn check_polytope(&self, inst: &Instance, tol: f64) -> Result<()> {
        let edges: Vec<(usize, usize)> = inst.edges().collect();
        for (e, &v) in self.values.iter().enumerate() {
            if !(v.is_finite() && v >= -tol) {
                let (y, z) = edges[e];
                return Err(Error::invalid(
                    format!("f[{},{}]", inst.types()[y].id, inst.bins()[z]),
                    format!("{v} is negative"),
                ));
            }
        }
        for (y, &fy) in self.type_marginals.iter().enumerate() {
            let cap = inst.rate(y).min(1.0);
            if fy > cap + tol {
                return Err(Error::invalid(
                    format!("f_y[{}]", inst.types()[y].id),
                    format!("{fy} exceeds min(r_y, 1) = {cap}"),
                ));
            }
        }
        for (z, &fz) in self.bin_marginals.iter().enumerate() {
            if fz > 1.0 + tol {
                return Err(Error::invalid(
                    format!("f_z[{}]", inst.bins()[z]),
                    format!("{fz} exceeds 1"),
                ));
            }
        }
        Ok(())
    }

    /// Asymptotic per-edge cap `f_e ≤ 1 − e^{−r_y}` (holds up to o(1/b)).
    /// Returns the largest violation, or 0.
    pub fn max_edge_cap_violation(&self, inst: &Instance) -> f64 {
        inst.edges()
            .enumerate()
            .map(|(e, (y, _))| self.values[e] - (1.0 - (-inst.rate(y)).exp()))
            .fold(0.0, f64::max)
    }

    pub fn to_file(&self, inst: &Instance) -> FractionalFile {
        FractionalFile {
            edges: inst
                .edges()
                .enumerate()
                .map(|(e, (y, z))| EdgeValue {
                    y: inst.types()[y].id.clone(),
                    z: inst.bins()[z].clone(),
                    f: self.values[e],
                    stderr: match self.meta.source {
                        Source::MonteCarlo => Some(self.meta.stderr[e]),
                        _ => None,
                    },
                })
                .collect(),
            meta: FileMeta {
                source: self.meta.source,
                samples: self.meta.samples,
                seed: self.meta.seed,
            },
        }
    }

    pub fn to_json(&self, inst: &Instance) -> String {
        serde_json::to_string_pretty(&self.to_file(inst)).expect("fractional matching serializes")
    }

    /// Reads values for `inst` from a file. Edges absent from the file are 0.
    pub fn from_file(inst: &Instance, file: &FractionalFile) -> Result<Self> {
        let mut values = vec![0.0; inst.num_edges()];
        let mut stderr = vec![0.0; inst.num_edges()];
        for ev in &file.edges {
            let y = inst
                .type_index(&ev.y)
                .ok_or_else(|| Error::invalid("edges.y", format!("unknown type {}", ev.y)))?;
            let z = inst
                .bin_index(&ev.z)
                .ok_or_else(|| Error::invalid("edges.z", format!("unknown bin {}", ev.z)))?;
            let e = inst.find_edge(y, z).ok_or_else(|| {
                Error::invalid("edges", format!("({}, {}) is not an edge", ev.y, ev.z))
            })?;
            values[e] = ev.f;
            stderr[e] = ev.stderr.unwrap_or(0.0);
        }
        let f = FractionalMatching::from_values(
            inst,
            values,
            Metadata {
                source: file.meta.source,
                samples: file.meta.samples,
                seed: file.meta.seed,
                stderr,
                opt_mean: None,
            },
        );
        f.check_polytope(inst, POLYTOPE_TOL)?;
        Ok(f)
    }

    pub fn load(inst: &Instance, path: impl AsRef<Path>) -> Result<Self> {
        let file: FractionalFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        FractionalMatching::from_file(inst, &file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalFile {
    pub edges: Vec<EdgeValue>,
    pub meta: FileMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeValue {
    pub y: String,
    pub z: String,
    pub f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMeta {
    pub source: Source,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct Accumulator {
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
    opt_sum: u64,
}

impl Accumulator {
    fn new(edges: usize) -> Self {
        Accumulator {
            sum: vec![0; edges],
            sum_sq: vec![0; edges],
            opt_sum: 0,
        }
    }

    fn merge(mut self, other: Accumulator) -> Self {
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(other.sum_sq) {
            *a += b;
        }
        self.opt_sum += other.opt_sum;
        self
    }
}

/// Monte-Carlo estimate of `f` from `samples` independent arrival sequences,
/// followed by [`repair_f`]. Deterministic given `seed`.
pub fn estimate_f(inst: &Instance, samples: u64, seed: u64) -> FractionalMatching {
    assert!(samples >= 1, "at least one sample is required");
    let sampler = ArrivalSampler::new(inst);
    let chunks = samples.div_ceil(CHUNK);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, Stream::Estimation, c);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut acc = Accumulator::new(inst.num_edges());
            for _ in 0..n {
                let seq = sampler.sample(&mut rng);
                let out = opt_value(inst, &seq);
                acc.opt_sum += out.size as u64;
                for (e, &c) in out.edge_counts.iter().enumerate() {
                    if c > 0 {
                        acc.sum[e] += c as u64;
                        acc.sum_sq[e] += (c as u64) * (c as u64);
                    }
                }
            }
            acc
        })
        .reduce(|| Accumulator::new(inst.num_edges()), Accumulator::merge);

    let n = samples as f64;
    let raw: Vec<f64> = acc.sum.iter().map(|&s| s as f64 / n).collect();
    let stderr = acc
        .sum
        .iter()
        .zip(&acc.sum_sq)
        .map(|(&s, &sq)| {
            if samples < 2 {
                return 0.0;
            }
            let mean = s as f64 / n;
            let var = ((sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    repair_f(
        raw,
        inst,
        Metadata {
            source: Source::MonteCarlo,
            samples,
            seed,
            stderr,
            opt_mean: Some(acc.opt_sum as f64 / n),
        },
    )
}

/// Exact `f = Σ_ω F(ω) P(ω)` by enumerating all `|Y|^b` sequences.
pub fn exact_f(inst: &Instance) -> Result<FractionalMatching> {
    exact_f_capped(inst, DEFAULT_EXACT_CAP)
}

pub fn exact_f_capped(inst: &Instance, cap: u128) -> Result<FractionalMatching> {
    let k = inst.num_types();
    let b = inst.horizon();
    let count = (k as u128).checked_pow(b as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::CapExceeded {
            what: "sequence enumeration",
            size: count,
            cap,
        });
    }
    let probs: Vec<f64> = inst.types().iter().map(|t| t.rate / b as f64).collect();
    let mut values = vec![0.0; inst.num_edges()];
    let mut opt_mean = 0.0;
    let mut digits = vec![0usize; b];
    loop {
        let p: f64 = digits.iter().map(|&y| probs[y]).product();
        let seq = ArrivalSequence::from_draws(digits.clone(), k);
        let out = opt_value(inst, &seq);
        opt_mean += p * out.size as f64;
        for (e, &c) in out.edge_counts.iter().enumerate() {
            values[e] += p * c as f64;
        }
        // odometer, last position fastest
        let mut i = b;
        loop {
            if i == 0 {
                let stderr = vec![0.0; inst.num_edges()];
                return Ok(FractionalMatching::from_values(
                    inst,
                    values,
                    Metadata {
                        source: Source::Exact,
                        samples: count as u64,
                        seed: 0,
                        stderr,
                        opt_mean: Some(opt_mean),
                    },
                ));
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < k {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Projects finite-sample noise back into the polytope: every type whose
/// marginal exceeds `min(r_y, 1)` has its edges scaled down proportionally.
pub fn repair_f(raw: Vec<f64>, inst: &Instance, meta: Metadata) -> FractionalMatching {
    let mut values = raw;
    for y in 0..inst.num_types() {
        let range = inst.edge_range(y);
        let fy: f64 = values[range.clone()].iter().sum();
        let cap = inst.rate(y).min(1.0);
        if fy > cap {
            let s = cap / fy;
            for v in &mut values[range] {
                *v *= s;
            }
        }
    }
    FractionalMatching::from_values(inst, values, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{normalize_instance, BallTypeFile, InstanceFile};

    pub(crate) fn inst(bins: &[&str], types: &[(&str, f64, &[&str])], horizon: usize) -> Instance {
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

    fn meta() -> Metadata {
        Metadata {
            source: Source::File,
            samples: 0,
            seed: 0,
            stderr: vec![],
            opt_mean: None,
        }
    }

    #[test]
    fn two_types_one_bin_exact() {
        let i = inst(&["z"], &[("y1", 1.0, &["z"]), ("y2", 1.0, &["z"])], 2);
        let f = exact_f(&i).unwrap();
        assert!((f.edge(0) - 0.5).abs() < 1e-15);
        assert!((f.edge(1) - 0.5).abs() < 1e-15);
        assert_eq!(f.meta.opt_mean, Some(1.0));
    }

    #[test]
    fn canonical_rule_prefers_first_bin() {
        let i = inst(&["z1", "z2"], &[("y", 1.0, &["z1", "z2"])], 1);
        let f = exact_f(&i).unwrap();
        assert_eq!(f.values(), &[1.0, 0.0]);
    }

    #[test]
    fn empty_edge_set_gives_zero() {
        let i = inst(&["z"], &[("y", 1.0, &[])], 1);
        let f = exact_f(&i).unwrap();
        assert!(f.values().is_empty());
        assert_eq!(f.bin_marginal(0), 0.0);
    }

    #[test]
    fn single_edge_estimate_is_exact() {
        let i = inst(&["z"], &[("y", 1.0, &["z"])], 1);
        let f = estimate_f(&i, 1000, 5);
        assert_eq!(f.values(), &[1.0]);
        assert_eq!(f.meta.stderr, vec![0.0]);
    }

    #[test]
    fn cap_is_enforced() {
        let i = inst(&["z"], &[("a", 1.0, &["z"]), ("b", 1.0, &["z"])], 2);
        assert!(matches!(
            exact_f_capped(&i, 3),
            Err(Error::CapExceeded { size: 4, .. })
        ));
    }

    #[test]
    fn repair_scales_overfull_types() {
        let i = inst(&["a", "b"], &[("y", 1.0, &["a", "b"])], 1);
        let f = repair_f(vec![0.3, 0.4], &i, meta());
        assert_eq!(f.values(), &[0.3, 0.4]);
        let f = repair_f(vec![0.7, 0.6], &i, meta());
        assert!((f.edge(0) - 0.7 / 1.3).abs() < 1e-15);
        assert!((f.edge(1) - 0.6 / 1.3).abs() < 1e-15);
        f.check_polytope(&i, 1e-12).unwrap();
    }

    #[test]
    fn estimate_total_matches_opt_mean() {
        let i = crate::instance::generate_random_instance(6, 4, 2, crate::instance::RateMode::Fractional, 11)
            .unwrap();
        let f = estimate_f(&i, 5000, 3);
        f.check_polytope(&i, POLYTOPE_TOL).unwrap();
        assert!(f.total() <= f.meta.opt_mean.unwrap() + 1e-9);
        // reproducible
        assert_eq!(f, estimate_f(&i, 5000, 3));
    }

    #[test]
    fn file_round_trip() {
        let i = inst(&["z"], &[("y1", 1.0, &["z"]), ("y2", 1.0, &["z"])], 2);
        let f = exact_f(&i).unwrap();
        let text = f.to_json(&i);
        let file: FractionalFile = serde_json::from_str(&text).unwrap();
        let g = FractionalMatching::from_file(&i, &file).unwrap();
        assert_eq!(g.values(), f.values());
        assert_eq!(g.meta.source, Source::Exact);
    }
}
