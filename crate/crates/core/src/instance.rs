//! Problem instances: ball types with arrival rates over a set of bins.
//!
//! Rates are normalized so they sum to the horizon `b`; each of the `b`
//! arrivals is then of type `y` with probability `rate_y / b`, independently.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Tolerance on `Σ rate = horizon` for a validated instance.
pub const RATE_SUM_TOL: f64 = 1e-9;

/// A file whose rates miss the horizon by more than this relative amount is rejected.
pub const LOAD_RELATIVE_TOL: f64 = 1e-6;

/// Largest accepted deviation of the rescale factor from 1 in [`normalize_instance`].
pub const MAX_RESCALE_DEVIATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct BallType {
    pub id: String,
    pub rate: f64,
    /// Bin indices, in instance order of this type's adjacency.
    pub neighbors: Vec<usize>,
}

/// A validated instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    bins: Vec<String>,
    types: Vec<BallType>,
    horizon: usize,
    edge_offsets: Vec<usize>,
}

/// On-disk form. Also the input of [`normalize_instance`], where rates may be
/// arbitrary positive reals and the horizon may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub bins: Vec<String>,
    pub ball_types: Vec<BallTypeFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallTypeFile {
    pub id: String,
    pub rate: f64,
    pub neighbors: Vec<String>,
}

impl Instance {
    /// Builds an instance and checks every invariant: known, duplicate-free
    /// neighbors, rates in `(0, 1]`, and `Σ rate = horizon`.
    pub fn new(bins: Vec<String>, types: Vec<BallType>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        check_unique(&bins, "bins")?;
        check_unique(
            &types.iter().map(|t| t.id.clone()).collect::<Vec<_>>(),
            "ball_types.id",
        )?;
        let mut sum = 0.0;
        for t in &types {
            if !(t.rate.is_finite() && t.rate > 0.0 && t.rate <= 1.0 + RATE_SUM_TOL) {
                return Err(Error::invalid(
                    format!("ball_types[{}].rate", t.id),
                    format!("{} is outside (0, 1]", t.rate),
                ));
            }
            let mut seen = HashSet::new();
            for &z in &t.neighbors {
                if z >= bins.len() {
                    return Err(Error::invalid(
                        format!("ball_types[{}].neighbors", t.id),
                        format!("bin index {z} out of range"),
                    ));
                }
                if !seen.insert(z) {
                    return Err(Error::invalid(
                        format!("ball_types[{}].neighbors", t.id),
                        format!("duplicate neighbor {}", bins[z]),
                    ));
                }
            }
            sum += t.rate;
        }
        if (sum - horizon as f64).abs() > RATE_SUM_TOL {
            return Err(Error::RateSum { sum, horizon });
        }
        let mut edge_offsets = Vec::with_capacity(types.len() + 1);
        let mut acc = 0;
        for t in &types {
            edge_offsets.push(acc);
            acc += t.neighbors.len();
        }
        edge_offsets.push(acc);
        Ok(Instance {
            bins,
            types,
            horizon,
            edge_offsets,
        })
    }

    pub fn bins(&self) -> &[String] {
        &self.bins
    }

    pub fn types(&self) -> &[BallType] {
        &self.types
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rate(&self, y: usize) -> f64 {
        self.types[y].rate
    }

    pub fn neighbors(&self, y: usize) -> &[usize] {
        &self.types[y].neighbors
    }

    pub fn num_edges(&self) -> usize {
        *self.edge_offsets.last().unwrap()
    }

    /// Index of the edge joining type `y` to its `k`-th neighbor.
    pub fn edge_index(&self, y: usize, k: usize) -> usize {
        debug_assert!(k < self.types[y].neighbors.len());
        self.edge_offsets[y] + k
    }

    /// Index of edge `(y, z)`, if it exists.
    pub fn find_edge(&self, y: usize, z: usize) -> Option<usize> {
        self.types[y]
            .neighbors
            .iter()
            .position(|&w| w == z)
            .map(|k| self.edge_offsets[y] + k)
    }

    /// Edge index range of type `y`.
    pub fn edge_range(&self, y: usize) -> std::ops::Range<usize> {
        self.edge_offsets[y]..self.edge_offsets[y + 1]
    }

    /// All edges as `(type, bin)` in index order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.types
            .iter()
            .enumerate()
            .flat_map(|(y, t)| t.neighbors.iter().map(move |&z| (y, z)))
    }

    pub fn bin_index(&self, id: &str) -> Option<usize> {
        self.bins.iter().position(|b| b == id)
    }

    pub fn type_index(&self, id: &str) -> Option<usize> {
        self.types.iter().position(|t| t.id == id)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            bins: self.bins.clone(),
            ball_types: self
                .types
                .iter()
                .map(|t| BallTypeFile {
                    id: t.id.clone(),
                    rate: t.rate,
                    neighbors: t.neighbors.iter().map(|&z| self.bins[z].clone()).collect(),
                })
                .collect(),
            horizon: Some(self.horizon),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Instance::from_file(file)
    }

    /// Validates a parsed file. A stated horizon must match the rate sum up to
    /// [`LOAD_RELATIVE_TOL`]; the residual float drift is removed by rescaling.
    /// Without a horizon, or with rates above 1, the file goes through
    /// [`normalize_instance`].
    pub fn from_file(file: InstanceFile) -> Result<Self> {
        if let Some(h) = file.horizon {
            let sum: f64 = file.ball_types.iter().map(|t| t.rate).sum();
            if h == 0 || ((sum - h as f64) / h as f64).abs() > LOAD_RELATIVE_TOL {
                return Err(Error::RateSum { sum, horizon: h });
            }
        }
        normalize_instance(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

fn check_unique(ids: &[String], field: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(field, format!("duplicate id {id}")));
        }
    }
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let text = fs::read_to_string(path)?;
    Instance::from_json(&text)
}

/// Brings arbitrary positive rates into canonical form.
///
/// Rates are first rescaled uniformly so they sum to the horizon (which
/// defaults to the rounded rate sum), then every type with rate above 1 is
/// split into `⌈rate⌉` copies sharing its neighbors: all but the last at rate
/// 1, the last carrying the remainder. Copies are named `id#1`, `id#2`, ...
pub fn normalize_instance(raw: InstanceFile) -> Result<Instance> {
    let bins = raw.bins;
    for t in &raw.ball_types {
        if !(t.rate.is_finite() && t.rate > 0.0) {
            return Err(Error::invalid(
                format!("ball_types[{}].rate", t.id),
                format!("{} is not a positive real", t.rate),
            ));
        }
    }
    let sum: f64 = raw.ball_types.iter().map(|t| t.rate).sum();
    let horizon = match raw.horizon {
        Some(h) => h,
        None => sum.round() as usize,
    };
    if horizon == 0 {
        return Err(Error::RateSum { sum, horizon });
    }
    let scale = horizon as f64 / sum;
    let already_normalized = (sum - horizon as f64).abs() <= RATE_SUM_TOL;
    if (scale - 1.0).abs() > MAX_RESCALE_DEVIATION {
        return Err(Error::RateSum { sum, horizon });
    }

    let mut types = Vec::with_capacity(raw.ball_types.len());
    for t in raw.ball_types {
        let neighbors = t
            .neighbors
            .iter()
            .map(|id| {
                bins.iter().position(|b| b == id).ok_or_else(|| {
                    Error::invalid(
                        format!("ball_types[{}].neighbors", t.id),
                        format!("unknown bin {id}"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rate = if already_normalized { t.rate } else { t.rate * scale };
        if rate <= 1.0 + RATE_SUM_TOL {
            types.push(BallType {
                id: t.id,
                rate: rate.min(1.0),
                neighbors,
            });
        } else {
            let copies = rate.ceil() as usize;
            for c in 0..copies {
                let r = if c + 1 < copies {
                    1.0
                } else {
                    rate - (copies - 1) as f64
                };
                types.push(BallType {
                    id: format!("{}#{}", t.id, c + 1),
                    rate: r,
                    neighbors: neighbors.clone(),
                });
            }
        }
    }
    Instance::new(bins, types, horizon)
}

/// Realized draw of the `b` arrivals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalSequence {
    pub draws: Vec<usize>,
    /// `counts[y]` is the number of type-`y` balls in `draws`.
    pub counts: Vec<usize>,
}

impl ArrivalSequence {
    pub fn from_draws(draws: Vec<usize>, num_types: usize) -> Self {
        let mut counts = vec![0; num_types];
        for &y in &draws {
            counts[y] += 1;
        }
        ArrivalSequence { draws, counts }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Reusable sampler for the i.i.d. arrival process of one instance.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    dist: WeightedIndex<f64>,
    horizon: usize,
    num_types: usize,
}

impl ArrivalSampler {
    pub fn new(inst: &Instance) -> Self {
        ArrivalSampler {
            dist: WeightedIndex::new(inst.types().iter().map(|t| t.rate))
                .expect("validated rates are positive"),
            horizon: inst.horizon(),
            num_types: inst.num_types(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ArrivalSequence {
        let draws = (0..self.horizon).map(|_| self.dist.sample(rng)).collect();
        ArrivalSequence::from_draws(draws, self.num_types)
    }
}

pub fn sample_arrivals<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> ArrivalSequence {
    ArrivalSampler::new(inst).sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    /// Every rate is 1, so the horizon equals the number of types.
    Integral,
    /// Rates uniform in `(0, 1]`, then normalized.
    Fractional,
}

impl std::str::FromStr for RateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integral" => Ok(RateMode::Integral),
            "fractional" => Ok(RateMode::Fractional),
            _ => Err(Error::invalid("rate_mode", format!("unknown mode {s}"))),
        }
    }
}

/// Random bipartite instance: every type gets `degree` distinct neighbors
/// drawn uniformly from `num_bins` bins (listed in ascending bin order).
/// Fractional rates are scaled to sum to the nearest integer horizon.
pub fn generate_random_instance(
    num_types: usize,
    num_bins: usize,
    degree: usize,
    mode: RateMode,
    seed: u64,
) -> Result<Instance> {
    if num_types == 0 || num_bins == 0 || degree == 0 {
        return Err(Error::invalid("generator", "sizes must be at least 1"));
    }
    if degree > num_bins {
        return Err(Error::invalid(
            "degree",
            format!("{degree} exceeds the number of bins {num_bins}"),
        ));
    }
    let mut rng = rng::stream(seed, Stream::Generator, 0);
    let bins: Vec<String> = (0..num_bins).map(|j| format!("z{j}")).collect();
    let mut ball_types = Vec::with_capacity(num_types);
    for i in 0..num_types {
        let mut nb = index::sample(&mut rng, num_bins, degree).into_vec();
        nb.sort_unstable();
        let rate = match mode {
            RateMode::Integral => 1.0,
            RateMode::Fractional => 1.0 - rng.gen::<f64>(),
        };
        ball_types.push(BallTypeFile {
            id: format!("y{i}"),
            rate,
            neighbors: nb.into_iter().map(|j| bins[j].clone()).collect(),
        });
    }
    let horizon = match mode {
        RateMode::Integral => Some(num_types),
        RateMode::Fractional => {
            let sum: f64 = ball_types.iter().map(|t| t.rate).sum();
            let h = sum.round().max(1.0);
            for t in &mut ball_types {
                t.rate *= h / sum;
            }
            Some(h as usize)
        }
    };
    normalize_instance(InstanceFile {
        bins,
        ball_types,
        horizon,
    })
}
