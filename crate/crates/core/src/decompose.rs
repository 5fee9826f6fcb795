//! Convex decomposition of a fractional matching into matchings.
//!
//! The bipartite matching polytope is padded into a doubly stochastic system:
//! every real node gets a dummy partner carrying its slack `W − g_v`, and the
//! dummy copies are joined by a mirror of the real edge set. A perfect
//! matching of the padded support restricts to a real matching that covers
//! every tight node (one whose slack is zero). Each round peels off such a
//! matching with the largest feasible weight, which zeroes an edge or makes a
//! node tight; the number of atoms is therefore at most `|E| + |Y| + |Z| + 1`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::instance::Instance;
use crate::matching::{hopcroft_karp_with, MatchState, Matching};
use crate::offline_stats::{FractionalMatching, POLYTOPE_TOL};
use crate::{Error, Result};

/// Residuals at or below this are cleared.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    /// Pairs `(type, bin)`.
    pub matching: Matching,
    pub weight: f64,
}

/// A probability distribution over matchings of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingDistribution {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

impl MatchingDistribution {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("atoms", "distribution is empty"));
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            if !(a.weight > 0.0 && a.weight <= 1.0 + POLYTOPE_TOL) {
                return Err(Error::invalid("atoms.weight", format!("{} is outside (0, 1]", a.weight)));
            }
            acc += a.weight;
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("atoms.weight", format!("weights sum to {acc}")));
        }
        Ok(MatchingDistribution { atoms, cumulative })
    }

    pub fn point_mass(matching: Matching) -> Self {
        MatchingDistribution::new(vec![Atom {
            matching,
            weight: 1.0,
        }])
        .expect("unit point mass")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Probability that each instance edge belongs to the sampled matching.
    pub fn marginals(&self, inst: &Instance) -> Vec<f64> {
        let mut m = vec![0.0; inst.num_edges()];
        for a in &self.atoms {
            for &(y, z) in &a.matching.pairs {
                m[inst.find_edge(y, z).expect("atom edge exists")] += a.weight;
            }
        }
        m
    }

    /// Checks every atom is a matching of `inst`.
    pub fn validate(&self, inst: &Instance) -> Result<()> {
        for (i, a) in self.atoms.iter().enumerate() {
            let ok = a.matching.is_valid(|y, z| {
                y < inst.num_types() && inst.find_edge(y, z).is_some()
            });
            if !ok {
                return Err(Error::invalid(format!("atoms[{i}]"), "not a matching of the instance"));
            }
        }
        Ok(())
    }

    pub fn to_file(&self, inst: &Instance) -> DistributionFile {
        DistributionFile {
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomFile {
                    weight: a.weight,
                    edges: a
                        .matching
                        .pairs
                        .iter()
                        .map(|&(y, z)| (inst.types()[y].id.clone(), inst.bins()[z].clone()))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self, inst: &Instance) -> String {
        serde_json::to_string_pretty(&self.to_file(inst)).expect("distribution serializes")
    }

    pub fn from_file(inst: &Instance, file: &DistributionFile) -> Result<Self> {
        let mut atoms = Vec::with_capacity(file.atoms.len());
        for a in &file.atoms {
            let mut pairs = Vec::with_capacity(a.edges.len());
            for (y, z) in &a.edges {
                let yi = inst
                    .type_index(y)
                    .ok_or_else(|| Error::invalid("atoms.edges", format!("unknown type {y}")))?;
                let zi = inst
                    .bin_index(z)
                    .ok_or_else(|| Error::invalid("atoms.edges", format!("unknown bin {z}")))?;
                pairs.push((yi, zi));
            }
            atoms.push(Atom {
                matching: Matching::new(pairs),
                weight: a.weight,
            });
        }
        let mu = MatchingDistribution::new(atoms)?;
        mu.validate(inst)?;
        Ok(mu)
    }

    pub fn load(inst: &Instance, path: impl AsRef<Path>) -> Result<Self> {
        let file: DistributionFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        MatchingDistribution::from_file(inst, &file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub atoms: Vec<AtomFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomFile {
    pub weight: f64,
    pub edges: Vec<(String, String)>,
}

/// Draws an atom with probability equal to its weight.
pub fn sample_matching<'a, R: Rng + ?Sized>(mu: &'a MatchingDistribution, rng: &mut R) -> &'a Matching {
    let total = *mu.cumulative.last().unwrap();
    let u = rng.gen::<f64>() * total;
    let i = mu.cumulative.partition_point(|&c| c <= u).min(mu.atoms.len() - 1);
    &mu.atoms[i].matching
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Real(usize),
    TypeSlack(usize),
    BinSlack(usize),
    Mirror(usize),
}

/// Writes `f` as an explicit convex combination of matchings.
pub fn decompose(inst: &Instance, f: &FractionalMatching) -> Result<MatchingDistribution> {
    let ny = inst.num_types();
    let nz = inst.num_bins();
    for e in 0..inst.num_edges() {
        if f.edge(e) < -POLYTOPE_TOL {
            return Err(Error::invalid("f", format!("edge {e} is negative")));
        }
    }
    for y in 0..ny {
        if f.type_marginal(y) > 1.0 + POLYTOPE_TOL {
            return Err(Error::invalid(
                format!("f_y[{}]", inst.types()[y].id),
                "outside the matching polytope; repair the estimate first",
            ));
        }
    }
    for z in 0..nz {
        if f.bin_marginal(z) > 1.0 + POLYTOPE_TOL {
            return Err(Error::invalid(
                format!("f_z[{}]", inst.bins()[z]),
                "outside the matching polytope; repair the estimate first",
            ));
        }
    }

    let edges: Vec<(usize, usize)> = inst.edges().collect();
    let mut g: Vec<f64> = f.values().iter().map(|&v| if v <= ZERO_TOL { 0.0 } else { v }).collect();
    let mut gy: Vec<f64> = (0..ny).map(|y| f.type_marginal(y)).collect();
    let mut gz: Vec<f64> = (0..nz).map(|z| f.bin_marginal(z)).collect();
    let mut mass = 1.0;
    let mut tight_y: Vec<bool> = gy.iter().map(|&v| mass - v <= ZERO_TOL).collect();
    let mut tight_z: Vec<bool> = gz.iter().map(|&v| mass - v <= ZERO_TOL).collect();

    // Padded graph. Left: types 0..ny, then bin dummies ny..ny+nz.
    // Right: bins 0..nz, then type dummies nz..nz+ny.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); ny + nz];
    let mut slots: Vec<Vec<Slot>> = vec![Vec::new(); ny + nz];
    for (e, &(y, z)) in edges.iter().enumerate() {
        adj[y].push(z);
        slots[y].push(Slot::Real(e));
    }
    for y in 0..ny {
        adj[y].push(nz + y);
        slots[y].push(Slot::TypeSlack(y));
    }
    for z in 0..nz {
        adj[ny + z].push(z);
        slots[ny + z].push(Slot::BinSlack(z));
    }
    for (e, &(y, z)) in edges.iter().enumerate() {
        adj[ny + z].push(nz + y);
        slots[ny + z].push(Slot::Mirror(e));
    }
    // slot of the pair currently matched at each left node
    let mut matched_slot: Vec<Option<Slot>> = vec![None; ny + nz];

    let mut state = MatchState::empty(ny + nz, nz + ny);
    let mut raw_atoms: Vec<(Matching, f64)> = Vec::new();
    let max_rounds = inst.num_edges() + ny + nz + 1;

    while mass > ZERO_TOL {
        if raw_atoms.len() >= max_rounds {
            return Err(Error::invalid("decompose", "did not terminate within the atom bound"));
        }
        let slot_alive = |s: Slot, g: &[f64], ty: &[bool], tz: &[bool]| match s {
            Slot::Real(e) | Slot::Mirror(e) => g[e] > 0.0,
            Slot::TypeSlack(y) => !ty[y],
            Slot::BinSlack(z) => !tz[z],
        };
        for l in 0..ny + nz {
            if let Some(s) = matched_slot[l] {
                if !slot_alive(s, &g, &tight_y, &tight_z) {
                    state.unmatch_left(l);
                    matched_slot[l] = None;
                }
            }
        }
        hopcroft_karp_with(&adj, &mut state, |l, k| {
            slot_alive(slots[l][k], &g, &tight_y, &tight_z)
        });
        if state.size() != ny + nz {
            return Err(Error::invalid(
                "decompose",
                "padded support has no perfect matching; input is outside the polytope",
            ));
        }
        for l in 0..ny + nz {
            let r = state.left[l].unwrap();
            let k = adj[l]
                .iter()
                .enumerate()
                .position(|(k, &rr)| rr == r && slot_alive(slots[l][k], &g, &tight_y, &tight_z))
                .expect("matched pair is alive");
            matched_slot[l] = Some(slots[l][k]);
        }

        let mut real: Vec<usize> = Vec::new();
        let mut step = mass;
        for y in 0..ny {
            match matched_slot[y] {
                Some(Slot::Real(e)) => {
                    real.push(e);
                    step = step.min(g[e]);
                }
                _ => step = step.min(mass - gy[y]),
            }
        }
        for z in 0..nz {
            if let Some(Slot::BinSlack(_)) = matched_slot[ny + z] {
                step = step.min(mass - gz[z]);
            }
        }
        let step = step.max(0.0);

        mass -= step;
        for &e in &real {
            let (y, z) = edges[e];
            g[e] -= step;
            gy[y] -= step;
            gz[z] -= step;
            if g[e] <= ZERO_TOL {
                g[e] = 0.0;
            }
        }
        for y in 0..ny {
            if mass - gy[y] <= ZERO_TOL {
                tight_y[y] = true;
            }
        }
        for z in 0..nz {
            if mass - gz[z] <= ZERO_TOL {
                tight_z[z] = true;
            }
        }
        if step > 0.0 {
            raw_atoms.push((Matching::new(real.iter().map(|&e| edges[e]).collect()), step));
        }
    }

    let mut index: HashMap<Matching, usize> = HashMap::new();
    let mut atoms: Vec<Atom> = Vec::new();
    for (m, w) in raw_atoms {
        match index.get(&m) {
            Some(&i) => atoms[i].weight += w,
            None => {
                index.insert(m.clone(), atoms.len());
                atoms.push(Atom { matching: m, weight: w });
            }
        }
    }
    MatchingDistribution::new(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{normalize_instance, BallTypeFile, InstanceFile};
    use crate::offline_stats::{Metadata, Source};
    use crate::rng::from_seed;

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

    fn weight_of(mu: &MatchingDistribution, pairs: &[(usize, usize)]) -> f64 {
        let m = Matching::new(pairs.to_vec());
        mu.atoms().iter().filter(|a| a.matching == m).map(|a| a.weight).sum()
    }

    #[test]
    fn star_decomposes_into_singletons() {
        let i = inst(&["z1", "z2", "z3"], &[("y", 1.0, &["z1", "z2", "z3"])], 1);
        let mu = decompose(&i, &fm(&i, vec![0.5, 0.2, 0.2])).unwrap();
        assert!((weight_of(&mu, &[(0, 0)]) - 0.5).abs() < 1e-12);
        assert!((weight_of(&mu, &[(0, 1)]) - 0.2).abs() < 1e-12);
        assert!((weight_of(&mu, &[(0, 2)]) - 0.2).abs() < 1e-12);
        assert!((weight_of(&mu, &[]) - 0.1).abs() < 1e-12);
        assert_eq!(mu.atoms().len(), 4);
    }

    #[test]
    fn two_by_two_uniform() {
        let i = inst(
            &["z1", "z2"],
            &[("a", 1.0, &["z1", "z2"]), ("b", 1.0, &["z1", "z2"])],
            2,
        );
        let mu = decompose(&i, &fm(&i, vec![0.5; 4])).unwrap();
        assert_eq!(mu.atoms().len(), 2);
        assert!((weight_of(&mu, &[(0, 0), (1, 1)]) - 0.5).abs() < 1e-12);
        assert!((weight_of(&mu, &[(0, 1), (1, 0)]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_edge() {
        let i = inst(&["z"], &[("y", 1.0, &["z"])], 1);
        let mu = decompose(&i, &fm(&i, vec![0.3])).unwrap();
        assert!((weight_of(&mu, &[(0, 0)]) - 0.3).abs() < 1e-12);
        assert!((weight_of(&mu, &[]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn outside_polytope_is_rejected() {
        let i = inst(&["z"], &[("a", 1.0, &["z"]), ("b", 1.0, &["z"])], 2);
        assert!(decompose(&i, &fm(&i, vec![0.7, 0.6])).is_err());
    }

    #[test]
    fn sampling_frequencies() {
        let i = inst(&["z"], &[("y", 1.0, &["z"])], 1);
        let mu = decompose(&i, &fm(&i, vec![0.3])).unwrap();
        let mut rng = from_seed(17);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| !sample_matching(&mu, &mut rng).is_empty()).count();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 0.002);

        let point = MatchingDistribution::point_mass(Matching::new(vec![(0, 0)]));
        assert_eq!(sample_matching(&point, &mut rng).pairs, vec![(0, 0)]);
    }

    #[test]
    fn file_round_trip() {
        let i = inst(&["z1", "z2", "z3"], &[("y", 1.0, &["z1", "z2", "z3"])], 1);
        let mu = decompose(&i, &fm(&i, vec![0.5, 0.2, 0.2])).unwrap();
        let file: DistributionFile = serde_json::from_str(&mu.to_json(&i)).unwrap();
        assert_eq!(MatchingDistribution::from_file(&i, &file).unwrap(), mu);
    }
}
