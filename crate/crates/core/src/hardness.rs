//! Instance families that bound every online policy from above, and the
//! recurrences that evaluate those bounds.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::instance::{normalize_instance, BallTypeFile, Instance, InstanceFile};
use crate::matching::RealizedGraph;
use crate::{Error, Result};

/// Threshold of the mixed 2/3-choice cuckoo hashing model.
pub const CUCKOO_C_STAR: f64 = 0.81034;

pub const SMALL_RATES_MAX_N: usize = 100;
pub const CUCKOO_MATERIALIZE_MAX_N: usize = 60;

fn bins(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("z{j}")).collect()
}

/// Complete bipartite `n² × n`, every rate `1/n`, horizon `n`.
pub fn gen_small_rates(n: usize) -> Result<Instance> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if n > SMALL_RATES_MAX_N {
        return Err(Error::CapExceeded {
            what: "small-rates family size",
            size: n as u128,
            cap: SMALL_RATES_MAX_N as u128,
        });
    }
    let bins = bins(n);
    let ball_types = (0..n * n)
        .map(|i| BallTypeFile {
            id: format!("y{i}"),
            rate: 1.0 / n as f64,
            neighbors: bins.clone(),
        })
        .collect();
    normalize_instance(InstanceFile {
        bins,
        ball_types,
        horizon: Some(n),
    })
}

/// Number of fully connected types in [`gen_integral_hard`]: `round(n/e)`.
pub fn integral_hard_extra(n: usize) -> usize {
    (n as f64 / std::f64::consts::E).round() as usize
}

/// `n` unit-rate types matched one-to-one to `n` bins (`a0..`), plus
/// `round(n/e)` unit-rate types adjacent to every bin (`c0..`).
pub fn gen_integral_hard(n: usize) -> Result<Instance> {
    if n < 3 {
        return Err(Error::invalid("n", "must be at least 3"));
    }
    let extra = integral_hard_extra(n);
    let bins = bins(n);
    let mut ball_types: Vec<BallTypeFile> = (0..n)
        .map(|i| BallTypeFile {
            id: format!("a{i}"),
            rate: 1.0,
            neighbors: vec![bins[i].clone()],
        })
        .collect();
    ball_types.extend((0..extra).map(|j| BallTypeFile {
        id: format!("c{j}"),
        rate: 1.0,
        neighbors: bins.clone(),
    }));
    normalize_instance(InstanceFile {
        bins,
        ball_types,
        horizon: Some(n + extra),
    })
}

fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Generalized binomial `x(x−1)…(x−k+1)/k!` for real `x`.
pub fn real_binomial(x: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (x - i as f64) / (i + 1) as f64)
}

/// Ball classes of the cuckoo family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum CuckooClass {
    Pair = 0,
    Triple = 1,
    Complete = 2,
}

/// Bins `0..n`; each arrival is a random 2-subset with probability `m/n`, a
/// random 3-subset with probability `m/n`, and otherwise adjacent to every
/// bin, where `m = c*·n/2`. The horizon is `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuckooFamily {
    pub n: usize,
    pub c_star: f64,
}

/// Serialized form of a procedural instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralFile {
    pub family: String,
    pub n: usize,
    pub c_star: f64,
}

impl CuckooFamily {
    pub fn new(n: usize, c_star: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid("n", "must be at least 3"));
        }
        if !(c_star.is_finite() && (0.0..=1.0).contains(&c_star)) {
            return Err(Error::invalid(
                "c_star",
                format!("{c_star} leaves a negative complete-class mass n − 2m"),
            ));
        }
        Ok(CuckooFamily { n, c_star })
    }

    /// Expected number of balls in each of the 2- and 3-subset classes.
    pub fn m(&self) -> f64 {
        self.c_star * self.n as f64 / 2.0
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn class_probabilities(&self) -> [f64; 3] {
        let p = self.m() / self.n as f64;
        [p, p, 1.0 - 2.0 * p]
    }

    /// Rate of a single type in each class (complete class before splitting).
    pub fn type_rates(&self) -> [f64; 3] {
        let m = self.m();
        [
            m / choose(self.n, 2),
            m / choose(self.n, 3),
            self.n as f64 - 2.0 * m,
        ]
    }

    pub fn class_degree(&self, class: CuckooClass) -> usize {
        match class {
            CuckooClass::Pair => 2,
            CuckooClass::Triple => 3,
            CuckooClass::Complete => self.n,
        }
    }

    pub fn to_file(&self) -> ProceduralFile {
        ProceduralFile {
            family: "prop-cuckoo".into(),
            n: self.n,
            c_star: self.c_star,
        }
    }

    pub fn from_file(file: &ProceduralFile) -> Result<Self> {
        if file.family != "prop-cuckoo" {
            return Err(Error::invalid("family", format!("unknown procedural family {}", file.family)));
        }
        CuckooFamily::new(file.n, file.c_star)
    }

    /// Draws one arrival: its class and its sorted neighbor set.
    pub fn sample_ball<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) -> CuckooClass {
        let p = self.m() / self.n as f64;
        let u = rng.gen::<f64>();
        out.clear();
        let class = if u < p {
            CuckooClass::Pair
        } else if u < 2.0 * p {
            CuckooClass::Triple
        } else {
            CuckooClass::Complete
        };
        match class {
            CuckooClass::Complete => out.extend(0..self.n),
            c => {
                out.extend(index::sample(rng, self.n, self.class_degree(c)));
                out.sort_unstable();
            }
        }
        class
    }

    /// Realized graph of one arrival sequence; ball types are class indices.
    pub fn sample_graph<R: Rng + ?Sized>(&self, rng: &mut R) -> RealizedGraph {
        let mut g = RealizedGraph::with_bins(self.n);
        let mut nb = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let class = self.sample_ball(rng, &mut nb);
            g.push_ball(class as usize, &nb);
        }
        g
    }

    /// Explicit instance with one type per 2- and 3-subset (`p…`, `t…`) and
    /// the complete class split into unit-rate copies (`all#k`).
    pub fn materialize(&self) -> Result<Instance> {
        let n = self.n;
        if n > CUCKOO_MATERIALIZE_MAX_N {
            return Err(Error::CapExceeded {
                what: "materialized cuckoo family size",
                size: n as u128,
                cap: CUCKOO_MATERIALIZE_MAX_N as u128,
            });
        }
        let bins = bins(n);
        let [r2, r3, rn] = self.type_rates();
        let mut ball_types = Vec::new();
        let subsets = if r2 > 0.0 { n } else { 0 };
        for i in 0..subsets {
            for j in i + 1..n {
                ball_types.push(BallTypeFile {
                    id: format!("p{i}-{j}"),
                    rate: r2,
                    neighbors: vec![bins[i].clone(), bins[j].clone()],
                });
            }
        }
        for i in 0..subsets {
            for j in i + 1..n {
                for k in j + 1..n {
                    ball_types.push(BallTypeFile {
                        id: format!("t{i}-{j}-{k}"),
                        rate: r3,
                        neighbors: vec![bins[i].clone(), bins[j].clone(), bins[k].clone()],
                    });
                }
            }
        }
        if rn > 0.0 {
            ball_types.push(BallTypeFile {
                id: "all".into(),
                rate: rn,
                neighbors: bins.clone(),
            });
        }
        normalize_instance(InstanceFile {
            bins,
            ball_types,
            horizon: Some(n),
        })
    }
}

/// Trajectory of an upper-bound recurrence on the expected number of full bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceState {
    pub psi: Vec<f64>,
    pub n: usize,
    pub m: f64,
    pub b: usize,
    pub c_star: f64,
}

impl RecurrenceState {
    /// `ψ(b)/n`.
    pub fn ratio(&self) -> f64 {
        self.psi.last().copied().unwrap_or(0.0) / self.n as f64
    }
}

/// Bound for [`gen_integral_hard`]: `ψ(t+1) = ψ(t) + 1 − ψ(t)/b` over the
/// family's horizon `b = n + round(n/e)`.
pub fn recurrence_integral(n: usize) -> RecurrenceState {
    assert!(n >= 1, "n must be positive");
    let b = n + integral_hard_extra(n);
    let mut psi = Vec::with_capacity(b + 1);
    psi.push(0.0);
    let mut cur = 0.0_f64;
    for _ in 0..b {
        cur += 1.0 - cur / b as f64;
        psi.push(cur);
    }
    RecurrenceState {
        psi,
        n,
        m: 0.0,
        b,
        c_star: 0.0,
    }
}

/// Bound for the cuckoo family over `n` steps:
/// `ψ(t+1) = ψ(t) + 1 − (m/n)·[C(ψ,2)/C(n,2) + C(ψ,3)/C(n,3)]`.
pub fn recurrence_cuckoo(n: usize, c_star: f64) -> Result<RecurrenceState> {
    if n < 10 {
        return Err(Error::invalid("n", "must be at least 10"));
    }
    let fam = CuckooFamily::new(n, c_star)?;
    let m = fam.m();
    let (c2, c3) = (choose(n, 2), choose(n, 3));
    let mut psi = Vec::with_capacity(n + 1);
    psi.push(0.0);
    let mut cur = 0.0_f64;
    for _ in 0..n {
        cur += 1.0 - (m / n as f64) * (real_binomial(cur, 2) / c2 + real_binomial(cur, 3) / c3);
        psi.push(cur);
    }
    Ok(RecurrenceState {
        psi,
        n,
        m,
        b: n,
        c_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::sample_arrivals;
    use crate::rng::from_seed;

    fn rate_sum(i: &Instance) -> f64 {
        i.types().iter().map(|t| t.rate).sum()
    }

    #[test]
    fn small_rates_shapes() {
        let i = gen_small_rates(1).unwrap();
        assert_eq!((i.num_types(), i.horizon(), i.rate(0)), (1, 1, 1.0));
        let i = gen_small_rates(5).unwrap();
        assert_eq!(i.num_types(), 25);
        assert!(i.types().iter().all(|t| (t.rate - 0.2).abs() < 1e-15));
        assert!((rate_sum(&i) - 5.0).abs() < 1e-9);
        assert!(gen_small_rates(101).is_err());
    }

    #[test]
    fn integral_hard_shapes() {
        let i = gen_integral_hard(3).unwrap();
        assert_eq!(i.horizon(), 4);
        assert_eq!(i.num_types(), 4);
        assert_eq!(i.neighbors(3).len(), 3);
        assert_eq!(gen_integral_hard(200).unwrap().horizon(), 200 + 74);
    }

    #[test]
    fn cuckoo_arithmetic() {
        let f = CuckooFamily::new(10, CUCKOO_C_STAR).unwrap();
        assert!((f.m() - 4.0517).abs() < 1e-12);
        let i = f.materialize().unwrap();
        assert_eq!(i.horizon(), 10);
        assert!((rate_sum(&i) - 10.0).abs() < 1e-9);
        assert!(CuckooFamily::new(10, 1.2).is_err());
        assert!(CuckooFamily::new(61, 0.8).unwrap().materialize().is_err());
    }

    #[test]
    fn procedural_balls_are_well_formed() {
        let f = CuckooFamily::new(20, CUCKOO_C_STAR).unwrap();
        let mut rng = from_seed(2);
        let g = f.sample_graph(&mut rng);
        assert_eq!(g.num_balls(), 20);
        for i in 0..g.num_balls() {
            let nb = g.neighbors(i);
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
            let want = [2, 3, 20][g.ball_type(i)];
            assert_eq!(nb.len(), want);
        }
    }

    /// Degree counts from both representations are homogeneous (χ², 2 dof).
    #[test]
    fn procedural_matches_materialized_degrees() {
        let f = CuckooFamily::new(20, CUCKOO_C_STAR).unwrap();
        let inst = f.materialize().unwrap();
        let mut rng = from_seed(77);
        let trials = 2000;
        let mut a = [0f64; 3];
        let mut b = [0f64; 3];
        let slot = |d: usize| match d {
            2 => 0,
            3 => 1,
            _ => 2,
        };
        for _ in 0..trials {
            for &y in &sample_arrivals(&inst, &mut rng).draws {
                a[slot(inst.neighbors(y).len())] += 1.0;
            }
            let g = f.sample_graph(&mut rng);
            for i in 0..g.num_balls() {
                b[slot(g.neighbors(i).len())] += 1.0;
            }
        }
        let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let mut chi2 = 0.0;
        for k in 0..3 {
            let pooled = (a[k] + b[k]) / (ta + tb);
            for (obs, tot) in [(a[k], ta), (b[k], tb)] {
                let exp = pooled * tot;
                chi2 += (obs - exp).powi(2) / exp;
            }
        }
        // p > 0.01 at 2 degrees of freedom
        assert!(chi2 < 9.2103, "chi2 = {chi2}");
    }

    #[test]
    fn integral_recurrence() {
        let r = recurrence_integral(100_000);
        assert!((r.ratio() - (1.0 - (-2.0f64).exp())).abs() < 1e-3);
        assert_eq!(recurrence_integral(1).ratio(), 1.0);
        let r = recurrence_integral(200);
        for t in 0..r.b {
            assert!(r.psi[t + 1] >= r.psi[t]);
            assert!(r.psi[t] <= (t as f64).min(r.b as f64) + 1e-12);
        }
    }

    #[test]
    fn cuckoo_recurrence() {
        let v = recurrence_cuckoo(2000, CUCKOO_C_STAR).unwrap().ratio();
        assert!((0.80..=0.823).contains(&v), "{v}");
        assert_eq!(recurrence_cuckoo(50, 0.0).unwrap().ratio(), 1.0);
        let grid = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let vals: Vec<f64> = grid.iter().map(|&c| recurrence_cuckoo(500, c).unwrap().ratio()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
        assert!(recurrence_cuckoo(9, 0.5).is_err());
    }
}
