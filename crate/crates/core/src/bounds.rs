//! Closed-form competitive-ratio expressions in the large-horizon regime,
//! their grid minimization, and `q_z` measured on actual partitions.

use std::f64::consts::{E, LN_2};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::instance::Instance;
use crate::offline_stats::FractionalMatching;
use crate::policies::{IntervalPartitions, Slot};
use crate::{Error, Result};

pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Smallest horizon at which the per-edge cap `f_e ≤ 1 − e^{−r_y}` is checked.
pub const EDGE_CAP_MIN_HORIZON: usize = 50;

const CASCADE_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QzMode {
    General,
    Integral,
}

impl FromStr for QzMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(QzMode::General),
            "integral" => Ok(QzMode::Integral),
            other => Err(Error::invalid("mode", format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for QzMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QzMode::General => "general",
            QzMode::Integral => "integral",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchMin {
    pub minimizer: f64,
    pub minimum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub expression: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<QzMode>,
    pub grid_step: f64,
    pub minimizer: f64,
    pub minimum: f64,
    /// Minimum over `f_z ∈ (0, 1/2]` for the adaptive bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low_range: Option<BranchMin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<(f64, f64)>>,
}

impl BoundReport {
    pub fn with_trace(mut self, trace: Vec<(f64, f64)>) -> Self {
        self.trace = Some(trace);
        self
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::invalid("grid", format!("step {step} must lie in (0, 0.01]")));
    }
    Ok(())
}

/// Grid `step, 2·step, …` up to `hi`, with `hi` itself always included.
fn grid(step: f64, hi: f64) -> Vec<f64> {
    let n = (hi / step).round() as usize;
    let mut pts: Vec<f64> = (1..=n).map(|k| k as f64 * step).filter(|&x| x < hi).collect();
    pts.push(hi);
    pts
}

fn argmin(points: impl Iterator<Item = (f64, f64)>) -> BranchMin {
    let mut best = BranchMin {
        minimizer: f64::NAN,
        minimum: f64::INFINITY,
    };
    for (x, v) in points {
        if v < best.minimum {
            best = BranchMin { minimizer: x, minimum: v };
        }
    }
    best
}

/// The edge profile at a unit-rate bin that maximizes `Σ f_e²` subject to
/// every `k` edges summing to at most `1 − e^{−k}`.
pub fn worst_edge_profile(f_z: f64) -> Result<(Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&f_z) {
        return Err(Error::invalid("f_z", format!("{f_z} outside [0, 1]")));
    }
    let mut profile = Vec::new();
    let mut rest = f_z;
    let mut k = 1;
    while rest > CASCADE_EPS {
        let cap = (-(k as f64 - 1.0)).exp() - (-(k as f64)).exp();
        if cap <= 0.0 {
            break;
        }
        let v = rest.min(cap);
        profile.push(v);
        rest -= v;
        k += 1;
    }
    let sum_sq = profile.iter().map(|v| v * v).sum();
    Ok((profile, sum_sq))
}

/// Per-unit-of-`f_z` lower bound on a bin's fill probability under the
/// two-matching policy.
pub fn nonadaptive_ratio(f_z: f64, sum_sq: f64) -> Result<f64> {
    if !(f_z > 0.0 && f_z <= 1.0) {
        return Err(Error::invalid("f_z", format!("{f_z} outside (0, 1]")));
    }
    let a = 2.0 - 3.0 / E;
    let b = 1.0 + 2.0 / (E * E) - 3.0 / E;
    let c = 1.0 / E - 2.0 / (E * E);
    Ok(a - b * f_z - c * sum_sq / f_z)
}

fn nonadaptive_worst(f_z: f64) -> f64 {
    let (_, s) = worst_edge_profile(f_z).expect("grid point in range");
    nonadaptive_ratio(f_z, s).expect("grid point in range")
}

pub fn min_nonadaptive_ratio(step: f64) -> Result<BoundReport> {
    min_nonadaptive_ratio_upto(step, 1.0)
}

/// As [`min_nonadaptive_ratio`] over the grid restricted to `f_z ≤ hi`.
pub fn min_nonadaptive_ratio_upto(step: f64, hi: f64) -> Result<BoundReport> {
    check_step(step)?;
    if !(hi > 0.0 && hi <= 1.0) {
        return Err(Error::invalid("hi", format!("{hi} outside (0, 1]")));
    }
    let best = argmin(grid(step, hi).into_iter().map(|x| (x, nonadaptive_worst(x))));
    Ok(BoundReport {
        expression: "nonadaptive".into(),
        mode: None,
        grid_step: step,
        minimizer: best.minimizer,
        minimum: best.minimum,
        low_range: None,
        trace: None,
    })
}

/// Per-unit-of-`f_z` lower bound on a bin's fill probability under the
/// adaptive policy, given its second-priority degree `q_z`.
pub fn adaptive_ratio(f_z: f64, q_z: f64) -> Result<f64> {
    if !(f_z > 0.0 && f_z <= 1.0) {
        return Err(Error::invalid("f_z", format!("{f_z} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&q_z) {
        return Err(Error::invalid("q_z", format!("{q_z} outside [0, 1]")));
    }
    let e2 = (-2.0f64).exp();
    let num = (1.0 - (-f_z).exp()) + q_z * e2 - q_z * q_z / E * (0.5 - 1.0 / E) - e2 * f_z * (1.0 - f_z);
    Ok(num / f_z)
}

pub fn qz_lower_bound(f_z: f64, mode: QzMode) -> f64 {
    let v = match mode {
        QzMode::General => LN_2 + f_z - 1.0,
        QzMode::Integral => f_z + 2.0 / E - 1.0,
    };
    v.max(0.0)
}

fn adaptive_point(f_z: f64, mode: QzMode) -> f64 {
    let q = if f_z <= 0.5 { 0.0 } else { qz_lower_bound(f_z, mode) };
    adaptive_ratio(f_z, q).expect("grid point in range")
}

pub fn min_adaptive_ratio(mode: QzMode, step: f64) -> Result<BoundReport> {
    check_step(step)?;
    let pts = grid(step, 1.0);
    let low = argmin(pts.iter().filter(|&&x| x <= 0.5).map(|&x| (x, adaptive_point(x, mode))));
    let best = argmin(pts.iter().map(|&x| (x, adaptive_point(x, mode))));
    Ok(BoundReport {
        expression: "adaptive".into(),
        mode: Some(mode),
        grid_step: step,
        minimizer: best.minimizer,
        minimum: best.minimum,
        low_range: Some(low),
        trace: None,
    })
}

/// Full `(f_z, value)` trace of a minimized expression.
pub fn trace(expression: &str, mode: QzMode, step: f64) -> Result<Vec<(f64, f64)>> {
    check_step(step)?;
    let pts = grid(step, 1.0).into_iter();
    match expression {
        "nonadaptive" => Ok(pts.map(|x| (x, nonadaptive_worst(x))).collect()),
        "adaptive" => Ok(pts.map(|x| (x, adaptive_point(x, mode))).collect()),
        other => Err(Error::invalid("expression", format!("unknown expression `{other}`"))),
    }
}

/// Total measure over `z`'s neighbors where `z` is the second choice but not
/// the first.
pub fn compute_qz(inst: &Instance, parts: &IntervalPartitions, z: usize) -> Result<f64> {
    if z >= inst.num_bins() {
        return Err(Error::invalid("z", format!("bin index {z} out of range")));
    }
    let mut q = 0.0;
    for (y, t) in inst.types().iter().enumerate() {
        for (k, _) in t.neighbors.iter().enumerate().filter(|&(_, &n)| n == z) {
            q += parts.types[y].second_only_measure(Slot::Neighbor(k));
        }
    }
    Ok(q)
}

/// Largest excess of `f_e` over `1 − e^{−r_y}`; zero for short horizons
/// where the cap does not apply.
pub fn check_edge_caps(inst: &Instance, f: &FractionalMatching, tol: f64) -> Result<()> {
    if inst.horizon() < EDGE_CAP_MIN_HORIZON {
        return Ok(());
    }
    let worst = f.max_edge_cap_violation(inst);
    if worst > tol {
        return Err(Error::invalid("f_e", format!("exceeds 1 - exp(-r_y) by {worst}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_examples() {
        let (p, s) = worst_edge_profile(1.0).unwrap();
        let e1 = 1.0 / E;
        assert!((p[0] - (1.0 - e1)).abs() < 1e-15);
        assert!((p[1] - (e1 - e1 * e1)).abs() < 1e-15);
        assert!((s - (1.0 - e1) / (1.0 + e1)).abs() < 1e-12);
        assert_eq!(worst_edge_profile(0.4).unwrap(), (vec![0.4], 0.4 * 0.4));
        assert_eq!(worst_edge_profile(0.0).unwrap(), (vec![], 0.0));
        assert!(worst_edge_profile(1.1).is_err());
    }

    #[test]
    fn nonadaptive_examples() {
        let (_, s) = worst_edge_profile(1.0).unwrap();
        assert!((nonadaptive_ratio(1.0, s).unwrap() - 0.68441).abs() < 5e-5);
        assert!((nonadaptive_ratio(1.0, 0.5).unwrap() - 0.680725).abs() < 1e-5);
        let f = 0.37;
        let want = 2.0 - 3.0 / E - (1.0 + 2.0 / (E * E) - 3.0 / E) * f;
        assert!((nonadaptive_ratio(f, 0.0).unwrap() - want).abs() < 1e-15);
        assert!(nonadaptive_ratio(0.0, 0.0).is_err());
    }

    #[test]
    fn adaptive_examples() {
        assert!((adaptive_ratio(1.0, LN_2).unwrap() - 0.70258).abs() < 5e-5);
        assert!((adaptive_ratio(1.0, 2.0 / E).unwrap() - 0.70538).abs() < 5e-5);
        assert!((adaptive_ratio(0.5, LN_2 - 0.5).unwrap() - 0.76796).abs() < 1e-4);
        assert!(adaptive_ratio(0.0, 0.1).is_err());
        assert!((qz_lower_bound(1.0, QzMode::General) - LN_2).abs() < 1e-15);
        assert_eq!(qz_lower_bound(0.3, QzMode::General), 0.0);
        assert!((qz_lower_bound(1.0, QzMode::Integral) - 2.0 / E).abs() < 1e-15);
    }

    #[test]
    fn report_minimum_matches_expression() {
        let r = min_nonadaptive_ratio(1e-3).unwrap();
        assert_eq!(r.minimizer, 1.0);
        assert!((r.minimum - nonadaptive_worst(r.minimizer)).abs() < 1e-12);
        let a = min_adaptive_ratio(QzMode::General, 1e-3).unwrap();
        assert!((a.minimum - adaptive_point(a.minimizer, QzMode::General)).abs() < 1e-12);
        let low = a.low_range.unwrap();
        assert!((low.minimizer - 0.5).abs() < 1e-12);
        assert!((low.minimum - 0.7193).abs() < 5e-4);
    }

    #[test]
    fn grid_contains_endpoint() {
        for step in [1e-2, 1e-3, 3e-3, 7e-3] {
            let g = grid(step, 1.0);
            assert_eq!(*g.last().unwrap(), 1.0);
            assert!(g.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(min_adaptive_ratio(QzMode::General, 0.1).is_err());
    }
}
