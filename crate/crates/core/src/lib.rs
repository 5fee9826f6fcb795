//! Online stochastic bipartite matching.
//!
//! Balls of known types arrive i.i.d. over a fixed horizon and must be placed
//! irrevocably into unit-capacity bins. The crate provides:
//!
//! - [`instance`]: problem instances, rate normalization and arrival sampling;
//! - [`matching`]: the canonical maximum-matching oracle used for OPT;
//! - [`offline_stats`]: the fractional matching `f` induced by OPT;
//! - [`decompose`]: convex decomposition of `f` into matchings;
//! - [`policies`]: greedy, two-matching (non-adaptive) and interval-partition
//!   two-choice (adaptive) online policies;
//! - [`harness`]: paired Monte-Carlo evaluation and exact small-instance oracles;
//! - [`hardness`]: upper-bound instance families and their recurrences;
//! - [`bounds`]: the closed-form competitive-ratio expressions.

pub mod bounds;
pub mod decompose;
mod error;
pub mod hardness;
pub mod harness;
pub mod instance;
pub mod matching;
pub mod offline_stats;
pub mod policies;
pub mod rng;

pub use error::{Error, Result};
