//! COBRAH: combinatorial bandits with recovery and habituation.
//!
//! A toolkit for sequential resource allocation across a cohort of agents
//! whose reward distributions drift with their own visit histories. Arms
//! carry two-factor states (beneficial/adverse) driven by piecewise-linear
//! restless dynamics; rewards are Bernoulli through a logistic link. The
//! crate provides:
//!
//! - the ground-truth world model ([`model`]),
//! - trajectory KL divergences and confidence radii ([`divergence`]),
//! - constrained MLE and optimistic-mean estimation ([`estimation`]),
//! - allocation policies and baselines ([`policy`]),
//! - a dynamic-oracle regret simulation engine ([`simulation`]),
//! - cohort generation, ingestion, and grid fitting ([`cohort`]).
//!
//! Everything is deterministic given a base seed: random streams are derived
//! per `(seed, replication, arm, purpose)` so experiments reproduce bit for
//! bit. See the `book/` guide for a narrative walkthrough; its code snippets
//! are mirrored as doc-tests in [`guide`].

pub mod cohort;
pub mod divergence;
pub mod error;
pub mod estimation;
pub mod model;
pub mod policy;
pub mod rng;
pub mod simulation;

pub mod guide;

pub use error::{Error, Result};
