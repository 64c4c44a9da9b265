//! Tabular reinforcement learning under diminishing rewards.
//!
//! Rewards decay geometrically in the number of prior visits to a state, so
//! policy evaluation needs a visit-discounted occupancy representation
//! rather than plain values. This crate provides:
//!
//! - grid / tabular environments with an episode engine that tracks visit
//!   counts and replenishment schemes ([`grid`], [`episode`], [`reward`]);
//! - exact dynamic programming for the representation, its action-conditioned
//!   and Nth-occupancy variants, replenishment recursions, the discrete
//!   set-operator and its Bellman loss ([`rep`]);
//! - sample-based learners: tabular TD, online Q-learning on the
//!   representation, linear feature TD and decay-rate estimation ([`td`]);
//! - policy composition by generalized policy evaluation + improvement with
//!   per-step reward refresh, and the composition bound checker ([`compose`]);
//! - foraging analytics comparing agent patch-leaving times against
//!   marginal-value-theorem predictions ([`forage`]);
//! - an independent simulation oracle ([`oracle`]) and the acceptance suite
//!   built on it ([`acceptance`]).

pub mod acceptance;
pub mod compose;
pub mod episode;
pub mod error;
pub mod export;
pub mod forage;
pub mod grid;
pub mod mdp;
pub mod oracle;
pub mod rep;
pub mod reward;
pub mod td;

pub use error::{Error, Result};
