//! Byzantine-resilient distributed mini-batch SGD at desk scale.
//!
//! The library simulates a parameter server that assigns redundant gradient
//! work to groups of compute nodes, majority-votes the group outputs to filter
//! Byzantine gradients, and then applies a two-level robust aggregation to the
//! surviving votes. A statistics engine computes the exact expected number of
//! Byzantine votes surviving the filter together with closed-form bounds, and
//! validates them by Monte Carlo simulation.

pub mod adversary;
pub mod aggregators;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod engine;
pub mod rng;
pub mod sim;
pub mod types;

pub use adversary::AttackSpec;
pub use aggregators::AggregatorSpec;
pub use config::{DetoxConfig, LrSchedule};
pub use types::{FilterStats, GradVec, NodeGroupPartition, VoteSet};
