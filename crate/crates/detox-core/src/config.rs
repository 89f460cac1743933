//! Validated experiment configuration and the step-size schedule mini-language.

use serde::{Deserialize, Serialize};

use crate::adversary::AttackSpec;
use crate::aggregators::AggregatorSpec;
use crate::types::CoreError;

/// Step-size schedule: constant, or a geometric decay that restarts every
/// `period` iterations (`eta0 * gamma^(t mod period)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { eta: f64 },
    GeometricCycle { eta0: f64, gamma: f64, period: u64 },
}

impl LrSchedule {
    pub fn eta(&self, t: u64) -> f64 {
        match self {
            LrSchedule::Constant { eta } => *eta,
            LrSchedule::GeometricCycle {
                eta0,
                gamma,
                period,
            } => eta0 * gamma.powi((t % period) as i32),
        }
    }
}

/// Full experiment specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetoxConfig {
    /// Worker count.
    pub p: usize,
    /// Byzantine worker count.
    pub q: usize,
    /// Redundancy ratio (odd, divides p).
    pub r: usize,
    /// Batch size (p divides b).
    pub b: usize,
    /// Vote-group size (divides p/r).
    pub k: usize,
    /// Model dimension.
    pub d: usize,
    pub agg0: AggregatorSpec,
    pub agg1: AggregatorSpec,
    pub attack: AttackSpec,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Iteration count T.
    pub iterations: u64,
}

impl DetoxConfig {
    /// Number of votes p/r.
    pub fn p_hat(&self) -> usize {
        self.p / self.r
    }

    /// Samples per node group, rb/p.
    pub fn group_batch(&self) -> usize {
        self.r * self.b / self.p
    }

    pub fn validate(&self) -> Result<&Self, CoreError> {
        validate_config(self)
    }
}

/// Check every structural invariant; returns the config unchanged iff all hold.
pub fn validate_config(cfg: &DetoxConfig) -> Result<&DetoxConfig, CoreError> {
    if cfg.d == 0 {
        return Err(CoreError::EmptyDimension);
    }
    if cfg.r == 0 || cfg.r % 2 == 0 {
        return Err(CoreError::Parity(cfg.r));
    }
    if cfg.p == 0 || cfg.p % cfg.r != 0 {
        return Err(CoreError::Divisibility(format!(
            "r={} does not divide p={}",
            cfg.r, cfg.p
        )));
    }
    if cfg.b == 0 || cfg.b % cfg.p != 0 {
        return Err(CoreError::Divisibility(format!(
            "p={} does not divide b={}",
            cfg.p, cfg.b
        )));
    }
    let p_hat = cfg.p / cfg.r;
    if cfg.k == 0 || p_hat % cfg.k != 0 {
        return Err(CoreError::Divisibility(format!(
            "k={} does not divide p/r={}",
            cfg.k, p_hat
        )));
    }
    if 2 * cfg.q >= cfg.p {
        return Err(CoreError::ByzantineRatio { p: cfg.p, q: cfg.q });
    }
    Ok(cfg)
}
