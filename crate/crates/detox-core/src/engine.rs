//! The filtering pipeline: node group assignment, bitwise majority voting and
//! two-level (hierarchical) aggregation of the surviving votes.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adversary;
use crate::aggregators::{AggError, AggregatorSpec};
use crate::config::DetoxConfig;
use crate::types::{CoreError, FilterStats, GradVec, NodeGroupPartition, VoteSet};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Agg(#[from] AggError),
}

/// Per-iteration sample assignment: each node group j receives sample group j.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub partition: NodeGroupPartition,
    /// p/r disjoint index lists of size rb/p, each sorted ascending so honest
    /// replicas sum in the same order.
    pub sample_groups: Vec<Vec<usize>>,
}

/// Uniformly random partition of `0..p` into `p/r` groups of size `r`.
pub fn partition_nodes(
    p: usize,
    r: usize,
    rng: &mut ChaCha8Rng,
) -> Result<NodeGroupPartition, CoreError> {
    if r == 0 || r % 2 == 0 {
        return Err(CoreError::Parity(r));
    }
    if p == 0 || p % r != 0 {
        return Err(CoreError::Divisibility(format!(
            "r={r} does not divide p={p}"
        )));
    }
    let mut ids: Vec<usize> = (0..p).collect();
    ids.shuffle(rng);
    let groups = ids.chunks(r).map(|c| c.to_vec()).collect();
    NodeGroupPartition::new(groups)
}

/// Randomly partition the batch `samples` into `p/r` groups of size `rb/p`.
pub fn assign_batch(
    samples: &[usize],
    partition: &NodeGroupPartition,
    rng: &mut ChaCha8Rng,
) -> Result<Assignment, CoreError> {
    let b = samples.len();
    let p = partition.num_workers();
    if b == 0 || b % p != 0 {
        return Err(CoreError::Divisibility(format!(
            "p={p} does not divide b={b}"
        )));
    }
    let group_size = b / partition.num_groups();
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(rng);
    let sample_groups = shuffled
        .chunks(group_size)
        .map(|c| {
            let mut g = c.to_vec();
            g.sort_unstable();
            g
        })
        .collect();
    Ok(Assignment {
        partition: partition.clone(),
        sample_groups,
    })
}

/// Bitwise majority vote over one group's outputs.
///
/// Returns the vector held by a strict majority of the group, or the zero
/// vector if no such majority exists. Equality is on the raw 64-bit patterns;
/// honest replicas are bit-identical by construction and a tolerance would be
/// attackable.
pub fn majority_vote(outputs: &[GradVec]) -> Result<(GradVec, bool), CoreError> {
    let first = outputs.first().ok_or(CoreError::EmptyDimension)?;
    let d = first.dim();
    for v in outputs {
        if v.dim() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: v.dim(),
            });
        }
    }
    let mut counts: HashMap<Vec<u64>, (usize, usize)> = HashMap::new();
    for (i, v) in outputs.iter().enumerate() {
        let entry = counts.entry(v.bits()).or_insert((0, i));
        entry.0 += 1;
    }
    let need = outputs.len() / 2 + 1;
    if let Some((_, &(_, idx))) = counts.iter().find(|(_, &(n, _))| n >= need) {
        return Ok((outputs[idx].clone(), true));
    }
    Ok((GradVec::zeros(d), false))
}

/// Majority-vote every node group and label each vote against the known
/// honest group gradients (ground truth, simulation only).
pub fn filter_votes(
    all_outputs: &[GradVec],
    honest_group_grads: &[GradVec],
    partition: &NodeGroupPartition,
) -> Result<VoteSet, CoreError> {
    debug_assert_eq!(all_outputs.len(), partition.num_workers());
    debug_assert_eq!(honest_group_grads.len(), partition.num_groups());
    let mut votes = Vec::with_capacity(partition.num_groups());
    let mut honest_mask = Vec::with_capacity(partition.num_groups());
    let mut no_majority_mask = Vec::with_capacity(partition.num_groups());
    for (j, group) in partition.groups().iter().enumerate() {
        let outputs: Vec<GradVec> = group.iter().map(|&w| all_outputs[w].clone()).collect();
        let (vote, had_majority) = majority_vote(&outputs)?;
        honest_mask.push(vote.bitwise_eq(&honest_group_grads[j]));
        no_majority_mask.push(!had_majority);
        votes.push(vote);
    }
    Ok(VoteSet {
        votes,
        honest_mask,
        no_majority_mask,
    })
}

/// Two-level aggregation: random vote groups of size `k` reduced by `agg0`,
/// then `agg1` across the group results.
pub fn hier_aggr(
    votes: &[GradVec],
    k: usize,
    agg0: &AggregatorSpec,
    agg1: &AggregatorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<GradVec, EngineError> {
    let p_hat = votes.len();
    if k == 0 || p_hat % k != 0 {
        return Err(CoreError::Divisibility(format!(
            "k={k} does not divide p_hat={p_hat}"
        ))
        .into());
    }
    let mut order: Vec<usize> = (0..p_hat).collect();
    order.shuffle(rng);
    let mut reduced = Vec::with_capacity(p_hat / k);
    for chunk in order.chunks(k) {
        let group: Vec<GradVec> = chunk.iter().map(|&i| votes[i].clone()).collect();
        reduced.push(agg0.apply(&group)?);
    }
    Ok(agg1.apply(&reduced)?)
}

/// Source of gradients for the training loop.
pub trait GradientOracle {
    fn dim(&self) -> usize;
    fn num_samples(&self) -> usize;
    /// Mean gradient over the given sample indices (ascending) at `w`.
    fn grad_mean(&self, w: &GradVec, idxs: &[usize]) -> GradVec;
    /// Full empirical gradient, when the task has a closed form for it.
    fn full_grad(&self, _w: &GradVec) -> Option<GradVec> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub model: GradVec,
    pub grad_estimate: GradVec,
    pub stats: FilterStats,
    pub votes: VoteSet,
    /// Wall clock of the filter + aggregation stage.
    pub agg_nanos: u128,
}

/// One full iteration: draw batch, assign, compute, attack, filter, aggregate
/// and update the model with step size `eta`.
pub fn detox_step<O: GradientOracle>(
    model: &GradVec,
    cfg: &DetoxConfig,
    partition: &NodeGroupPartition,
    byzantine: &BTreeSet<usize>,
    oracle: &O,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, EngineError> {
    let n = oracle.num_samples();
    let batch: Vec<usize> = (0..cfg.b).map(|_| rng.random_range(0..n)).collect();
    let assignment = assign_batch(&batch, partition, rng)?;

    let honest_group_grads: Vec<GradVec> = assignment
        .sample_groups
        .iter()
        .map(|idxs| oracle.grad_mean(model, idxs))
        .collect();
    let group_of = partition.group_of();
    let honest_outputs: Vec<GradVec> = (0..cfg.p)
        .map(|i| honest_group_grads[group_of[i]].clone())
        .collect();

    let outputs = adversary::apply_attack(&cfg.attack, &honest_outputs, byzantine, partition);

    let t0 = Instant::now();
    let votes = filter_votes(&outputs, &honest_group_grads, partition)?;
    let estimate = hier_aggr(&votes.votes, cfg.k, &cfg.agg0, &cfg.agg1, rng)?;
    let agg_nanos = t0.elapsed().as_nanos();

    let delta = oracle
        .full_grad(model)
        .map(|g| estimate.dist(&g));
    let stats = FilterStats::from_votes(&votes, delta);
    let mut next = model.clone();
    next.add_assign_scaled(&estimate, -eta);
    Ok(StepOutcome {
        model: next,
        grad_estimate: estimate,
        stats,
        votes,
        agg_nanos,
    })
}
