//! Shared domain types: gradient vectors, node group partitions, vote sets and
//! per-iteration filter statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("non-finite entry at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("divisibility violated: {0}")]
    Divisibility(String),
    #[error("redundancy ratio must be odd, got r={0}")]
    Parity(usize),
    #[error("byzantine ratio out of range: q={q} must satisfy q < p/2 with p={p}")]
    ByzantineRatio { p: usize, q: usize },
    #[error("empty model dimension: d must be >= 1")]
    EmptyDimension,
}

/// Dense d-dimensional gradient vector, the unit of all aggregation.
///
/// Construction rejects NaN/Inf; Byzantine outputs may be arbitrary but must
/// still be finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradVec(Vec<f64>);

impl GradVec {
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        if values.is_empty() {
            return Err(CoreError::EmptyDimension);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(CoreError::NonFinite { index, value });
            }
        }
        Ok(GradVec(values))
    }

    pub fn zeros(d: usize) -> Self {
        GradVec(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Bit pattern of the entries; vote equality is defined on this, not on
    /// floating-point comparison.
    pub fn bits(&self) -> Vec<u64> {
        self.0.iter().map(|v| v.to_bits()).collect()
    }

    pub fn bitwise_eq(&self, other: &GradVec) -> bool {
        self.dim() == other.dim()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> GradVec {
        GradVec(self.0.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &GradVec) -> GradVec {
        debug_assert_eq!(self.dim(), other.dim());
        GradVec(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &GradVec) -> GradVec {
        debug_assert_eq!(self.dim(), other.dim());
        GradVec(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add_assign(&mut self, other: &GradVec) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn add_assign_scaled(&mut self, other: &GradVec, s: f64) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b * s;
        }
    }

    pub fn dot(&self, other: &GradVec) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn dist(&self, other: &GradVec) -> f64 {
        self.sub(other).norm()
    }
}

impl std::ops::Index<usize> for GradVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Fixed partition of the `p` workers into `p/r` disjoint groups of size `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGroupPartition {
    groups: Vec<Vec<usize>>,
}

impl NodeGroupPartition {
    /// Validates that the groups are disjoint, equal-sized and cover `0..p`.
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self, CoreError> {
        let n_groups = groups.len();
        if n_groups == 0 {
            return Err(CoreError::Divisibility("no groups".into()));
        }
        let r = groups[0].len();
        let p = n_groups * r;
        let mut seen = vec![false; p];
        for g in &groups {
            if g.len() != r {
                return Err(CoreError::Divisibility(format!(
                    "group size {} != {}",
                    g.len(),
                    r
                )));
            }
            for &w in g {
                if w >= p || seen[w] {
                    return Err(CoreError::Divisibility(format!(
                        "worker {w} repeated or out of range"
                    )));
                }
                seen[w] = true;
            }
        }
        Ok(NodeGroupPartition { groups })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn num_workers(&self) -> usize {
        self.num_groups() * self.group_size()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }

    /// Group index of each worker.
    pub fn group_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_workers()];
        for (j, g) in self.groups.iter().enumerate() {
            for &w in g {
                out[w] = j;
            }
        }
        out
    }
}

/// The filtered votes of one iteration.
///
/// `honest_mask` is ground truth available only in simulation; a vote with no
/// strict bitwise majority is the zero vector and has `no_majority_mask` set.
#[derive(Debug, Clone)]
pub struct VoteSet {
    pub votes: Vec<GradVec>,
    pub honest_mask: Vec<bool>,
    pub no_majority_mask: Vec<bool>,
}

impl VoteSet {
    pub fn num_votes(&self) -> usize {
        self.votes.len()
    }

    /// Number of Byzantine votes surviving the filter.
    pub fn q_hat(&self) -> usize {
        self.honest_mask.iter().filter(|&&h| !h).count()
    }
}

/// Per-iteration filtering and inexactness record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterStats {
    /// Byzantine votes after filtering.
    pub q_hat: usize,
    /// Total votes p/r.
    pub p_hat: usize,
    /// q_hat / p_hat.
    pub epsilon_hat: f64,
    /// ||G_hat - G|| when the true gradient is available from the task oracle.
    pub delta_inexact: Option<f64>,
}

impl FilterStats {
    pub fn from_votes(votes: &VoteSet, delta_inexact: Option<f64>) -> Self {
        let q_hat = votes.q_hat();
        let p_hat = votes.num_votes();
        FilterStats {
            q_hat,
            p_hat,
            epsilon_hat: q_hat as f64 / p_hat as f64,
            delta_inexact,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_vec_rejects_non_finite() {
        assert!(GradVec::new(vec![1.0, f64::NAN]).is_err());
        assert!(GradVec::new(vec![f64::INFINITY]).is_err());
        assert!(GradVec::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn bitwise_eq_distinguishes_negative_zero() {
        let a = GradVec::new(vec![0.0]).unwrap();
        let b = GradVec::new(vec![-0.0]).unwrap();
        assert!(!a.bitwise_eq(&b));
        assert_eq!(a, b); // PartialEq is numeric, bitwise is stricter
    }

    #[test]
    fn partition_rejects_overlap() {
        assert!(NodeGroupPartition::new(vec![vec![0, 1, 2], vec![2, 3, 4]]).is_err());
        assert!(NodeGroupPartition::new(vec![vec![0, 1, 2], vec![3, 4, 5]]).is_ok());
    }

    #[test]
    fn partition_rejects_ragged_groups() {
        assert!(NodeGroupPartition::new(vec![vec![0, 1, 2], vec![3, 4]]).is_err());
    }

    #[test]
    fn filter_stats_ratio_exact() {
        let votes = VoteSet {
            votes: vec![GradVec::zeros(2), GradVec::zeros(2), GradVec::zeros(2)],
            honest_mask: vec![true, false, true],
            no_majority_mask: vec![false, true, false],
        };
        let s = FilterStats::from_votes(&votes, None);
        assert_eq!(s.q_hat, 1);
        assert_eq!(s.p_hat, 3);
        assert_eq!(s.epsilon_hat, 1.0 / 3.0);
    }
}
