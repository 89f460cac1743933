//! Byzantine worker behaviors: placement of the corrupted worker set and the
//! transformation they apply to the honest output buffer before filtering.
//!
//! Colluding workers inside one node group always emit bit-identical vectors,
//! so they capture the group's vote exactly when they hold a strict majority.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregators;
use crate::types::{GradVec, NodeGroupPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    /// Send -c * g instead of the assigned gradient g.
    ReverseGradient,
    /// Send a constant fill vector.
    Constant,
    /// "A little is enough": send mu_hat + z * sigma_hat coordinate-wise.
    Alie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Uniformly random fixed q-subset of the workers.
    #[default]
    RandomFixed,
    /// Byzantine workers packed to majority-control as many groups as possible.
    AdversarialGrouped,
}

/// Which honest gradients the ALIE colluders may pool when estimating the mean
/// and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlieScope {
    /// Honest outputs of every group containing at least one Byzantine worker.
    #[default]
    ByzantineVisible,
    /// All honest outputs.
    All,
}

fn default_c() -> f64 {
    1.0
}
fn default_value() -> f64 {
    -1.0
}
fn default_z() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Reverse-gradient scale (c > 0).
    #[serde(default = "default_c")]
    pub c: f64,
    /// Constant-attack fill value.
    #[serde(default = "default_value")]
    pub value: f64,
    /// ALIE deviation multiplier.
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub alie_scope: AlieScope,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            c: default_c(),
            value: default_value(),
            z: default_z(),
            placement: Placement::default(),
            alie_scope: AlieScope::default(),
        }
    }

    pub fn reverse_gradient(c: f64) -> Self {
        AttackSpec {
            kind: AttackKind::ReverseGradient,
            c,
            ..AttackSpec::none()
        }
    }

    pub fn constant(value: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Constant,
            value,
            ..AttackSpec::none()
        }
    }

    pub fn alie(z: f64) -> Self {
        AttackSpec {
            kind: AttackKind::Alie,
            z,
            ..AttackSpec::none()
        }
    }
}

/// Choose the fixed Byzantine worker set Q for a run.
///
/// `AdversarialGrouped` packs `(r+1)/2` Byzantine workers into each of the
/// first `floor(q / ((r+1)/2))` groups (a strict majority each) and scatters
/// the remainder as a minority in the next group.
pub fn place_byzantine(
    p: usize,
    q: usize,
    partition: &NodeGroupPartition,
    placement: Placement,
    rng: &mut ChaCha8Rng,
) -> BTreeSet<usize> {
    debug_assert!(2 * q < p.max(1) * 2); // q <= p always; ratio checked by config
    match placement {
        Placement::RandomFixed => {
            let mut ids: Vec<usize> = (0..p).collect();
            ids.shuffle(rng);
            ids.truncate(q);
            ids.into_iter().collect()
        }
        Placement::AdversarialGrouped => {
            let majority = (partition.group_size() + 1) / 2;
            let mut out = BTreeSet::new();
            let mut left = q;
            for group in partition.groups() {
                if left == 0 {
                    break;
                }
                let take = majority.min(left);
                for &w in group.iter().take(take) {
                    out.insert(w);
                }
                left -= take;
            }
            out
        }
    }
}

/// Apply the configured attack to the per-worker output buffer.
///
/// `honest_outputs[i]` must be the honest group gradient for worker i's group;
/// workers outside Q pass through untouched.
pub fn apply_attack(
    attack: &AttackSpec,
    honest_outputs: &[GradVec],
    byzantine: &BTreeSet<usize>,
    partition: &NodeGroupPartition,
) -> Vec<GradVec> {
    let mut out = honest_outputs.to_vec();
    if byzantine.is_empty() {
        return out;
    }
    match attack.kind {
        AttackKind::None => {}
        AttackKind::ReverseGradient => {
            for &i in byzantine {
                out[i] = honest_outputs[i].scale(-attack.c);
            }
        }
        AttackKind::Constant => {
            let d = honest_outputs[0].dim();
            let fill = GradVec::new(vec![attack.value; d]).expect("finite fill");
            for &i in byzantine {
                out[i] = fill.clone();
            }
        }
        AttackKind::Alie => {
            let payload = alie_payload(attack, honest_outputs, byzantine, partition);
            for &i in byzantine {
                out[i] = payload.clone();
            }
        }
    }
    out
}

/// mu_hat + z * sigma_hat over the honest gradients the colluders can observe.
fn alie_payload(
    attack: &AttackSpec,
    honest_outputs: &[GradVec],
    byzantine: &BTreeSet<usize>,
    partition: &NodeGroupPartition,
) -> GradVec {
    let visible: Vec<GradVec> = match attack.alie_scope {
        AlieScope::All => honest_outputs
            .iter()
            .enumerate()
            .filter(|(i, _)| !byzantine.contains(i))
            .map(|(_, g)| g.clone())
            .collect(),
        AlieScope::ByzantineVisible => {
            let mut vis = Vec::new();
            for group in partition.groups() {
                if group.iter().any(|w| byzantine.contains(w)) {
                    for &w in group {
                        if !byzantine.contains(&w) {
                            vis.push(honest_outputs[w].clone());
                        }
                    }
                }
            }
            vis
        }
    };
    if visible.is_empty() {
        // nothing observable; fall back to the colluders' own honest values
        let own: Vec<GradVec> = byzantine.iter().map(|&i| honest_outputs[i].clone()).collect();
        return estimate_payload(&own, attack.z);
    }
    estimate_payload(&visible, attack.z)
}

fn estimate_payload(pool: &[GradVec], z: f64) -> GradVec {
    let mu = aggregators::mean(pool).expect("non-empty pool");
    let d = mu.dim();
    let n = pool.len() as f64;
    let mut var = vec![0.0; d];
    for g in pool {
        for (c, v) in var.iter_mut().enumerate() {
            let dev = g[c] - mu[c];
            *v += dev * dev / n;
        }
    }
    let vals: Vec<f64> = (0..d).map(|c| mu[c] + z * var[c].sqrt()).collect();
    GradVec::new(vals).expect("finite payload")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::partition_nodes;
    use crate::rng::split_rng;

    fn gv(vals: &[f64]) -> GradVec {
        GradVec::new(vals.to_vec()).unwrap()
    }

    fn ordered_partition(p: usize, r: usize) -> NodeGroupPartition {
        let groups = (0..p / r).map(|j| (j * r..(j + 1) * r).collect()).collect();
        NodeGroupPartition::new(groups).unwrap()
    }

    #[test]
    fn empty_q_no_change() {
        let part = ordered_partition(6, 3);
        let q = place_byzantine(6, 0, &part, Placement::RandomFixed, &mut split_rng(1, "pl"));
        assert!(q.is_empty());
        let honest = vec![gv(&[1.0]); 6];
        let out = apply_attack(&AttackSpec::reverse_gradient(1.0), &honest, &q, &part);
        assert_eq!(out, honest);
    }

    #[test]
    fn random_fixed_is_deterministic() {
        let part = ordered_partition(45, 3);
        let a = place_byzantine(45, 5, &part, Placement::RandomFixed, &mut split_rng(9, "pl"));
        let b = place_byzantine(45, 5, &part, Placement::RandomFixed, &mut split_rng(9, "pl"));
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn adversarial_grouped_captures_expected_groups() {
        // p=9, r=3, q=4: two groups get 2 Byzantine seats each, none left over
        let part = ordered_partition(9, 3);
        let q = place_byzantine(9, 4, &part, Placement::AdversarialGrouped, &mut split_rng(0, "x"));
        assert_eq!(q.len(), 4);
        let captured = part
            .groups()
            .iter()
            .filter(|g| g.iter().filter(|w| q.contains(w)).count() * 2 > g.len())
            .count();
        assert_eq!(captured, 2);
    }

    #[test]
    fn reverse_gradient_flips_and_scales() {
        let part = ordered_partition(3, 3);
        let honest = vec![gv(&[1.0, -2.0]); 3];
        let q: BTreeSet<usize> = [1].into_iter().collect();
        let out = apply_attack(&AttackSpec::reverse_gradient(1.0), &honest, &q, &part);
        assert_eq!(out[1].as_slice(), &[-1.0, 2.0]);
        assert_eq!(out[0].as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_attack_fills() {
        let part = ordered_partition(3, 3);
        let honest = vec![gv(&[5.0, 6.0, 7.0]); 3];
        let q: BTreeSet<usize> = [0].into_iter().collect();
        let out = apply_attack(&AttackSpec::constant(-1.0), &honest, &q, &part);
        assert_eq!(out[0].as_slice(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn alie_z_zero_sends_mean() {
        let part = ordered_partition(6, 3);
        let honest: Vec<GradVec> = vec![
            gv(&[1.0]),
            gv(&[1.0]),
            gv(&[1.0]),
            gv(&[3.0]),
            gv(&[3.0]),
            gv(&[3.0]),
        ];
        let q: BTreeSet<usize> = [0, 3].into_iter().collect();
        let mut spec = AttackSpec::alie(0.0);
        spec.alie_scope = AlieScope::ByzantineVisible;
        let out = apply_attack(&spec, &honest, &q, &part);
        // visible honest pool: workers 1,2 (value 1) and 4,5 (value 3) -> mean 2
        assert_eq!(out[0].as_slice(), &[2.0]);
        assert_eq!(out[3].as_slice(), &[2.0]);
        // colluders all send the identical payload
        assert!(out[0].bitwise_eq(&out[3]));
    }

    #[test]
    fn colluders_emit_identical_vectors() {
        let mut rng = split_rng(3, "p");
        let part = partition_nodes(15, 3, &mut rng).unwrap();
        let honest: Vec<GradVec> = (0..15).map(|i| gv(&[i as f64, 2.0 * i as f64])).collect();
        let q: BTreeSet<usize> = [0, 1, 7].into_iter().collect();
        let out = apply_attack(&AttackSpec::alie(1.0), &honest, &q, &part);
        assert!(out[0].bitwise_eq(&out[1]) && out[1].bitwise_eq(&out[7]));
    }
}
