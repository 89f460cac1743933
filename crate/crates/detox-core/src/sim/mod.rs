//! Deterministic experiment drivers: the training loop, the one-shot mean
//! estimation comparison and the aggregation timing probe.

pub mod task;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::place_byzantine;
use crate::aggregators::AggregatorSpec;
use crate::config::DetoxConfig;
use crate::engine::{detox_step, filter_votes, hier_aggr, partition_nodes, EngineError};
use crate::rng::split_rng;
use crate::types::{CoreError, GradVec};

pub use task::{Task, TaskKind, TaskSpec};

/// One training iteration as recorded in the run output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: u64,
    pub eta: f64,
    /// Full-dataset loss after the update of iteration t.
    pub loss: f64,
    /// Byzantine votes surviving the filter.
    pub q_hat: usize,
    pub epsilon_hat: f64,
    /// ||G_hat - G|| against the full gradient before the update.
    pub delta: Option<f64>,
    /// Wall clock of the filter + aggregation stage.
    pub agg_nanos: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: DetoxConfig,
    pub task: TaskSpec,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_model: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,eta,loss,q_hat,epsilon_hat,delta,agg_nanos\n");
        for r in &self.iterations {
            let delta = r.delta.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t, r.eta, r.loss, r.q_hat, r.epsilon_hat, delta, r.agg_nanos
            )
            .expect("string write");
        }
        out
    }

    pub fn mean_qhat(&self) -> f64 {
        let s: usize = self.iterations.iter().map(|r| r.q_hat).sum();
        s as f64 / self.iterations.len().max(1) as f64
    }

    pub fn mean_delta(&self) -> Option<f64> {
        let deltas: Vec<f64> = self.iterations.iter().filter_map(|r| r.delta).collect();
        if deltas.is_empty() {
            return None;
        }
        Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
    }
}

/// Run the full training loop: fixed node partition and Byzantine set, fresh
/// batch and vote grouping each iteration, model starting at the origin.
pub fn run_training(cfg: &DetoxConfig, task_spec: &TaskSpec) -> Result<RunRecord, EngineError> {
    cfg.validate()?;
    let task = task_spec.build()?;
    if task_spec.d != cfg.d {
        return Err(EngineError::Core(CoreError::DimensionMismatch {
            expected: cfg.d,
            got: task_spec.d,
        }));
    }

    let partition = partition_nodes(cfg.p, cfg.r, &mut split_rng(cfg.seed, "run/partition"))?;
    let byzantine = place_byzantine(
        cfg.p,
        cfg.q,
        &partition,
        cfg.attack.placement,
        &mut split_rng(cfg.seed, "run/placement"),
    );

    let mut rng = split_rng(cfg.seed, "run/train");
    let mut model = GradVec::zeros(cfg.d);
    let initial_loss = task.loss(&model);
    let mut iterations = Vec::with_capacity(cfg.iterations as usize);
    for t in 0..cfg.iterations {
        let eta = cfg.lr_schedule.eta(t);
        let out = detox_step(&model, cfg, &partition, &byzantine, &task, eta, &mut rng)?;
        model = out.model;
        iterations.push(IterationRecord {
            t,
            eta,
            loss: task.loss(&model),
            q_hat: out.stats.q_hat,
            epsilon_hat: out.stats.epsilon_hat,
            delta: out.stats.delta_inexact,
            agg_nanos: out.agg_nanos,
        });
    }
    Ok(RunRecord {
        config: cfg.clone(),
        task: task_spec.clone(),
        initial_loss,
        final_loss: iterations.last().map_or(initial_loss, |r| r.loss),
        final_model: model.into_vec(),
        iterations,
    })
}

/// One-shot Gaussian mean estimation under a constant-vector attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanEstConfig {
    pub d: usize,
    /// Worker count; each worker holds one N(0, I_d) sample.
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// Vote-group size for the two-level arms.
    pub k: usize,
    /// Norm of the constant vector the Byzantine workers report.
    pub byz_norm: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorError {
    pub name: String,
    /// Distance of the estimate from the true mean (the origin).
    pub error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanEstReport {
    pub config: MeanEstConfig,
    /// Robust aggregators applied directly to the p worker reports.
    pub plain: Vec<EstimatorError>,
    /// Vote filtering plus two-level aggregation over the p/r votes.
    pub detox: Vec<EstimatorError>,
}

impl MeanEstReport {
    pub fn error_of(&self, name: &str) -> Option<f64> {
        self.plain
            .iter()
            .chain(&self.detox)
            .find(|e| e.name == name)
            .map(|e| e.error)
    }
}

/// Compare plain robust estimators against the filtered two-level pipeline on
/// the same corrupted sample set. True mean is the origin, so the reported
/// error is just the estimate's norm.
pub fn mean_estimation_experiment(cfg: &MeanEstConfig) -> Result<MeanEstReport, EngineError> {
    if cfg.d == 0 {
        return Err(EngineError::Core(CoreError::EmptyDimension));
    }
    if 2 * cfg.q >= cfg.p {
        return Err(EngineError::Core(CoreError::ByzantineRatio {
            p: cfg.p,
            q: cfg.q,
        }));
    }

    let mut data_rng = split_rng(cfg.seed, "mean-est/data");
    let samples: Vec<GradVec> = (0..cfg.p)
        .map(|_| {
            let vals: Vec<f64> = (0..cfg.d)
                .map(|_| data_rng.sample::<f64, _>(StandardNormal))
                .collect();
            GradVec::new(vals).expect("finite normal draw")
        })
        .collect();

    let partition = partition_nodes(cfg.p, cfg.r, &mut split_rng(cfg.seed, "mean-est/partition"))?;
    let byzantine: BTreeSet<usize> = place_byzantine(
        cfg.p,
        cfg.q,
        &partition,
        crate::adversary::Placement::RandomFixed,
        &mut split_rng(cfg.seed, "mean-est/placement"),
    );
    let payload = GradVec::new(vec![cfg.byz_norm / (cfg.d as f64).sqrt(); cfg.d])
        .expect("finite payload");

    let reported: Vec<GradVec> = (0..cfg.p)
        .map(|i| {
            if byzantine.contains(&i) {
                payload.clone()
            } else {
                samples[i].clone()
            }
        })
        .collect();

    let origin = GradVec::zeros(cfg.d);
    let plain_specs: Vec<(&str, AggregatorSpec)> = vec![
        ("mean", AggregatorSpec::Mean),
        ("coord_median", AggregatorSpec::CoordMedian),
        (
            "geo_median",
            AggregatorSpec::GeoMedian {
                tol: crate::aggregators::DEFAULT_GEO_TOL,
                max_iter: crate::aggregators::DEFAULT_GEO_MAX_ITER,
            },
        ),
        (
            "trimmed_mean",
            AggregatorSpec::TrimmedMean {
                alpha: cfg.q as f64 / cfg.p as f64,
            },
        ),
        ("krum", AggregatorSpec::Krum { q: cfg.q }),
    ];
    let mut plain = Vec::new();
    for (name, spec) in plain_specs {
        let est = spec.apply(&reported)?;
        plain.push(EstimatorError {
            name: name.to_string(),
            error: est.dist(&origin),
        });
    }

    // Redundant arm: every worker in group j reports the mean of the group's r
    // samples; colluders hijack the vote wherever they hold a strict majority.
    let honest_group_grads: Vec<GradVec> = partition
        .groups()
        .iter()
        .map(|g| {
            let mut acc = GradVec::zeros(cfg.d);
            for &w in g {
                acc.add_assign(&samples[w]);
            }
            acc.scale(1.0 / g.len() as f64)
        })
        .collect();
    let group_of = partition.group_of();
    let outputs: Vec<GradVec> = (0..cfg.p)
        .map(|i| {
            if byzantine.contains(&i) {
                payload.clone()
            } else {
                honest_group_grads[group_of[i]].clone()
            }
        })
        .collect();
    let votes = filter_votes(&outputs, &honest_group_grads, &partition)?;

    let detox_specs: Vec<(&str, AggregatorSpec, AggregatorSpec)> = vec![
        (
            "detox_mean_coord_median",
            AggregatorSpec::Mean,
            AggregatorSpec::CoordMedian,
        ),
        (
            "detox_mean_geo_median",
            AggregatorSpec::Mean,
            AggregatorSpec::GeoMedian {
                tol: crate::aggregators::DEFAULT_GEO_TOL,
                max_iter: crate::aggregators::DEFAULT_GEO_MAX_ITER,
            },
        ),
    ];
    let mut detox = Vec::new();
    for (name, agg0, agg1) in detox_specs {
        let est = hier_aggr(
            &votes.votes,
            cfg.k,
            &agg0,
            &agg1,
            &mut split_rng(cfg.seed, "mean-est/hier"),
        )?;
        detox.push(EstimatorError {
            name: name.to_string(),
            error: est.dist(&origin),
        });
    }

    Ok(MeanEstReport {
        config: cfg.clone(),
        plain,
        detox,
    })
}

/// Aggregation wall-clock comparison across worker counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub p_values: Vec<usize>,
    pub d: usize,
    pub r: usize,
    /// Fixed vote-group size of the filtered arm.
    pub k: usize,
    /// Byzantine bound handed to the plain robust aggregator.
    pub q_frac: f64,
    pub reps: usize,
    pub warmups: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub p: usize,
    /// Best wall clock of the plain robust aggregator over p vectors.
    pub plain_nanos: u128,
    /// Best wall clock of majority voting plus two-level aggregation.
    pub detox_nanos: u128,
}

fn best_nanos(samples: &[u128]) -> u128 {
    *samples.iter().min().expect("reps >= 1")
}

/// Time a plain quadratic-cost robust aggregator against vote filtering with
/// linear-cost two-level aggregation, on identical random inputs. Each
/// measurement is the best of `reps` runs after `warmups` discarded runs; the
/// minimum estimates intrinsic cost and discards scheduling noise.
pub fn timing_probe(cfg: &TimingConfig) -> Result<Vec<TimingRow>, EngineError> {
    let mut rows = Vec::new();
    for &p in &cfg.p_values {
        if p % cfg.r != 0 || (p / cfg.r) % cfg.k != 0 {
            return Err(EngineError::Core(CoreError::Divisibility(format!(
                "p={p} incompatible with r={} k={}",
                cfg.r, cfg.k
            ))));
        }
        let mut rng = split_rng(cfg.seed, "timing/data");
        let vectors: Vec<GradVec> = (0..p)
            .map(|_| {
                let vals: Vec<f64> = (0..cfg.d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                GradVec::new(vals).expect("finite draw")
            })
            .collect();
        let q = ((p as f64 * cfg.q_frac) as usize).min((p - 3) / 4);
        let plain_spec = AggregatorSpec::Bulyan { q, inner: None };

        let mut plain_samples = Vec::new();
        for rep in 0..cfg.warmups + cfg.reps {
            let t0 = Instant::now();
            let out = plain_spec.apply(&vectors)?;
            let dt = t0.elapsed().as_nanos();
            std::hint::black_box(out);
            if rep >= cfg.warmups {
                plain_samples.push(dt);
            }
        }

        let partition = partition_nodes(p, cfg.r, &mut split_rng(cfg.seed, "timing/part"))?;
        let group_of = partition.group_of();
        let honest: Vec<GradVec> = partition
            .groups()
            .iter()
            .map(|g| vectors[g[0]].clone())
            .collect();
        let outputs: Vec<GradVec> = (0..p).map(|i| honest[group_of[i]].clone()).collect();
        let agg1 = AggregatorSpec::CoordMedian;
        let mut detox_samples = Vec::new();
        for rep in 0..cfg.warmups + cfg.reps {
            let mut hrng = split_rng(cfg.seed, "timing/hier");
            let t0 = Instant::now();
            let votes = filter_votes(&outputs, &honest, &partition)?;
            let out = hier_aggr(&votes.votes, cfg.k, &AggregatorSpec::Mean, &agg1, &mut hrng)?;
            let dt = t0.elapsed().as_nanos();
            std::hint::black_box(out);
            if rep >= cfg.warmups {
                detox_samples.push(dt);
            }
        }

        rows.push(TimingRow {
            p,
            plain_nanos: best_nanos(&plain_samples),
            detox_nanos: best_nanos(&detox_samples),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AttackSpec;
    use crate::config::LrSchedule;

    fn small_cfg(q: usize, attack: AttackSpec) -> DetoxConfig {
        DetoxConfig {
            p: 15,
            q,
            r: 3,
            b: 60,
            k: 5,
            d: 4,
            agg0: AggregatorSpec::Mean,
            agg1: AggregatorSpec::CoordMedian,
            attack,
            lr_schedule: LrSchedule::Constant { eta: 0.2 },
            seed: 11,
            iterations: 40,
        }
    }

    fn small_task(d: usize) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::LinearRegression,
            d,
            n: 300,
            noise_sigma: 0.5,
            wstar_norm: 3.0,
            seed: 5,
        }
    }

    #[test]
    fn clean_run_decreases_loss() {
        let rec = run_training(&small_cfg(0, AttackSpec::none()), &small_task(4)).unwrap();
        assert_eq!(rec.iterations.len(), 40);
        assert!(rec.final_loss < 0.2 * rec.initial_loss);
        assert_eq!(rec.mean_qhat(), 0.0);
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = small_cfg(2, AttackSpec::reverse_gradient(1.0));
        let a = run_training(&cfg, &small_task(4)).unwrap();
        let b = run_training(&cfg, &small_task(4)).unwrap();
        assert_eq!(a.final_model, b.final_model);
        // everything except the wall-clock column must replay exactly
        let strip = |csv: String| -> Vec<String> {
            csv.lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        assert_eq!(strip(a.to_csv()), strip(b.to_csv()));
    }

    #[test]
    fn run_rejects_dimension_mismatch() {
        assert!(run_training(&small_cfg(0, AttackSpec::none()), &small_task(3)).is_err());
    }

    #[test]
    fn delta_recorded_every_iteration() {
        let rec = run_training(&small_cfg(2, AttackSpec::constant(-1.0)), &small_task(4)).unwrap();
        assert!(rec.iterations.iter().all(|r| r.delta.is_some()));
        assert!(rec.mean_delta().unwrap() > 0.0);
    }

    #[test]
    fn csv_shape() {
        let rec = run_training(&small_cfg(0, AttackSpec::none()), &small_task(4)).unwrap();
        let csv = rec.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 41);
        assert!(lines[0].starts_with("t,eta,loss"));
        assert_eq!(lines[1].split(',').count(), 7);
    }

    /// Delta shrinks roughly like 1/sqrt(b) when only the batch size changes.
    #[test]
    fn delta_scales_with_batch() {
        let mut cfg_small = small_cfg(0, AttackSpec::none());
        cfg_small.p = 16;
        cfg_small.r = 1;
        cfg_small.k = 4;
        cfg_small.b = 64;
        cfg_small.iterations = 30;
        let mut cfg_big = cfg_small.clone();
        cfg_big.b = 256;
        let task = small_task(4);
        let small = run_training(&cfg_small, &task).unwrap();
        let big = run_training(&cfg_big, &task).unwrap();
        let ratio = big.mean_delta().unwrap() / small.mean_delta().unwrap();
        assert!((0.3..0.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn mean_est_detox_beats_plain_mean() {
        let cfg = MeanEstConfig {
            d: 20,
            p: 120,
            q: 10,
            r: 3,
            k: 4,
            byz_norm: 100.0,
            seed: 3,
        };
        let rep = mean_estimation_experiment(&cfg).unwrap();
        let mean_err = rep.error_of("mean").unwrap();
        let detox_err = rep.error_of("detox_mean_coord_median").unwrap();
        assert!(detox_err < mean_err, "detox {detox_err} vs mean {mean_err}");
        // the attack payload drags the plain mean far from the origin
        assert!(mean_err > 5.0);
    }

    #[test]
    fn mean_est_deterministic() {
        let cfg = MeanEstConfig {
            d: 10,
            p: 60,
            q: 5,
            r: 3,
            k: 4,
            byz_norm: 100.0,
            seed: 9,
        };
        let a = mean_estimation_experiment(&cfg).unwrap();
        let b = mean_estimation_experiment(&cfg).unwrap();
        for (x, y) in a.plain.iter().zip(&b.plain) {
            assert_eq!(x.error.to_bits(), y.error.to_bits());
        }
    }

    #[test]
    fn timing_probe_shapes() {
        let cfg = TimingConfig {
            p_values: vec![20, 40],
            d: 50,
            r: 5,
            k: 4,
            q_frac: 0.1,
            reps: 3,
            warmups: 1,
            seed: 1,
        };
        let rows = timing_probe(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.plain_nanos > 0 && r.detox_nanos > 0));
    }
}
