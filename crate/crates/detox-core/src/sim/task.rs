//! Synthetic learning tasks exposing gradients to the training loop.
//!
//! Each task holds a fixed dataset drawn from its own seeded stream, so two
//! runs with the same spec see identical data regardless of the experiment
//! seed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::GradientOracle;
use crate::rng::split_rng;
use crate::types::{CoreError, GradVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Least squares on y = x . w* + noise.
    LinearRegression,
    /// Logistic loss on labels drawn Bernoulli(sigmoid(x . w*)).
    LogisticRegression,
    /// Estimate the mean of n Gaussian samples; loss 0.5 mean ||w - z_i||^2.
    MeanEstimation,
}

fn default_noise() -> f64 {
    0.5
}
fn default_wstar_norm() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d: usize,
    pub n: usize,
    /// Additive label noise (linear regression) or sample spread.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Norm of the planted parameter vector.
    #[serde(default = "default_wstar_norm")]
    pub wstar_norm: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn build(&self) -> Result<Task, CoreError> {
        Task::new(self)
    }
}

/// A realized dataset. Features (or samples, for mean estimation) are stored
/// row-wise as gradient vectors.
#[derive(Debug, Clone)]
pub struct Task {
    spec: TaskSpec,
    xs: Vec<GradVec>,
    ys: Vec<f64>,
    w_star: GradVec,
}

fn normal_vec(d: usize, rng: &mut impl Rng) -> GradVec {
    let vals: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    GradVec::new(vals).expect("finite normal draw")
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl Task {
    pub fn new(spec: &TaskSpec) -> Result<Self, CoreError> {
        if spec.d == 0 {
            return Err(CoreError::EmptyDimension);
        }
        if spec.n == 0 {
            return Err(CoreError::Divisibility("task needs n >= 1 samples".into()));
        }
        let mut rng = split_rng(spec.seed, "task/data");
        let raw = normal_vec(spec.d, &mut rng);
        let w_star = raw.scale(spec.wstar_norm / raw.norm().max(1e-300));

        let mut xs = Vec::with_capacity(spec.n);
        let mut ys = Vec::with_capacity(spec.n);
        match spec.kind {
            TaskKind::LinearRegression => {
                for _ in 0..spec.n {
                    let x = normal_vec(spec.d, &mut rng);
                    let noise: f64 = rng.sample::<f64, _>(StandardNormal);
                    ys.push(x.dot(&w_star) + spec.noise_sigma * noise);
                    xs.push(x);
                }
            }
            TaskKind::LogisticRegression => {
                for _ in 0..spec.n {
                    let x = normal_vec(spec.d, &mut rng);
                    let prob = sigmoid(x.dot(&w_star));
                    ys.push(f64::from(rng.random::<f64>() < prob));
                    xs.push(x);
                }
            }
            TaskKind::MeanEstimation => {
                for _ in 0..spec.n {
                    let z = w_star.add(&normal_vec(spec.d, &mut rng).scale(spec.noise_sigma));
                    ys.push(0.0);
                    xs.push(z);
                }
            }
        }
        Ok(Task {
            spec: spec.clone(),
            xs,
            ys,
            w_star,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn w_star(&self) -> &GradVec {
        &self.w_star
    }

    /// Mean loss over the whole dataset.
    pub fn loss(&self, w: &GradVec) -> f64 {
        let n = self.xs.len() as f64;
        match self.spec.kind {
            TaskKind::LinearRegression => {
                self.xs
                    .iter()
                    .zip(&self.ys)
                    .map(|(x, &y)| {
                        let e = x.dot(w) - y;
                        0.5 * e * e
                    })
                    .sum::<f64>()
                    / n
            }
            TaskKind::LogisticRegression => {
                self.xs
                    .iter()
                    .zip(&self.ys)
                    .map(|(x, &y)| {
                        let m = x.dot(w);
                        softplus(m) - y * m
                    })
                    .sum::<f64>()
                    / n
            }
            TaskKind::MeanEstimation => {
                self.xs
                    .iter()
                    .map(|z| {
                        let e = w.dist(z);
                        0.5 * e * e
                    })
                    .sum::<f64>()
                    / n
            }
        }
    }

    fn grad_one(&self, w: &GradVec, i: usize) -> GradVec {
        match self.spec.kind {
            TaskKind::LinearRegression => {
                let e = self.xs[i].dot(w) - self.ys[i];
                self.xs[i].scale(e)
            }
            TaskKind::LogisticRegression => {
                let e = sigmoid(self.xs[i].dot(w)) - self.ys[i];
                self.xs[i].scale(e)
            }
            TaskKind::MeanEstimation => w.sub(&self.xs[i]),
        }
    }
}

impl GradientOracle for Task {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn num_samples(&self) -> usize {
        self.spec.n
    }

    fn grad_mean(&self, w: &GradVec, idxs: &[usize]) -> GradVec {
        debug_assert!(!idxs.is_empty());
        let mut acc = GradVec::zeros(self.spec.d);
        for &i in idxs {
            acc.add_assign(&self.grad_one(w, i));
        }
        acc.scale(1.0 / idxs.len() as f64)
    }

    fn full_grad(&self, w: &GradVec) -> Option<GradVec> {
        let idxs: Vec<usize> = (0..self.xs.len()).collect();
        Some(self.grad_mean(w, &idxs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind, d: usize, n: usize) -> TaskSpec {
        TaskSpec {
            kind,
            d,
            n,
            noise_sigma: 0.5,
            wstar_norm: 3.0,
            seed: 7,
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = spec(TaskKind::LinearRegression, 5, 20).build().unwrap();
        let b = spec(TaskKind::LinearRegression, 5, 20).build().unwrap();
        assert!(a.w_star().bitwise_eq(b.w_star()));
        assert_eq!(a.xs, b.xs);
        assert_eq!(a.ys, b.ys);
    }

    #[test]
    fn planted_norm_respected() {
        let t = spec(TaskKind::LogisticRegression, 8, 10).build().unwrap();
        assert!((t.w_star().norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_grad_matches_mean_of_per_sample() {
        for kind in [
            TaskKind::LinearRegression,
            TaskKind::LogisticRegression,
            TaskKind::MeanEstimation,
        ] {
            let t = spec(kind, 4, 12).build().unwrap();
            let w = GradVec::new(vec![0.5, -1.0, 0.0, 2.0]).unwrap();
            let full = t.full_grad(&w).unwrap();
            let mut acc = GradVec::zeros(4);
            for i in 0..12 {
                acc.add_assign(&t.grad_mean(&w, &[i]));
            }
            assert!(full.dist(&acc.scale(1.0 / 12.0)) < 1e-12);
        }
    }

    /// Finite-difference oracle for the analytic gradients.
    #[test]
    fn gradient_matches_finite_difference() {
        for kind in [
            TaskKind::LinearRegression,
            TaskKind::LogisticRegression,
            TaskKind::MeanEstimation,
        ] {
            let t = spec(kind, 3, 15).build().unwrap();
            let w = GradVec::new(vec![0.3, -0.7, 1.1]).unwrap();
            let g = t.full_grad(&w).unwrap();
            let h = 1e-6;
            for c in 0..3 {
                let mut wp = w.clone().into_vec();
                wp[c] += h;
                let mut wm = w.clone().into_vec();
                wm[c] -= h;
                let fd = (t.loss(&GradVec::new(wp).unwrap()) - t.loss(&GradVec::new(wm).unwrap()))
                    / (2.0 * h);
                assert!(
                    (fd - g[c]).abs() < 1e-4,
                    "{kind:?} coord {c}: fd={fd} analytic={}",
                    g[c]
                );
            }
        }
    }

    #[test]
    fn mean_estimation_minimizer_is_sample_mean() {
        let t = spec(TaskKind::MeanEstimation, 4, 50).build().unwrap();
        let mut mean = GradVec::zeros(4);
        for z in &t.xs {
            mean.add_assign(z);
        }
        let mean = mean.scale(1.0 / 50.0);
        let g = t.full_grad(&mean).unwrap();
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn gradient_descent_reduces_loss() {
        let t = spec(TaskKind::LinearRegression, 5, 200).build().unwrap();
        let mut w = GradVec::zeros(5);
        let l0 = t.loss(&w);
        for _ in 0..50 {
            let g = t.full_grad(&w).unwrap();
            w.add_assign_scaled(&g, -0.2);
        }
        assert!(t.loss(&w) < 0.1 * l0);
    }
}
