//! Exact and Monte Carlo analysis of the majority-vote filtering stage.
//!
//! The exact expectation of the number of surviving Byzantine votes is a
//! hypergeometric sum evaluated in big-integer arithmetic; the closed-form
//! bounds and tail estimates are checked against it and against simulation.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{split_rng, trial_seed};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("divisibility violated: {0}")]
    Divisibility(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("delta must lie in (0, 1/2), got {0}")]
    BadDelta(f64),
}

/// Binomial coefficient with the convention C(a, b) = 0 for b > a.
pub fn binomial(a: u64, b: u64) -> BigInt {
    if b > a {
        return BigInt::zero();
    }
    let b = b.min(a - b);
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..b {
        num *= a - i;
        den *= i + 1;
    }
    num / den
}

fn check_pqr(p: usize, q: usize, r: usize) -> Result<(), AnalysisError> {
    if r == 0 || r % 2 == 0 {
        return Err(AnalysisError::PreconditionViolated(format!(
            "r={r} must be odd"
        )));
    }
    if p == 0 || p % r != 0 {
        return Err(AnalysisError::Divisibility(format!(
            "r={r} does not divide p={p}"
        )));
    }
    if q > p {
        return Err(AnalysisError::PreconditionViolated(format!(
            "q={q} exceeds p={p}"
        )));
    }
    Ok(())
}

/// Exact E[q_hat] = (p/r) * sum_{i=0}^{(r-1)/2} C(q, r-i) C(p-q, i) / C(p, r).
///
/// Evaluated as one big rational so the only rounding is the final conversion
/// to f64.
pub fn exact_expected_qhat(p: usize, q: usize, r: usize) -> Result<f64, AnalysisError> {
    check_pqr(p, q, r)?;
    let (p64, q64, r64) = (p as u64, q as u64, r as u64);
    let mut num = BigInt::zero();
    for i in 0..=(r64 - 1) / 2 {
        num += binomial(q64, r64 - i) * binomial(p64 - q64, i);
    }
    num *= BigInt::from(p64 / r64);
    let ratio = BigRational::new(num, binomial(p64, r64));
    Ok(ratio.to_f64().expect("finite rational"))
}

/// Closed-form bound 2q(40 eps (1-eps))^{(r-1)/2} / r, valid for r > 3,
/// p >= 2r and eps = q/p < 1/40.
pub fn qhat_upper_bound(p: usize, q: usize, r: usize) -> Result<f64, AnalysisError> {
    check_pqr(p, q, r)?;
    if r <= 3 {
        return Err(AnalysisError::PreconditionViolated(format!(
            "r={r} must exceed 3"
        )));
    }
    if p < 2 * r {
        return Err(AnalysisError::PreconditionViolated(format!(
            "p={p} must be at least 2r={}",
            2 * r
        )));
    }
    let eps = q as f64 / p as f64;
    if eps >= 1.0 / 40.0 {
        return Err(AnalysisError::PreconditionViolated(format!(
            "eps={eps} must be below 1/40"
        )));
    }
    let base = 40.0 * eps * (1.0 - eps);
    Ok(2.0 * q as f64 * base.powi(((r - 1) / 2) as i32) / r as f64)
}

/// r = 3 bound q * eps * (4 - 2 eps) / 3.
pub fn r3_bound(q: usize, epsilon: f64) -> f64 {
    debug_assert!((0.0..0.5).contains(&epsilon));
    q as f64 * epsilon * (4.0 - 2.0 * epsilon) / 3.0
}

/// High-probability vote count 1 + 2 ln(1/delta), delta in (0, 1/2).
pub fn confidence_threshold(delta: f64) -> Result<f64, AnalysisError> {
    if !(0.0..0.5).contains(&delta) || delta <= 0.0 {
        return Err(AnalysisError::BadDelta(delta));
    }
    Ok(1.0 + 2.0 * (1.0 / delta).ln())
}

/// Tail bound (1/(1 + theta/2))^{E[q_hat] * theta/2} for
/// P[q_hat >= E[q_hat](1 + theta)].
pub fn tail_bound(p: usize, q: usize, r: usize, theta: f64) -> Result<f64, AnalysisError> {
    if theta <= 0.0 {
        return Err(AnalysisError::PreconditionViolated(format!(
            "theta={theta} must be positive"
        )));
    }
    let e = exact_expected_qhat(p, q, r)?;
    Ok((1.0 / (1.0 + theta / 2.0)).powf(e * theta / 2.0))
}

/// Empirical distribution of q_hat over uniformly random node partitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QhatDistribution {
    /// histogram[v] = number of trials with q_hat = v.
    pub histogram: Vec<u64>,
    pub trials: u64,
    pub mean: f64,
    pub std_error: f64,
}

impl QhatDistribution {
    /// Empirical P[q_hat >= threshold].
    pub fn tail_at_least(&self, threshold: f64) -> f64 {
        let count: u64 = self
            .histogram
            .iter()
            .enumerate()
            .filter(|(v, _)| *v as f64 >= threshold)
            .map(|(_, &c)| c)
            .sum();
        count as f64 / self.trials as f64
    }

    /// Empirical P[q_hat > threshold].
    pub fn tail_above(&self, threshold: f64) -> f64 {
        let count: u64 = self
            .histogram
            .iter()
            .enumerate()
            .filter(|(v, _)| *v as f64 > threshold)
            .map(|(_, &c)| c)
            .sum();
        count as f64 / self.trials as f64
    }
}

fn qhat_one_trial(p: usize, q: usize, r: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut byz = vec![false; p];
    for flag in byz.iter_mut().take(q) {
        *flag = true;
    }
    byz.shuffle(&mut rng);
    byz.chunks(r)
        .filter(|g| 2 * g.iter().filter(|&&b| b).count() > r)
        .count()
}

/// Monte Carlo q_hat: each trial draws a uniform partition and counts the
/// groups where Byzantine workers hold a strict majority. Trials run in
/// parallel with per-trial seeds, so the result is independent of thread
/// scheduling.
pub fn monte_carlo_qhat(
    p: usize,
    q: usize,
    r: usize,
    trials: u64,
    seed: u64,
) -> Result<QhatDistribution, AnalysisError> {
    check_pqr(p, q, r)?;
    if trials == 0 {
        return Err(AnalysisError::PreconditionViolated(
            "trials must be >= 1".into(),
        ));
    }
    let p_hat = p / r;
    let histogram = (0..trials)
        .into_par_iter()
        .fold(
            || vec![0u64; p_hat + 1],
            |mut h, t| {
                h[qhat_one_trial(p, q, r, trial_seed(seed, t))] += 1;
                h
            },
        )
        .reduce(
            || vec![0u64; p_hat + 1],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let n = trials as f64;
    let mean = histogram
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum::<f64>()
        / n;
    let var = histogram
        .iter()
        .enumerate()
        .map(|(v, &c)| (v as f64 - mean).powi(2) * c as f64)
        .sum::<f64>()
        / n;
    Ok(QhatDistribution {
        histogram,
        trials,
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Convergence-rate order terms (unit constant, logarithmic factors dropped);
/// qualitative magnitudes only, not calibrated bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    TrimmedMean,
    IterativeFiltering,
}

pub fn convergence_rate_bound(kind: RateKind, d: usize, n: usize, x: f64, with_detox: bool) -> f64 {
    let (d, n) = (d as f64, n as f64);
    match (kind, with_detox) {
        (RateKind::TrimmedMean, false) => d * x,
        (RateKind::TrimmedMean, true) => d / n,
        (RateKind::IterativeFiltering, false) => x.sqrt() + (d / n).sqrt(),
        (RateKind::IterativeFiltering, true) => (d / n).sqrt(),
    }
}

/// One analyzed grid point: exact expectation, applicable bounds, and the
/// Monte Carlo cross-check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterBoundReport {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub exact_expectation: f64,
    /// None when the (r > 3, p >= 2r, eps < 1/40) preconditions fail.
    pub qhat_upper_bound: Option<f64>,
    /// True when the closed-form bound preconditions fail, so only the exact
    /// and Monte Carlo columns are meaningful.
    pub precondition_skipped: bool,
    /// r = 3 closed form; None for other r.
    pub r3_bound: Option<f64>,
    pub delta: Option<f64>,
    pub confidence_threshold: Option<f64>,
    /// Empirical P[q_hat > confidence threshold].
    pub empirical_tail: Option<f64>,
    pub empirical_mean: f64,
    pub empirical_std_error: f64,
    pub trials: u64,
    /// True when every applicable check held on this grid point.
    pub passed: bool,
    pub violations: Vec<String>,
}

/// Evaluate one grid point: exact vs Monte Carlo (3 standard errors), the
/// applicable closed-form bounds, and the threshold tail when `delta` given.
pub fn analyze_point(
    p: usize,
    q: usize,
    r: usize,
    delta: Option<f64>,
    trials: u64,
    seed: u64,
) -> Result<FilterBoundReport, AnalysisError> {
    let exact = exact_expected_qhat(p, q, r)?;
    let mc = monte_carlo_qhat(p, q, r, trials, seed)?;
    let mut violations = Vec::new();

    let tol = 3.0 * mc.std_error.max(1e-12);
    if (mc.mean - exact).abs() > tol {
        violations.push(format!(
            "monte carlo mean {} deviates from exact {} by more than 3 SE",
            mc.mean, exact
        ));
    }

    let t1 = qhat_upper_bound(p, q, r).ok();
    if let Some(bound) = t1 {
        if exact > bound {
            violations.push(format!("exact {exact} exceeds closed-form bound {bound}"));
        }
    }
    let r3 = if r == 3 {
        let b = r3_bound(q, q as f64 / p as f64);
        if exact > b {
            violations.push(format!("exact {exact} exceeds r=3 bound {b}"));
        }
        Some(b)
    } else {
        None
    };

    let (threshold, tail) = match delta {
        Some(dl) => {
            let th = confidence_threshold(dl)?;
            let tail = mc.tail_above(th);
            if tail > dl {
                violations.push(format!("tail {tail} above threshold {th} exceeds delta {dl}"));
            }
            (Some(th), Some(tail))
        }
        None => (None, None),
    };

    Ok(FilterBoundReport {
        p,
        q,
        r,
        exact_expectation: exact,
        qhat_upper_bound: t1,
        precondition_skipped: t1.is_none() && r != 3,
        r3_bound: r3,
        delta,
        confidence_threshold: threshold,
        empirical_tail: tail,
        empirical_mean: mc.mean,
        empirical_std_error: mc.std_error,
        trials,
        passed: violations.is_empty(),
        violations,
    })
}

/// Monte Carlo estimate of P[X_i = 1 and X_j = 1] for the first two groups,
/// used to check the negative-correlation argument behind the tail bound.
pub fn pairwise_capture_probability(
    p: usize,
    q: usize,
    r: usize,
    trials: u64,
    seed: u64,
) -> Result<(f64, f64), AnalysisError> {
    check_pqr(p, q, r)?;
    let mut single = 0u64;
    let mut joint = 0u64;
    let mut rng = split_rng(seed, "pairwise");
    let mut byz = vec![false; p];
    for t in 0..trials {
        let _ = t;
        for (i, flag) in byz.iter_mut().enumerate() {
            *flag = i < q;
        }
        byz.shuffle(&mut rng);
        let cap0 = 2 * byz[..r].iter().filter(|&&b| b).count() > r;
        let cap1 = 2 * byz[r..2 * r].iter().filter(|&&b| b).count() > r;
        single += cap0 as u64;
        joint += (cap0 && cap1) as u64;
    }
    Ok((
        single as f64 / trials as f64,
        joint as f64 / trials as f64,
    ))
}
