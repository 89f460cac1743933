//! Robust aggregation rules, usable standalone or as the two levels of the
//! hierarchical aggregation stage.
//!
//! All operations are pure functions of their inputs. Selection rules (Krum,
//! Multi-Krum, Bulyan) break ties deterministically by input index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::GradVec;

pub const GEO_MEDIAN_SMOOTHING: f64 = 1e-10;
pub const DEFAULT_GEO_TOL: f64 = 1e-9;
pub const DEFAULT_GEO_MAX_ITER: usize = 500;

#[derive(Debug, Error, Clone)]
pub enum AggError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("too few vectors: need at least {needed}, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("bad m={m}: must satisfy 1 <= m <= n-q-2 = {max}")]
    BadM { m: usize, max: usize },
    #[error("trim too large: alpha={alpha} removes {removed} of {n} values")]
    TrimTooLarge { alpha: f64, removed: usize, n: usize },
    #[error("weiszfeld did not converge: residual {residual} > tol after {iters} iterations")]
    NonConvergence {
        best: GradVec,
        residual: f64,
        iters: usize,
    },
    #[error("inner aggregator output is not an element of the selection pool")]
    InvalidInner,
}

fn check_dims(vs: &[GradVec]) -> Result<usize, AggError> {
    let first = vs.first().ok_or(AggError::EmptyInput)?;
    let d = first.dim();
    for v in vs {
        if v.dim() != d {
            return Err(AggError::DimensionMismatch {
                expected: d,
                got: v.dim(),
            });
        }
    }
    Ok(d)
}

/// Coordinate-wise arithmetic mean; summation in input order.
pub fn mean(vs: &[GradVec]) -> Result<GradVec, AggError> {
    let d = check_dims(vs)?;
    let mut acc = vec![0.0; d];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    Ok(GradVec::new(acc.into_iter().map(|a| a / n).collect()).expect("finite inputs"))
}

fn median_of(col: &mut [f64]) -> f64 {
    let n = col.len();
    let mid = n / 2;
    if n % 2 == 1 {
        let (_, m, _) = col.select_nth_unstable_by(mid, f64::total_cmp);
        *m
    } else {
        // mean of the two middle order statistics
        let (left, m, _) = col.select_nth_unstable_by(mid, f64::total_cmp);
        let hi = *m;
        let lo = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo + hi) / 2.0
    }
}

/// Per-coordinate median; even counts use the midpoint of the middle pair.
pub fn coord_median(vs: &[GradVec]) -> Result<GradVec, AggError> {
    let d = check_dims(vs)?;
    let mut out = Vec::with_capacity(d);
    let mut col = vec![0.0; vs.len()];
    for c in 0..d {
        for (i, v) in vs.iter().enumerate() {
            col[i] = v[c];
        }
        out.push(median_of(&mut col));
    }
    Ok(GradVec::new(out).expect("finite inputs"))
}

/// Objective of the geometric median problem, sum of Euclidean distances.
pub fn geo_median_objective(x: &GradVec, vs: &[GradVec]) -> f64 {
    vs.iter().map(|v| x.dist(v)).sum()
}

/// Smoothed Weiszfeld iteration for the geometric median.
///
/// Initialized at the coordinate-wise median; each distance is smoothed by a
/// tiny constant so the iteration is defined when an iterate lands on an input
/// point. Stops when the step norm drops below `tol`; hitting `max_iter` first
/// yields [`AggError::NonConvergence`] carrying the best iterate.
pub fn geo_median(vs: &[GradVec], tol: f64, max_iter: usize) -> Result<GradVec, AggError> {
    let d = check_dims(vs)?;
    if vs.len() == 1 {
        return Ok(vs[0].clone());
    }
    let mut x = coord_median(vs)?;
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for v in vs {
            let w = 1.0 / (x.dist(v) + GEO_MEDIAN_SMOOTHING);
            den += w;
            for (a, b) in num.iter_mut().zip(v.as_slice()) {
                *a += b * w;
            }
        }
        let next = GradVec::new(num.into_iter().map(|a| a / den).collect()).expect("finite");
        residual = next.dist(&x);
        x = next;
        if residual <= tol {
            return Ok(x);
        }
        let _ = it;
    }
    Err(AggError::NonConvergence {
        best: x,
        residual,
        iters: max_iter,
    })
}

/// Per coordinate, drop the `ceil(alpha*n)` largest and smallest values and
/// average the rest.
pub fn trimmed_mean(vs: &[GradVec], alpha: f64) -> Result<GradVec, AggError> {
    let d = check_dims(vs)?;
    let n = vs.len();
    let t = (alpha * n as f64).ceil() as usize;
    if 2 * t >= n {
        return Err(AggError::TrimTooLarge {
            alpha,
            removed: 2 * t,
            n,
        });
    }
    let mut out = Vec::with_capacity(d);
    let mut col = vec![0.0; n];
    for c in 0..d {
        for (i, v) in vs.iter().enumerate() {
            col[i] = v[c];
        }
        col.sort_by(f64::total_cmp);
        let kept = &col[t..n - t];
        out.push(kept.iter().sum::<f64>() / kept.len() as f64);
    }
    Ok(GradVec::new(out).expect("finite inputs"))
}

/// Squared-distance matrix of the inputs.
pub fn pairwise_sq_dists(vs: &[GradVec]) -> Vec<Vec<f64>> {
    let n = vs.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = vs[i]
                .as_slice()
                .iter()
                .zip(vs[j].as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            m[i][j] = d2;
            m[j][i] = d2;
        }
    }
    m
}

/// Krum scores over the active subset of a precomputed distance matrix.
///
/// Score of i = sum of squared distances to its closest `m-q-2` other active
/// inputs (m = active pool size), clamped to `[0, m-1]` neighbors so the late
/// rounds of Bulyan's shrinking selection pool stay defined.
fn krum_scores_active(dist2: &[Vec<f64>], active: &[usize], q: usize) -> Vec<f64> {
    let m = active.len();
    let neighbors = m.saturating_sub(q + 2).min(m.saturating_sub(1));
    let mut scores = Vec::with_capacity(m);
    let mut ds = Vec::with_capacity(m.saturating_sub(1));
    for &i in active {
        ds.clear();
        for &j in active {
            if j != i {
                ds.push(dist2[i][j]);
            }
        }
        ds.sort_by(f64::total_cmp);
        scores.push(ds[..neighbors].iter().sum());
    }
    scores
}

fn krum_select(vs: &[GradVec], q: usize) -> Result<Vec<(f64, usize)>, AggError> {
    check_dims(vs)?;
    let n = vs.len();
    if n < 2 * q + 3 {
        return Err(AggError::TooFewVectors {
            needed: 2 * q + 3,
            got: n,
        });
    }
    let dist2 = pairwise_sq_dists(vs);
    let active: Vec<usize> = (0..n).collect();
    let scores = krum_scores_active(&dist2, &active, q);
    let mut ranked: Vec<(f64, usize)> = scores.into_iter().zip(0..n).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked)
}

/// The input minimizing the Krum score; ties broken by lowest input index.
pub fn krum(vs: &[GradVec], q: usize) -> Result<GradVec, AggError> {
    let ranked = krum_select(vs, q)?;
    Ok(vs[ranked[0].1].clone())
}

/// Mean of the `m` lowest-Krum-score inputs.
pub fn multi_krum(vs: &[GradVec], q: usize, m: usize) -> Result<GradVec, AggError> {
    let n = vs.len();
    if n >= 2 * q + 3 {
        let max = n - q - 2;
        if m < 1 || m > max {
            return Err(AggError::BadM { m, max });
        }
    }
    let ranked = krum_select(vs, q)?;
    let chosen: Vec<GradVec> = ranked[..m].iter().map(|&(_, i)| vs[i].clone()).collect();
    mean(&chosen)
}

/// Bulyan: repeated selection by `inner` (default Krum) of `n-2q` vectors,
/// then per coordinate the average of the `n-4q` values closest to the
/// coordinate-wise median of the selected set.
pub fn bulyan(vs: &[GradVec], q: usize, inner: Option<&AggregatorSpec>) -> Result<GradVec, AggError> {
    let d = check_dims(vs)?;
    let n = vs.len();
    if n < 4 * q + 3 {
        return Err(AggError::TooFewVectors {
            needed: 4 * q + 3,
            got: n,
        });
    }
    let rounds = n - 2 * q;
    let mut active: Vec<usize> = (0..n).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(rounds);

    match inner {
        None | Some(AggregatorSpec::Krum { .. }) => {
            let q_inner = match inner {
                Some(AggregatorSpec::Krum { q: qi }) => *qi,
                _ => q,
            };
            // distance matrix computed once; selection rounds are O(m^2) each
            let dist2 = pairwise_sq_dists(vs);
            for _ in 0..rounds {
                let scores = krum_scores_active(&dist2, &active, q_inner);
                let best = scores
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(active[a.0].cmp(&active[b.0])))
                    .map(|(pos, _)| pos)
                    .expect("non-empty pool");
                selected.push(active.remove(best));
            }
        }
        Some(spec) => {
            for _ in 0..rounds {
                let pool: Vec<GradVec> = active.iter().map(|&i| vs[i].clone()).collect();
                let winner = spec.apply(&pool)?;
                let pos = pool
                    .iter()
                    .position(|v| v.bitwise_eq(&winner))
                    .ok_or(AggError::InvalidInner)?;
                selected.push(active.remove(pos));
            }
        }
    }

    // aggregation phase: per coordinate keep the n-4q values nearest the
    // coordinate-wise median of the selected set
    let sel: Vec<&GradVec> = selected.iter().map(|&i| &vs[i]).collect();
    let theta = sel.len();
    let beta = n - 4 * q;
    let mut out = Vec::with_capacity(d);
    let mut col: Vec<f64> = Vec::with_capacity(theta);
    // process coordinates in blocks: the column gathers then hit a compact
    // cache-resident buffer instead of striding across all selected vectors
    const BLOCK: usize = 256;
    let mut buf = vec![0.0f64; theta * BLOCK.min(d)];
    for start in (0..d).step_by(BLOCK) {
        let len = BLOCK.min(d - start);
        for (vi, v) in sel.iter().enumerate() {
            buf[vi * len..(vi + 1) * len].copy_from_slice(&v.as_slice()[start..start + len]);
        }
        for c in 0..len {
            col.clear();
            col.extend((0..theta).map(|vi| buf[vi * len + c]));
            // one sort per coordinate; d dominates the cost. The beta values
            // closest to the median form a contiguous window of the sorted
            // column, so a two-pointer shrink finds them without a second
            // selection pass. Ties in distance keep the smaller value.
            col.sort_unstable_by(f64::total_cmp);
            let med = if theta % 2 == 1 {
                col[theta / 2]
            } else {
                (col[theta / 2 - 1] + col[theta / 2]) / 2.0
            };
            let mut lo = 0usize;
            let mut hi = theta;
            while hi - lo > beta {
                if med - col[lo] > col[hi - 1] - med {
                    lo += 1;
                } else {
                    hi -= 1;
                }
            }
            out.push(col[lo..hi].iter().sum::<f64>() / beta as f64);
        }
    }
    Ok(GradVec::new(out).expect("finite inputs"))
}

/// Per coordinate: sign of the sum of input signs, in {-1, 0, +1}.
pub fn sign_majority(vs: &[GradVec]) -> Result<GradVec, AggError> {
    let d = check_dims(vs)?;
    fn sgn(x: f64) -> f64 {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
    let mut out = Vec::with_capacity(d);
    for c in 0..d {
        let s: f64 = vs.iter().map(|v| sgn(v[c])).sum();
        out.push(if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        });
    }
    Ok(GradVec::new(out).expect("finite inputs"))
}

fn default_geo_tol() -> f64 {
    DEFAULT_GEO_TOL
}
fn default_geo_max_iter() -> usize {
    DEFAULT_GEO_MAX_ITER
}

/// Aggregator selection, serializable as part of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorSpec {
    Mean,
    CoordMedian,
    GeoMedian {
        #[serde(default = "default_geo_tol")]
        tol: f64,
        #[serde(default = "default_geo_max_iter")]
        max_iter: usize,
    },
    TrimmedMean {
        alpha: f64,
    },
    Krum {
        q: usize,
    },
    MultiKrum {
        q: usize,
        m: usize,
    },
    Bulyan {
        q: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner: Option<Box<AggregatorSpec>>,
    },
    SignMajority,
}

impl AggregatorSpec {
    pub fn geo_median_default() -> Self {
        AggregatorSpec::GeoMedian {
            tol: DEFAULT_GEO_TOL,
            max_iter: DEFAULT_GEO_MAX_ITER,
        }
    }

    pub fn validate(&self) -> Result<(), AggError> {
        match self {
            AggregatorSpec::TrimmedMean { alpha } => {
                if !(0.0..0.5).contains(alpha) {
                    return Err(AggError::TrimTooLarge {
                        alpha: *alpha,
                        removed: 0,
                        n: 0,
                    });
                }
            }
            AggregatorSpec::GeoMedian { tol, max_iter } => {
                if *tol <= 0.0 || *max_iter == 0 {
                    return Err(AggError::NonConvergence {
                        best: GradVec::zeros(1),
                        residual: *tol,
                        iters: *max_iter,
                    });
                }
            }
            AggregatorSpec::MultiKrum { m, .. } if *m == 0 => {
                return Err(AggError::BadM { m: 0, max: 0 });
            }
            _ => {}
        }
        Ok(())
    }

    /// Apply the aggregator. A non-converged Weiszfeld iteration yields its
    /// best iterate rather than aborting the pipeline.
    pub fn apply(&self, vs: &[GradVec]) -> Result<GradVec, AggError> {
        match self {
            AggregatorSpec::Mean => mean(vs),
            AggregatorSpec::CoordMedian => coord_median(vs),
            AggregatorSpec::GeoMedian { tol, max_iter } => match geo_median(vs, *tol, *max_iter) {
                Ok(v) => Ok(v),
                Err(AggError::NonConvergence { best, .. }) => Ok(best),
                Err(e) => Err(e),
            },
            AggregatorSpec::TrimmedMean { alpha } => trimmed_mean(vs, *alpha),
            AggregatorSpec::Krum { q } => krum(vs, *q),
            AggregatorSpec::MultiKrum { q, m } => multi_krum(vs, *q, *m),
            AggregatorSpec::Bulyan { q, inner } => bulyan(vs, *q, inner.as_deref()),
            AggregatorSpec::SignMajority => sign_majority(vs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gv(vals: &[f64]) -> GradVec {
        GradVec::new(vals.to_vec()).unwrap()
    }

    #[test]
    fn mean_two_points() {
        let out = mean(&[gv(&[1.0, 2.0]), gv(&[3.0, 4.0])]).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn mean_singleton_identity() {
        let v = gv(&[0.5, -7.0]);
        assert_eq!(mean(std::slice::from_ref(&v)).unwrap(), v);
    }

    #[test]
    fn coord_median_odd_even() {
        assert_eq!(
            coord_median(&[gv(&[0.0]), gv(&[10.0]), gv(&[1.0])])
                .unwrap()
                .as_slice(),
            &[1.0]
        );
        assert_eq!(
            coord_median(&[gv(&[0.0]), gv(&[10.0])]).unwrap().as_slice(),
            &[5.0]
        );
    }

    #[test]
    fn geo_median_identical_points() {
        let v = gv(&[1.0, -3.0]);
        let out = geo_median(&[v.clone(), v.clone(), v.clone()], 1e-9, 100).unwrap();
        assert!(out.dist(&v) <= 1e-8);
    }

    #[test]
    fn geo_median_collinear_is_median() {
        let out = geo_median(&[gv(&[0.0]), gv(&[1.0]), gv(&[10.0])], 1e-10, 500).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trimmed_mean_quarter() {
        let vs = [gv(&[0.0]), gv(&[1.0]), gv(&[2.0]), gv(&[100.0])];
        let out = trimmed_mean(&vs, 0.25).unwrap();
        assert_eq!(out.as_slice(), &[1.5]);
    }

    #[test]
    fn trimmed_mean_alpha_zero_is_mean() {
        let vs = [gv(&[0.5, 1.0]), gv(&[2.5, -3.0]), gv(&[4.0, 9.0])];
        let tm = trimmed_mean(&vs, 0.0).unwrap();
        let mn = mean(&vs).unwrap();
        assert!(tm.dist(&mn) < 1e-15);
    }

    #[test]
    fn trimmed_mean_rejects_overtrim() {
        let vs = [gv(&[0.0]), gv(&[1.0])];
        assert!(matches!(
            trimmed_mean(&vs, 0.49),
            Err(AggError::TrimTooLarge { .. })
        ));
    }

    #[test]
    fn krum_rejects_outlier() {
        let v = gv(&[1.0, 1.0]);
        let w = gv(&[100.0, -100.0]);
        let vs = [v.clone(), v.clone(), v.clone(), v.clone(), w];
        assert_eq!(krum(&vs, 1).unwrap(), v);
    }

    #[test]
    fn krum_tie_breaks_by_index() {
        let v = gv(&[2.0]);
        let vs = vec![v.clone(); 5];
        assert_eq!(krum(&vs, 1).unwrap(), v);
    }

    #[test]
    fn krum_too_few() {
        let vs = vec![gv(&[0.0]); 4];
        assert!(matches!(
            krum(&vs, 1),
            Err(AggError::TooFewVectors { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn multi_krum_m1_is_krum() {
        let vs: Vec<GradVec> = (0..7).map(|i| gv(&[i as f64, (i * i) as f64])).collect();
        assert_eq!(multi_krum(&vs, 2, 1).unwrap(), krum(&vs, 2).unwrap());
    }

    #[test]
    fn multi_krum_identical_inputs() {
        let v = gv(&[3.0, -1.0]);
        let vs = vec![v.clone(); 7];
        assert_eq!(multi_krum(&vs, 0, 5).unwrap(), v);
    }

    #[test]
    fn multi_krum_bad_m() {
        let vs = vec![gv(&[0.0]); 7];
        assert!(matches!(multi_krum(&vs, 2, 4), Err(AggError::BadM { .. })));
    }

    #[test]
    fn bulyan_degenerate_identical() {
        let v = gv(&[1.0, 2.0]);
        let vs = vec![v.clone(); 3];
        assert_eq!(bulyan(&vs, 0, None).unwrap(), v);
    }

    #[test]
    fn bulyan_removes_outlier() {
        let v = gv(&[1.0, -1.0]);
        let mut vs = vec![v.clone(); 6];
        vs.push(gv(&[500.0, 500.0]));
        let out = bulyan(&vs, 1, None).unwrap();
        assert!(out.dist(&v) < 1e-12);
    }

    #[test]
    fn sign_majority_basic() {
        assert_eq!(
            sign_majority(&[gv(&[2.0]), gv(&[-1.0]), gv(&[0.5])])
                .unwrap()
                .as_slice(),
            &[1.0]
        );
        assert_eq!(
            sign_majority(&[gv(&[1.0]), gv(&[-1.0])]).unwrap().as_slice(),
            &[0.0]
        );
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = AggregatorSpec::Bulyan {
            q: 2,
            inner: Some(Box::new(AggregatorSpec::Krum { q: 1 })),
        };
        let js = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<AggregatorSpec>(&js).unwrap(), spec);
        let mean: AggregatorSpec = serde_json::from_str(r#"{"kind":"mean"}"#).unwrap();
        assert_eq!(mean, AggregatorSpec::Mean);
    }
}
