/*
Copyright 2026 The isohash Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Evaluation metrics: maximum distortion with an optimal scale fit,
//! mean average precision of k-NN retrieval, and Kendall τ of k-NN rankings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{
    enumerate_secants, hash_codes, pair_at, secant_count, BinaryCodes, Dataset, HashModel,
    SecantPairs, SecantRef,
};

/// Above this many pairs the scale is fitted on a uniform sample.
pub const EXACT_FIT_PAIRS: u64 = 1_000_000;
const FIT_SAMPLE_SEED: u64 = 0x5eed_f17;
const HISTOGRAM_BUCKETS: usize = 20;
const SCAN_CHUNK: u64 = 1 << 16;

/// Result of minimizing max_i |λ v_i − c_i| over λ > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevFit {
    pub lambda_star: f64,
    pub delta: f64,
    /// Left and right subgradients of the objective bracket zero at `lambda_star`.
    pub certified: bool,
}

#[inline]
fn objective(v: &[f64], c: &[f64], lambda: f64) -> f64 {
    v.iter()
        .zip(c)
        .map(|(vi, ci)| (lambda * vi - ci).abs())
        .fold(0.0, f64::max)
}

/// Most violated rising line (λ v − c, v > 0) and falling line (c − λ v) at `lambda`.
fn active_lines(v: &[f64], c: &[f64], lambda: f64) -> (usize, f64, usize, f64) {
    let (mut a, mut a_val) = (usize::MAX, f64::NEG_INFINITY);
    let (mut b, mut b_val) = (usize::MAX, f64::NEG_INFINITY);
    for (i, (&vi, &ci)) in v.iter().zip(c).enumerate() {
        if vi > 0.0 {
            let up = lambda * vi - ci;
            if up > a_val || (up == a_val && vi > v[a]) {
                a = i;
                a_val = up;
            }
        }
        let down = ci - lambda * vi;
        if down > b_val || (down == b_val && b != usize::MAX && vi > v[b]) {
            b = i;
            b_val = down;
        }
    }
    (a, a_val, b, b_val)
}

/// Checks that the one-sided derivatives of g(λ) = max_i |λ v_i − c_i|
/// bracket zero at `lambda`, treating lines within a relative tolerance of the
/// maximum as active.
pub fn subgradient_certificate(v: &[f64], c: &[f64], lambda: f64, delta: f64) -> bool {
    let tol = 1e-9 * delta.max(1.0);
    let mut left = f64::INFINITY;
    let mut right = f64::NEG_INFINITY;
    for (&vi, &ci) in v.iter().zip(c) {
        let r = lambda * vi - ci;
        if (r - delta).abs() <= tol {
            left = left.min(vi);
            right = right.max(vi);
        }
        if (-r - delta).abs() <= tol {
            left = left.min(-vi);
            right = right.max(-vi);
        }
    }
    if !left.is_finite() {
        return false;
    }
    // At the boundary λ → 0 only the right derivative matters.
    let at_boundary = lambda <= f64::MIN_POSITIVE * 4.0;
    right >= 0.0 && (left <= 0.0 || at_boundary)
}

/// Minimizes g(λ) = max_i |λ v̂_i − c_i| over λ > 0 exactly.
///
/// g is convex and piecewise linear; its minimizer is where the upper
/// envelope of the rising lines λ v̂_i − c_i crosses that of the falling
/// lines c_i − λ v̂_i. The crossing is located by intersecting the two
/// currently active lines, safeguarded by a bisection bracket, and falls
/// back to golden-section search if the certificate does not hold.
pub fn fit_lambda_chebyshev(v_hat: &[f64], c: &[f64]) -> Result<ChebyshevFit> {
    if v_hat.len() != c.len() || v_hat.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "fit_lambda_chebyshev",
            expected: (1, v_hat.len()),
            found: (1, c.len()),
        });
    }
    if let Some(i) = v_hat.iter().chain(c).position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!(
            "fit_lambda_chebyshev needs finite nonnegative inputs (entry {i})"
        )));
    }
    if v_hat.iter().all(|&x| x == 0.0) {
        return Err(Error::Collapsed {
            max_c: c.iter().cloned().fold(0.0, f64::max),
        });
    }

    let h = |lambda: f64| {
        let (_, a, _, b) = active_lines(v_hat, c, lambda);
        a - b
    };

    let mut lo = 0.0;
    if h(lo) >= 0.0 {
        // Crossing at λ ≤ 0: the infimum is approached as λ → 0+.
        let lambda = f64::MIN_POSITIVE;
        let delta = objective(v_hat, c, lambda);
        return Ok(ChebyshevFit {
            lambda_star: lambda,
            delta,
            certified: subgradient_certificate(v_hat, c, lambda, delta),
        });
    }
    let vmin = v_hat.iter().cloned().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let cmax = c.iter().cloned().fold(0.0, f64::max);
    let mut hi = cmax / vmin + 1.0;
    while h(hi) < 0.0 {
        hi *= 2.0;
    }

    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..500 {
        let (a, a_val, b, b_val) = active_lines(v_hat, c, lambda);
        let gap = a_val - b_val;
        if gap < 0.0 {
            lo = lambda;
        } else if gap > 0.0 {
            hi = lambda;
        } else {
            break;
        }
        let candidate = (c[a] + c[b]) / (v_hat[a] + v_hat[b]);
        let next = if candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
        if next == lambda || hi - lo <= f64::EPSILON * hi {
            break;
        }
        lambda = next;
    }

    let mut delta = objective(v_hat, c, lambda);
    let mut certified = subgradient_certificate(v_hat, c, lambda, delta);
    if !certified {
        let (gl, gd) = golden_section(v_hat, c, 0.0, hi);
        if gd < delta {
            lambda = gl;
            delta = gd;
        }
        certified = subgradient_certificate(v_hat, c, lambda, delta);
    }
    debug_assert!(certified, "Chebyshev fit certificate failed at lambda {lambda}");
    Ok(ChebyshevFit {
        lambda_star: lambda,
        delta,
        certified,
    })
}

fn golden_section(v: &[f64], c: &[f64], mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = objective(v, c, x1);
    let mut f2 = objective(v, c, x2);
    for _ in 0..200 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = objective(v, c, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = objective(v, c, x2);
        }
        if b - a <= f64::EPSILON * b.max(1.0) {
            break;
        }
    }
    let lambda = (0.5 * (a + b)).max(f64::MIN_POSITIVE);
    (lambda, objective(v, c, lambda))
}

/// Maximum distortion of a model's codes over all pairs of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub delta: f64,
    pub lambda_star: f64,
    pub worst_secant: SecantRef,
    /// Counts of |λ* d_H − c| in equal-width buckets over [0, delta].
    pub histogram: Vec<u64>,
    pub pair_count: u64,
    /// Whether λ* was fitted on every pair (as opposed to a uniform sample).
    pub exact_fit: bool,
}

/// Fits λ* and δ over an explicit list of secants using quantized codes.
pub fn secant_distortion(codes: &BinaryCodes, secants: &[SecantRef]) -> Result<ChebyshevFit> {
    let v: Vec<f64> = secants.iter().map(|s| codes.distance(s.i, s.j) as f64).collect();
    let c: Vec<f64> = secants.iter().map(|s| s.c).collect();
    fit_lambda_chebyshev(&v, &c)
}

#[derive(Clone, Copy)]
struct Worst {
    residual: f64,
    index: u64,
    c: f64,
}

fn scan_worst(codes: &BinaryCodes, data: &Dataset, lambda: f64) -> Worst {
    let total = secant_count(data.len());
    let chunks: Vec<u64> = (0..total.div_ceil(SCAN_CHUNK)).collect();
    let partial: Vec<Worst> = chunks
        .par_iter()
        .map(|&k| {
            let start = k * SCAN_CHUNK;
            let end = (start + SCAN_CHUNK).min(total);
            let mut best = Worst {
                residual: f64::NEG_INFINITY,
                index: start,
                c: 0.0,
            };
            for (off, (i, j)) in SecantPairs::range(start, end).enumerate() {
                let c = data.distance(i, j);
                let r = (lambda * codes.distance(i, j) as f64 - c).abs();
                if r > best.residual {
                    best = Worst {
                        residual: r,
                        index: start + off as u64,
                        c,
                    };
                }
            }
            best
        })
        .collect();
    partial
        .into_iter()
        .reduce(|a, b| if b.residual > a.residual { b } else { a })
        .expect("at least one pair")
}

fn scan_histogram(codes: &BinaryCodes, data: &Dataset, lambda: f64, delta: f64) -> Vec<u64> {
    let total = secant_count(data.len());
    let chunks: Vec<u64> = (0..total.div_ceil(SCAN_CHUNK)).collect();
    let partial: Vec<Vec<u64>> = chunks
        .par_iter()
        .map(|&k| {
            let start = k * SCAN_CHUNK;
            let end = (start + SCAN_CHUNK).min(total);
            let mut hist = vec![0u64; HISTOGRAM_BUCKETS];
            for (i, j) in SecantPairs::range(start, end) {
                let r = (lambda * codes.distance(i, j) as f64 - data.distance(i, j)).abs();
                hist[bucket(r, delta)] += 1;
            }
            hist
        })
        .collect();
    let mut hist = vec![0u64; HISTOGRAM_BUCKETS];
    for h in partial {
        for (acc, x) in hist.iter_mut().zip(h) {
            *acc += x;
        }
    }
    hist
}

fn bucket(r: f64, delta: f64) -> usize {
    if delta <= 0.0 {
        return 0;
    }
    ((r / delta * HISTOGRAM_BUCKETS as f64) as usize).min(HISTOGRAM_BUCKETS - 1)
}

/// δ of `model` on every pair of `data` (training or held-out).
pub fn max_distortion(model: &HashModel, data: &Dataset) -> Result<DistortionReport> {
    let codes = hash_codes(model, data)?;
    codes_distortion(&codes, data)
}

/// δ of precomputed codes over every pair of `data`.
pub fn codes_distortion(codes: &BinaryCodes, data: &Dataset) -> Result<DistortionReport> {
    let total = secant_count(data.len());
    let exact_fit = total <= EXACT_FIT_PAIRS;
    let (v, c): (Vec<f64>, Vec<f64>) = if exact_fit {
        enumerate_secants(data.len())
            .map(|(i, j)| (codes.distance(i, j) as f64, data.distance(i, j)))
            .unzip()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(FIT_SAMPLE_SEED);
        let mut picks: Vec<u64> =
            rand::seq::index::sample(&mut rng, total as usize, EXACT_FIT_PAIRS as usize)
                .into_iter()
                .map(|p| p as u64)
                .collect();
        picks.sort_unstable();
        picks
            .into_iter()
            .map(|p| {
                let (i, j) = pair_at(p);
                (codes.distance(i, j) as f64, data.distance(i, j))
            })
            .unzip()
    };

    let lambda_star = match fit_lambda_chebyshev(&v, &c) {
        Ok(fit) => fit.lambda_star,
        // Every code identical and every distance zero: any scale is exact.
        Err(Error::Collapsed { max_c }) if max_c == 0.0 && exact_fit => 1.0,
        Err(e) => return Err(e),
    };

    let worst = if exact_fit {
        let mut best = Worst {
            residual: f64::NEG_INFINITY,
            index: 0,
            c: 0.0,
        };
        for (p, (vi, ci)) in v.iter().zip(&c).enumerate() {
            let r = (lambda_star * vi - ci).abs();
            if r > best.residual {
                best = Worst {
                    residual: r,
                    index: p as u64,
                    c: *ci,
                };
            }
        }
        best
    } else {
        scan_worst(codes, data, lambda_star)
    };
    let delta = worst.residual;
    let histogram = if exact_fit {
        let mut hist = vec![0u64; HISTOGRAM_BUCKETS];
        for (vi, ci) in v.iter().zip(&c) {
            hist[bucket((lambda_star * vi - ci).abs(), delta)] += 1;
        }
        hist
    } else {
        scan_histogram(codes, data, lambda_star, delta)
    };
    let (i, j) = pair_at(worst.index);
    Ok(DistortionReport {
        delta,
        lambda_star,
        worst_secant: SecantRef { i, j, c: worst.c },
        histogram,
        pair_count: total,
        exact_fit,
    })
}

/// k-NN preservation metrics, per query and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub k: usize,
    pub map: Option<f64>,
    pub per_query_ap: Vec<f64>,
    pub mean_tau: Option<f64>,
    pub per_query_tau: Vec<f64>,
}

fn validate_queries(data: &Dataset, queries: &[usize], k: usize, min_k: usize) -> Result<()> {
    if k < min_k || k >= data.len() {
        return Err(Error::invalid(format!(
            "k must be in [{min_k}, {}) for {} points, got {k}",
            data.len(),
            data.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::invalid("at least one query is required"));
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= data.len()) {
        return Err(Error::IndexOutOfRange {
            index: q,
            len: data.len(),
        });
    }
    Ok(())
}

/// Indices of the k points nearest to `query` in ambient distance, nearest
/// first, ties by ascending index; the query itself is excluded.
pub fn ambient_neighbors(data: &Dataset, query: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..data.len())
        .filter(|&p| p != query)
        .map(|p| (data.distance(query, p), p))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, p)| p).collect()
}

/// Same as [`ambient_neighbors`] in Hamming distance.
pub fn hamming_neighbors(codes: &BinaryCodes, query: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(u32, usize)> = (0..codes.len())
        .filter(|&p| p != query)
        .map(|p| (codes.distance(query, p), p))
        .collect();
    order.sort_unstable();
    order.truncate(k);
    order.into_iter().map(|(_, p)| p).collect()
}

fn average_precision(data: &Dataset, codes: &BinaryCodes, query: usize, k: usize) -> f64 {
    let ambient = ambient_neighbors(data, query, k);
    let mut hamming = hamming_neighbors(codes, query, k);
    hamming.sort_unstable();
    let hits = ambient
        .iter()
        .filter(|p| hamming.binary_search(p).is_ok())
        .count();
    hits as f64 / k as f64
}

fn query_tau(data: &Dataset, codes: &BinaryCodes, query: usize, k: usize) -> f64 {
    // Members in ambient rank order; compare against their Hamming keys.
    let members = ambient_neighbors(data, query, k);
    let keys: Vec<(u32, usize)> = members
        .iter()
        .map(|&p| (codes.distance(query, p), p))
        .collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for a in 0..k {
        for b in a + 1..k {
            if keys[a] < keys[b] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (k * (k - 1) / 2) as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// MAP@k: mean over queries of |ambient k-NN ∩ Hamming k-NN| / k.
pub fn map_at_k(model: &HashModel, data: &Dataset, queries: &[usize], k: usize) -> Result<NeighborReport> {
    validate_queries(data, queries, k, 1)?;
    let codes = hash_codes(model, data)?;
    Ok(map_with_codes(&codes, data, queries, k))
}

pub fn map_with_codes(codes: &BinaryCodes, data: &Dataset, queries: &[usize], k: usize) -> NeighborReport {
    let per_query_ap: Vec<f64> = queries
        .par_iter()
        .map(|&q| average_precision(data, codes, q, k))
        .collect();
    NeighborReport {
        k,
        map: Some(mean(&per_query_ap)),
        per_query_ap,
        mean_tau: None,
        per_query_tau: Vec::new(),
    }
}

/// Mean Kendall τ-a between the ambient and Hamming rankings of each
/// query's ambient k-NN set.
pub fn kendall_tau_at_k(model: &HashModel, data: &Dataset, queries: &[usize], k: usize) -> Result<NeighborReport> {
    validate_queries(data, queries, k, 2)?;
    let codes = hash_codes(model, data)?;
    Ok(tau_with_codes(&codes, data, queries, k))
}

pub fn tau_with_codes(codes: &BinaryCodes, data: &Dataset, queries: &[usize], k: usize) -> NeighborReport {
    let per_query_tau: Vec<f64> = queries
        .par_iter()
        .map(|&q| query_tau(data, codes, q, k))
        .collect();
    NeighborReport {
        k,
        map: None,
        per_query_ap: Vec::new(),
        mean_tau: Some(mean(&per_query_tau)),
        per_query_tau,
    }
}

/// Kendall τ-a of two equal-length score sequences (no ties expected).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            s += x as i64;
        }
    }
    s as f64 / (n * n.saturating_sub(1) / 2).max(1) as f64
}

/// The stable JSON shape shared by all metric reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricJson {
    pub metric: String,
    pub k: Option<usize>,
    #[serde(rename = "M")]
    pub bits: usize,
    pub value: f64,
    pub per_query: Vec<f64>,
    pub lambda_star: Option<f64>,
    pub delta: Option<f64>,
}

impl MetricJson {
    pub fn from_distortion(report: &DistortionReport, bits: usize) -> Self {
        MetricJson {
            metric: "delta".into(),
            k: None,
            bits,
            value: report.delta,
            per_query: Vec::new(),
            lambda_star: Some(report.lambda_star),
            delta: Some(report.delta),
        }
    }

    pub fn from_neighbors(report: &NeighborReport, bits: usize) -> Self {
        let (metric, value, per_query) = match (report.map, report.mean_tau) {
            (Some(map), _) => ("map", map, report.per_query_ap.clone()),
            (None, Some(tau)) => ("tau", tau, report.per_query_tau.clone()),
            (None, None) => ("empty", f64::NAN, Vec::new()),
        };
        MetricJson {
            metric: metric.into(),
            k: Some(report.k),
            bits,
            value,
            per_query,
            lambda_star: None,
            delta: None,
        }
    }
}
