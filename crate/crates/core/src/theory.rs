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

//! Executable checks of the sigmoid approximation bound and of the
//! deterministic neighbor-preservation argument behind the k-NN guarantee.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{hash_codes, quantize, sigmoid, Dataset, HashModel};
use crate::metrics::codes_distortion;

/// Samples drawn from one ChaCha stream in the Monte Carlo estimate.
pub const MC_CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Result {
    pub alpha: f64,
    pub sigma: f64,
    pub samples: usize,
    pub empirical_mean: f64,
    pub bound: f64,
    pub holds: bool,
}

/// 1/(σ√(2πα)) + 2e^{−√α}.
pub fn lemma1_bound(alpha: f64, sigma: f64) -> f64 {
    1.0 / (sigma * (2.0 * std::f64::consts::PI * alpha).sqrt()) + 2.0 * (-alpha.sqrt()).exp()
}

/// Monte Carlo estimate of E|h(x) − σ_α(x)| for x ~ N(0, σ²). Chunk `k`
/// draws from stream `k` of a ChaCha8 generator keyed by `seed`, so the
/// result does not depend on the thread count.
pub fn lemma1_empirical(alpha: f64, sigma: f64, n_samples: usize, seed: u64) -> Result<Lemma1Result> {
    if !(alpha > 0.0 && sigma > 0.0 && alpha.is_finite() && sigma.is_finite()) {
        return Err(Error::invalid(format!("alpha and sigma must be positive, got {alpha} and {sigma}")));
    }
    if n_samples < 10_000 {
        return Err(Error::invalid(format!("need at least 10000 samples, got {n_samples}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let sums: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let len = MC_CHUNK.min(n_samples - k * MC_CHUNK);
            (0..len)
                .map(|_| {
                    let x: f64 = normal.sample(&mut rng);
                    (quantize(x) - sigmoid(alpha, x)).abs()
                })
                .sum()
        })
        .collect();
    let empirical_mean = sums.iter().sum::<f64>() / n_samples as f64;
    let bound = lemma1_bound(alpha, sigma);
    Ok(Lemma1Result {
        alpha,
        sigma,
        samples: n_samples,
        empirical_mean,
        bound,
        holds: empirical_mean <= bound,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Array2<f64>>,
}

/// A validated mixture with a square-root factor per covariance.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    spec: GaussianMixtureSpec,
    factors: Vec<DMatrix<f64>>,
}

impl GaussianMixtureSpec {
    /// P components with the given means and covariance σ²I each.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, sigma: f64) -> Self {
        let n = means.first().map_or(0, Vec::len);
        let cov = Array2::from_diag_elem(n, sigma * sigma);
        let covariances = vec![cov; means.len()];
        GaussianMixtureSpec {
            weights,
            means,
            covariances,
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Checks weights, shapes, symmetry and positive semidefiniteness.
    pub fn validate(self) -> Result<GaussianMixture> {
        let p = self.weights.len();
        if p == 0 || self.means.len() != p || self.covariances.len() != p {
            return Err(Error::invalid(format!(
                "mixture needs matching nonzero counts, got {p} weights, {} means, {} covariances",
                self.means.len(),
                self.covariances.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let n = self.dim();
        if n == 0 {
            return Err(Error::invalid("mixture dimension must be at least 1"));
        }
        let mut factors = Vec::with_capacity(p);
        for (component, (mean, cov)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mean.len() != n || cov.dim() != (n, n) {
                return Err(Error::DimensionMismatch {
                    context: "mixture component",
                    expected: (n, n),
                    found: cov.dim(),
                });
            }
            let m = DMatrix::from_fn(n, n, |r, c| cov[[r, c]]);
            let scale = m.amax().max(1.0);
            if (&m - m.transpose()).amax() > 1e-12 * scale {
                return Err(Error::invalid(format!("covariance {component} is not symmetric")));
            }
            let eig = SymmetricEigen::new(m);
            let min_eigenvalue = eig.eigenvalues.min();
            if min_eigenvalue < -1e-10 * scale {
                return Err(Error::NotPsd {
                    component,
                    min_eigenvalue,
                });
            }
            let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            factors.push(&eig.eigenvectors * DMatrix::from_diagonal(&roots));
        }
        Ok(GaussianMixture { spec: self, factors })
    }
}

impl GaussianMixture {
    pub fn spec(&self) -> &GaussianMixtureSpec {
        &self.spec
    }

    /// Q i.i.d. draws (raw, not preprocessed) and the component of each.
    pub fn sample(&self, q: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
        let n = self.spec.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Array2::zeros((q, n));
        let mut components = Vec::with_capacity(q);
        let last = self.spec.weights.len() - 1;
        for mut row in points.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut p = last;
            for (k, w) in self.spec.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    p = k;
                    break;
                }
            }
            let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let x = &self.factors[p] * z;
            for (d, value) in row.iter_mut().enumerate() {
                *value = self.spec.means[p][d] + x[d];
            }
            components.push(p);
        }
        Ok((Dataset::new(points)?, components))
    }
}

/// Validates `spec` and draws `q` points from it.
pub fn sample_mixture(spec: GaussianMixtureSpec, q: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?.sample(q, seed)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub k: usize,
    pub queries: Vec<usize>,
    /// min over m ≤ k < n of d(x₀, x_n) − d(x₀, x_m), per query.
    pub per_query_gap: Vec<f64>,
    pub delta: f64,
    pub lambda: f64,
    /// Positions (into `queries`) whose gap is at least 2δ.
    pub satisfied_queries: Vec<usize>,
    /// Whether each satisfied query kept its ambient k-NN set.
    pub preserved: Vec<bool>,
}

impl GapReport {
    pub fn violations(&self) -> Vec<usize> {
        self.satisfied_queries
            .iter()
            .zip(&self.preserved)
            .filter(|(_, ok)| !**ok)
            .map(|(q, _)| self.queries[*q])
            .collect()
    }
}

/// For every query whose neighbor gap is at least 2δ, checks that each of
/// its ambient k nearest neighbors is no farther in Hamming distance than
/// any point outside that set. δ is the exact worst-case distortion over all
/// pairs of `data` at its best scale.
pub fn knn_sufficiency_check(model: &HashModel, data: &Dataset, queries: &[usize], k: usize) -> Result<GapReport> {
    let q = data.len();
    if k == 0 || k + 2 > q {
        return Err(Error::invalid(format!("k must be in 1..={} for {q} points, got {k}", q.saturating_sub(2))));
    }
    if let Some(&bad) = queries.iter().find(|&&x| x >= q) {
        return Err(Error::IndexOutOfRange { index: bad, len: q });
    }
    let codes = hash_codes(model, data)?;
    let report = codes_distortion(&codes, data)?;
    let delta = report.delta;
    let results: Vec<(f64, Option<bool>)> = queries
        .par_iter()
        .map(|&x0| {
            let mut order: Vec<(f64, usize)> = (0..q).filter(|&p| p != x0).map(|p| (data.distance(x0, p), p)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Sorted ascending, the all-pairs gap reduces to the k-th step.
            let gap = order[k].0 - order[k - 1].0;
            if gap < 2.0 * delta {
                return (gap, None);
            }
            let inner = order[..k].iter().map(|&(_, p)| codes.distance(x0, p)).max().unwrap_or(0);
            let outer = order[k..].iter().map(|&(_, p)| codes.distance(x0, p)).min().unwrap_or(u32::MAX);
            (gap, Some(inner <= outer))
        })
        .collect();
    let mut satisfied_queries = Vec::new();
    let mut preserved = Vec::new();
    for (pos, (_, verdict)) in results.iter().enumerate() {
        if let Some(ok) = verdict {
            satisfied_queries.push(pos);
            preserved.push(*ok);
        }
    }
    Ok(GapReport {
        k,
        queries: queries.to_vec(),
        per_query_gap: results.iter().map(|r| r.0).collect(),
        delta,
        lambda: report.lambda_star,
        satisfied_queries,
        preserved,
    })
}
