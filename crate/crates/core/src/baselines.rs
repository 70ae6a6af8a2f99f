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

//! Random-projection hashing and the one-dimensional line-embedding demo
//! contrasting worst-case (ℓ∞) and average (ℓ2) distortion fits.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{Dataset, HashModel, Preprocessing};
use crate::metrics::{fit_lambda_chebyshev, max_distortion};

/// Default sigmoid rate stored in models that never went through training.
pub const LSH_ALPHA: f64 = 10.0;
pub const FIG1_SEED: u64 = 7;
pub const DEFAULT_GRID_STEPS: usize = 3600;

/// M×N matrix of i.i.d. standard normals drawn row-major from a ChaCha8
/// stream seeded with `seed`.
pub fn gaussian_embedding(bits: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((bits, dim), || StandardNormal.sample(&mut rng))
}

/// Random-hyperplane model with λ = 1. Use [`lsh_fit`] to set λ from data.
pub fn lsh_model(bits: usize, dim: usize, seed: u64, preprocessing: &Preprocessing) -> Result<HashModel> {
    if bits == 0 || dim == 0 {
        return Err(Error::invalid(format!("LSH needs M, N >= 1, got M={bits}, N={dim}")));
    }
    HashModel::new(gaussian_embedding(bits, dim, seed), 1.0, LSH_ALPHA, preprocessing)
}

/// Random-hyperplane model whose λ is the Chebyshev-optimal scale on `data`.
pub fn lsh_fit(data: &Dataset, bits: usize, seed: u64) -> Result<HashModel> {
    let model = lsh_model(bits, data.dim(), seed, &data.preprocessing())?;
    let report = max_distortion(&model, data)?;
    Ok(model.with_lambda(report.lambda_star))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Linf,
    L2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_angle: f64,
    pub distortion: f64,
    /// Scale applied to projections at the best angle.
    pub scale: f64,
    pub norm_kind: NormKind,
    /// (angle, distortion) for every grid angle.
    pub profile: Vec<(f64, f64)>,
}

fn pair_distances(points: ArrayView2<'_, f64>) -> Vec<f64> {
    let q = points.nrows();
    let mut c = Vec::with_capacity(q * (q - 1) / 2);
    for i in 1..q {
        for j in 0..i {
            let dx = points[[i, 0]] - points[[j, 0]];
            let dy = points[[i, 1]] - points[[j, 1]];
            c.push(dx.hypot(dy));
        }
    }
    c
}

/// Coordinates of `points` along the unit direction at `angle`.
pub fn project_1d(points: ArrayView2<'_, f64>, angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    points.rows().into_iter().map(|r| r[0] * c + r[1] * s).collect()
}

/// Optimal scale and residual norm of λp ≈ c.
pub fn fit_scale(p: &[f64], c: &[f64], norm: NormKind) -> (f64, f64) {
    match norm {
        NormKind::Linf => match fit_lambda_chebyshev(p, c) {
            Ok(fit) => (fit.lambda_star, fit.delta),
            Err(_) => (1.0, c.iter().cloned().fold(0.0, f64::max)),
        },
        NormKind::L2 => {
            let pp: f64 = p.iter().map(|x| x * x).sum();
            if pp == 0.0 {
                return (1.0, c.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
            let lambda = p.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / pp;
            let res: f64 = p.iter().zip(c).map(|(a, b)| (lambda * a - b).powi(2)).sum();
            (lambda, res.sqrt())
        }
    }
}

fn angle_distortion(points: ArrayView2<'_, f64>, c: &[f64], angle: f64, norm: NormKind) -> (f64, f64) {
    let x = project_1d(points, angle);
    let q = x.len();
    let mut p = Vec::with_capacity(c.len());
    for i in 1..q {
        for j in 0..i {
            p.push((x[i] - x[j]).abs());
        }
    }
    // Rounding leaves ~1e-16 spreads on lines perpendicular to collinear
    // data; those are identical projections.
    let cmax = c.iter().cloned().fold(0.0, f64::max);
    if p.iter().all(|&d| d <= 1e-12 * cmax) {
        p.iter_mut().for_each(|d| *d = 0.0);
    }
    fit_scale(&p, c, norm)
}

/// Scans `grid_steps` angles uniformly over [0, π) and returns the line
/// direction whose best-scaled projection minimizes pairwise distortion in
/// the chosen norm. Ties go to the smallest angle.
pub fn grid_search_embedding_1d(points: ArrayView2<'_, f64>, norm: NormKind, grid_steps: usize) -> Result<GridSearchResult> {
    if points.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            context: "line embedding points",
            expected: (points.nrows(), 2),
            found: points.dim(),
        });
    }
    if points.nrows() < 2 || grid_steps < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 points and 2 grid steps, got {} and {grid_steps}",
            points.nrows()
        )));
    }
    let c = pair_distances(points);
    let evaluated: Vec<(f64, f64, f64)> = (0..grid_steps)
        .into_par_iter()
        .map(|step| {
            let angle = std::f64::consts::PI * step as f64 / grid_steps as f64;
            let (scale, d) = angle_distortion(points, &c, angle, norm);
            (angle, d, scale)
        })
        .collect();
    let mut best = 0;
    for (k, e) in evaluated.iter().enumerate() {
        if e.1 < evaluated[best].1 {
            best = k;
        }
    }
    Ok(GridSearchResult {
        best_angle: evaluated[best].0,
        distortion: evaluated[best].1,
        scale: evaluated[best].2,
        norm_kind: norm,
        profile: evaluated.iter().map(|e| (e.0, e.1)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fig1Label {
    Circle,
    Square,
    Star,
}

/// Pairs (a, b) with d(q, a) < d(q, b) whose embedded distances from the
/// query fail to keep a strictly closer than b. The query sits at the
/// origin, which every line through it maps to 0.
pub fn misordered_pairs(points: ArrayView2<'_, f64>, angle: f64, members: &[usize]) -> Vec<(usize, usize)> {
    let x = project_1d(points, angle);
    let ambient: Vec<f64> = points.rows().into_iter().map(|r| r[0].hypot(r[1])).collect();
    let mut bad = Vec::new();
    for &a in members {
        for &b in members {
            if ambient[a] < ambient[b] && x[a].abs() >= x[b].abs() {
                bad.push((a, b));
            }
        }
    }
    bad
}

/// Two tight groups near the query on the vertical axis (5 circles at
/// radii 1.0..1.8, 5 squares at 3.0..3.8) and 60 stars spread along the
/// horizontal axis at 10..24.75. Each point gets a seeded jitter of at most
/// 0.05 across its axis.
///
/// The stars dominate the pair count, so a least-squares line hugs the
/// horizontal axis and crushes the circle/square groups together, while the
/// worst-case fit must tilt to keep circle-square distances.
pub fn make_fig1_dataset(seed: u64) -> (Array2<f64>, Vec<Fig1Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = move || rng.random_range(-0.05..=0.05);
    let mut points = Array2::zeros((70, 2));
    let mut labels = Vec::with_capacity(70);
    for k in 0..5 {
        points[[k, 0]] = jitter();
        points[[k, 1]] = 1.0 + 0.2 * k as f64;
        labels.push(Fig1Label::Circle);
    }
    for k in 0..5 {
        points[[5 + k, 0]] = jitter();
        points[[5 + k, 1]] = 3.0 + 0.2 * k as f64;
        labels.push(Fig1Label::Square);
    }
    for k in 0..60 {
        points[[10 + k, 0]] = 10.0 + 0.25 * k as f64;
        points[[10 + k, 1]] = jitter();
        labels.push(Fig1Label::Star);
    }
    (points, labels)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Fig1Outcome {
    pub linf: GridSearchResult,
    pub l2: GridSearchResult,
    /// Pairs misordered from the query by the ℓ∞-optimal line (all points).
    pub linf_misordered: Vec<(usize, usize)>,
    /// Circle/square pairs misordered by the ℓ2-optimal line.
    pub l2_misordered: Vec<(usize, usize)>,
}

impl Fig1Outcome {
    pub fn contrast_holds(&self) -> bool {
        self.linf_misordered.is_empty() && !self.l2_misordered.is_empty()
    }
}

pub fn fig1_contrast(points: ArrayView2<'_, f64>, labels: &[Fig1Label], grid_steps: usize) -> Result<Fig1Outcome> {
    let linf = grid_search_embedding_1d(points, NormKind::Linf, grid_steps)?;
    let l2 = grid_search_embedding_1d(points, NormKind::L2, grid_steps)?;
    let all: Vec<usize> = (0..points.nrows()).collect();
    let near: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l != Fig1Label::Star)
        .map(|(k, _)| k)
        .collect();
    Ok(Fig1Outcome {
        linf_misordered: misordered_pairs(points, linf.best_angle, &all),
        l2_misordered: misordered_pairs(points, l2.best_angle, &near),
        linf,
        l2,
    })
}

/// Generates the dataset for `seed` and rejects it unless the ℓ∞ line keeps
/// the full neighbor order of the origin while the ℓ2 line does not.
pub fn checked_fig1_dataset(seed: u64, grid_steps: usize) -> Result<(Array2<f64>, Vec<Fig1Label>, Fig1Outcome)> {
    let (points, labels) = make_fig1_dataset(seed);
    let outcome = fig1_contrast(points.view(), &labels, grid_steps)?;
    if !outcome.contrast_holds() {
        return Err(Error::CheckFailed(format!(
            "seed {seed} does not show the contrast: linf misorders {} pairs, l2 misorders {} circle/square pairs",
            outcome.linf_misordered.len(),
            outcome.l2_misordered.len()
        )));
    }
    Ok((points, labels, outcome))
}
