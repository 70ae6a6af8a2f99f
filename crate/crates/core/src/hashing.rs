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

//! Fundamental types and pure functions: datasets, secants, the sign
//! quantizer and its sigmoid relaxation, and bit-packed binary codes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row norms for datasets flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A Q×N matrix of data points plus the preprocessing that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    mean: Array1<f64>,
    normalized: bool,
}

/// Mean subtraction and unit-sphere normalization applied to raw points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mean: Vec<f64>,
    pub normalized: bool,
}

impl Preprocessing {
    pub fn identity(dim: usize) -> Self {
        Preprocessing {
            mean: vec![0.0; dim],
            normalized: false,
        }
    }
}

impl Dataset {
    /// Wraps raw points with no preprocessing recorded.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let n = points.ncols();
        Self::from_parts(points, Array1::zeros(n), false)
    }

    pub fn from_parts(points: Array2<f64>, mean: Array1<f64>, normalized: bool) -> Result<Self> {
        let (q, n) = points.dim();
        if q < 2 {
            return Err(Error::invalid(format!("dataset needs at least 2 points, got {q}")));
        }
        if n < 1 {
            return Err(Error::invalid("dataset needs at least 1 column"));
        }
        if mean.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset mean",
                expected: (1, n),
                found: (1, mean.len()),
            });
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "dataset entry ({}, {}) is {}",
                pos / n,
                pos % n,
                points.iter().nth(pos).unwrap()
            )));
        }
        if normalized {
            for (row, x) in points.axis_iter(Axis(0)).enumerate() {
                let norm = x.dot(&x).sqrt();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::invalid(format!(
                        "row {row} has norm {norm} but dataset is flagged normalized"
                    )));
                }
            }
        }
        let points = points.as_standard_layout().into_owned();
        Ok(Dataset {
            points,
            mean,
            normalized,
        })
    }

    /// Number of points Q.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Ambient dimension N.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        let n = self.dim();
        &self.points.as_slice().expect("standard layout")[q * n..(q + 1) * n]
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            mean: self.mean.to_vec(),
            normalized: self.normalized,
        }
    }

    /// Euclidean distance between points `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        l2_distance(self.point(i), self.point(j))
    }

    /// Rows selected by `indices`, keeping the preprocessing metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        for &q in indices {
            if q >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: q,
                    len: self.len(),
                });
            }
        }
        let points = self.points.select(Axis(0), indices);
        Dataset::from_parts(points, self.mean.clone(), self.normalized)
    }

    /// Multiplies every coordinate by `factor`; the result is no longer normalized.
    pub fn scaled(&self, factor: f64) -> Result<Dataset> {
        Dataset::from_parts(&self.points * factor, self.mean.clone(), false)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A pair of point indices (i > j) with its target ambient distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecantRef {
    pub i: usize,
    pub j: usize,
    pub c: f64,
}

impl SecantRef {
    /// Secant with `c` set to the true ambient distance.
    pub fn measured(data: &Dataset, i: usize, j: usize) -> Self {
        debug_assert!(i > j);
        SecantRef {
            i,
            j,
            c: data.distance(i, j),
        }
    }

    pub fn key(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

/// Number of secants among `q` points, Q(Q-1)/2.
pub fn secant_count(q: usize) -> u64 {
    let q = q as u64;
    q * q.saturating_sub(1) / 2
}

/// Position of the pair (i, j), i > j, in the lexicographic enumeration.
pub fn pair_index(i: usize, j: usize) -> u64 {
    debug_assert!(i > j);
    let i = i as u64;
    i * (i - 1) / 2 + j as u64
}

/// Inverse of [`pair_index`].
pub fn pair_at(index: u64) -> (usize, usize) {
    // i is the largest integer with i(i-1)/2 <= index.
    let mut i = ((1.0 + (1.0 + 8.0 * index as f64).sqrt()) / 2.0) as u64;
    while i * (i - 1) / 2 > index {
        i -= 1;
    }
    while (i + 1) * i / 2 <= index {
        i += 1;
    }
    let j = index - i * (i - 1) / 2;
    (i as usize, j as usize)
}

/// Lazy stream over the pairs (i, j), i > j, in the order
/// (1,0), (2,0), (2,1), (3,0), ...
#[derive(Debug, Clone)]
pub struct SecantPairs {
    next: u64,
    end: u64,
    i: usize,
    j: usize,
}

/// All Q(Q-1)/2 pairs of `q` points.
pub fn enumerate_secants(q: usize) -> SecantPairs {
    SecantPairs::range(0, secant_count(q))
}

impl SecantPairs {
    /// Pairs whose enumeration positions fall in `start..end`.
    pub fn range(start: u64, end: u64) -> Self {
        let (i, j) = if start < end { pair_at(start) } else { (1, 0) };
        SecantPairs {
            next: start,
            end: end.max(start),
            i,
            j,
        }
    }

    /// Splits the remaining stream into `parts` contiguous, disjoint ranges.
    pub fn split(&self, parts: usize) -> Vec<SecantPairs> {
        let parts = parts.max(1) as u64;
        let total = self.end - self.next;
        (0..parts)
            .map(|p| {
                let lo = self.next + total * p / parts;
                let hi = self.next + total * (p + 1) / parts;
                SecantPairs::range(lo, hi)
            })
            .filter(|r| r.next < r.end)
            .collect()
    }

    pub fn remaining(&self) -> u64 {
        self.end - self.next
    }
}

impl Iterator for SecantPairs {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let out = (self.i, self.j);
        self.next += 1;
        self.j += 1;
        if self.j == self.i {
            self.i += 1;
            self.j = 0;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = usize::try_from(self.remaining()).unwrap_or(usize::MAX);
        (r, usize::try_from(self.remaining()).ok())
    }
}

/// The logistic function with rate `alpha`.
#[inline]
pub fn sigmoid(alpha: f64, t: f64) -> f64 {
    let z = alpha * t;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The sign quantizer (1 + sgn t) / 2 with sgn(0) = +1.
#[inline]
pub fn quantize(t: f64) -> f64 {
    if t >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_cols(context: &'static str, w: ArrayView2<'_, f64>, len: usize) -> Result<()> {
    if w.ncols() != len {
        return Err(Error::DimensionMismatch {
            context,
            expected: (w.nrows(), w.ncols()),
            found: (1, len),
        });
    }
    Ok(())
}

/// σ_α(W x), elementwise.
pub fn sigmoid_embed(w: ArrayView2<'_, f64>, x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_cols("sigmoid_embed", w, x.len())?;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(w
        .axis_iter(Axis(0))
        .map(|row| sigmoid(alpha, dot(row.as_slice().unwrap_or(&row.to_vec()), x)))
        .collect())
}

/// ‖σ_α(W x_i) − σ_α(W x_j)‖², one entry of the relaxed distance vector.
pub fn relaxed_pair_dist(w: ArrayView2<'_, f64>, xi: &[f64], xj: &[f64], alpha: f64) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::DimensionMismatch {
            context: "relaxed_pair_dist",
            expected: (1, xi.len()),
            found: (1, xj.len()),
        });
    }
    let si = sigmoid_embed(w, xi, alpha)?;
    let sj = sigmoid_embed(w, xj, alpha)?;
    Ok(si.iter().zip(&sj).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// The trained hash function: embedding matrix, scale and preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub w: Array2<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub mean: Array1<f64>,
    pub normalized: bool,
}

impl HashModel {
    pub fn new(w: Array2<f64>, lambda: f64, alpha: f64, preprocessing: &Preprocessing) -> Result<Self> {
        if w.nrows() < 1 || w.ncols() < 1 {
            return Err(Error::invalid("embedding matrix must be at least 1x1"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if preprocessing.mean.len() != w.ncols() {
            return Err(Error::DimensionMismatch {
                context: "model mean",
                expected: (1, w.ncols()),
                found: (1, preprocessing.mean.len()),
            });
        }
        Ok(HashModel {
            w: w.as_standard_layout().into_owned(),
            lambda,
            alpha,
            mean: Array1::from(preprocessing.mean.clone()),
            normalized: preprocessing.normalized,
        })
    }

    /// Code length M.
    pub fn bits(&self) -> usize {
        self.w.nrows()
    }

    /// Input dimension N.
    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            mean: self.mean.to_vec(),
            normalized: self.normalized,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Q binary codes of M bits each, packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodes {
    bits: usize,
    words: usize,
    count: usize,
    data: Vec<u64>,
}

impl BinaryCodes {
    pub fn zeros(count: usize, bits: usize) -> Self {
        let words = bits.div_ceil(64).max(1);
        BinaryCodes {
            bits,
            words,
            count,
            data: vec![0; count * words],
        }
    }

    /// Packs rows of 0/1 values.
    pub fn pack(rows: &[Vec<u8>]) -> Result<Self> {
        let bits = rows.first().map_or(0, |r| r.len());
        let mut codes = BinaryCodes::zeros(rows.len(), bits);
        for (q, row) in rows.iter().enumerate() {
            if row.len() != bits {
                return Err(Error::DimensionMismatch {
                    context: "BinaryCodes::pack",
                    expected: (rows.len(), bits),
                    found: (q, row.len()),
                });
            }
            for (m, &b) in row.iter().enumerate() {
                match b {
                    0 => {}
                    1 => codes.set(q, m),
                    other => return Err(Error::invalid(format!("code entry ({q}, {m}) is {other}, not 0/1"))),
                }
            }
        }
        Ok(codes)
    }

    pub fn unpack(&self) -> Vec<Vec<u8>> {
        (0..self.count)
            .map(|q| (0..self.bits).map(|m| self.get(q, m)).collect())
            .collect()
    }

    #[inline]
    fn set(&mut self, q: usize, m: usize) {
        self.data[q * self.words + m / 64] |= 1u64 << (m % 64);
    }

    #[inline]
    pub fn get(&self, q: usize, m: usize) -> u8 {
        ((self.data[q * self.words + m / 64] >> (m % 64)) & 1) as u8
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[u64] {
        &self.data[q * self.words..(q + 1) * self.words]
    }

    /// Hamming distance without bounds checks beyond slice indexing.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// h(W x_q) for every point, packed.
pub fn hash_codes(model: &HashModel, data: &Dataset) -> Result<BinaryCodes> {
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "hash_codes",
            expected: (model.bits(), model.dim()),
            found: (data.len(), data.dim()),
        });
    }
    let w = model.w.as_slice().expect("standard layout");
    let n = model.dim();
    let mut codes = BinaryCodes::zeros(data.len(), model.bits());
    for q in 0..data.len() {
        let x = data.point(q);
        for m in 0..model.bits() {
            if quantize(dot(&w[m * n..(m + 1) * n], x)) == 1.0 {
                codes.set(q, m);
            }
        }
    }
    Ok(codes)
}

/// Hamming distance between codes `i` and `j`.
pub fn hamming_pair_dist(codes: &BinaryCodes, i: usize, j: usize) -> Result<u32> {
    for idx in [i, j] {
        if idx >= codes.len() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                len: codes.len(),
            });
        }
    }
    Ok(codes.distance(i, j))
}
