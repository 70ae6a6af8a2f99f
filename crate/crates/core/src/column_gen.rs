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

//! Active-set training for large secant sets: solve on a random sample,
//! then repeatedly add secants that break the current isometry bound until
//! a full pass over all pairs finds none.

use std::collections::HashSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{hash_codes, pair_at, secant_count, BinaryCodes, Dataset, HashModel, SecantRef};
use crate::metrics::fit_lambda_chebyshev;
use crate::progress::ProgressSink;
use crate::solver::{train_nibh_with, SolverConfig, TrainOptions};

/// Permuted positions handled per parallel work item during a scan.
pub const SCAN_CHUNK: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Initial,
    ActiveCarryover,
    Violator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSet {
    pub secants: Vec<SecantRef>,
    pub origins: Vec<Origin>,
    pub generation: usize,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.secants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secants.is_empty()
    }

    fn push_all(&mut self, secants: Vec<SecantRef>, origin: Origin) {
        self.origins.extend(std::iter::repeat_n(origin, secants.len()));
        self.secants.extend(secants);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CgConfig {
    /// |S₀|, clipped to the number of pairs.
    pub init_sample_size: usize,
    pub violator_batch: usize,
    /// Secants within this fraction of δ̂ of the worst one stay active.
    pub active_tol: f64,
    pub scan_seed: u64,
    pub max_generations: usize,
    /// Keep every secant ever solved on instead of only the active ones.
    pub accumulate: bool,
    /// Hard cap on the augmented set size; `None` means unbounded.
    pub max_active: Option<usize>,
    /// Outer iterations for warm-started re-solves after the first.
    pub resolve_iters: usize,
    pub inner: SolverConfig,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            init_sample_size: 5000,
            violator_batch: 2000,
            active_tol: 0.25,
            scan_seed: 0,
            max_generations: 50,
            accumulate: false,
            max_active: None,
            resolve_iters: 100,
            inner: SolverConfig::default(),
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if self.init_sample_size == 0 || self.violator_batch == 0 {
            return Err(Error::invalid("init_sample_size and violator_batch must be at least 1"));
        }
        if !(self.active_tol >= 0.0 && self.active_tol <= 1.0) {
            return Err(Error::invalid(format!("active_tol must lie in [0, 1], got {}", self.active_tol)));
        }
        if self.resolve_iters == 0 {
            return Err(Error::invalid("resolve_iters must be at least 1"));
        }
        Ok(())
    }
}

fn sorted_sample(total: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut picks: Vec<usize> = if size >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, total, size).into_vec()
    };
    picks.sort_unstable();
    picks
}

fn initial_set(secants: Vec<SecantRef>) -> ActiveSet {
    ActiveSet {
        origins: vec![Origin::Initial; secants.len()],
        secants,
        generation: 0,
    }
}

/// Uniform sample without replacement of `min(size, Q(Q-1)/2)` pairs,
/// returned in enumeration order.
pub fn sample_initial_secants(data: &Dataset, size: usize, seed: u64) -> Result<ActiveSet> {
    let q = data.len();
    if q < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    let total = usize::try_from(secant_count(q)).map_err(|_| Error::invalid("pair count exceeds usize"))?;
    let secants = sorted_sample(total, size, seed)
        .into_iter()
        .map(|p| {
            let (i, j) = pair_at(p as u64);
            SecantRef::measured(data, i, j)
        })
        .collect();
    Ok(initial_set(secants))
}

/// Same as [`sample_initial_secants`] but drawing from an explicit pool,
/// keeping pool order.
pub fn sample_pool_secants(pool: &[SecantRef], size: usize, seed: u64) -> Result<ActiveSet> {
    if pool.is_empty() {
        return Err(Error::invalid("secant pool is empty"));
    }
    let secants = sorted_sample(pool.len(), size, seed).into_iter().map(|p| pool[p]).collect();
    Ok(initial_set(secants))
}

/// Rejects pools with out-of-range indices, self pairs or repeated pairs.
pub fn validate_pool(data: &Dataset, pool: &[SecantRef]) -> Result<()> {
    let mut seen = HashSet::with_capacity(pool.len());
    for s in pool {
        if s.i >= data.len() || s.j >= data.len() {
            return Err(Error::IndexOutOfRange {
                index: s.i.max(s.j),
                len: data.len(),
            });
        }
        if s.i == s.j || !(s.c >= 0.0) {
            return Err(Error::invalid(format!("bad secant ({}, {}) with target {}", s.i, s.j, s.c)));
        }
        if !seen.insert(s.key()) {
            return Err(Error::invalid(format!("secant ({}, {}) appears twice in the pool", s.i, s.j)));
        }
    }
    Ok(())
}

#[inline]
fn residual(codes: &BinaryCodes, lambda: f64, s: &SecantRef) -> f64 {
    (lambda * codes.distance(s.i, s.j) as f64 - s.c).abs()
}

/// Largest |λ̂·d_H − c| over `secants`.
pub fn max_residual(codes: &BinaryCodes, secants: &[SecantRef], lambda_hat: f64) -> f64 {
    secants.iter().map(|s| residual(codes, lambda_hat, s)).fold(0.0, f64::max)
}

/// Secants with |λ̂·d_H − c| ≥ (1 − active_tol)·δ̂, in input order.
pub fn identify_active(
    codes: &BinaryCodes,
    secants: &[SecantRef],
    lambda_hat: f64,
    delta_hat: f64,
    active_tol: f64,
) -> Vec<SecantRef> {
    let threshold = (1.0 - active_tol) * delta_hat;
    secants
        .iter()
        .filter(|s| residual(codes, lambda_hat, s) >= threshold)
        .copied()
        .collect()
}

/// A keyed bijection on `0..n` built from a balanced Feistel network over
/// the next even power of two, restricted to `0..n` by cycle walking.
#[derive(Clone, Debug)]
pub struct PairPermutation {
    n: u64,
    half_bits: u32,
    keys: [u64; 4],
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PairPermutation {
    pub fn new(n: u64, seed: u64) -> Self {
        let bits = 64 - n.saturating_sub(1).leading_zeros();
        let half_bits = bits.div_ceil(2).max(1);
        let mut keys = [0u64; 4];
        let mut state = seed;
        for k in keys.iter_mut() {
            state = mix(state);
            *k = state;
        }
        PairPermutation { n, half_bits, keys }
    }

    fn feistel(&self, x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let (mut left, mut right) = (x >> self.half_bits, x & mask);
        for key in self.keys {
            let f = mix(right ^ key) & mask;
            (left, right) = (right, left ^ f);
        }
        (left << self.half_bits) | right
    }

    /// Image of `position` (< n).
    pub fn apply(&self, position: u64) -> u64 {
        debug_assert!(position < self.n);
        let mut x = self.feistel(position);
        while x >= self.n {
            x = self.feistel(x);
        }
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub violators: Vec<SecantRef>,
    /// The stream was exhausted with no violator found.
    pub scanned_all: bool,
    pub pairs_scanned: u64,
}

/// Streams every pair in a seeded random order and collects the first
/// `batch_limit` with |λ̂·d_H − c| > δ̂. Memory stays O(batch_limit) per
/// worker; results do not depend on the thread count.
pub fn scan_violators(
    codes: &BinaryCodes,
    data: &Dataset,
    lambda_hat: f64,
    delta_hat: f64,
    batch_limit: usize,
    seed: u64,
) -> Result<ScanResult> {
    if codes.len() != data.len() {
        return Err(Error::DimensionMismatch {
            context: "scan codes",
            expected: (data.len(), codes.bits()),
            found: (codes.len(), codes.bits()),
        });
    }
    let at = |position: u64| {
        let (i, j) = pair_at(position);
        SecantRef::measured(data, i, j)
    };
    scan_stream(secant_count(data.len()), at, codes, lambda_hat, delta_hat, batch_limit, seed)
}

/// [`scan_violators`] over an explicit pool, using the pool's targets.
pub fn scan_pool_violators(
    codes: &BinaryCodes,
    pool: &[SecantRef],
    lambda_hat: f64,
    delta_hat: f64,
    batch_limit: usize,
    seed: u64,
) -> Result<ScanResult> {
    if let Some(s) = pool.iter().find(|s| s.i >= codes.len() || s.j >= codes.len()) {
        return Err(Error::IndexOutOfRange {
            index: s.i.max(s.j),
            len: codes.len(),
        });
    }
    let at = |position: u64| pool[position as usize];
    scan_stream(pool.len() as u64, at, codes, lambda_hat, delta_hat, batch_limit, seed)
}

fn scan_stream<F>(
    total: u64,
    at: F,
    codes: &BinaryCodes,
    lambda_hat: f64,
    delta_hat: f64,
    batch_limit: usize,
    seed: u64,
) -> Result<ScanResult>
where
    F: Fn(u64) -> SecantRef + Sync,
{
    if !(delta_hat >= 0.0) {
        return Err(Error::invalid(format!("delta_hat must be nonnegative, got {delta_hat}")));
    }
    let perm = PairPermutation::new(total, seed);
    let workers = rayon::current_num_threads().max(1) as u64;
    let mut violators: Vec<SecantRef> = Vec::new();
    let mut start = 0u64;
    while start < total && violators.len() < batch_limit {
        let need = batch_limit - violators.len();
        let round_end = (start + workers * SCAN_CHUNK).min(total);
        let chunks: Vec<(u64, u64)> = (start..round_end)
            .step_by(SCAN_CHUNK as usize)
            .map(|lo| (lo, (lo + SCAN_CHUNK).min(round_end)))
            .collect();
        let found: Vec<Vec<SecantRef>> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut local = Vec::new();
                for position in lo..hi {
                    let s = at(perm.apply(position));
                    if residual(codes, lambda_hat, &s) > delta_hat {
                        local.push(s);
                        if local.len() == need {
                            break;
                        }
                    }
                }
                local
            })
            .collect();
        for local in found {
            let take = (batch_limit - violators.len()).min(local.len());
            violators.extend_from_slice(&local[..take]);
        }
        start = round_end;
    }
    // A batch that filled exactly at the end of the stream still counts as
    // an exhausted stream, but never as a clean one.
    let scanned_all = start >= total && violators.is_empty();
    Ok(ScanResult {
        violators,
        scanned_all,
        pairs_scanned: start,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub active_size: usize,
    pub violators_found: usize,
    pub delta_hat: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CgReport {
    pub generations: usize,
    pub final_active_size: usize,
    /// Most secants held at once (active set plus collected violators).
    pub peak_resident_secants: usize,
    /// A final scan over every pair found no violator.
    pub satisfied: bool,
    pub delta_hat: f64,
    pub lambda_hat: f64,
    pub history: Vec<GenerationRecord>,
}

/// Active-set training. λ̂ is the Chebyshev-optimal scale of the first
/// solve's codes on S₀ and stays fixed for every later solve.
pub fn train_nibh_cg(
    data: &Dataset,
    bits: usize,
    config: &CgConfig,
    progress: Option<&mut ProgressSink>,
) -> Result<(HashModel, CgReport)> {
    train_nibh_cg_pool(data, bits, config, None, progress)
}

/// [`train_nibh_cg`] restricted to `pool` when given: S₀ is drawn from it
/// and only its secants are scanned for violators.
pub fn train_nibh_cg_pool(
    data: &Dataset,
    bits: usize,
    config: &CgConfig,
    pool: Option<&[SecantRef]>,
    mut progress: Option<&mut ProgressSink>,
) -> Result<(HashModel, CgReport)> {
    config.validate()?;
    let mut active = match pool {
        Some(pool) => {
            validate_pool(data, pool)?;
            sample_pool_secants(pool, config.init_sample_size, config.scan_seed)?
        }
        None => sample_initial_secants(data, config.init_sample_size, config.scan_seed)?,
    };
    let scan = |codes: &BinaryCodes, lambda: f64, delta: f64, batch: usize, seed: u64| match pool {
        Some(pool) => scan_pool_violators(codes, pool, lambda, delta, batch, seed),
        None => scan_violators(codes, data, lambda, delta, batch, seed),
    };
    let mut peak = active.len();
    let (first, _) = train_nibh_with(data, &active.secants, bits, &config.inner, TrainOptions::default())?;
    let mut w: Array2<f64> = first.w.clone();
    let mut codes = hash_codes(&first, data)?;
    let v: Vec<f64> = active.secants.iter().map(|s| codes.distance(s.i, s.j) as f64).collect();
    let c: Vec<f64> = active.secants.iter().map(|s| s.c).collect();
    let lambda_hat = fit_lambda_chebyshev(&v, &c)?.lambda_star;

    let resolve = SolverConfig {
        alpha_start: config.inner.alpha_end,
        max_outer_iters: config.resolve_iters,
        ..config.inner.clone()
    };
    // Fallback when the warm start is saturated and the new violators get no
    // gradient at the final rate.
    let restart = SolverConfig {
        max_outer_iters: config.resolve_iters,
        ..config.inner.clone()
    };
    let preprocessing = data.preprocessing();
    let mut history = Vec::new();
    let mut satisfied = false;
    let mut delta_hat;
    loop {
        delta_hat = max_residual(&codes, &active.secants, lambda_hat);
        let generation = active.generation;
        if generation >= config.max_generations {
            history.push(GenerationRecord {
                generation,
                active_size: active.len(),
                violators_found: 0,
                delta_hat,
            });
            break;
        }
        let carried = if config.accumulate {
            active.secants.clone()
        } else {
            identify_active(&codes, &active.secants, lambda_hat, delta_hat, config.active_tol)
        };
        let batch = match config.max_active {
            Some(cap) => config.violator_batch.min(cap.saturating_sub(carried.len()).max(1)),
            None => config.violator_batch,
        };
        let scan = scan(&codes, lambda_hat, delta_hat, batch, config.scan_seed.wrapping_add(generation as u64 + 1))?;
        peak = peak.max(carried.len() + scan.violators.len());
        let record = GenerationRecord {
            generation,
            active_size: carried.len(),
            violators_found: scan.violators.len(),
            delta_hat,
        };
        if let Some(sink) = progress.as_deref_mut() {
            sink.record(&record);
        }
        history.push(record);
        if scan.violators.is_empty() {
            satisfied = scan.scanned_all;
            break;
        }
        debug_assert!({
            let keys: HashSet<(usize, usize)> = carried.iter().map(SecantRef::key).collect();
            scan.violators.iter().all(|s| !keys.contains(&s.key()))
        });
        let mut next = ActiveSet {
            origins: vec![Origin::ActiveCarryover; carried.len()],
            secants: carried,
            generation: generation + 1,
        };
        next.push_all(scan.violators, Origin::Violator);
        active = next;
        log::info!(
            "generation {}: {} secants, delta_hat {delta_hat:.6}",
            active.generation,
            active.len()
        );
        // A re-solve returns its best W on the augmented set, or None when it
        // found nothing better than the warm start or diverged.
        let warm = |cfg: &SolverConfig| -> Result<Option<(Array2<f64>, f64)>> {
            let options = TrainOptions {
                initial_w: Some(w.clone()),
                initial_lambda: Some(lambda_hat),
                freeze_lambda: true,
                progress: None,
            };
            match train_nibh_with(data, &active.secants, bits, cfg, options) {
                Ok((model, state)) if state.best_iteration > 0 => Ok(Some((model.w, state.best_delta))),
                Ok(_) => Ok(None),
                Err(Error::Diverged(run)) => {
                    log::warn!("generation {}: re-solve diverged at iteration {}", active.generation, run.iteration);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let improved = match warm(&resolve)? {
            Some(found) => Some(found),
            None => {
                log::info!("generation {}: final-rate re-solve stalled, rerunning the α schedule", active.generation);
                warm(&restart)?
            }
        };
        if let Some((next_w, best)) = improved {
            log::debug!("generation {}: re-solve reached {best:.6} on the augmented set", active.generation);
            w = next_w;
        }
        codes = hash_codes(&HashModel::new(w.clone(), lambda_hat, config.inner.alpha_end, &preprocessing)?, data)?;
    }
    let model = HashModel::new(w, lambda_hat, config.inner.alpha_end, &preprocessing)?;
    Ok((
        model,
        CgReport {
            generations: active.generation,
            final_active_size: active.len(),
            peak_resident_secants: peak,
            satisfied,
            delta_hat,
            lambda_hat,
            history,
        },
    ))
}
