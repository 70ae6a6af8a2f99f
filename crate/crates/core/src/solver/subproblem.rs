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

//! The secant-indexed smooth subproblem in W and its accelerated solver.

use ndarray::{Array2, ArrayView2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashing::{sigmoid, BinaryCodes, Dataset, SecantRef};

/// A secant set compacted to the points it touches.
#[derive(Debug, Clone)]
pub struct SecantProblem {
    points: Vec<usize>,
    x: Array2<f64>,
    ends: Vec<(u32, u32)>,
    c: Vec<f64>,
    secants: Vec<SecantRef>,
}

/// Relaxed embedding of the touched points: sigmoid outputs and the
/// per-secant squared distances v.
#[derive(Debug, Clone)]
pub struct Relaxed {
    pub s: Array2<f64>,
    pub v: Vec<f64>,
}

impl SecantProblem {
    pub fn new(data: &Dataset, secants: &[SecantRef]) -> Result<Self> {
        if secants.is_empty() {
            return Err(Error::invalid("at least one secant is required"));
        }
        let q = data.len();
        let mut local = vec![u32::MAX; q];
        let mut points = Vec::new();
        for s in secants {
            if s.i >= q || s.j >= q {
                return Err(Error::IndexOutOfRange {
                    index: s.i.max(s.j),
                    len: q,
                });
            }
            if s.i <= s.j {
                return Err(Error::invalid(format!("secant ({}, {}) must have i > j", s.i, s.j)));
            }
            if !(s.c >= 0.0) || !s.c.is_finite() {
                return Err(Error::invalid(format!(
                    "secant ({}, {}) has invalid target {}",
                    s.i, s.j, s.c
                )));
            }
            for p in [s.i, s.j] {
                if local[p] == u32::MAX {
                    local[p] = points.len() as u32;
                    points.push(p);
                }
            }
        }
        let n = data.dim();
        let mut x = Array2::zeros((points.len(), n));
        for (row, &p) in points.iter().enumerate() {
            x.row_mut(row)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(data.point(p));
        }
        Ok(SecantProblem {
            ends: secants.iter().map(|s| (local[s.i], local[s.j])).collect(),
            c: secants.iter().map(|s| s.c).collect(),
            secants: secants.to_vec(),
            points,
            x,
        })
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Dataset indices of the touched points, in local order.
    pub fn touched(&self) -> &[usize] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.c
    }

    pub fn secants(&self) -> &[SecantRef] {
        &self.secants
    }

    /// W xᵀ for every touched point, P×M.
    pub fn project(&self, w: ArrayView2<'_, f64>) -> Array2<f64> {
        self.x.dot(&w.t())
    }

    pub fn relaxed(&self, w: ArrayView2<'_, f64>, alpha: f64) -> Relaxed {
        let s = self.project(w).mapv(|t| sigmoid(alpha, t));
        let v = self.pair_sq_dists(&s);
        Relaxed { s, v }
    }

    fn pair_sq_dists(&self, s: &Array2<f64>) -> Vec<f64> {
        let m = s.ncols();
        let flat = s.as_slice().expect("standard layout");
        self.ends
            .par_iter()
            .map(|&(a, b)| {
                let ra = &flat[a as usize * m..(a as usize + 1) * m];
                let rb = &flat[b as usize * m..(b as usize + 1) * m];
                ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum()
            })
            .collect()
    }

    /// Quantized codes of the touched points (local indexing).
    pub fn codes(&self, w: ArrayView2<'_, f64>) -> BinaryCodes {
        let proj = self.project(w);
        let rows: Vec<Vec<u8>> = proj
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&t| (t >= 0.0) as u8).collect())
            .collect();
        BinaryCodes::pack(&rows).expect("rows share a length")
    }

    /// Hamming distance of every secant under `codes` from [`Self::codes`].
    pub fn hamming(&self, codes: &BinaryCodes) -> Vec<f64> {
        self.ends
            .iter()
            .map(|&(a, b)| codes.distance(a as usize, b as usize) as f64)
            .collect()
    }
}

/// The fixed quantities of one W-step.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub u: &'a [f64],
    pub y: &'a [f64],
    pub lambda: f64,
    pub alpha: f64,
}

fn residuals(problem: &SecantProblem, v: &[f64], inputs: &StepInputs<'_>) -> Vec<f64> {
    v.iter()
        .zip(&problem.c)
        .zip(inputs.u.iter().zip(inputs.y))
        .map(|((vi, ci), (ui, yi))| ui - inputs.lambda * vi + ci + yi)
        .collect()
}

fn half_sum_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

fn first_non_finite(problem: &SecantProblem, r: &[f64]) -> Error {
    let p = r.iter().position(|x| !x.is_finite()).unwrap_or(0);
    let s = problem.secants[p];
    Error::NonFinite(format!(
        "W-step residual for secant ({}, {}) is {}",
        s.i, s.j, r[p]
    ))
}

/// f(W) = ½ Σ (u − λ v(W) + c + y)².
pub fn subproblem_objective(problem: &SecantProblem, w: ArrayView2<'_, f64>, inputs: &StepInputs<'_>) -> Result<f64> {
    let relaxed = problem.relaxed(w, inputs.alpha);
    let r = residuals(problem, &relaxed.v, inputs);
    let f = half_sum_sq(&r);
    if !f.is_finite() {
        return Err(first_non_finite(problem, &r));
    }
    Ok(f)
}

/// f(W) and ∂f/∂W.
///
/// ∂f/∂w_m = Σ r · (−λ) · 2(s_im − s_jm) · (s'_im x_i − s'_jm x_j), with
/// s = σ_α(W x) and s' = α s (1 − s).
pub fn subproblem_gradient(
    problem: &SecantProblem,
    w: ArrayView2<'_, f64>,
    inputs: &StepInputs<'_>,
) -> Result<(f64, Array2<f64>)> {
    let relaxed = problem.relaxed(w, inputs.alpha);
    let r = residuals(problem, &relaxed.v, inputs);
    let f = half_sum_sq(&r);
    if !f.is_finite() {
        return Err(first_non_finite(problem, &r));
    }
    let s = &relaxed.s;
    let m = s.ncols();
    let mut ds = s.mapv(|t| inputs.alpha * t * (1.0 - t));
    let mut coeff = Array2::<f64>::zeros(s.raw_dim());
    {
        let sf = s.as_slice().expect("standard layout");
        let gf = coeff.as_slice_mut().expect("standard layout");
        for (&(a, b), &ri) in problem.ends.iter().zip(&r) {
            let (a, b) = (a as usize * m, b as usize * m);
            let k = -2.0 * inputs.lambda * ri;
            for t in 0..m {
                let d = k * (sf[a + t] - sf[b + t]);
                gf[a + t] += d;
                gf[b + t] -= d;
            }
        }
    }
    // Chain through the sigmoid derivative per point, then back to W.
    Zip::from(&mut ds).and(&coeff).for_each(|d, &g| *d *= g);
    let grad = ds.t().dot(&problem.x);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(first_non_finite(problem, &r));
    }
    Ok((f, grad))
}

/// Outcome of one W-step.
#[derive(Debug, Clone)]
pub struct WStep {
    pub w: Array2<f64>,
    pub entry_loss: f64,
    pub exit_loss: f64,
    pub iterations: usize,
    /// Final backtracking curvature estimate, reused to seed the next step.
    pub lipschitz: f64,
}

/// Accelerated gradient with backtracking line search and adaptive restart.
///
/// Iterates are accepted only when they lower f, so the returned loss never
/// exceeds the entry loss.
pub fn w_step(
    problem: &SecantProblem,
    w0: ArrayView2<'_, f64>,
    inputs: &StepInputs<'_>,
    max_iters: usize,
    tol: f64,
    lipschitz: f64,
) -> Result<WStep> {
    let mut x = w0.to_owned();
    let mut fx = subproblem_objective(problem, x.view(), inputs)?;
    let entry_loss = fx;
    let mut point = x.clone();
    let mut t = 1.0f64;
    let mut lip = lipschitz.max(1e-12);
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let (fy, g) = subproblem_gradient(problem, point.view(), inputs)?;
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let z = &point - &(&g / lip);
            let fz = subproblem_objective(problem, z.view(), inputs)?;
            if fz <= fy - 0.5 * gnorm2 / lip {
                accepted = Some((z, fz));
                break;
            }
            lip *= 2.0;
        }
        let Some((z, fz)) = accepted else {
            break;
        };
        if fz < fx {
            let decrease = fx - fz;
            let x_prev = std::mem::replace(&mut x, z);
            fx = fz;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            point = &x + &((&x - &x_prev) * beta);
            t = t_next;
            lip *= 0.5;
            if decrease <= tol * fx.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        } else if t > 1.0 {
            // Momentum overshot: restart from the best iterate.
            t = 1.0;
            point = x.clone();
        } else {
            break;
        }
    }
    Ok(WStep {
        w: x,
        entry_loss,
        exit_loss: fx,
        iterations,
        lipschitz: lip,
    })
}
