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

//! The ADMM training loop for near-isometric hashing.
//!
//! The problem minimize ‖u‖∞ subject to u = λ v(W) − c is split with the
//! scaled augmented Lagrangian
//!
//! ```text
//! ‖u‖∞ + (ρ/2) ‖u − λ v(W) + c + y‖²
//! ```
//!
//! and each outer iteration runs a W-step (accelerated gradient on the
//! smooth part), a u-step (ℓ∞ prox), a λ-step (clamped least squares) and a
//! dual step on y. The sigmoid rate α grows geometrically from
//! `alpha_start` to `alpha_end` over the first outer iterations.

mod prox;
mod subproblem;

pub use prox::{project_l1_ball, prox_objective, u_step};
pub use subproblem::{
    subproblem_gradient, subproblem_objective, w_step, Relaxed, SecantProblem, StepInputs, WStep,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::gaussian_embedding;
use crate::error::{Error, Result};
use crate::hashing::{Dataset, HashModel, SecantRef};
use crate::metrics::fit_lambda_chebyshev;
use crate::progress::ProgressSink;

/// Which ambient distance the targets c hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetConvention {
    /// c_ij = ‖x_i − x_j‖₂ (unsquared).
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub eta: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub alpha_growth: f64,
    pub max_outer_iters: usize,
    pub inner_gd_iters: usize,
    pub inner_gd_tol: f64,
    pub convergence_tol: f64,
    pub lambda_min: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            eta: 1.6,
            alpha_start: 1.0,
            alpha_end: 10.0,
            alpha_growth: 1.25,
            max_outer_iters: 1000,
            inner_gd_iters: 10,
            inner_gd_tol: 1e-6,
            convergence_tol: 1e-7,
            lambda_min: 1e-8,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("eta", self.eta),
            ("alpha_start", self.alpha_start),
            ("alpha_end", self.alpha_end),
            ("lambda_min", self.lambda_min),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if self.alpha_start > self.alpha_end {
            return Err(Error::invalid(format!(
                "alpha_start {} exceeds alpha_end {}",
                self.alpha_start, self.alpha_end
            )));
        }
        if !(self.alpha_growth > 1.0) {
            return Err(Error::invalid(format!(
                "alpha_growth must exceed 1, got {}",
                self.alpha_growth
            )));
        }
        if !(self.inner_gd_tol >= 0.0) || !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be nonnegative"));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Convergence compares the loss with its value this many iterations back,
/// so single-step stalls inside a slow descent do not stop the run.
pub const CONVERGENCE_WINDOW: usize = 10;

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Augmented Lagrangian value after the dual step.
    pub loss: f64,
    /// ‖λ v(W) − c‖∞ with the relaxed embedding.
    pub relaxed_distortion: f64,
    /// Max distortion of the quantized codes on the training secants.
    pub delta: f64,
    pub alpha: f64,
    pub lambda: f64,
}

/// Mutable ADMM state.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub w: Array2<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub iter: usize,
    pub loss_history: Vec<IterationRecord>,
    /// δ of the initial W on the training secants.
    pub initial_delta: f64,
    /// Iteration whose codes had the smallest δ (0 is the initial W).
    pub best_iteration: usize,
    pub best_delta: f64,
    pub converged: bool,
    pub lipschitz: f64,
    pub target_convention: TargetConvention,
}

/// Returned inside [`Error::Diverged`]: the last state whose loss stayed
/// within 10× of the running minimum.
#[derive(Debug, Clone)]
pub struct DivergedRun {
    pub iteration: usize,
    pub loss: f64,
    pub min_loss: f64,
    pub model: HashModel,
    pub state: SolverState,
}

/// Optional warm-start and coupling knobs for [`train_nibh_with`].
#[derive(Debug, Default)]
pub struct TrainOptions<'a> {
    pub initial_w: Option<Array2<f64>>,
    pub initial_lambda: Option<f64>,
    /// Skip the λ-step and keep the initial λ throughout; δ is then measured
    /// at that λ.
    pub freeze_lambda: bool,
    pub progress: Option<&'a mut ProgressSink>,
}

fn linf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// ‖u‖∞ + (ρ/2)‖u − λv + c + y‖².
pub fn augmented_loss(u: &[f64], v: &[f64], c: &[f64], y: &[f64], lambda: f64, rho: f64) -> f64 {
    let sq: f64 = u
        .iter()
        .zip(v)
        .zip(c.iter().zip(y))
        .map(|((ui, vi), (ci, yi))| {
            let r = ui - lambda * vi + ci + yi;
            r * r
        })
        .sum();
    linf(u) + 0.5 * rho * sq
}

/// λ = max(λ_min, ⟨v, u + c + y⟩ / ⟨v, v⟩); keeps `previous` when v = 0.
pub fn lambda_step(u: &[f64], v: &[f64], c: &[f64], y: &[f64], lambda_min: f64, previous: f64) -> f64 {
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if vv == 0.0 {
        log::warn!("lambda step skipped: relaxed distances are all zero");
        return previous;
    }
    let num: f64 = v
        .iter()
        .zip(u)
        .zip(c.iter().zip(y))
        .map(|((vi, ui), (ci, yi))| vi * (ui + ci + yi))
        .sum();
    (num / vv).max(lambda_min)
}

/// y ← y + η (u − λ v + c).
pub fn y_step(y: &[f64], u: &[f64], v: &[f64], c: &[f64], lambda: f64, eta: f64) -> Vec<f64> {
    y.iter()
        .zip(u)
        .zip(v.iter().zip(c))
        .map(|((yi, ui), (vi, ci))| yi + eta * (ui - lambda * vi + ci))
        .collect()
}

/// (δ, λ*) of the quantized codes of `w` on the training secants; with a
/// frozen scale δ is measured at that λ instead.
fn quantized_fit(problem: &SecantProblem, w: &Array2<f64>, frozen: Option<f64>) -> (f64, Option<f64>) {
    let codes = problem.codes(w.view());
    let v = problem.hamming(&codes);
    if let Some(lambda) = frozen {
        let delta = v
            .iter()
            .zip(problem.targets())
            .map(|(vi, ci)| (lambda * vi - ci).abs())
            .fold(0.0, f64::max);
        return (delta, Some(lambda));
    }
    match fit_lambda_chebyshev(&v, problem.targets()) {
        Ok(fit) => (fit.delta, Some(fit.lambda_star)),
        Err(_) => (problem.targets().iter().cloned().fold(0.0, f64::max), None),
    }
}

/// Trains W and λ on `secants` from a Gaussian initialization seeded by
/// `config.seed`.
pub fn train_nibh(
    data: &Dataset,
    secants: &[SecantRef],
    bits: usize,
    config: &SolverConfig,
) -> Result<(HashModel, SolverState)> {
    train_nibh_with(data, secants, bits, config, TrainOptions::default())
}

pub fn train_nibh_with(
    data: &Dataset,
    secants: &[SecantRef],
    bits: usize,
    config: &SolverConfig,
    options: TrainOptions<'_>,
) -> Result<(HashModel, SolverState)> {
    config.validate()?;
    if bits == 0 {
        return Err(Error::invalid("code length M must be at least 1"));
    }
    let problem = SecantProblem::new(data, secants)?;
    let n = data.dim();
    let w = match options.initial_w {
        Some(w) => {
            if w.dim() != (bits, n) {
                return Err(Error::DimensionMismatch {
                    context: "initial W",
                    expected: (bits, n),
                    found: w.dim(),
                });
            }
            w
        }
        None => gaussian_embedding(bits, n, config.seed),
    };
    let frozen = if options.freeze_lambda { options.initial_lambda } else { None };
    let (delta0, fit0) = quantized_fit(&problem, &w, frozen);
    // Without a caller-supplied scale, start λ where the initial codes fit best.
    let lambda0 = options.initial_lambda.unwrap_or_else(|| fit0.unwrap_or(1.0));
    if !(lambda0 > 0.0) {
        return Err(Error::invalid(format!("initial lambda must be positive, got {lambda0}")));
    }
    let mut progress = options.progress;
    let c = problem.targets().to_vec();
    let s = problem.len();
    // Start on the constraint surface: u = λv − c, y = 0.
    let v0 = problem.relaxed(w.view(), config.alpha_start).v;
    let u0: Vec<f64> = v0.iter().zip(&c).map(|(vi, ci)| lambda0 * vi - ci).collect();
    let mut state = SolverState {
        initial_delta: delta0,
        best_iteration: 0,
        best_delta: delta0,
        w,
        u: u0,
        y: vec![0.0; s],
        lambda: lambda0,
        alpha: config.alpha_start,
        iter: 0,
        loss_history: Vec::new(),
        converged: false,
        lipschitz: 1.0,
        target_convention: TargetConvention::Euclidean,
    };
    let preprocessing = data.preprocessing();
    let snapshot = |state: &SolverState| -> Result<HashModel> {
        HashModel::new(state.w.clone(), state.lambda, config.alpha_end, &preprocessing)
    };
    let mut best_w = state.w.clone();
    let mut best_lambda = fit0.unwrap_or(lambda0);

    let mut blowup_floor = f64::INFINITY;
    let mut stage_alpha: Option<f64> = None;
    let mut last_good = state.clone();
    let mut min_loss = f64::INFINITY;
    let mut blown = 0usize;
    let mut final_rate_losses: Vec<f64> = Vec::new();

    for iteration in 1..=config.max_outer_iters {
        let inputs = StepInputs {
            u: &state.u,
            y: &state.y,
            lambda: state.lambda,
            alpha: state.alpha,
        };
        let step = w_step(
            &problem,
            state.w.view(),
            &inputs,
            config.inner_gd_iters,
            config.inner_gd_tol,
            state.lipschitz,
        )?;
        log::debug!(
            "iteration {iteration}: W-step {} -> {} in {} steps (L = {:.3e})",
            step.entry_loss,
            step.exit_loss,
            step.iterations,
            step.lipschitz
        );
        state.w = step.w;
        state.lipschitz = step.lipschitz;

        let v = problem.relaxed(state.w.view(), state.alpha).v;
        let z: Vec<f64> = v
            .iter()
            .zip(&c)
            .zip(&state.y)
            .map(|((vi, ci), yi)| state.lambda * vi - ci - yi)
            .collect();
        state.u = u_step(&z, config.rho);
        if !options.freeze_lambda {
            state.lambda = lambda_step(&state.u, &v, &c, &state.y, config.lambda_min, state.lambda);
        }
        state.y = y_step(&state.y, &state.u, &v, &c, state.lambda, config.eta);
        state.iter = iteration;

        let loss = augmented_loss(&state.u, &v, &c, &state.y, state.lambda, config.rho);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("augmented loss at iteration {iteration} is {loss}")));
        }
        let relaxed_distortion = v
            .iter()
            .zip(&c)
            .map(|(vi, ci)| (state.lambda * vi - ci).abs())
            .fold(0.0, f64::max);
        let (delta, fit) = quantized_fit(&problem, &state.w, frozen);
        if delta < state.best_delta {
            state.best_delta = delta;
            state.best_iteration = iteration;
            best_w.assign(&state.w);
            best_lambda = fit.unwrap_or(state.lambda);
        }
        let record = IterationRecord {
            iteration,
            loss,
            relaxed_distortion,
            delta,
            alpha: state.alpha,
            lambda: state.lambda,
        };
        state.loss_history.push(record);
        if let Some(sink) = progress.as_deref_mut() {
            sink.record(&record);
        }

        // Losses are only comparable at a fixed rate, so the watch restarts
        // whenever α moves. Near-zero losses oscillate by large ratios without
        // diverging; only losses above a tenth of the stage's first one count.
        if stage_alpha != Some(state.alpha) {
            stage_alpha = Some(state.alpha);
            blowup_floor = 0.1 * loss;
            min_loss = f64::INFINITY;
            blown = 0;
        }
        min_loss = min_loss.min(loss);
        if loss > 10.0 * min_loss && loss > blowup_floor {
            blown += 1;
            if blown >= 20 {
                let model = snapshot(&last_good)?;
                return Err(Error::Diverged(Box::new(DivergedRun {
                    iteration,
                    loss,
                    min_loss,
                    model,
                    state: last_good,
                })));
            }
        } else {
            blown = 0;
            last_good = state.clone();
        }

        if state.alpha >= config.alpha_end {
            final_rate_losses.push(loss);
            if final_rate_losses.len() > CONVERGENCE_WINDOW {
                let prev = final_rate_losses[final_rate_losses.len() - 1 - CONVERGENCE_WINDOW];
                let change = (prev - loss).abs() / prev.abs().max(f64::MIN_POSITIVE);
                if change < config.convergence_tol * CONVERGENCE_WINDOW as f64 {
                    state.converged = true;
                    break;
                }
            }
        }
        state.alpha = (state.alpha * config.alpha_growth).min(config.alpha_end);
    }

    let model = HashModel::new(best_w, best_lambda, config.alpha_end, &preprocessing)?;
    Ok((model, state))
}
