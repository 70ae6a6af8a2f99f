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

//! The `isohash` command line. Every command prints exactly one JSON
//! document on stdout; logs go to stderr.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 solver divergence,
//! 5 check failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baselines::{checked_fig1_dataset, lsh_fit, project_1d, DEFAULT_GRID_STEPS, FIG1_SEED};
use crate::column_gen::{train_nibh_cg, train_nibh_cg_pool, CgConfig};
use crate::data_io::{
    apply_preprocessing, bre_secant_selection, gen_random_dataset, gen_translating_squares, load_dataset, load_model,
    preprocess, save_binary, save_model,
};
use crate::error::{Error, Result};
use crate::hashing::{enumerate_secants, Dataset, HashModel, SecantRef};
use crate::metrics::{kendall_tau_at_k, map_at_k, max_distortion, MetricJson};
use crate::progress::ProgressSink;
use crate::solver::{train_nibh_with, SolverConfig, TrainOptions};
use crate::theory::{knn_sufficiency_check, lemma1_empirical, GaussianMixtureSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "isohash", version, about = "Near-isometric binary hashing")]
pub struct Cli {
    /// Worker threads for parallel operations (results do not depend on it).
    #[arg(long, global = true, env = "ISOHASH_THREADS")]
    pub threads: Option<usize>,
    /// Write the run manifest (config, seeds, fingerprints, timings) here.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Convert a CSV or IDX file (optionally a row range) to the binary format.
    Import(ImportArgs),
    /// Learn a hash model.
    Train(TrainArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
    /// Best ℓ∞ versus ℓ2 line embeddings of the 70-point demo set.
    DemoFig1(DemoArgs),
    /// Theory checks.
    Check(CheckArgs),
    /// Time training phases on random data of growing size.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Random,
    Squares,
    Mixture,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 100)]
    pub q: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mixture components (placed at distance `separation` along axes).
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    /// Center and normalize rows before writing.
    #[arg(long)]
    pub preprocess: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    #[arg(long)]
    pub take: Option<usize>,
    #[arg(long)]
    pub preprocess: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Nibh,
    NibhCg,
    Lsh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SecantChoice {
    All,
    Bre,
    Sample(usize),
}

fn parse_secants(s: &str) -> std::result::Result<SecantChoice, String> {
    match s {
        "all" => Ok(SecantChoice::All),
        "bre" => Ok(SecantChoice::Bre),
        _ => match s.strip_prefix("sample:").map(str::parse::<usize>) {
            Some(Ok(k)) if k > 0 => Ok(SecantChoice::Sample(k)),
            _ => Err(format!("expected all, bre or sample:K with K > 0, got {s:?}")),
        },
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "nibh")]
    pub algo: Algo,
    #[arg(long, default_value_t = 30)]
    pub bits: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.6)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_start: f64,
    #[arg(long, default_value_t = 10.0)]
    pub alpha_end: f64,
    #[arg(long, default_value_t = 1.25)]
    pub alpha_growth: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "all", value_parser = parse_secants)]
    pub secants: SecantChoice,
    #[arg(long)]
    pub init_sample: Option<usize>,
    #[arg(long)]
    pub violator_batch: Option<usize>,
    #[arg(long)]
    pub max_generations: Option<usize>,
    /// Relative loss change per iteration that stops the solver.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration (or per-generation) JSON lines.
    #[arg(long)]
    pub progress: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Delta,
    Map,
    Tau,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricKind,
    /// Neighbors per query (default 50 for map, 10 for tau).
    #[arg(long)]
    pub k: Option<usize>,
    /// Use the first N points as queries (default: all points).
    #[arg(long)]
    pub queries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = FIG1_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_GRID_STEPS)]
    pub grid_steps: usize,
    /// Also write `angle,linf,l2` profile rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(subcommand)]
    pub which: CheckKind,
}

#[derive(Debug, Subcommand)]
pub enum CheckKind {
    /// Sigmoid approximation bound over an (α, σ) grid.
    Lemma1 {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 4.0, 10.0, 100.0])]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// k-NN containment for every query with gap at least 2δ.
    Knn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        queries: Option<usize>,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![100, 300, 1000])]
    pub q: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub bits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub max_iters: usize,
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    let mut manifest = Manifest::new(&cli.command);
    match execute(&cli.command, &mut manifest) {
        Ok(report) => {
            if let Some(path) = cli.manifest.as_ref().or(manifest.default_path.as_ref()) {
                if let Err(e) = manifest.write(path) {
                    eprintln!("error: {e}");
                    return EXIT_DATA;
                }
            }
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) => EXIT_USAGE,
        Error::Diverged(_) => EXIT_DIVERGED,
        Error::CheckFailed(_) => EXIT_CHECK,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    config: Value,
    seeds: Vec<u64>,
    fingerprints: Vec<(String, String)>,
    artifacts: Vec<String>,
    timings: Vec<(String, f64)>,
    #[serde(skip)]
    default_path: Option<PathBuf>,
}

impl Manifest {
    fn new(command: &Command) -> Self {
        let (name, config) = match command {
            Command::Gen(a) => ("gen", json!({"kind": a.kind, "q": a.q, "n": a.n, "seed": a.seed,
                "components": a.components, "separation": a.separation, "preprocess": a.preprocess})),
            Command::Import(a) => ("import", json!({"input": a.input, "skip": a.skip, "take": a.take, "preprocess": a.preprocess})),
            Command::Train(a) => ("train", serde_json::to_value(a).unwrap_or(Value::Null)),
            Command::Eval(a) => ("eval", json!({"model": a.model, "data": a.data, "metric": a.metric, "k": a.k, "queries": a.queries})),
            Command::DemoFig1(a) => ("demo-fig1", json!({"seed": a.seed, "grid_steps": a.grid_steps})),
            Command::Check(a) => match &a.which {
                CheckKind::Lemma1 { alpha, sigma, samples, seed } => {
                    ("check lemma1", json!({"alpha": alpha, "sigma": sigma, "samples": samples, "seed": seed}))
                }
                CheckKind::Knn { model, data, k, queries } => {
                    ("check knn", json!({"model": model, "data": data, "k": k, "queries": queries}))
                }
            },
            Command::Bench(a) => ("bench", serde_json::to_value(a).unwrap_or(Value::Null)),
        };
        Manifest {
            command: name.to_owned(),
            config,
            seeds: Vec::new(),
            fingerprints: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
            default_path: None,
        }
    }

    fn fingerprint(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.fingerprints.push((path.display().to_string(), hex));
        Ok(())
    }

    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings.push((phase.to_owned(), start.elapsed().as_secs_f64()));
        out
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn execute(command: &Command, manifest: &mut Manifest) -> Result<Value> {
    match command {
        Command::Gen(a) => cmd_gen(a, manifest),
        Command::Import(a) => cmd_import(a, manifest),
        Command::Train(a) => cmd_train(a, manifest),
        Command::Eval(a) => cmd_eval(a, manifest),
        Command::DemoFig1(a) => cmd_demo_fig1(a, manifest),
        Command::Check(a) => cmd_check(a, manifest),
        Command::Bench(a) => cmd_bench(a, manifest),
    }
}

fn describe(data: &Dataset) -> Value {
    json!({"Q": data.len(), "N": data.dim(), "normalized": data.normalized()})
}

fn mixture_spec(components: usize, n: usize, separation: f64) -> Result<GaussianMixtureSpec> {
    if components == 0 || components > n {
        return Err(Error::invalid(format!("components must be in 1..={n}, got {components}")));
    }
    let means = (0..components)
        .map(|p| {
            let mut m = vec![0.0; n];
            m[p] = separation;
            m
        })
        .collect();
    Ok(GaussianMixtureSpec::isotropic(vec![1.0 / components as f64; components], means, 1.0))
}

fn cmd_gen(a: &GenArgs, manifest: &mut Manifest) -> Result<Value> {
    manifest.seeds.push(a.seed);
    let raw = match a.kind {
        GenKind::Random => gen_random_dataset(a.q, a.n, a.seed)?,
        GenKind::Squares => gen_translating_squares(10, 3)?,
        GenKind::Mixture => {
            let spec = mixture_spec(a.components, a.n, a.separation)?;
            // Equal weights need an exact sum of 1 for validation.
            let spec = GaussianMixtureSpec {
                weights: normalized_weights(a.components),
                ..spec
            };
            crate::theory::sample_mixture(spec, a.q, a.seed)?.0
        }
    };
    let data = if a.preprocess { preprocess(raw.points())? } else { raw };
    save_binary(&data, &a.out)?;
    manifest.artifacts.push(a.out.display().to_string());
    manifest.fingerprint(&a.out)?;
    Ok(json!({"command": "gen", "out": a.out, "dataset": describe(&data)}))
}

fn normalized_weights(p: usize) -> Vec<f64> {
    let mut w = vec![1.0 / p as f64; p];
    let rest: f64 = w[..p - 1].iter().sum();
    w[p - 1] = 1.0 - rest;
    w
}

fn cmd_import(a: &ImportArgs, manifest: &mut Manifest) -> Result<Value> {
    manifest.fingerprint(&a.input)?;
    let full = load_dataset(&a.input)?;
    let end = a.take.map_or(full.len(), |t| (a.skip + t).min(full.len()));
    if a.skip >= end {
        return Err(Error::invalid(format!("row range {}..{end} is empty", a.skip)));
    }
    let rows: Vec<usize> = (a.skip..end).collect();
    let picked = full.subset(&rows)?;
    let data = if a.preprocess { preprocess(picked.points())? } else { picked };
    save_binary(&data, &a.out)?;
    manifest.artifacts.push(a.out.display().to_string());
    Ok(json!({"command": "import", "out": a.out, "dataset": describe(&data)}))
}

/// Loads a dataset for training: files not flagged normalized are
/// centered and normalized here.
fn load_training(path: &Path, manifest: &mut Manifest) -> Result<Dataset> {
    manifest.fingerprint(path)?;
    let data = load_dataset(path)?;
    if data.normalized() {
        Ok(data)
    } else {
        preprocess(data.points())
    }
}

/// Loads a dataset for a trained model: unnormalized files get the model's
/// stored preprocessing.
fn load_for_model(path: &Path, model: &HashModel, manifest: &mut Manifest) -> Result<Dataset> {
    manifest.fingerprint(path)?;
    let data = load_dataset(path)?;
    if data.normalized() {
        Ok(data)
    } else {
        apply_preprocessing(data.points(), &model.preprocessing())
    }
}

fn solver_config(a: &TrainArgs) -> SolverConfig {
    SolverConfig {
        rho: a.rho,
        eta: a.eta,
        alpha_start: a.alpha_start,
        alpha_end: a.alpha_end,
        alpha_growth: a.alpha_growth,
        max_outer_iters: a.max_iters,
        convergence_tol: a.tol,
        seed: a.seed,
        ..SolverConfig::default()
    }
}

fn select_secants(data: &Dataset, choice: &SecantChoice, seed: u64) -> Result<Vec<SecantRef>> {
    match choice {
        SecantChoice::All => Ok(enumerate_secants(data.len()).map(|(i, j)| SecantRef::measured(data, i, j)).collect()),
        SecantChoice::Bre => bre_secant_selection(data, 0.05, 0.02),
        SecantChoice::Sample(k) => Ok(crate::column_gen::sample_initial_secants(data, *k, seed)?.secants),
    }
}

fn open_progress(path: &Option<PathBuf>) -> Result<Option<ProgressSink>> {
    path.as_ref()
        .map(|p| {
            std::fs::File::create(p)
                .map(|f| ProgressSink::new(Box::new(std::io::BufWriter::new(f))))
                .map_err(|e| Error::io(p.display().to_string(), e))
        })
        .transpose()
}

fn cmd_train(a: &TrainArgs, manifest: &mut Manifest) -> Result<Value> {
    let cg_flags = a.init_sample.is_some() || a.violator_batch.is_some() || a.max_generations.is_some();
    if cg_flags && a.algo != Algo::NibhCg {
        return Err(Error::invalid("--init-sample, --violator-batch and --max-generations need --algo nibh-cg"));
    }
    match (a.algo, &a.secants) {
        (_, SecantChoice::All) | (Algo::Nibh, _) | (Algo::NibhCg, SecantChoice::Bre) => {}
        (Algo::NibhCg, _) => return Err(Error::invalid("--algo nibh-cg accepts --secants all or bre")),
        (Algo::Lsh, _) => return Err(Error::invalid("--secants does not apply to --algo lsh")),
    }
    manifest.seeds.push(a.seed);
    manifest.default_path = Some(PathBuf::from(format!("{}.manifest.json", a.out.display())));
    let start = Instant::now();
    let data = load_training(&a.data, manifest)?;
    manifest.timings.push(("load".to_owned(), start.elapsed().as_secs_f64()));
    let config = solver_config(a);
    config.validate()?;
    let mut progress = open_progress(&a.progress)?;
    let mut details = json!({});
    let model = match a.algo {
        Algo::Lsh => manifest.time("train", || lsh_fit(&data, a.bits, a.seed))?,
        Algo::Nibh => {
            let secants = select_secants(&data, &a.secants, a.seed)?;
            let (model, state) = manifest.time("train", || {
                let options = TrainOptions {
                    progress: progress.as_mut(),
                    ..TrainOptions::default()
                };
                train_nibh_with(&data, &secants, a.bits, &config, options)
            })?;
            details = json!({"secants": secants.len(), "iterations": state.iter, "converged": state.converged,
                "initial_delta": state.initial_delta});
            model
        }
        Algo::NibhCg => {
            let defaults = CgConfig::default();
            let cg = CgConfig {
                init_sample_size: a.init_sample.unwrap_or(defaults.init_sample_size),
                violator_batch: a.violator_batch.unwrap_or(defaults.violator_batch),
                max_generations: a.max_generations.unwrap_or(defaults.max_generations),
                scan_seed: a.seed,
                inner: config.clone(),
                ..defaults
            };
            let pool = match a.secants {
                SecantChoice::Bre => Some(bre_secant_selection(&data, 0.05, 0.02)?),
                _ => None,
            };
            let (model, report) = manifest.time("train", || {
                train_nibh_cg_pool(&data, a.bits, &cg, pool.as_deref(), progress.as_mut())
            })?;
            details = serde_json::to_value(&report).unwrap_or(Value::Null);
            model
        }
    };
    drop(progress);
    save_model(&model, &a.out)?;
    manifest.artifacts.push(a.out.display().to_string());
    let report = manifest.time("evaluate", || max_distortion(&model, &data))?;
    Ok(json!({
        "command": "train",
        "algo": a.algo,
        "M": model.bits(),
        "dataset": describe(&data),
        "delta": report.delta,
        "lambda_star": report.lambda_star,
        "lambda": model.lambda,
        "details": details,
        "model": a.out,
    }))
}

fn cmd_eval(a: &EvalArgs, manifest: &mut Manifest) -> Result<Value> {
    manifest.fingerprint(&a.model)?;
    let model = load_model(&a.model)?;
    let data = load_for_model(&a.data, &model, manifest)?;
    let queries: Vec<usize> = (0..a.queries.unwrap_or(data.len()).min(data.len())).collect();
    let out = match a.metric {
        MetricKind::Delta => MetricJson::from_distortion(&max_distortion(&model, &data)?, model.bits()),
        MetricKind::Map => MetricJson::from_neighbors(&map_at_k(&model, &data, &queries, a.k.unwrap_or(50))?, model.bits()),
        MetricKind::Tau => {
            MetricJson::from_neighbors(&kendall_tau_at_k(&model, &data, &queries, a.k.unwrap_or(10))?, model.bits())
        }
    };
    Ok(serde_json::to_value(out).expect("metric serializes"))
}

fn cmd_demo_fig1(a: &DemoArgs, manifest: &mut Manifest) -> Result<Value> {
    manifest.seeds.push(a.seed);
    let (points, labels, outcome) = checked_fig1_dataset(a.seed, a.grid_steps)?;
    let linf_x = project_1d(points.view(), outcome.linf.best_angle);
    let l2_x = project_1d(points.view(), outcome.l2.best_angle);
    if let Some(path) = &a.csv {
        let mut text = String::from("angle,linf,l2\n");
        for (p, q) in outcome.linf.profile.iter().zip(&outcome.l2.profile) {
            text.push_str(&format!("{},{},{}\n", p.0, p.1, q.1));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        manifest.artifacts.push(path.display().to_string());
    }
    let rows: Vec<Value> = (0..points.nrows())
        .map(|k| {
            json!({"x": points[[k, 0]], "y": points[[k, 1]], "label": labels[k],
                "linf": linf_x[k] * outcome.linf.scale, "l2": l2_x[k] * outcome.l2.scale})
        })
        .collect();
    Ok(json!({
        "command": "demo-fig1",
        "seed": a.seed,
        "linf": {"angle": outcome.linf.best_angle, "distortion": outcome.linf.distortion, "scale": outcome.linf.scale,
            "misordered_pairs": outcome.linf_misordered},
        "l2": {"angle": outcome.l2.best_angle, "distortion": outcome.l2.distortion, "scale": outcome.l2.scale,
            "misordered_near_pairs": outcome.l2_misordered},
        "contrast_holds": outcome.contrast_holds(),
        "points": rows,
    }))
}

fn cmd_check(a: &CheckArgs, manifest: &mut Manifest) -> Result<Value> {
    match &a.which {
        CheckKind::Lemma1 { alpha, sigma, samples, seed } => {
            manifest.seeds.push(*seed);
            let mut results = Vec::new();
            for &s in sigma {
                for &al in alpha {
                    results.push(lemma1_empirical(al, s, *samples, *seed)?);
                }
            }
            let bound_ok = results.iter().all(|r| r.holds);
            let mut monotone = true;
            for &s in sigma {
                let mut series: Vec<_> = results.iter().filter(|r| r.sigma == s).collect();
                series.sort_by(|x, y| x.alpha.total_cmp(&y.alpha));
                monotone &= series.windows(2).all(|w| w[1].empirical_mean < w[0].empirical_mean);
            }
            let pass = bound_ok && monotone;
            let report = json!({"command": "check lemma1", "pass": pass, "bound_holds": bound_ok,
                "monotone_in_alpha": monotone, "results": results});
            if pass {
                Ok(report)
            } else {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                Err(Error::CheckFailed("sigmoid bound check failed".into()))
            }
        }
        CheckKind::Knn { model, data, k, queries } => {
            manifest.fingerprint(model)?;
            let model = load_model(model)?;
            let data = load_for_model(data, &model, manifest)?;
            let qs: Vec<usize> = (0..queries.unwrap_or(data.len()).min(data.len())).collect();
            let report = knn_sufficiency_check(&model, &data, &qs, *k)?;
            let violations = report.violations();
            let out = json!({"command": "check knn", "pass": violations.is_empty(), "violations": violations,
                "satisfied_queries": report.satisfied_queries.len(), "report": report});
            if violations.is_empty() {
                Ok(out)
            } else {
                println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
                Err(Error::CheckFailed(format!("{} queries lost neighbors", violations.len())))
            }
        }
    }
}

fn cmd_bench(a: &BenchArgs, manifest: &mut Manifest) -> Result<Value> {
    manifest.seeds.push(a.seed);
    let mut rows = Vec::new();
    for &q in &a.q {
        let data = preprocess(gen_random_dataset(q, a.n, a.seed)?.points())?;
        let start = Instant::now();
        let lsh = lsh_fit(&data, a.bits, a.seed)?;
        let lsh_seconds = start.elapsed().as_secs_f64();
        let config = CgConfig {
            init_sample_size: 2000,
            violator_batch: 500,
            max_generations: 10,
            resolve_iters: a.max_iters.min(20).max(1),
            scan_seed: a.seed,
            inner: SolverConfig {
                max_outer_iters: a.max_iters,
                seed: a.seed,
                ..SolverConfig::default()
            },
            ..CgConfig::default()
        };
        let start = Instant::now();
        let (model, report) = train_nibh_cg(&data, a.bits, &config, None)?;
        let cg_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let delta = max_distortion(&model, &data)?.delta;
        let eval_seconds = start.elapsed().as_secs_f64();
        manifest.timings.push((format!("Q={q} nibh-cg"), cg_seconds));
        rows.push(json!({"Q": q, "lsh_seconds": lsh_seconds, "nibh_cg_seconds": cg_seconds,
            "eval_seconds": eval_seconds, "peak_resident_secants": report.peak_resident_secants,
            "generations": report.generations, "delta": delta, "lsh_lambda": lsh.lambda}));
    }
    Ok(json!({"command": "bench", "M": a.bits, "N": a.n, "runs": rows}))
}
