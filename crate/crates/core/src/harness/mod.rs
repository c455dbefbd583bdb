//! Experiment runner: builds the problem named by a config, runs every
//! optimizer on the same batch sequence, and writes traces and summaries.

pub mod checks;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub use checks::{run_checks, BetaFormulas, CheckOptions, CheckReport, Suite, SuiteReport};
pub use config::{
    parse_policy, BatchSpec, DataSource, EtaMode, ExperimentConfig, InitSpec, LrSchedule, OptimizerSpec, Overrides,
    ProblemSpec,
};

use crate::data::{load_libsvm, normalize_rows, synthesize_dataset, synthesize_sparse_binary};
use crate::error::{Error, Result};
use crate::math::DenseVector;
use crate::optim::{BetaUsed, OptimizerKind, OptimizerState};
use crate::problems::{
    estimate_smoothness, quad_optimum, BatchSampler, LogRegProblem, Objective, QuadraticProblem,
};

/// A constructed problem with what the runner needs to know about it.
pub struct Instance {
    pub objective: Box<dyn Objective>,
    pub f_star: Option<f64>,
    pub smoothness: f64,
    pub x0: DenseVector,
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let (objective, f_star, smoothness): (Box<dyn Objective>, _, _) = match &cfg.problem {
        ProblemSpec::RandomQuadratic { dim, cond, seed } => {
            let p = QuadraticProblem::random_spd(*dim, *cond, *seed)?;
            let (_, f_star) = quad_optimum(&p)?;
            let l = p.smoothness();
            (Box::new(p), Some(f_star), l)
        }
        ProblemSpec::DiagonalQuadratic { a, b, c, convention } => {
            let p = QuadraticProblem::diagonal(a.clone(), b.clone(), *c, *convention)?;
            let (_, f_star) = quad_optimum(&p)?;
            let l = p.smoothness();
            (Box::new(p), Some(f_star), l)
        }
        ProblemSpec::LogReg { source, l2, normalize, target, dim } => {
            let ds = match source {
                DataSource::Path(path) => load_libsvm(path)?,
                DataSource::Gaussian { n, dim, separability, seed } => synthesize_dataset(*n, *dim, *separability, *seed)?,
                DataSource::SparseBinary { n, dim, nnz, noise, seed } => {
                    synthesize_sparse_binary(*n, *dim, *nnz, *noise, *seed)?
                }
            };
            let ds = match dim {
                Some(d) => ds.with_dim(*d)?,
                None => ds,
            };
            let p = LogRegProblem::from_dataset(&normalize_rows(&ds, *normalize), *target, *l2)?;
            let l = estimate_smoothness(&p, cfg.seed)?;
            (Box::new(p), None, l)
        }
    };
    let dim = objective.dim();
    let x0 = match cfg.x0 {
        InitSpec::Zeros => DenseVector::zeros(dim),
        InitSpec::Gaussian(scale) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            DenseVector::new((0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())?
        }
    };
    Ok(Instance { objective, f_star, smoothness, x0 })
}

/// One row of a trace: the state at `x_t` and the step taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    /// Full objective at `x_t`.
    pub loss: f64,
    pub subopt: Option<f64>,
    pub beta: BetaUsed,
    /// Norm of the (minibatch) gradient used by the step.
    pub grad_norm: f64,
    pub step_norm: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub optimizer: String,
    pub seed: u64,
    pub iterations: u64,
    /// Objective at the last iterate; `None` when the run diverged.
    pub final_loss: Option<f64>,
    pub best_loss: Option<f64>,
    pub final_subopt: Option<f64>,
    pub diverged: bool,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub trace: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<TraceRecord>,
}

/// Wall-clock timer; reads zero where the platform has no clock
/// (`wasm32-unknown-unknown` panics on `Instant::now`).
struct Stopwatch(#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))] std::time::Instant);

impl Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    fn start() -> Self {
        Self(std::time::Instant::now())
    }

    #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
    fn start() -> Self {
        Self()
    }

    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }

    #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
    fn seconds(&self) -> f64 {
        0.0
    }
}

fn config_error(field: &str, msg: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), msg: msg.into() }
}

fn layer_spans(sizes: &[usize], dim: usize, field: &str) -> Result<Vec<Range<usize>>> {
    if sizes.iter().sum::<usize>() != dim || sizes.contains(&0) {
        return Err(config_error(field, format!("layer sizes {sizes:?} must be positive and sum to {dim}")));
    }
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|s| {
            start += s;
            start - s..start
        })
        .collect())
}

pub fn make_sampler(cfg: &ExperimentConfig, n: usize) -> Result<BatchSampler> {
    match cfg.batch {
        BatchSpec::Full => BatchSampler::full(n),
        BatchSpec::Size(b) => BatchSampler::new(n, b, cfg.seed, cfg.sampling)
            .map_err(|_| config_error("batch_size", format!("{b} exceeds the {n} samples"))),
    }
}

pub fn base_eta(cfg: &ExperimentConfig, spec: &OptimizerSpec, inst: &Instance) -> f64 {
    spec.eta.unwrap_or(match cfg.eta {
        EtaMode::Explicit(eta) => eta,
        EtaMode::OneOverL => 1.0 / inst.smoothness,
    })
}

/// Run one optimizer. A non-finite loss or iterate ends the run and marks it
/// diverged instead of failing.
pub fn simulate_run(cfg: &ExperimentConfig, inst: &Instance, spec: &OptimizerSpec, index: usize) -> Result<RunOutcome> {
    let started = Stopwatch::start();
    let obj = inst.objective.as_ref();
    let sampler = make_sampler(cfg, obj.num_samples())?;
    let all: Vec<usize> = (0..obj.num_samples()).collect();
    let mut state = OptimizerState::new(inst.x0.clone());
    if let Some(sizes) = &spec.layers {
        state = state.with_layers(layer_spans(sizes, obj.dim(), &format!("optimizers.{index}.layers"))?)?;
    }
    let eta0 = base_eta(cfg, spec, inst);
    let subopt = |f: f64| inst.f_star.map(|fs| f - fs);

    let mut records = Vec::with_capacity(cfg.iterations as usize);
    let mut diverged = false;
    for t in 0..cfg.iterations {
        let batch = sampler.sample(t);
        let (batch_loss, g) = obj.value_grad(&state.x, &batch)?;
        let loss = if sampler.is_full() { batch_loss } else { obj.value(&state.x, &all)? };
        if !loss.is_finite() || !batch_loss.is_finite() || !g.is_finite() {
            diverged = true;
            break;
        }
        let eta = eta0 * cfg.schedule.factor(t);
        let report = match spec.optimizer.step(&mut state, batch_loss, &g, eta) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        records.push(TraceRecord {
            t,
            loss,
            subopt: subopt(loss),
            beta: report.beta,
            grad_norm: report.grad_norm,
            step_norm: report.step_norm,
            eta,
        });
    }

    let final_loss = if diverged { None } else { Some(obj.value(&state.x, &all)?).filter(|f| f.is_finite()) };
    let diverged = diverged || final_loss.is_none();
    let best_loss = records.iter().map(|r| r.loss).chain(final_loss).reduce(f64::min);
    let summary = RunSummary {
        name: cfg.name.clone(),
        optimizer: spec.label.clone(),
        seed: cfg.seed,
        iterations: records.len() as u64,
        final_loss,
        best_loss,
        final_subopt: final_loss.and_then(subopt),
        diverged,
        wall_seconds: started.seconds(),
        config_hash: cfg.fingerprint(),
        trace: String::new(),
    };
    Ok(RunOutcome { summary, records })
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' }).collect()
}

pub fn trace_path(cfg: &ExperimentConfig, index: usize, spec: &OptimizerSpec) -> PathBuf {
    cfg.output_dir.join(format!("{}_{index}_{}.csv", file_stem(&cfg.name), file_stem(&spec.label)))
}

/// Run every optimizer of `cfg`, writing one trace per run and a JSON-lines
/// summary file into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<(RunSummary, PathBuf)>> {
    let inst = build_instance(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Vec::with_capacity(cfg.optimizers.len());
    let mut lines = String::new();
    for (i, spec) in cfg.optimizers.iter().enumerate() {
        let mut run = simulate_run(cfg, &inst, spec, i)?;
        let path = trace_path(cfg, i, spec);
        if !run.records.is_empty() {
            emit_trace_csv(&run.records, &path)?;
        }
        run.summary.trace = path.display().to_string();
        lines.push_str(&summary_line(&run.summary));
        lines.push('\n');
        out.push((run.summary, path));
    }
    fs::write(cfg.output_dir.join(format!("{}_summary.jsonl", file_stem(&cfg.name))), lines)?;
    Ok(out)
}

pub fn summary_line(summary: &RunSummary) -> String {
    serde_json::to_string(summary).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best_beta: f64,
    /// Final loss per coefficient; `None` for diverged runs.
    pub losses: Vec<(f64, Option<f64>)>,
}

/// Run the fixed-momentum baseline of `cfg` (its first `mgd` or `adamw`
/// entry, or plain `mgd`) for each coefficient and pick the lowest final
/// loss, preferring the smaller coefficient on ties.
pub fn grid_search_fixed_beta(cfg: &ExperimentConfig, betas: &[f64]) -> Result<GridResult> {
    if betas.is_empty() {
        return Err(config_error("betas", "need at least one value"));
    }
    if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
        return Err(config_error("betas", format!("{b} is outside [0, 1)")));
    }
    let template = cfg.optimizers.iter().find(|s| s.optimizer.kind.is_fixed()).cloned().unwrap_or_else(|| {
        let first = &cfg.optimizers[0];
        let mut spec = first.clone();
        spec.optimizer.kind = OptimizerKind::Mgd;
        spec.layers = None;
        spec
    });
    let inst = build_instance(cfg)?;
    let mut losses = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut spec = template.clone();
        spec.optimizer.beta = beta;
        spec.label = spec.optimizer.label();
        losses.push((beta, simulate_run(cfg, &inst, &spec, 0)?.summary.final_loss));
    }
    let key = |l: Option<f64>| l.unwrap_or(f64::INFINITY);
    let best_beta = losses
        .iter()
        .copied()
        .reduce(|a, b| if key(b.1) < key(a.1) || (key(b.1) == key(a.1) && b.0 < a.0) { b } else { a })
        .map(|(b, _)| b)
        .unwrap_or(betas[0]);
    Ok(GridResult { best_beta, losses })
}

pub const TRACE_HEADER: &str = "t,loss,subopt,beta,grad_norm,step_norm,eta";

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let subopt = r.subopt.map_or_else(|| "NA".to_string(), float);
        let beta = r.beta.values().iter().map(|&b| float(b)).collect::<Vec<_>>().join(";");
        let _ = writeln!(
            out,
            "{},{},{subopt},{beta},{},{},{}",
            r.t,
            float(r.loss),
            float(r.grad_norm),
            float(r.step_norm),
            float(r.eta)
        );
    }
    out
}

pub fn emit_trace_csv(records: &[TraceRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot write an empty trace".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format_trace(records))?;
    Ok(())
}

/// Read back a trace written by [`emit_trace_csv`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, TRACE_HEADER)) => {}
        _ => return Err(Error::Parse { line: 1, msg: "missing trace header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let betas = cols[3].split(';').map(num).collect::<Result<Vec<_>>>()?;
        out.push(TraceRecord {
            t: cols[0].parse().map_err(|_| bad("bad step"))?,
            loss: num(cols[1])?,
            subopt: if cols[2] == "NA" { None } else { Some(num(cols[2])?) },
            beta: if betas.len() == 1 { BetaUsed::Global(betas[0]) } else { BetaUsed::PerLayer(betas) },
            grad_norm: num(cols[4])?,
            step_norm: num(cols[5])?,
            eta: num(cols[6])?,
        });
    }
    Ok(out)
}
