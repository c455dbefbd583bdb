//! Flat `key = value` experiment files with dotted keys.
//!
//! ```text
//! name = quad
//! problem.kind = quadratic
//! problem.dim = 50
//! optimizers.0.kind = mgd
//! optimizers.0.beta = 0.9
//! ```

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::RowNorm;
use crate::error::{Error, Result};
use crate::optim::{
    default_beta_max, DecayMode, FhatPolicy, Hyperparams, MemoryInit, Optimizer, OptimizerKind, Policy,
};
use crate::problems::{LabelTarget, QuadConvention, SamplingMode};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Path(PathBuf),
    Gaussian { n: usize, dim: usize, separability: f64, seed: u64 },
    SparseBinary { n: usize, dim: usize, nnz: f64, noise: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    RandomQuadratic { dim: usize, cond: f64, seed: u64 },
    DiagonalQuadratic { a: Vec<f64>, b: Vec<f64>, c: f64, convention: QuadConvention },
    LogReg { source: DataSource, l2: f64, normalize: RowNorm, target: LabelTarget, dim: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSpec {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    Explicit(f64),
    OneOverL,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay over `t_max` steps, held at its last value afterwards so
    /// the rate never reaches zero.
    Cosine { t_max: u64 },
    /// Multiply by `factor` at each milestone.
    Step { milestones: Vec<u64>, factor: f64 },
}

impl LrSchedule {
    pub fn factor(&self, t: u64) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Cosine { t_max } => {
                let frac = t.min(*t_max - 1) as f64 / *t_max as f64;
                0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            Self::Step { milestones, factor } => factor.powi(milestones.iter().filter(|&&m| t >= m).count() as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Zeros,
    Gaussian(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub optimizer: Optimizer,
    /// Overrides the experiment-wide learning rate.
    pub eta: Option<f64>,
    /// Layer sizes for per-layer coefficients.
    pub layers: Option<Vec<usize>>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub optimizers: Vec<OptimizerSpec>,
    pub iterations: u64,
    pub batch: BatchSpec,
    pub sampling: SamplingMode,
    pub eta: EtaMode,
    pub schedule: LrSchedule,
    pub x0: InitSpec,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Command-line values that replace the file's `seed`, `iterations` and
/// `output_dir` before anything derived from them is resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn config_error(field: &str, msg: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), msg: msg.into() }
}

struct Entries {
    map: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Parse { line: i + 1, msg: "empty key".into() });
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key `{key}`") });
            }
        }
        Ok(Self { map, used: RefCell::new(BTreeSet::new()) })
    }

    fn get(&self, key: &str) -> Option<&str> {
        let v = self.map.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| config_error(key, "missing"))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| config_error(key, format!("cannot parse `{v}`"))))
            .transpose()
    }

    fn num_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| item.trim().parse::<T>().map_err(|_| config_error(key, format!("cannot parse `{item}`"))))
                    .collect()
            })
            .transpose()
    }

    fn unused(&self) -> Option<String> {
        let used = self.used.borrow();
        self.map.keys().find(|k| !used.contains(*k)).cloned()
    }
}

impl ExperimentConfig {
    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        Self::parse_with(text, base, &Overrides::default())
    }

    pub fn parse_with(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let e = Entries::parse(text)?;
        let seed = e.num_or("seed", 0u64)?;
        let seed = overrides.seed.unwrap_or(seed);
        let iterations = e.num_or("iterations", 100u64)?;
        let iterations = overrides.iterations.unwrap_or(iterations);
        if iterations == 0 {
            return Err(config_error("iterations", "must be >= 1"));
        }
        let cfg = Self {
            name: e.get("name").unwrap_or("experiment").to_string(),
            problem: parse_problem(&e, seed, base)?,
            optimizers: parse_optimizers(&e)?,
            iterations,
            batch: match e.get("batch_size").unwrap_or("full") {
                "full" => BatchSpec::Full,
                v => BatchSpec::Size(v.parse().map_err(|_| config_error("batch_size", format!("cannot parse `{v}`")))?),
            },
            sampling: match e.get("sampling").unwrap_or("shuffled_epochs") {
                "shuffled_epochs" => SamplingMode::ShuffledEpochs,
                "with_replacement" => SamplingMode::WithReplacement,
                v => return Err(config_error("sampling", format!("unknown mode `{v}`"))),
            },
            eta: match e.get("eta").unwrap_or("one_over_L") {
                "one_over_L" => EtaMode::OneOverL,
                v => EtaMode::Explicit(positive("eta", v)?),
            },
            schedule: parse_schedule(&e, iterations)?,
            x0: match e.get("x0").unwrap_or("zeros") {
                "zeros" => InitSpec::Zeros,
                "gaussian" => InitSpec::Gaussian(e.num_or("x0.scale", 1.0)?),
                v => return Err(config_error("x0", format!("expected zeros or gaussian, got `{v}`"))),
            },
            seed,
            output_dir: {
                let configured = base.join(e.get("output_dir").unwrap_or("out"));
                overrides.output_dir.clone().unwrap_or(configured)
            },
        };
        if let BatchSpec::Size(0) = cfg.batch {
            return Err(config_error("batch_size", "must be >= 1"));
        }
        if let Some(key) = e.unused() {
            return Err(config_error(&key, "unknown key"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_with(&text, path.parent().unwrap_or(Path::new(".")), overrides)
    }

    /// Stable fingerprint of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn positive(field: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(config_error(field, format!("expected a positive number, got `{v}`"))),
    }
}

fn parse_schedule(e: &Entries, iterations: u64) -> Result<LrSchedule> {
    Ok(match e.get("lr_schedule").unwrap_or("constant") {
        "constant" => LrSchedule::Constant,
        "cosine" => {
            let t_max = e.num_or("lr_schedule.t_max", iterations)?;
            if t_max == 0 {
                return Err(config_error("lr_schedule.t_max", "must be >= 1"));
            }
            LrSchedule::Cosine { t_max }
        }
        "step" => LrSchedule::Step {
            milestones: e.list("lr_schedule.milestones")?.unwrap_or_default(),
            factor: e.num_or("lr_schedule.factor", 0.1)?,
        },
        v => return Err(config_error("lr_schedule", format!("unknown schedule `{v}`"))),
    })
}

fn parse_problem(e: &Entries, seed: u64, base: &Path) -> Result<ProblemSpec> {
    match e.require("problem.kind")? {
        "quadratic" => {
            if let Some(a) = e.list::<f64>("problem.diag")? {
                let b = e.list("problem.b")?.unwrap_or_else(|| vec![0.0; a.len()]);
                let convention = match e.get("problem.convention").unwrap_or("half") {
                    "half" => QuadConvention::Half,
                    "full" => QuadConvention::Full,
                    v => return Err(config_error("problem.convention", format!("expected half or full, got `{v}`"))),
                };
                Ok(ProblemSpec::DiagonalQuadratic { a, b, c: e.num_or("problem.c", 0.0)?, convention })
            } else {
                Ok(ProblemSpec::RandomQuadratic {
                    dim: e.num("problem.dim")?.ok_or_else(|| config_error("problem.dim", "missing"))?,
                    cond: e.num_or("problem.cond", 100.0)?,
                    seed: e.num_or("problem.seed", seed)?,
                })
            }
        }
        "logreg" => {
            let source = if let Some(path) = e.get("problem.path") {
                DataSource::Path(base.join(path))
            } else {
                let n = e.num("problem.synthetic.n")?.ok_or_else(|| config_error("problem.synthetic.n", "missing"))?;
                let dim =
                    e.num("problem.synthetic.dim")?.ok_or_else(|| config_error("problem.synthetic.dim", "missing"))?;
                let seed = e.num_or("problem.synthetic.seed", seed)?;
                match e.get("problem.synthetic.kind").unwrap_or("gaussian") {
                    "gaussian" => DataSource::Gaussian {
                        n,
                        dim,
                        separability: e.num_or("problem.synthetic.separability", 1.0)?,
                        seed,
                    },
                    "sparse_binary" => DataSource::SparseBinary {
                        n,
                        dim,
                        nnz: e.num_or("problem.synthetic.nnz", 10.0)?,
                        noise: e.num_or("problem.synthetic.noise", 0.3)?,
                        seed,
                    },
                    v => return Err(config_error("problem.synthetic.kind", format!("unknown generator `{v}`"))),
                }
            };
            let normalize = match e.get("problem.normalize").unwrap_or("none") {
                "none" => RowNorm::None,
                "unit_l2" => RowNorm::UnitL2,
                v => return Err(config_error("problem.normalize", format!("expected none or unit_l2, got `{v}`"))),
            };
            let target = match e.num::<f64>("problem.positive_class")? {
                Some(c) => LabelTarget::OneVsRest(c),
                None => LabelTarget::Binary,
            };
            Ok(ProblemSpec::LogReg { source, l2: e.num_or("problem.l2", 0.0)?, normalize, target, dim: e.num("problem.dim")? })
        }
        v => Err(config_error("problem.kind", format!("expected quadratic or logreg, got `{v}`"))),
    }
}

fn parse_optimizers(e: &Entries) -> Result<Vec<OptimizerSpec>> {
    let mut out = Vec::new();
    while let Some(kind) = e.get(&format!("optimizers.{}.kind", out.len())) {
        let i = out.len();
        let key = |k: &str| format!("optimizers.{i}.{k}");
        let kind = OptimizerKind::parse(kind).ok_or_else(|| config_error(&key("kind"), format!("unknown kind `{kind}`")))?;

        let lambda = e.num_or(&key("lambda"), 0.1)?;
        let mut hp = Hyperparams::new(1.0).with_lambda(lambda);
        hp.beta_max = e.num_or(&key("beta_max"), default_beta_max(lambda))?;
        hp.mu = e.num_or(&key("mu"), 0.0)?;
        hp.beta2 = e.num_or(&key("beta2"), hp.beta2)?;
        hp.epsilon = e.num_or(&key("epsilon"), hp.epsilon)?;
        if let Some(v) = e.get(&key("decay")) {
            hp.decay_mode = match v {
                "decoupled" => DecayMode::Decoupled,
                "proximal" => DecayMode::Proximal,
                _ => return Err(config_error(&key("decay"), format!("unknown decay `{v}`"))),
            };
        }
        if let Some(v) = e.get(&key("fhat")) {
            hp.fhat_policy = match v {
                "previous_loss" => FhatPolicy::PreviousLoss,
                "aggregation" => FhatPolicy::Aggregation,
                "first_order" => FhatPolicy::FirstOrder,
                _ => return Err(config_error(&key("fhat"), format!("unknown policy `{v}`"))),
            };
        } else if matches!(kind, OptimizerKind::AmAdamw | OptimizerKind::AmAdamwPerLayer) {
            hp.fhat_policy = FhatPolicy::FirstOrder;
        }
        if let Some(v) = e.get(&key("memory_init")) {
            hp.memory_init = match v {
                "gradient" => MemoryInit::Gradient,
                "zero" => MemoryInit::Zero,
                _ => return Err(config_error(&key("memory_init"), format!("unknown init `{v}`"))),
            };
        }
        if let Some(v) = e.get(&key("policy")) {
            hp.policy = parse_policy(v).ok_or_else(|| config_error(&key("policy"), format!("cannot parse `{v}`")))?;
        }
        hp.validate().map_err(|err| config_error(&format!("optimizers.{i}"), err.to_string()))?;

        let beta = e.num_or(&key("beta"), 0.9)?;
        if kind.is_fixed() && !(0.0..1.0).contains(&beta) {
            return Err(config_error(&key("beta"), "must lie in [0, 1)"));
        }
        let optimizer = Optimizer::fixed(kind, hp, beta);
        let eta = e.get(&key("eta")).map(|v| positive(&key("eta"), v)).transpose()?;
        let layers = e.list(&key("layers"))?;
        if kind == OptimizerKind::AmAdamwPerLayer && layers.is_none() {
            return Err(config_error(&key("layers"), "required for am_adamw_per_layer"));
        }
        let label = e.get(&key("label")).map(str::to_string).unwrap_or_else(|| optimizer.label());
        out.push(OptimizerSpec { optimizer, eta, layers, label });
    }
    if out.is_empty() {
        return Err(config_error("optimizers", "at least one optimizer is required"));
    }
    Ok(out)
}

/// `none`, `clip:<β_min>`, `restart:<θ>` or `fixed:<β>`.
pub fn parse_policy(s: &str) -> Option<Policy> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim().parse::<f64>().ok()?)),
        None => (s.trim(), None),
    };
    let policy = match (name, arg) {
        ("none", None) => Policy::None,
        ("clip", Some(b)) => Policy::Clip { beta_min: b },
        ("restart", Some(t)) => Policy::Restart { theta: t },
        ("fixed", Some(b)) => Policy::Fixed(b),
        _ => return None,
    };
    policy.validate().ok()?;
    Some(policy)
}
