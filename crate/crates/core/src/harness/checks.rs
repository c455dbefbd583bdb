//! Seeded verification suites behind `admem check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::beta::{beta_deterministic, beta_preconditioned, qp_oracle, BetaBounds, BetaInputs, DEFAULT_GRID_POINTS};
use crate::data::synthesize_dataset;
use crate::error::Result;
use crate::math::{DenseVector, DiagPreconditioner};
use crate::optim::{
    adamw_step, am_adamw_step, am_mgd_step, mgd_step, Hyperparams, MemoryInit, OptimizerState, Policy,
};
use crate::problems::{
    estimate_smoothness, BatchSampler, LabelTarget, LogRegProblem, Objective, QuadraticProblem, SamplingMode,
};
use crate::verify::{
    check_no_overshoot, companion_eigenvalues, companion_matrix, gradient_rel_error, lemma1_per_step_check,
    random_overdamped_spec, sign_lemma_violation, simulate_hb_diag, spectral_radius, substitution_pair, theory_run,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    BetaOracle,
    Overdamped,
    Gradients,
    Lemma1,
    Reductions,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "beta_oracle" => Self::BetaOracle,
            "overdamped" => Self::Overdamped,
            "gradients" => Self::Gradients,
            "lemma1" => Self::Lemma1,
            "reductions" => Self::Reductions,
            "all" => Self::All,
            _ => return None,
        })
    }
}

/// The closed forms under test; replaceable so a deliberately broken
/// formula can be shown to fail the oracle suite.
#[derive(Debug, Clone, Copy)]
pub struct BetaFormulas {
    pub deterministic: fn(&BetaInputs<'_>) -> Result<f64>,
    pub preconditioned: fn(&BetaInputs<'_>, BetaBounds) -> Result<f64>,
}

impl Default for BetaFormulas {
    fn default() -> Self {
        Self { deterministic: beta_deterministic, preconditioned: beta_preconditioned }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    pub formulas: BetaFormulas,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seed: 20_240_601, formulas: BetaFormulas::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error or ratio, for context.
    pub worst: f64,
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub suites: Vec<SuiteReport>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.suites.iter().map(|s| serde_json::to_string(s).unwrap_or_default() + "\n").collect()
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    worst: f64,
    first: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, failures: 0, worst: 0.0, first: None }
    }

    fn record(&mut self, ok: bool, value: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
        if !ok {
            self.failures += 1;
            self.first.get_or_insert_with(describe);
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.name.to_string(),
            cases: self.cases,
            failures: self.failures,
            worst: self.worst,
            detail: self.first.map_or_else(|| "ok".to_string(), |f| format!("first failure: {f}")),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DenseVector {
    DenseVector::from_raw((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Closed-form coefficients against the brute-force dual maximiser on
/// `cases` random instances; `|Δβ| ≤ 1e-6`.
pub fn check_beta_oracle(opts: &CheckOptions, cases: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tally = Tally::new("beta_oracle");
    for case in 0..cases {
        let n = rng.random_range(1..=100);
        let lambda = [0.0, 0.1, 1.0][case % 3];
        let mu = [0.0, 1e-4][(case / 3) % 2];
        let eta = 10f64.powf(rng.random_range(-3.0..0.0));
        let (g, d, x) = (gaussian(&mut rng, n), gaussian(&mut rng, n), gaussian(&mut rng, n));
        let p = DiagPreconditioner::from_raw((0..n).map(|_| rng.random_range(0.1..10.0)).collect());
        let gap = eta * d.sub(&g).map(|v| v.norm_sq()).unwrap_or(0.0) * rng.random_range(-0.5..1.5);
        let plain = BetaInputs::plain(&g, &d, eta, lambda, gap, 0.0);

        if mu == 0.0 {
            let compare = (opts.formulas.deterministic)(&plain).and_then(|c| Ok((c, qp_oracle(&plain, DEFAULT_GRID_POINTS)?)));
            let (ok, err) = match compare {
                Ok((c, o)) => ((c - o).abs() <= 1e-6, (c - o).abs()),
                Err(_) => (false, f64::NAN),
            };
            tally.record(ok, err, || format!("case {case} (deterministic, n={n}, lambda={lambda}): |dbeta| = {err:e}"));
        }
        let pre = BetaInputs { mu, x: Some(&x), precond: Some(&p), ..plain };
        let compare = (opts.formulas.preconditioned)(&pre, BetaBounds::unit())
            .and_then(|c| Ok((c, qp_oracle(&pre, DEFAULT_GRID_POINTS)?)));
        let (ok, err) = match compare {
            Ok((c, o)) => ((c - o).abs() <= 1e-6, (c - o).abs()),
            Err(_) => (false, f64::NAN),
        };
        tally.record(ok, err, || format!("case {case} (preconditioned, n={n}, lambda={lambda}, mu={mu}): |dbeta| = {err:e}"));
    }
    tally.finish()
}

/// The deterministic coefficient with `f̂ − f := (d − g)ᵀ(x − x*)` against
/// the one-step optimum; relative difference `≤ 1e-12`.
pub fn check_substitution(opts: &CheckOptions, cases: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5u64);
    let mut tally = Tally::new("substitution");
    for case in 0..cases {
        let n = rng.random_range(1..=50);
        let eta = 10f64.powf(rng.random_range(-3.0..0.0));
        let (x, xs, d, g) = (gaussian(&mut rng, n), gaussian(&mut rng, n), gaussian(&mut rng, n), gaussian(&mut rng, n));
        let (ok, err) = match substitution_pair(&x, &xs, &d, &g, eta) {
            Ok((a, b)) => {
                let scale = a.abs().max(b.abs());
                let rel = if scale == 0.0 { 0.0 } else { (a - b).abs() / scale };
                (rel <= 1e-12, rel)
            }
            Err(_) => (false, f64::NAN),
        };
        tally.record(ok, err, || format!("case {case} (n={n}): relative difference {err:e}"));
    }
    tally.finish()
}

/// Heavy ball inside the overdamped region: no overshoot, no sign flips,
/// and `(d − g)x ≥ −1e-12`.
pub fn check_overdamped(opts: &CheckOptions, specs: usize, steps: usize) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xB);
    let mut overshoot = Tally::new("overdamped");
    let mut sign = Tally::new("sign_lemma");
    let mut companion = Tally::new("companion_eigenvalues");
    for case in 0..specs {
        let spec = random_overdamped_spec(&mut rng, 10, steps);
        let traj = simulate_hb_diag(&spec);
        let check = check_no_overshoot(&traj);
        overshoot.record(check.ok, 0.0, || format!("spec {case}: violation at {:?}", check.first_violation));
        let violation = sign_lemma_violation(&traj);
        sign.record(violation.is_none(), 0.0, || format!("spec {case}: violation at {violation:?}"));
        for &a in &spec.a {
            let closed = spectral_radius(&companion_eigenvalues(a, spec.eta, spec.beta));
            let dense = spectral_radius(companion_matrix(a, spec.eta, spec.beta).complex_eigenvalues().as_slice());
            let rel = (closed - dense).abs() / dense.max(f64::MIN_POSITIVE);
            companion.record(rel <= 1e-12, rel, || format!("spec {case}, a = {a}: relative difference {rel:e}"));
        }
    }
    vec![overshoot.finish(), sign.finish(), companion.finish()]
}

/// Analytic gradients of both problem families against central differences.
pub fn check_gradients(opts: &CheckOptions, probes: usize) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6);
    let mut reports = Vec::new();

    let mut tally = Tally::new("gradients.quadratic");
    match QuadraticProblem::random_spd(20, 100.0, opts.seed) {
        Ok(quad) => {
            for case in 0..probes {
                let x = gaussian(&mut rng, 20);
                let rel = gradient_rel_error(&quad, &x, &[0]).unwrap_or(f64::NAN);
                tally.record(rel <= 1e-5, rel, || format!("probe {case}: relative error {rel:e}"));
            }
        }
        Err(e) => tally.record(false, f64::NAN, || e.to_string()),
    }
    reports.push(tally.finish());

    let mut tally = Tally::new("gradients.logistic");
    let problem = synthesize_dataset(200, 20, 1.0, opts.seed)
        .and_then(|ds| LogRegProblem::from_dataset(&ds, LabelTarget::Binary, 1e-3));
    match problem {
        Ok(logreg) => {
            for case in 0..probes {
                let x = gaussian(&mut rng, 20);
                let size = rng.random_range(1..=200);
                let batch: Vec<usize> = (0..size).map(|_| rng.random_range(0..200)).collect();
                let rel = gradient_rel_error(&logreg, &x, &batch).unwrap_or(f64::NAN);
                tally.record(rel <= 1e-5, rel, || format!("probe {case}: relative error {rel:e}"));
            }
        }
        Err(e) => tally.record(false, f64::NAN, || e.to_string()),
    }
    reports.push(tally.finish());
    reports
}

/// `‖d_{t+1}‖² ≤ 2‖g_t‖² + 1e-12` along theory-variant runs on random
/// minibatch logistic problems (`λ = 0`, `d₀ = 0`, `η = 1/L`, batch 32).
pub fn check_lemma1(opts: &CheckOptions, runs: usize, steps: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x11);
    let mut tally = Tally::new("lemma1");
    for run in 0..runs {
        let (n, dim) = (rng.random_range(200..=1000), rng.random_range(5..=50));
        let separability = rng.random_range(0.5..2.0);
        let seed = rng.random::<u64>();
        let outcome = (|| -> Result<_> {
            let ds = synthesize_dataset(n, dim, separability, seed)?;
            let p = LogRegProblem::from_dataset(&ds, LabelTarget::Binary, 0.0)?;
            let eta = 1.0 / estimate_smoothness(&p, seed)?;
            let sampler = BatchSampler::new(n, 32, seed, SamplingMode::ShuffledEpochs)?;
            let hp = Hyperparams { lambda: 0.0, beta_max: 0.9, memory_init: MemoryInit::Zero, ..Hyperparams::new(eta) };
            Ok(lemma1_per_step_check(&theory_run(&p, &sampler, DenseVector::zeros(dim), &hp, steps)?))
        })();
        match outcome {
            Ok(check) => tally.record(check.ok, check.worst_ratio, || {
                format!(
                    "run {run} (n={n}, dim={dim}): {} violating steps, first at t={:?}, worst |d|^2/|g|^2 = {:.4}",
                    check.violations, check.first_violation, check.worst_ratio
                )
            }),
            Err(e) => tally.record(false, f64::NAN, || format!("run {run}: {e}")),
        }
    }
    tally.finish()
}

/// Forced-coefficient AM-AdamW against AdamW and AM-MGD against MGD on a
/// 50-dimensional logistic problem; per-step relative gap `≤ 1e-10`.
pub fn check_reductions(opts: &CheckOptions, steps: usize) -> Vec<SuiteReport> {
    let problem = synthesize_dataset(200, 50, 1.0, opts.seed)
        .and_then(|ds| LogRegProblem::from_dataset(&ds, LabelTarget::Binary, 0.0));
    let mut adam = Tally::new("reductions.am_adamw");
    let mut mgd = Tally::new("reductions.am_mgd");
    let p = match problem {
        Ok(p) => p,
        Err(e) => {
            adam.record(false, f64::NAN, || e.to_string());
            return vec![adam.finish(), mgd.finish()];
        }
    };
    let eta = estimate_smoothness(&p, opts.seed).map_or(0.1, |l| 1.0 / l);

    let hp = Hyperparams {
        lambda: 0.0,
        beta_max: 0.9,
        mu: 1e-2,
        policy: Policy::Fixed(0.9),
        memory_init: MemoryInit::Zero,
        ..Hyperparams::new(1e-2)
    };
    compare_runs(&p, &mut adam, steps, |a, b, fa, ga, fb, gb| {
        am_adamw_step(a, fa, ga, &hp)?;
        adamw_step(b, fb, gb, &hp, 0.9)?;
        Ok(())
    });

    let hp = Hyperparams { lambda: 0.0, policy: Policy::Fixed(0.9), ..Hyperparams::new(eta) };
    compare_runs(&p, &mut mgd, steps, |a, b, fa, ga, fb, gb| {
        am_mgd_step(a, fa, ga, &hp)?;
        mgd_step(b, fb, gb, &hp, 0.9)?;
        Ok(())
    });
    vec![adam.finish(), mgd.finish()]
}

fn compare_runs(
    p: &LogRegProblem,
    tally: &mut Tally,
    steps: usize,
    mut step: impl FnMut(&mut OptimizerState, &mut OptimizerState, f64, &DenseVector, f64, &DenseVector) -> Result<()>,
) {
    let mut a = OptimizerState::new(DenseVector::zeros(p.dim()));
    let mut b = a.clone();
    for t in 0..steps {
        let outcome = p.full_value_grad(&a.x).and_then(|(fa, ga)| {
            let (fb, gb) = p.full_value_grad(&b.x)?;
            step(&mut a, &mut b, fa, &ga, fb, &gb)
        });
        let rel = match outcome {
            Ok(()) => {
                let gap = a.x.iter().zip(b.x.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                gap / b.x.norm_inf().max(f64::MIN_POSITIVE)
            }
            Err(_) => f64::NAN,
        };
        tally.record(rel <= 1e-10, rel, || format!("step {t}: relative gap {rel:e}"));
    }
}

/// Run `suite` with its standard sizes. Reports are sorted by suite name.
pub fn run_checks(suite: Suite, opts: &CheckOptions) -> CheckReport {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let mut suites = Vec::new();
    if want(Suite::BetaOracle) {
        suites.push(check_beta_oracle(opts, 1000));
        suites.push(check_substitution(opts, 500));
    }
    if want(Suite::Overdamped) {
        suites.extend(check_overdamped(opts, 200, 500));
    }
    if want(Suite::Gradients) {
        suites.extend(check_gradients(opts, 100));
    }
    if want(Suite::Lemma1) {
        suites.push(check_lemma1(opts, 50, 500));
    }
    if want(Suite::Reductions) {
        suites.extend(check_reductions(opts, 100));
    }
    suites.sort_by(|a, b| a.suite.cmp(&b.suite));
    CheckReport { suites }
}
