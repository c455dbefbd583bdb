//! The ten acceptance criteria, one PASS/FAIL line each. Exits non-zero
//! when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use admem::harness::checks::{
    check_beta_oracle, check_gradients, check_lemma1, check_overdamped, check_reductions, check_substitution,
    CheckOptions, SuiteReport,
};
use admem::harness::config::ExperimentConfig;
use admem::harness::{build_instance, grid_search_fixed_beta, run_experiment, simulate_run};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text, &fixtures()).expect("acceptance config")
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_suites(reports: &[SuiteReport]) -> Outcome {
    Outcome {
        passed: reports.iter().all(SuiteReport::passed),
        detail: reports
            .iter()
            .map(|r| format!("{}: {}/{} failed, worst {:.3e} ({})", r.suite, r.failures, r.cases, r.worst, r.detail))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn criterion_3() -> Outcome {
    let mut text = String::from(
        "name = c3\niterations = 500\neta = one_over_L\nproblem.kind = quadratic\nproblem.dim = 50\nproblem.cond = 100\nproblem.seed = 0\noptimizers.0.kind = am_mgd\n",
    );
    let fixed = [0.0, 0.3, 0.6, 0.9, 0.99];
    for (i, b) in fixed.iter().enumerate() {
        text += &format!("optimizers.{}.kind = mgd\noptimizers.{}.beta = {b}\n", i + 1, i + 1);
    }
    let cfg = config(&text);
    let inst = build_instance(&cfg).unwrap();
    let f_star = inst.f_star.unwrap();
    let subopts: Vec<f64> = cfg
        .optimizers
        .iter()
        .enumerate()
        .map(|(i, s)| simulate_run(&cfg, &inst, s, i).unwrap().summary.final_subopt.unwrap_or(f64::INFINITY))
        .collect();
    let am = subopts[0];
    let beats_fixed = subopts[1..].iter().all(|&s| am <= s);

    let grid: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
    let result = grid_search_fixed_beta(&cfg, &grid).unwrap();
    let best = result.losses.iter().find(|(b, _)| *b == result.best_beta).and_then(|(_, l)| *l).unwrap() - f_star;
    let within = am <= 2.0 * best;
    Outcome {
        passed: beats_fixed && within,
        detail: format!(
            "AM-MGD subopt {am:.3e}; fixed {}; grid beta* = {} subopt {best:.3e} (ratio {:.1})",
            fixed.iter().zip(&subopts[1..]).map(|(b, s)| format!("{b}:{s:.3e}")).collect::<Vec<_>>().join(" "),
            result.best_beta,
            am / best
        ),
    }
}

fn criterion_4() -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for name in ["a1a_like", "w1a_like", "mushrooms_like", "gaussian"] {
        let cfg = config(&format!(
            "name = {name}\niterations = 10000\neta = one_over_L\nproblem.kind = logreg\nproblem.path = {name}.libsvm\nproblem.l2 = 0\n\
             optimizers.0.kind = am_mgd\noptimizers.0.lambda = 0\noptimizers.1.kind = mgd\noptimizers.1.beta = 0.9\n"
        ));
        let inst = build_instance(&cfg).unwrap();
        let loss = |i: usize| simulate_run(&cfg, &inst, &cfg.optimizers[i], i).unwrap().summary.final_loss.unwrap_or(f64::INFINITY);
        let (am, mgd) = (loss(0), loss(1));
        if am <= mgd {
            wins += 1;
        }
        detail.push(format!("{name} {am:.6e} vs {mgd:.6e}"));
    }
    Outcome { passed: wins >= 3, detail: format!("{wins}/4 datasets: {}", detail.join(", ")) }
}

fn criterion_5() -> Outcome {
    let cfg = config(
        "name = c5\niterations = 5000\nbatch_size = 32\nsampling = shuffled_epochs\neta = one_over_L\nproblem.kind = logreg\n\
         problem.synthetic.kind = gaussian\nproblem.synthetic.n = 1000\nproblem.synthetic.dim = 20\nproblem.synthetic.separability = 2.0\n\
         optimizers.0.kind = am_msgd\n",
    );
    let inst = build_instance(&cfg).unwrap();
    let spec = &cfg.optimizers[0];
    let beta_max = spec.optimizer.hp.beta_max;
    let run = simulate_run(&cfg, &inst, spec, 0).unwrap();
    let start = run.records[0].loss;
    let end = run.summary.final_loss.unwrap_or(f64::INFINITY);
    let in_range = run.records.iter().flat_map(|r| r.beta.values().to_vec()).all(|b| (0.0..=beta_max).contains(&b));
    Outcome {
        passed: end <= 0.5 * start && in_range,
        detail: format!("loss {start:.4} -> {end:.4} ({:.1}% decrease); beta within [0, {beta_max}]: {in_range}", 100.0 * (1.0 - end / start)),
    }
}

fn criterion_10() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let text = "name = c10\niterations = 300\nbatch_size = 16\nseed = 5\nproblem.kind = logreg\nproblem.path = a1a_like.libsvm\n\
                optimizers.0.kind = am_msgd\noptimizers.1.kind = am_adamw\noptimizers.1.eta = 0.01\noptimizers.2.kind = mgd\n";
    let traces: Vec<Vec<Vec<u8>>> = dirs
        .iter()
        .map(|d| {
            let mut cfg = config(text);
            cfg.output_dir = d.path().to_path_buf();
            run_experiment(&cfg).unwrap().iter().map(|(_, p)| std::fs::read(p).unwrap()).collect()
        })
        .collect();
    let same = traces[0] == traces[1];
    Outcome { passed: same, detail: format!("{} trace files byte-identical: {same}", traces[0].len()) }
}

type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn main() -> ExitCode {
    let opts = CheckOptions::default();
    let criteria: Vec<Criterion> = vec![
        ("1 beta closed forms vs oracle", Box::new(move || from_suites(&[check_beta_oracle(&opts, 1000)]))),
        ("2 reductions to AdamW and MGD", Box::new(move || from_suites(&check_reductions(&opts, 100)))),
        ("3 quadratic: AM-MGD vs fixed momentum", Box::new(criterion_3)),
        ("4 logistic fixtures: AM-MGD vs MGD(0.9)", Box::new(criterion_4)),
        ("5 AM-MSGD minibatch sanity", Box::new(criterion_5)),
        ("6 overdamped no-overshoot sweep", Box::new(move || from_suites(&check_overdamped(&opts, 200, 500)))),
        ("7 theory-variant per-step bound", Box::new(move || from_suites(&[check_lemma1(&opts, 50, 500)]))),
        ("8 gradient fidelity", Box::new(move || from_suites(&check_gradients(&opts, 100)))),
        ("9 substitution identity", Box::new(move || from_suites(&[check_substitution(&opts, 500)]))),
        ("10 determinism of run traces", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        if !outcome.passed {
            failed += 1;
        }
        println!("{tag} criterion {name} [{:.2}s]: {}", start.elapsed().as_secs_f64(), outcome.detail);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
