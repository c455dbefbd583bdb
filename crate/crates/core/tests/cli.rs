use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn admem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_admem")).args(args).output().expect("spawn admem")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const QUAD: &str = "name = q\niterations = 50\nproblem.kind = quadratic\nproblem.dim = 5\noptimizers.0.kind = am_mgd\noptimizers.1.kind = mgd\n";

#[test]
fn run_writes_summary_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let out = admem(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.lines().all(|l| l.starts_with(r#"{"name":"q","optimizer":"#)));
    let summary = fs::read_to_string(dir.path().join("out/q_summary.jsonl")).unwrap();
    assert_eq!(summary, stdout);
    let trace = fs::read_to_string(dir.path().join("out/q_0_am_mgd.csv")).unwrap();
    assert!(trace.starts_with("t,loss,subopt,beta,grad_norm,step_norm,eta\n"));
    assert_eq!(trace.lines().count(), 51);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let out_dir = dir.path().join("elsewhere");
    let out = admem(&["run", &cfg, "--iterations", "7", "--seed", "3", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(r#""seed":3,"iterations":7"#));
    assert_eq!(fs::read_to_string(out_dir.join("q_1_mgd_0.9_.csv")).unwrap().lines().count(), 8);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = "name = s\niterations = 200\nbatch_size = 8\nseed = 11\nproblem.kind = logreg\n\
                problem.synthetic.kind = gaussian\nproblem.synthetic.n = 100\nproblem.synthetic.dim = 4\n\
                optimizers.0.kind = am_msgd\noptimizers.1.kind = am_adamw\noptimizers.1.eta = 0.01\n";
    let cfg = write_config(dir.path(), body);
    let read = |sub: &str| {
        let out_dir = dir.path().join(sub);
        assert!(admem(&["run", &cfg, "--out", out_dir.to_str().unwrap()]).status.success());
        ["s_0_am_msgd.csv", "s_1_am_adamw.csv"].map(|f| fs::read(out_dir.join(f)).unwrap())
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn grid_reports_best_beta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let out = admem(&["grid", &cfg, "--betas", "0,0.5,0.9"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines[0], "beta,final_loss");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("best,"));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{QUAD}optimizers.0.lambda = -1\n"));
    let out = admem(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("optimizers.0") && stderr.contains("lambda"), "{stderr}");

    let out = admem(&["grid", &write_config(dir.path(), QUAD), "--betas", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(admem(&["check", "nonsense"]).status.code(), Some(2));
}

#[test]
fn missing_files_exit_3() {
    assert_eq!(admem(&["run", "/nonexistent/exp.cfg"]).status.code(), Some(3));
    assert_eq!(admem(&["parse", "/nonexistent/data.libsvm"]).status.code(), Some(3));
}

#[test]
fn parse_reports_shape_and_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.libsvm");
    fs::write(&good, "1 1:0.5 3:2\n-1 2:1\n").unwrap();
    let out = admem(&["parse", good.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "rows=2 dim=3 nnz=3\n");

    let bad = dir.path().join("bad.libsvm");
    fs::write(&bad, "1 1:0.5\n1 3:x\n").unwrap();
    let out = admem(&["parse", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn synth_output_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = admem(&["synth", "--kind", "sparse-binary", "--n", "40", "--dim", "30", "--nnz", "5", "--zero-one"]);
    assert!(out.status.success());
    let path = dir.path().join("s.libsvm");
    fs::write(&path, &out.stdout).unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("0 ") || l.starts_with("1 ") || l == "0" || l == "1"));
    assert!(admem(&["parse", path.to_str().unwrap()]).status.success());
}

#[test]
fn check_suite_emits_json_lines() {
    let out = admem(&["check", "gradients"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["failures"], 0);
    }
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn fixtures_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let expected = [("a1a_like", 1605), ("w1a_like", 2477), ("mushrooms_like", 1000), ("gaussian", 500)];
    for (name, rows) in expected {
        let ds = admem::data::load_libsvm(&dir.join(format!("{name}.libsvm"))).unwrap();
        assert_eq!(ds.len(), rows, "{name}");
    }
}
