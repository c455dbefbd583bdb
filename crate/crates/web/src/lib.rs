//! Browser demo: three small operations over the `admem` library, each
//! returning JSON for the static page in `www/`.

use std::path::Path;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use admem::beta::{beta_deterministic, dual_objective, BetaInputs};
use admem::harness::config::ExperimentConfig;
use admem::harness::{build_instance, simulate_run};
use admem::math::DenseVector;
use admem::verify::{check_no_overshoot, overdamped_eta_bound, simulate_hb_diag, OverdampedSpec};

#[derive(Serialize)]
struct Curve {
    label: String,
    subopt: Vec<f64>,
    diverged: bool,
}

/// Suboptimality curves of AM-MGD and fixed-momentum MGD on a random SPD
/// quadratic with step `1/L`. `betas` is a comma-separated list.
pub fn quadratic_curves(dim: usize, cond: f64, seed: u64, iterations: u64, betas: &str) -> Result<String, String> {
    let mut text = format!(
        "name = demo\niterations = {iterations}\nseed = {seed}\nproblem.kind = quadratic\nproblem.dim = {dim}\nproblem.cond = {cond}\noptimizers.0.kind = am_mgd\n"
    );
    for (i, b) in betas.split(',').map(str::trim).filter(|b| !b.is_empty()).enumerate() {
        text += &format!("optimizers.{}.kind = mgd\noptimizers.{}.beta = {b}\n", i + 1, i + 1);
    }
    let cfg = ExperimentConfig::parse(&text, Path::new(".")).map_err(|e| e.to_string())?;
    let inst = build_instance(&cfg).map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    for (i, spec) in cfg.optimizers.iter().enumerate() {
        let run = simulate_run(&cfg, &inst, spec, i).map_err(|e| e.to_string())?;
        curves.push(Curve {
            label: spec.label.clone(),
            subopt: run.records.iter().map(|r| r.subopt.unwrap_or(f64::NAN)).collect(),
            diverged: run.summary.diverged,
        });
    }
    serde_json::to_string(&curves).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct DualCurve {
    beta: Vec<f64>,
    value: Vec<f64>,
    closed_form: f64,
}

/// The dual objective over `β ∈ [0, 1]` for a two-dimensional instance,
/// together with the closed-form maximiser.
#[allow(clippy::too_many_arguments)]
pub fn dual_curve(g0: f64, g1: f64, d0: f64, d1: f64, eta: f64, lambda: f64, gap: f64, points: usize) -> Result<String, String> {
    let g = DenseVector::new(vec![g0, g1]).map_err(|e| e.to_string())?;
    let d = DenseVector::new(vec![d0, d1]).map_err(|e| e.to_string())?;
    let inputs = BetaInputs::plain(&g, &d, eta, lambda, gap, 0.0);
    let closed_form = beta_deterministic(&inputs).map_err(|e| e.to_string())?;
    let points = points.max(2);
    let beta: Vec<f64> = (0..points).map(|k| k as f64 / (points - 1) as f64).collect();
    let value = beta.iter().map(|&b| dual_objective(&inputs, b)).collect();
    serde_json::to_string(&DualCurve { beta, value, closed_form }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OverdampedReport {
    eta_bound: f64,
    inside_region: bool,
    no_overshoot: bool,
    first_violation: Option<(usize, usize)>,
    x: Vec<f64>,
}

/// Heavy ball on the scalar quadratic `a x²/2`: the region bound for `β`,
/// whether `(η, β)` lies inside it, and the simulated trajectory.
pub fn overdamped(a: f64, eta: f64, beta: f64, x0: f64, steps: usize) -> Result<String, String> {
    let spec = OverdampedSpec::new(vec![a], eta, beta, vec![x0], steps).map_err(|e| e.to_string())?;
    let traj = simulate_hb_diag(&spec);
    let check = check_no_overshoot(&traj);
    let report = OverdampedReport {
        eta_bound: overdamped_eta_bound(beta) / a,
        inside_region: spec.condition_holds(),
        no_overshoot: check.ok,
        first_violation: check.first_violation,
        x: traj.x.iter().map(|x| x[0]).collect(),
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = quadraticCurves)]
pub fn quadratic_curves_js(dim: usize, cond: f64, seed: u64, iterations: u64, betas: &str) -> Result<String, JsValue> {
    quadratic_curves(dim, cond, seed, iterations, betas).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = dualCurve)]
#[allow(clippy::too_many_arguments)]
pub fn dual_curve_js(g0: f64, g1: f64, d0: f64, d1: f64, eta: f64, lambda: f64, gap: f64, points: usize) -> Result<String, JsValue> {
    dual_curve(g0, g1, d0, d1, eta, lambda, gap, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = overdamped)]
pub fn overdamped_js(a: f64, eta: f64, beta: f64, x0: f64, steps: usize) -> Result<String, JsValue> {
    overdamped(a, eta, beta, x0, steps).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use admem::beta::qp_oracle;

    fn json(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn quadratic_curves_have_one_point_per_iterate() {
        let v = json(&quadratic_curves(10, 50.0, 1, 40, "0.5, 0.9").unwrap());
        let curves = v.as_array().unwrap();
        assert_eq!(curves.len(), 3);
        assert_eq!(curves[0]["label"], "am_mgd");
        assert_eq!(curves[2]["label"], "mgd(0.9)");
        assert!(curves.iter().all(|c| c["subopt"].as_array().unwrap().len() == 40));
    }

    #[test]
    fn quadratic_curves_reject_bad_beta() {
        assert!(quadratic_curves(5, 10.0, 0, 10, "1.5").is_err());
    }

    #[test]
    fn dual_curve_peak_agrees_with_oracle() {
        let (g0, g1, d0, d1, eta, lambda, gap) = (1.0, -0.5, 0.3, 0.8, 0.2, 0.1, 0.05);
        let v = json(&dual_curve(g0, g1, d0, d1, eta, lambda, gap, 101).unwrap());
        let g = DenseVector::new(vec![g0, g1]).unwrap();
        let d = DenseVector::new(vec![d0, d1]).unwrap();
        let oracle = qp_oracle(&BetaInputs::plain(&g, &d, eta, lambda, gap, 0.0), 10_001).unwrap();
        assert!((v["closed_form"].as_f64().unwrap() - oracle).abs() < 1e-6);
        assert_eq!(v["beta"].as_array().unwrap().len(), 101);
    }

    #[test]
    fn overdamped_inside_region_does_not_overshoot() {
        let beta: f64 = 0.25;
        let bound = (1.0 - beta.sqrt()) / (1.0 + beta.sqrt());
        let v = json(&overdamped(2.0, 0.9 * bound / 2.0, beta, 3.0, 100).unwrap());
        assert_eq!(v["inside_region"], true);
        assert_eq!(v["no_overshoot"], true);
        assert_eq!(v["x"].as_array().unwrap().len(), 101);
    }

    #[test]
    fn overdamped_far_outside_region_oscillates() {
        let v = json(&overdamped(1.0, 1.5, 0.9, 1.0, 50).unwrap());
        assert_eq!(v["inside_region"], false);
        assert_eq!(v["no_overshoot"], false);
        assert!(overdamped(-1.0, 0.1, 0.5, 1.0, 10).is_err());
    }
}
