//! Independent oracles: heavy-ball simulation on diagonal quadratics,
//! finite-difference gradients, and per-step checks on the theory variant.

use nalgebra::{Complex, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::beta::{beta_deterministic, one_step_optimal_beta, BetaInputs};
use crate::error::{check_dims, invalid, Error, Result};
use crate::math::{dot, DenseVector};
use crate::optim::{theory_step, Hyperparams, OptimizerState};
use crate::problems::{BatchSampler, Objective};

/// Largest `ηL` for which heavy ball with momentum `β` stays overdamped.
pub fn overdamped_eta_bound(beta: f64) -> f64 {
    let s = beta.sqrt();
    (1.0 - s) / (1.0 + s)
}

/// Heavy ball on `½ Σ aᵢ xᵢ²` from `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverdampedSpec {
    pub a: Vec<f64>,
    pub eta: f64,
    pub beta: f64,
    pub x0: Vec<f64>,
    pub steps: usize,
    condition: bool,
}

impl OverdampedSpec {
    pub fn new(a: Vec<f64>, eta: f64, beta: f64, x0: Vec<f64>, steps: usize) -> Result<Self> {
        check_dims(a.len(), x0.len())?;
        if a.is_empty() {
            return Err(invalid("spec needs at least one coordinate"));
        }
        if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositive { index, value });
        }
        if !(eta > 0.0) || !(0.0..1.0).contains(&beta) || x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("spec needs eta > 0, beta in [0, 1) and finite x0"));
        }
        let condition = eta * max_curvature(&a) <= overdamped_eta_bound(beta);
        Ok(Self { a, eta, beta, x0, steps, condition })
    }

    /// Whether `ηL ≤ (1 − √β)/(1 + √β)` with `L = max aᵢ`.
    pub fn condition_holds(&self) -> bool {
        self.condition
    }

    /// Signed distance `(1 − √β)/(1 + √β) − ηL` to the boundary.
    pub fn margin(&self) -> f64 {
        overdamped_eta_bound(self.beta) - self.eta * max_curvature(&self.a)
    }
}

fn max_curvature(a: &[f64]) -> f64 {
    a.iter().copied().fold(0.0, f64::max)
}

/// Random compliant spec: up to `max_dim` curvatures in `[10⁻², 1]·L`,
/// `β ∈ [0, 0.99)`, and `η` strictly inside the overdamped region (at least
/// 1e-9 away from its boundary).
pub fn random_overdamped_spec<R: Rng>(rng: &mut R, max_dim: usize, steps: usize) -> OverdampedSpec {
    loop {
        let dim = rng.random_range(1..=max_dim.max(1));
        let l = 10f64.powf(rng.random_range(-1.0..2.0));
        let mut a: Vec<f64> = (0..dim).map(|_| l * 10f64.powf(rng.random_range(-2.0..0.0))).collect();
        a[0] = l;
        let beta = rng.random_range(0.0..0.99);
        let eta = rng.random_range(0.01..1.0) * overdamped_eta_bound(beta) / l;
        let x0: Vec<f64> = (0..dim).map(|_| 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        if let Ok(spec) = OverdampedSpec::new(a, eta, beta, x0, steps) {
            if spec.condition_holds() && spec.margin() > 1e-9 {
                return spec;
            }
        }
    }
}

/// Per-step values `[t][i]` for `t = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct HbTrajectory {
    pub x: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

/// `d_{t+1} = β d_t + (1 − β) a x_t`, `x_{t+1} = x_t − η d_{t+1}`, with
/// `d₀ = g₀`.
pub fn simulate_hb_diag(spec: &OverdampedSpec) -> HbTrajectory {
    let grad = |x: &[f64]| -> Vec<f64> { spec.a.iter().zip(x).map(|(a, x)| a * x).collect() };
    let mut x = spec.x0.clone();
    let mut d = grad(&x);
    let mut traj = HbTrajectory { x: Vec::new(), d: Vec::new(), g: Vec::new() };
    for _ in 0..spec.steps {
        let g = grad(&x);
        traj.x.push(x.clone());
        traj.d.push(d.clone());
        for i in 0..x.len() {
            d[i] = spec.beta * d[i] + (1.0 - spec.beta) * g[i];
            x[i] -= spec.eta * d[i];
        }
        traj.g.push(g);
    }
    traj.g.push(grad(&x));
    traj.x.push(x);
    traj.d.push(d);
    traj
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OvershootCheck {
    pub ok: bool,
    /// `(t, i)` such that step `t → t+1` of coordinate `i` failed.
    pub first_violation: Option<(usize, usize)>,
}

/// Every coordinate must satisfy `|x_{t+1}| ≤ |x_t|` and never change sign
/// strictly (landing exactly on zero is allowed).
pub fn check_no_overshoot(traj: &HbTrajectory) -> OvershootCheck {
    for (t, pair) in traj.x.windows(2).enumerate() {
        for (i, (&now, &next)) in pair[0].iter().zip(&pair[1]).enumerate() {
            if next.abs() > now.abs() || now * next < 0.0 {
                return OvershootCheck { ok: false, first_violation: Some((t, i)) };
            }
        }
    }
    OvershootCheck { ok: true, first_violation: None }
}

/// First `(t, i)` with `(d_t − g_t) x_t < −1e-12`.
pub fn sign_lemma_violation(traj: &HbTrajectory) -> Option<(usize, usize)> {
    for (t, ((x, d), g)) in traj.x.iter().zip(&traj.d).zip(&traj.g).enumerate() {
        for i in 0..x.len() {
            if (d[i] - g[i]) * x[i] < -1e-12 {
                return Some((t, i));
            }
        }
    }
    None
}

pub fn check_sign_lemma(traj: &HbTrajectory) -> bool {
    sign_lemma_violation(traj).is_none()
}

/// Transition matrix of the state `(d_t, x_t)` for curvature `a`.
pub fn companion_matrix(a: f64, eta: f64, beta: f64) -> Matrix2<f64> {
    Matrix2::new(beta, (1.0 - beta) * a, -eta * beta, 1.0 - eta * (1.0 - beta) * a)
}

/// `(τ ± √(τ² − 4β))/2` with `τ = β + 1 − η(1 − β)a`.
pub fn companion_eigenvalues(a: f64, eta: f64, beta: f64) -> [Complex<f64>; 2] {
    let tau = beta + 1.0 - eta * (1.0 - beta) * a;
    let root = Complex::new(tau * tau - 4.0 * beta, 0.0).sqrt();
    let half = Complex::new(0.5, 0.0);
    [(Complex::new(tau, 0.0) + root) * half, (Complex::new(tau, 0.0) - root) * half]
}

pub fn spectral_radius(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Central differences `(f(x + heᵢ) − f(x − heᵢ)) / 2h`.
pub fn finite_diff_gradient<F: Fn(&DenseVector) -> Result<f64>>(f: F, x: &DenseVector, h: f64) -> Result<DenseVector> {
    if !(h > 0.0) {
        return Err(invalid(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone().into_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&DenseVector::from_raw(probe.clone()))?;
        probe[i] = orig - h;
        let minus = f(&DenseVector::from_raw(probe.clone()))?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(DenseVector::from_raw(out))
}

/// `‖∇_fd − ∇‖ / ‖∇‖` with `h = 1e-6 (1 + ‖x‖∞)`.
pub fn gradient_rel_error(obj: &dyn Objective, x: &DenseVector, batch: &[usize]) -> Result<f64> {
    let (_, g) = obj.value_grad(x, batch)?;
    let h = 1e-6 * (1.0 + x.norm_inf());
    let fd = finite_diff_gradient(|y| obj.value(y, batch), x, h)?;
    Ok(fd.sub(&g)?.norm() / g.norm().max(f64::MIN_POSITIVE))
}

/// Squared norms around one theory-variant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryStep {
    pub g_norm_sq: f64,
    pub d_next_norm_sq: f64,
    pub beta: f64,
}

/// Run the theory variant (zero initial memory) on minibatches from
/// `sampler` and record `‖g_t‖²`, `‖d_{t+1}‖²`.
pub fn theory_run(
    obj: &dyn Objective,
    sampler: &BatchSampler,
    x0: DenseVector,
    hp: &Hyperparams,
    steps: u64,
) -> Result<Vec<TheoryStep>> {
    let mut state = OptimizerState::new(x0);
    let mut out = Vec::with_capacity(steps as usize);
    for t in 0..steps {
        let (loss, g) = obj.value_grad(&state.x, &sampler.sample(t))?;
        let report = theory_step(&mut state, loss, &g, hp)?;
        out.push(TheoryStep { g_norm_sq: g.norm_sq(), d_next_norm_sq: state.d.norm_sq(), beta: report.beta.values()[0] });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Check {
    pub ok: bool,
    pub violations: usize,
    pub first_violation: Option<usize>,
    /// Largest `‖d_{t+1}‖² / ‖g_t‖²` seen.
    pub worst_ratio: f64,
}

/// `‖d_{t+1}‖² ≤ 2‖g_t‖² + 1e-12` at every step.
pub fn lemma1_per_step_check(steps: &[TheoryStep]) -> Lemma1Check {
    let mut check = Lemma1Check { ok: true, violations: 0, first_violation: None, worst_ratio: 0.0 };
    for (t, s) in steps.iter().enumerate() {
        if s.g_norm_sq > 0.0 {
            check.worst_ratio = check.worst_ratio.max(s.d_next_norm_sq / s.g_norm_sq);
        }
        if s.d_next_norm_sq > 2.0 * s.g_norm_sq + 1e-12 {
            check.ok = false;
            check.violations += 1;
            check.first_violation.get_or_insert(t);
        }
    }
    check
}

/// The deterministic closed form with its loss gap replaced by
/// `(d − g)ᵀ(x − x*)` at `λ = 0`, next to the one-step optimum.
pub fn substitution_pair(
    x: &DenseVector,
    x_star: &DenseVector,
    d: &DenseVector,
    g: &DenseVector,
    eta: f64,
) -> Result<(f64, f64)> {
    let gap = dot(&d.sub(g)?, &x.sub(x_star)?)?;
    let substituted = beta_deterministic(&BetaInputs::plain(g, d, eta, 0.0, gap, 0.0))?;
    Ok((substituted, one_step_optimal_beta(x, x_star, d, g, eta)?))
}
