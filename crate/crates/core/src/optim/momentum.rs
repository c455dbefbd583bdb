use crate::beta::{beta_deterministic, beta_stochastic, beta_theory_variant, BetaBounds, BetaInputs};
use crate::error::{check_dims, invalid, Result};
use crate::math::{dot_slices, DenseVector};

use super::{
    check_loss, distance, ensure_finite, next_intercept, policy_wrap, BetaUsed, FhatPolicy, Hyperparams,
    MemoryInit, OptimizerState, StepReport,
};

/// Weights `((β + λ)/(1 + λ), (1 − β)/(1 + λ))` on `(d_t, g_t)`.
///
/// The gradient weight is computed directly and the memory weight is its
/// complement, so the pair sums to one.
pub fn combination_weights(beta: f64, lambda: f64) -> (f64, f64) {
    let w_g = (1.0 - beta) / (1.0 + lambda);
    (1.0 - w_g, w_g)
}

/// `d ← w_d d + w_g g`, `x ← x − η d`, committed only if finite.
fn apply(state: &mut OptimizerState, d: &DenseVector, g: &DenseVector, w_d: f64, w_g: f64, eta: f64) -> Result<f64> {
    let d: Vec<f64> = d.iter().zip(g.iter()).map(|(di, gi)| w_d * di + w_g * gi).collect();
    let x: Vec<f64> = state.x.iter().zip(&d).map(|(xi, di)| xi - eta * di).collect();
    let (x, d) = (DenseVector::from_raw(x), DenseVector::from_raw(d));
    ensure_finite(&x, &d)?;
    let step = distance(x.as_slice(), state.x.as_slice());
    state.x = x;
    state.d = d;
    Ok(step)
}

fn begin(state: &OptimizerState, loss: f64, g: &DenseVector, hp: &Hyperparams) -> Result<()> {
    check_dims(state.dim(), g.len())?;
    check_loss(loss)?;
    hp.validate()
}

fn finish(state: &mut OptimizerState, eta: f64) {
    state.t += 1;
    state.eta_prev = Some(eta);
}

/// Heavy ball with dampening: `d ← βd + (1 − β)g`, `x ← x − ηd`.
pub fn mgd_step(
    state: &mut OptimizerState,
    loss: f64,
    g: &DenseVector,
    hp: &Hyperparams,
    beta_fixed: f64,
) -> Result<StepReport> {
    if !(0.0..1.0).contains(&beta_fixed) {
        return Err(invalid(format!("fixed momentum must lie in [0, 1), got {beta_fixed}")));
    }
    begin(state, loss, g, hp)?;
    let d = state.current_memory(g, hp.memory_init).into_owned();
    let step_norm = apply(state, &d, g, beta_fixed, 1.0 - beta_fixed, hp.eta)?;
    finish(state, hp.eta);
    Ok(StepReport { beta: BetaUsed::Global(beta_fixed), loss, grad_norm: g.norm(), step_norm })
}

/// Estimated `f̂(x_t) − f(x_t)` for the unpreconditioned update.
fn loss_gap(state: &OptimizerState, d: &DenseVector, f_curr: f64, g: &DenseVector, hp: &Hyperparams) -> f64 {
    match hp.fhat_policy {
        FhatPolicy::FirstOrder => state.eta_prev.unwrap_or(hp.eta) * dot_slices(g.as_slice(), d.as_slice()),
        FhatPolicy::PreviousLoss | FhatPolicy::Aggregation => state.f_prev.map_or(0.0, |f| f - f_curr),
    }
}

/// Adaptive memory momentum with a deterministic gradient. The coefficient
/// is the closed-form dual solution clipped to `[0, 1]`; at `t = 0` there is
/// no previous loss and `f̂ = f`.
pub fn am_mgd_step(state: &mut OptimizerState, f_curr: f64, g: &DenseVector, hp: &Hyperparams) -> Result<StepReport> {
    begin(state, f_curr, g, hp)?;
    let d_prev = state.current_memory(g, hp.memory_init).into_owned();
    let gap = loss_gap(state, &d_prev, f_curr, g, hp);
    let inputs = BetaInputs::plain(g, &d_prev, hp.eta, hp.lambda, f_curr + gap, f_curr);
    let beta = policy_wrap(beta_deterministic(&inputs)?, hp.policy);

    let x_prev = state.x.clone();
    let (w_d, w_g) = combination_weights(beta, hp.lambda);
    let step_norm = apply(state, &d_prev, g, w_d, w_g, hp.eta)?;

    let dx: Vec<f64> = state.x.iter().zip(x_prev.iter()).map(|(a, b)| a - b).collect();
    let planes = (f_curr, dot_slices(g.as_slice(), &dx), f_curr + gap, dot_slices(d_prev.as_slice(), &dx));
    state.f_prev = Some(next_intercept(hp.fhat_policy, f_curr, planes));
    finish(state, hp.eta);
    Ok(StepReport { beta: BetaUsed::Global(beta), loss: f_curr, grad_norm: g.norm(), step_norm })
}

/// Stochastic adaptive memory momentum: the loss difference is replaced by
/// its first-order estimate and the coefficient is clipped to `[0, β_max]`.
pub fn am_msgd_step(state: &mut OptimizerState, loss: f64, g: &DenseVector, hp: &Hyperparams) -> Result<StepReport> {
    begin(state, loss, g, hp)?;
    let d = state.current_memory(g, hp.memory_init).into_owned();
    let beta = policy_wrap(beta_stochastic(g, &d, hp.lambda, hp.bounds())?, hp.policy);
    let (w_d, w_g) = combination_weights(beta, hp.lambda);
    let step_norm = apply(state, &d, g, w_d, w_g, hp.eta)?;
    finish(state, hp.eta);
    Ok(StepReport { beta: BetaUsed::Global(beta), loss, grad_norm: g.norm(), step_norm })
}

/// The simplified variant analysed for convergence: `λ = 0`, `d₀ = 0`,
/// `β = Clip_{[0, β_max]}(‖g‖² / ‖d − g‖²)`.
pub fn theory_step(state: &mut OptimizerState, loss: f64, g: &DenseVector, hp: &Hyperparams) -> Result<StepReport> {
    begin(state, loss, g, hp)?;
    let d = state.current_memory(g, MemoryInit::Zero).into_owned();
    let bounds = BetaBounds::new(hp.beta_max)?;
    let beta = policy_wrap(beta_theory_variant(g, &d, bounds)?, hp.policy);
    let step_norm = apply(state, &d, g, beta, 1.0 - beta, hp.eta)?;
    finish(state, hp.eta);
    Ok(StepReport { beta: BetaUsed::Global(beta), loss, grad_norm: g.norm(), step_norm })
}
