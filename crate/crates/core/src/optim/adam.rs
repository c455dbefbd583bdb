use std::ops::Range;

use crate::beta::{adamw_loss_decrease_estimate, beta_preconditioned, BetaInputs};
use crate::error::{check_dims, invalid, Result};
use crate::math::{dot_slices, DenseVector, DiagPreconditioner};

use super::{
    check_loss, distance, ensure_finite, next_intercept, policy_wrap, BetaUsed, DecayMode, FhatPolicy, Hyperparams,
    OptimizerState, StepReport,
};

/// Adam metric `P_t = (1 − β_max ∏β₁) diag(ε + √v̂_t)` with
/// `v̂_t = v_t / (1 − β₂^t)`.
///
/// The first-moment bias correction uses the product of the coefficients of
/// the previous steps scaled by `β_max`, since the current coefficient is not
/// known when the metric is needed.
pub fn adam_preconditioner(state: &OptimizerState, hp: &Hyperparams) -> Result<DiagPreconditioner> {
    let v = state.v.as_ref().ok_or_else(|| invalid("second moment not initialised"))?;
    if state.t == 0 {
        return Err(invalid("preconditioner undefined before the first second-moment update"));
    }
    let diag = preconditioner_diag(v.as_slice(), state.t, state.beta1_prod, hp)?;
    Ok(DiagPreconditioner::from_raw(diag))
}

fn preconditioner_diag(v: &[f64], t: u64, beta1_prod: f64, hp: &Hyperparams) -> Result<Vec<f64>> {
    let factor = bias_factor(beta1_prod, hp)?;
    let v_corr = 1.0 - hp.beta2.powi(t as i32);
    Ok(v.iter().map(|vi| factor * (hp.epsilon + (vi / v_corr).sqrt())).collect())
}

fn bias_factor(beta1_prod: f64, hp: &Hyperparams) -> Result<f64> {
    let factor = 1.0 - hp.beta_max * beta1_prod;
    if factor > 0.0 {
        Ok(factor)
    } else {
        Err(invalid(format!("first-moment bias factor vanished (beta_max = {})", hp.beta_max)))
    }
}

fn second_moment(state: &OptimizerState, g: &DenseVector, beta2: f64) -> Vec<f64> {
    match &state.v {
        Some(v) => v.iter().zip(g.iter()).map(|(vi, gi)| beta2 * vi + (1.0 - beta2) * gi * gi).collect(),
        None => g.iter().map(|gi| (1.0 - beta2) * gi * gi).collect(),
    }
}

fn decay(x: f64, step: f64, hp: &Hyperparams) -> f64 {
    match hp.decay_mode {
        DecayMode::Decoupled => (1.0 - hp.mu * hp.eta) * x - step,
        DecayMode::Proximal => (x - step) / (1.0 + hp.mu * hp.eta),
    }
}

fn validate(state: &OptimizerState, loss: f64, g: &DenseVector, hp: &Hyperparams) -> Result<()> {
    check_dims(state.dim(), g.len())?;
    check_loss(loss)?;
    hp.validate()
}

/// AdamW with a fixed first-moment coefficient; the memory `d` holds the
/// biased first moment and starts at zero.
pub fn adamw_step(
    state: &mut OptimizerState,
    loss: f64,
    g: &DenseVector,
    hp: &Hyperparams,
    beta1_fixed: f64,
) -> Result<StepReport> {
    if !(0.0..1.0).contains(&beta1_fixed) {
        return Err(invalid(format!("beta1 must lie in [0, 1), got {beta1_fixed}")));
    }
    validate(state, loss, g, hp)?;
    let k = state.t + 1;
    let v = second_moment(state, g, hp.beta2);
    let m: Vec<f64> = if state.t == 0 {
        g.iter().map(|gi| (1.0 - beta1_fixed) * gi).collect()
    } else {
        state.d.iter().zip(g.iter()).map(|(mi, gi)| beta1_fixed * mi + (1.0 - beta1_fixed) * gi).collect()
    };
    let m_corr = 1.0 - beta1_fixed.powi(k as i32);
    let v_corr = 1.0 - hp.beta2.powi(k as i32);
    let x: Vec<f64> = (0..g.len())
        .map(|i| {
            let direction = (m[i] / m_corr) / ((v[i] / v_corr).sqrt() + hp.epsilon);
            decay(state.x[i], hp.eta * direction, hp)
        })
        .collect();

    let (x, d) = (DenseVector::from_raw(x), DenseVector::from_raw(m));
    ensure_finite(&x, &d)?;
    let step_norm = distance(x.as_slice(), state.x.as_slice());
    state.x = x;
    state.d = d;
    state.v = Some(DenseVector::from_raw(v));
    state.t = k;
    state.beta1_prod *= beta1_fixed;
    state.eta_prev = Some(hp.eta);
    Ok(StepReport { beta: BetaUsed::Global(beta1_fixed), loss, grad_norm: g.norm(), step_norm })
}

struct SpanUpdate {
    betas: Vec<f64>,
    x: DenseVector,
    d: DenseVector,
    next_intercept: f64,
}

/// Coefficient per span from the preconditioned dual, then
/// `d ← (λP + I)⁻¹((1 − β)g + (λP + βI)d)` and `x ← decay(x, ηP⁻¹d)`.
fn update_spans(
    state: &OptimizerState,
    d_prev: &DenseVector,
    f_curr: f64,
    g: &DenseVector,
    p: &[f64],
    hp: &Hyperparams,
    spans: &[Range<usize>],
) -> Result<SpanUpdate> {
    let n = g.len();
    let eta_prev = state.eta_prev.unwrap_or(hp.eta);
    let observed_gap = state.f_prev.map_or(0.0, |f| f - f_curr);
    let mut betas = Vec::with_capacity(spans.len());
    let mut x = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut global_gap = 0.0;

    for span in spans {
        let r = span.clone();
        let (gs, ds, xs) = (g.slice(r.start, r.end), d_prev.slice(r.start, r.end), state.x.slice(r.start, r.end));
        let ps = DiagPreconditioner::from_raw(p[r.clone()].to_vec());
        let gap = match hp.fhat_policy {
            FhatPolicy::FirstOrder => {
                adamw_loss_decrease_estimate(gs.as_slice(), ds.as_slice(), xs.as_slice(), ps.diag(), eta_prev, hp.mu)
            }
            FhatPolicy::PreviousLoss | FhatPolicy::Aggregation => observed_gap,
        };
        global_gap += gap;
        let inputs = BetaInputs {
            g: &gs,
            d: &ds,
            eta: hp.eta,
            lambda: hp.lambda,
            f_hat: f_curr + gap,
            f_curr,
            mu: hp.mu,
            x: Some(&xs),
            precond: Some(&ps),
        };
        let beta = policy_wrap(beta_preconditioned(&inputs, hp.bounds())?, hp.policy);
        for i in r {
            let lp = hp.lambda * p[i];
            d[i] = ((1.0 - beta) * g[i] + (lp + beta) * d_prev[i]) / (lp + 1.0);
            x[i] = decay(state.x[i], hp.eta * d[i] / p[i], hp);
        }
        betas.push(beta);
    }

    let (x, d) = (DenseVector::from_raw(x), DenseVector::from_raw(d));
    ensure_finite(&x, &d)?;
    let gap = if hp.fhat_policy == FhatPolicy::FirstOrder { global_gap } else { observed_gap };
    let dx: Vec<f64> = x.iter().zip(state.x.iter()).map(|(a, b)| a - b).collect();
    let planes = (f_curr, dot_slices(g.as_slice(), &dx), f_curr + gap, dot_slices(d_prev.as_slice(), &dx));
    let next_intercept = next_intercept(hp.fhat_policy, f_curr, planes);
    Ok(SpanUpdate { betas, x, d, next_intercept })
}

fn commit(state: &mut OptimizerState, update: SpanUpdate, hp: &Hyperparams) -> (Vec<f64>, f64) {
    let step_norm = distance(update.x.as_slice(), state.x.as_slice());
    state.x = update.x;
    state.d = update.d;
    state.f_prev = Some(update.next_intercept);
    state.eta_prev = Some(hp.eta);
    (update.betas, step_norm)
}

/// One adaptive memory step in a caller-supplied diagonal metric, without
/// any second-moment bookkeeping.
pub fn preconditioned_am_update(
    state: &mut OptimizerState,
    f_curr: f64,
    g: &DenseVector,
    precond: &DiagPreconditioner,
    hp: &Hyperparams,
) -> Result<StepReport> {
    validate(state, f_curr, g, hp)?;
    check_dims(g.len(), precond.len())?;
    let d_prev = state.current_memory(g, hp.memory_init).into_owned();
    let n = g.len();
    #[allow(clippy::single_range_in_vec_init)]
    let update = update_spans(state, &d_prev, f_curr, g, precond.diag(), hp, &[0..n])?;
    let (betas, step_norm) = commit(state, update, hp);
    state.t += 1;
    Ok(StepReport { beta: BetaUsed::Global(betas[0]), loss: f_curr, grad_norm: g.norm(), step_norm })
}

fn am_adamw_family(
    state: &mut OptimizerState,
    f_curr: f64,
    g: &DenseVector,
    hp: &Hyperparams,
    per_layer: bool,
) -> Result<StepReport> {
    validate(state, f_curr, g, hp)?;
    let n = g.len();
    let spans: Vec<Range<usize>> = if per_layer {
        state.layer_spans().ok_or_else(|| invalid("per-layer step needs layer spans"))?.to_vec()
    } else {
        vec![0..n]
    };
    let prods: Vec<f64> = if per_layer { state.layer_beta1_prod.clone() } else { vec![state.beta1_prod] };

    let d_prev = state.current_memory(g, hp.memory_init).into_owned();
    let k = state.t + 1;
    let v = second_moment(state, g, hp.beta2);
    let mut p = vec![0.0; n];
    for (span, &prod) in spans.iter().zip(&prods) {
        let diag = preconditioner_diag(&v[span.clone()], k, prod, hp)?;
        p[span.clone()].copy_from_slice(&diag);
    }

    let update = update_spans(state, &d_prev, f_curr, g, &p, hp, &spans)?;
    let (betas, step_norm) = commit(state, update, hp);
    state.v = Some(DenseVector::from_raw(v));
    state.t = k;
    if per_layer {
        state.layer_beta1_prod.iter_mut().zip(&betas).for_each(|(prod, b)| *prod *= b);
        Ok(StepReport { beta: BetaUsed::PerLayer(betas), loss: f_curr, grad_norm: g.norm(), step_norm })
    } else {
        state.beta1_prod *= betas[0];
        Ok(StepReport { beta: BetaUsed::Global(betas[0]), loss: f_curr, grad_norm: g.norm(), step_norm })
    }
}

/// Adaptive memory AdamW with one coefficient shared by all parameters.
///
/// `f_curr` is the loss at `x_t`; with [`FhatPolicy::FirstOrder`] it only
/// feeds the report and the loss gap comes from the first-order estimate.
pub fn am_adamw_step(state: &mut OptimizerState, f_curr: f64, g: &DenseVector, hp: &Hyperparams) -> Result<StepReport> {
    am_adamw_family(state, f_curr, g, hp, false)
}

/// Adaptive memory AdamW with an independent coefficient per layer span.
/// Each span keeps its own bias-correction product.
pub fn am_adamw_step_per_layer(
    state: &mut OptimizerState,
    f_curr: f64,
    g: &DenseVector,
    hp: &Hyperparams,
) -> Result<StepReport> {
    am_adamw_family(state, f_curr, g, hp, true)
}
