//! Stateful step engines: fixed-momentum baselines and their adaptive
//! memory counterparts.
//!
//! Every step function mutates an [`OptimizerState`] in place and returns a
//! [`StepReport`]. A step that would leave non-finite values in the state
//! fails with [`Error::NonFinite`](crate::Error::NonFinite) and leaves the
//! state as it was.

mod adam;
mod momentum;

use std::borrow::Cow;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::beta::BetaBounds;
use crate::error::{invalid, Error, Result};
use crate::math::DenseVector;

pub use adam::{
    adam_preconditioner, adamw_step, am_adamw_step, am_adamw_step_per_layer, preconditioned_am_update,
};
pub use momentum::{am_mgd_step, am_msgd_step, combination_weights, mgd_step, theory_step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `x ← (1 − μη)x − η P⁻¹d`
    Decoupled,
    /// `x ← (x − η P⁻¹d) / (1 + μη)`
    Proximal,
}

/// Where the memory-plane intercept `f̂(x_t)` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FhatPolicy {
    /// `f̂(x_t) = f(x_{t−1})`, deliberately overestimating.
    PreviousLoss,
    /// `f̂(x_{t+1}) = f^m_t(x_{t+1})`, the bundle-method aggregate.
    Aggregation,
    /// `f̂(x_t) − f(x_t) ≈ ∇f(x_t)ᵀ(x_{t−1} − x_t)`, no second loss value.
    FirstOrder,
}

/// Initial memory direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryInit {
    /// `d₀ = g₀`
    Gradient,
    /// `d₀ = 0`
    Zero,
}

/// Post-processing of the adaptive coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    None,
    /// `max(β, beta_min)`
    Clip { beta_min: f64 },
    /// `0.9` if `β ≥ theta`, else `0.1`.
    Restart { theta: f64 },
    /// Ignore the adaptive value. Used for baseline-equivalence checks.
    Fixed(f64),
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::None => Ok(()),
            Policy::Clip { beta_min } if (0.0..1.0).contains(&beta_min) => Ok(()),
            Policy::Restart { theta } if theta > 0.0 && theta < 1.0 => Ok(()),
            Policy::Fixed(b) if (0.0..=1.0).contains(&b) => Ok(()),
            other => Err(invalid(format!("policy parameter out of range: {other:?}"))),
        }
    }
}

pub fn policy_wrap(beta_am: f64, policy: Policy) -> f64 {
    match policy {
        Policy::None => beta_am,
        Policy::Clip { beta_min } => beta_am.max(beta_min),
        Policy::Restart { theta } => {
            if beta_am >= theta {
                0.9
            } else {
                0.1
            }
        }
        Policy::Fixed(b) => b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Learning rate of the current step.
    pub eta: f64,
    pub lambda: f64,
    pub beta_max: f64,
    /// Weight decay.
    pub mu: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Preconditioner floor.
    pub epsilon: f64,
    pub decay_mode: DecayMode,
    pub fhat_policy: FhatPolicy,
    pub memory_init: MemoryInit,
    pub policy: Policy,
}

impl Hyperparams {
    /// Defaults: `λ = 0.1`, `β_max = 0.9 − 0.1λ`, `β₂ = 0.99`, `ε = 1e−8`,
    /// no weight decay, decoupled decay, previous-loss intercept.
    pub fn new(eta: f64) -> Self {
        let lambda = 0.1;
        Self {
            eta,
            lambda,
            beta_max: default_beta_max(lambda),
            mu: 0.0,
            beta2: 0.99,
            epsilon: 1e-8,
            decay_mode: DecayMode::Decoupled,
            fhat_policy: FhatPolicy::PreviousLoss,
            memory_init: MemoryInit::Gradient,
            policy: Policy::None,
        }
    }

    /// Sets `λ` and moves `β_max` to `0.9 − 0.1λ`.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self.beta_max = default_beta_max(lambda);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid(format!("beta2 must lie in [0, 1), got {}", self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        BetaBounds::new(self.beta_max)?;
        self.policy.validate()
    }

    pub(crate) fn bounds(&self) -> BetaBounds {
        BetaBounds::new(self.beta_max).unwrap_or_else(|_| BetaBounds::unit())
    }
}

/// `0.9 − 0.1λ`, floored so the bound stays positive for large `λ`.
pub fn default_beta_max(lambda: f64) -> f64 {
    (0.9 - 0.1 * lambda).max(0.05)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub x: DenseVector,
    pub d: DenseVector,
    pub v: Option<DenseVector>,
    /// Completed steps.
    pub t: u64,
    /// Running product of the first-moment coefficients actually used.
    pub beta1_prod: f64,
    /// Per-layer counterpart of `beta1_prod`.
    pub layer_beta1_prod: Vec<f64>,
    /// Memory-plane intercept for the next step.
    pub f_prev: Option<f64>,
    /// Learning rate of the previous step.
    pub eta_prev: Option<f64>,
    layer_spans: Option<Vec<Range<usize>>>,
}

impl OptimizerState {
    pub fn new(x0: DenseVector) -> Self {
        let n = x0.len();
        Self {
            x: x0,
            d: DenseVector::zeros(n),
            v: None,
            t: 0,
            beta1_prod: 1.0,
            layer_beta1_prod: Vec::new(),
            f_prev: None,
            eta_prev: None,
            layer_spans: None,
        }
    }

    /// Attaches a partition of `[0, dim)` into contiguous, disjoint, ordered
    /// index groups.
    pub fn with_layers(mut self, spans: Vec<Range<usize>>) -> Result<Self> {
        validate_spans(&spans, self.dim())?;
        self.layer_beta1_prod = vec![1.0; spans.len()];
        self.layer_spans = Some(spans);
        Ok(self)
    }

    pub fn layer_spans(&self) -> Option<&[Range<usize>]> {
        self.layer_spans.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Number of dimension-sized buffers held.
    pub fn per_parameter_buffers(&self) -> usize {
        2 + usize::from(self.v.is_some())
    }

    /// Memory direction for the step about to run: `d_t`, or the initial
    /// direction when no step has been taken.
    pub(crate) fn current_memory<'a>(&'a self, g: &'a DenseVector, init: MemoryInit) -> Cow<'a, DenseVector> {
        match (self.t, init) {
            (0, MemoryInit::Gradient) => Cow::Borrowed(g),
            (0, MemoryInit::Zero) => Cow::Owned(DenseVector::zeros(g.len())),
            _ => Cow::Borrowed(&self.d),
        }
    }
}

fn validate_spans(spans: &[Range<usize>], dim: usize) -> Result<()> {
    let mut next = 0;
    for s in spans {
        if s.start != next || s.end <= s.start {
            return Err(invalid(format!("layer spans must partition [0, {dim}) in order; bad span {s:?}")));
        }
        next = s.end;
    }
    if next != dim {
        return Err(invalid(format!("layer spans cover [0, {next}) but dimension is {dim}")));
    }
    Ok(())
}

/// Coefficient(s) used by one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaUsed {
    Global(f64),
    PerLayer(Vec<f64>),
}

impl BetaUsed {
    pub fn values(&self) -> &[f64] {
        match self {
            BetaUsed::Global(b) => std::slice::from_ref(b),
            BetaUsed::PerLayer(bs) => bs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub beta: BetaUsed,
    /// Loss at the iterate the step started from.
    pub loss: f64,
    pub grad_norm: f64,
    /// `‖x_{t+1} − x_t‖`
    pub step_norm: f64,
}

/// Names accepted by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Mgd,
    AmMgd,
    AmMsgd,
    Adamw,
    AmAdamw,
    AmAdamwPerLayer,
    /// Simplified stochastic variant with `β = ‖g‖²/‖d − g‖²`.
    AmTheory,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mgd" => Self::Mgd,
            "am_mgd" => Self::AmMgd,
            "am_msgd" => Self::AmMsgd,
            "adamw" => Self::Adamw,
            "am_adamw" => Self::AmAdamw,
            "am_adamw_per_layer" => Self::AmAdamwPerLayer,
            "am_theory" => Self::AmTheory,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mgd => "mgd",
            Self::AmMgd => "am_mgd",
            Self::AmMsgd => "am_msgd",
            Self::Adamw => "adamw",
            Self::AmAdamw => "am_adamw",
            Self::AmAdamwPerLayer => "am_adamw_per_layer",
            Self::AmTheory => "am_theory",
        }
    }

    /// Whether the kind takes a fixed coefficient.
    pub fn is_fixed(&self) -> bool {
        matches!(self, Self::Mgd | Self::Adamw)
    }
}

/// A kind plus its settings, dispatching to the step functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hp: Hyperparams,
    /// Coefficient of the fixed-momentum kinds.
    pub beta: f64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hp: Hyperparams) -> Self {
        Self { kind, hp, beta: 0.9 }
    }

    pub fn fixed(kind: OptimizerKind, hp: Hyperparams, beta: f64) -> Self {
        Self { kind, hp, beta }
    }

    /// Short label, e.g. `mgd(0.9)` or `am_mgd`.
    pub fn label(&self) -> String {
        if self.kind.is_fixed() {
            format!("{}({})", self.kind.name(), self.beta)
        } else {
            self.kind.name().to_string()
        }
    }

    pub fn step(&self, state: &mut OptimizerState, loss: f64, g: &DenseVector, eta: f64) -> Result<StepReport> {
        let hp = Hyperparams { eta, ..self.hp };
        match self.kind {
            OptimizerKind::Mgd => mgd_step(state, loss, g, &hp, self.beta),
            OptimizerKind::AmMgd => am_mgd_step(state, loss, g, &hp),
            OptimizerKind::AmMsgd => am_msgd_step(state, loss, g, &hp),
            OptimizerKind::Adamw => adamw_step(state, loss, g, &hp, self.beta),
            OptimizerKind::AmAdamw => am_adamw_step(state, loss, g, &hp),
            OptimizerKind::AmAdamwPerLayer => am_adamw_step_per_layer(state, loss, g, &hp),
            OptimizerKind::AmTheory => theory_step(state, loss, g, &hp),
        }
    }
}

pub(crate) fn ensure_finite(x: &DenseVector, d: &DenseVector) -> Result<()> {
    if x.is_finite() && d.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("optimizer state"))
    }
}

pub(crate) fn check_loss(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("loss"))
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Intercept to store for the next step under `policy`.
///
/// `planes` holds `(f(x_t), gᵀΔx, f̂(x_t), d_tᵀΔx)` with `Δx = x_{t+1} − x_t`.
pub(crate) fn next_intercept(policy: FhatPolicy, f_curr: f64, planes: (f64, f64, f64, f64)) -> f64 {
    match policy {
        FhatPolicy::Aggregation => {
            let (f, g_dx, f_hat, d_dx) = planes;
            (f + g_dx).max(f_hat + d_dx)
        }
        FhatPolicy::PreviousLoss | FhatPolicy::FirstOrder => f_curr,
    }
}
