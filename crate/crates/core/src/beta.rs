//! Closed-form adaptive momentum coefficients.
//!
//! Every coefficient here is the maximizer of a one-dimensional concave dual
//! program over the weight placed on the memory plane. The closed forms are
//! `numerator / denominator` projected onto a clip interval; [`qp_oracle`]
//! maximizes the same dual objective by brute force and is what the closed
//! forms are tested against.

use crate::error::{check_dims, invalid, Result};
use crate::math::{clip_unchecked, dot_slices, DenseVector, DiagPreconditioner};

/// Denominators below this value yield `β = 0`.
pub const EPS_DEN: f64 = 1e-24;

/// Default grid resolution of [`qp_oracle`].
pub const DEFAULT_GRID_POINTS: usize = 10_001;

/// Everything the deterministic and preconditioned coefficients read.
#[derive(Debug, Clone, Copy)]
pub struct BetaInputs<'a> {
    /// Current gradient `g_t`.
    pub g: &'a DenseVector,
    /// Memory direction `d_t`.
    pub d: &'a DenseVector,
    pub eta: f64,
    pub lambda: f64,
    /// Intercept of the memory plane at `x_t`.
    pub f_hat: f64,
    /// `f(x_t)`.
    pub f_curr: f64,
    /// Weight decay; requires `x` when positive.
    pub mu: f64,
    pub x: Option<&'a DenseVector>,
    pub precond: Option<&'a DiagPreconditioner>,
}

impl<'a> BetaInputs<'a> {
    /// Unpreconditioned inputs without weight decay.
    pub fn plain(g: &'a DenseVector, d: &'a DenseVector, eta: f64, lambda: f64, f_hat: f64, f_curr: f64) -> Self {
        Self { g, d, eta, lambda, f_hat, f_curr, mu: 0.0, x: None, precond: None }
    }

    fn validate(&self) -> Result<()> {
        check_dims(self.g.len(), self.d.len())?;
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(invalid(format!("mu must be >= 0, got {}", self.mu)));
        }
        if let Some(x) = self.x {
            check_dims(self.g.len(), x.len())?;
        } else if self.mu > 0.0 {
            return Err(invalid("weight decay needs the iterate x"));
        }
        if let Some(p) = self.precond {
            check_dims(self.g.len(), p.len())?;
            DiagPreconditioner::new(p.diag().to_vec())?;
        }
        Ok(())
    }
}

/// Clip interval `[0, hi]` with `0 < hi <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBounds {
    lo: f64,
    hi: f64,
}

impl BetaBounds {
    pub fn new(hi: f64) -> Result<Self> {
        if hi > 0.0 && hi <= 1.0 {
            Ok(Self { lo: 0.0, hi })
        } else {
            Err(invalid(format!("beta_max must lie in (0, 1], got {hi}")))
        }
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn clip(&self, beta: f64) -> f64 {
        clip_unchecked(beta, self.lo, self.hi)
    }

    pub fn contains(&self, beta: f64) -> bool {
        beta >= self.lo && beta <= self.hi
    }
}

fn ratio(numerator: f64, denominator: f64) -> Option<f64> {
    if denominator < EPS_DEN || !denominator.is_finite() {
        None
    } else {
        Some(numerator / denominator)
    }
}

fn clipped(r: Option<f64>, bounds: BetaBounds) -> f64 {
    r.map_or(0.0, |b| bounds.clip(b))
}

/// Unclipped deterministic ratio; `None` on a degenerate denominator.
pub fn deterministic_ratio(inputs: &BetaInputs<'_>) -> Result<Option<f64>> {
    inputs.validate()?;
    if inputs.precond.is_some() || inputs.mu != 0.0 {
        return Err(invalid("deterministic coefficient takes no preconditioner and no weight decay"));
    }
    let (g, d, lambda) = (inputs.g.as_slice(), inputs.d.as_slice(), inputs.lambda);
    let mut cross = 0.0;
    let mut den = 0.0;
    for (gi, di) in g.iter().zip(d) {
        let diff = di - gi;
        cross += diff * (gi + lambda * di);
        den += diff * diff;
    }
    let num = (inputs.f_hat - inputs.f_curr) * (lambda + 1.0) / inputs.eta - cross;
    Ok(ratio(num, den))
}

/// Momentum coefficient of the two-plane proximal step, clipped to `[0, 1]`.
pub fn beta_deterministic(inputs: &BetaInputs<'_>) -> Result<f64> {
    Ok(clipped(deterministic_ratio(inputs)?, BetaBounds::unit()))
}

/// Unclipped stochastic ratio, with the loss difference replaced by its
/// first-order estimate `η gᵀd`.
pub fn stochastic_ratio(g: &DenseVector, d: &DenseVector, lambda: f64) -> Result<Option<f64>> {
    check_dims(g.len(), d.len())?;
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut gd = 0.0;
    let mut cross = 0.0;
    let mut den = 0.0;
    for (gi, di) in g.iter().zip(d.iter()) {
        let diff = di - gi;
        gd += gi * di;
        cross += diff * (gi + lambda * di);
        den += diff * diff;
    }
    Ok(ratio((lambda + 1.0) * gd - cross, den))
}

pub fn beta_stochastic(g: &DenseVector, d: &DenseVector, lambda: f64, bounds: BetaBounds) -> Result<f64> {
    Ok(clipped(stochastic_ratio(g, d, lambda)?, bounds))
}

/// Unclipped ratio in the metric `P̃⁻¹` with `P̃ = (I + λP)P`.
///
/// A missing preconditioner is treated as the identity.
pub fn preconditioned_ratio(inputs: &BetaInputs<'_>) -> Result<Option<f64>> {
    inputs.validate()?;
    let n = inputs.g.len();
    let ones;
    let p = match inputs.precond {
        Some(p) => p.diag(),
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let (g, d, lambda, mu, eta) = (inputs.g.as_slice(), inputs.d.as_slice(), inputs.lambda, inputs.mu, inputs.eta);
    let mut cross = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let pt = (1.0 + lambda * p[i]) * p[i];
        let diff = d[i] - g[i];
        cross += diff * (g[i] + lambda * p[i] * d[i]) / pt;
        den += diff * diff / pt;
    }
    // The decay term enters the dual as μP̃x inside the P̃⁻¹ norm, so the
    // metric cancels and the inner product is Euclidean.
    let decay = match inputs.x {
        Some(x) if mu > 0.0 => {
            mu * x.iter().zip(d.iter().zip(g)).map(|(xi, (di, gi))| xi * (di - gi)).sum::<f64>()
        }
        _ => 0.0,
    };
    let num = (1.0 + mu * eta) * (inputs.f_hat - inputs.f_curr) / eta - cross - decay;
    Ok(ratio(num, den))
}

/// Coefficient for a diagonal preconditioner with weight decay.
pub fn beta_preconditioned(inputs: &BetaInputs<'_>, bounds: BetaBounds) -> Result<f64> {
    if inputs.precond.is_none() {
        return Err(invalid("preconditioned coefficient requires a preconditioner"));
    }
    Ok(clipped(preconditioned_ratio(inputs)?, bounds))
}

/// First-order estimate of `f(x_{t-1}) - f(x_t)` for the preconditioned
/// update: `η_{t-1} gᵀ(P⁻¹d + μx)`, reusing the current preconditioner.
pub fn adamw_loss_decrease_estimate(
    g: &[f64],
    d: &[f64],
    x: &[f64],
    p: &[f64],
    eta_prev: f64,
    mu: f64,
) -> f64 {
    let s: f64 = (0..g.len()).map(|i| g[i] * (d[i] / p[i] + mu * x[i])).sum();
    eta_prev * s
}

#[allow(clippy::too_many_arguments)]
pub fn beta_stochastic_adamw(
    g: &DenseVector,
    d: &DenseVector,
    x: &DenseVector,
    precond: &DiagPreconditioner,
    eta_prev: f64,
    lambda: f64,
    mu: f64,
    eta: f64,
    bounds: BetaBounds,
) -> Result<f64> {
    check_dims(g.len(), d.len())?;
    check_dims(g.len(), x.len())?;
    check_dims(g.len(), precond.len())?;
    let delta = adamw_loss_decrease_estimate(g.as_slice(), d.as_slice(), x.as_slice(), precond.diag(), eta_prev, mu);
    let inputs = BetaInputs { g, d, eta, lambda, f_hat: delta, f_curr: 0.0, mu, x: Some(x), precond: Some(precond) };
    beta_preconditioned(&inputs, bounds)
}

/// Unclipped `‖g‖² / ‖d − g‖²`.
pub fn theory_ratio(g: &DenseVector, d: &DenseVector) -> Result<Option<f64>> {
    check_dims(g.len(), d.len())?;
    let den: f64 = g.iter().zip(d.iter()).map(|(gi, di)| (di - gi) * (di - gi)).sum();
    Ok(ratio(g.norm_sq(), den))
}

/// Coefficient of the simplified stochastic variant used by the convergence
/// analysis. Bounds the memory norm by `‖d_{t+1}‖² ≤ 2‖g_t‖²`.
pub fn beta_theory_variant(g: &DenseVector, d: &DenseVector, bounds: BetaBounds) -> Result<f64> {
    Ok(clipped(theory_ratio(g, d)?, bounds))
}

/// Value of the concave dual program at `beta`, up to a β-independent
/// constant:
///
/// `β(f̂ − f) − η/(2(1+μη)) ‖λPd + μP̃x + g + β(d − g)‖²_{P̃⁻¹}`
pub fn dual_objective(inputs: &BetaInputs<'_>, beta: f64) -> f64 {
    let n = inputs.g.len();
    let (g, d) = (inputs.g.as_slice(), inputs.d.as_slice());
    let (lambda, mu, eta) = (inputs.lambda, inputs.mu, inputs.eta);
    let mut norm = 0.0;
    for i in 0..n {
        let p = inputs.precond.map_or(1.0, |p| p.diag()[i]);
        let pt = (1.0 + lambda * p) * p;
        let xi = inputs.x.map_or(0.0, |x| x[i]);
        let c = lambda * p * d[i] + mu * pt * xi + g[i] + beta * (d[i] - g[i]);
        norm += c * c / pt;
    }
    beta * (inputs.f_hat - inputs.f_curr) - eta / (2.0 * (1.0 + mu * eta)) * norm
}

/// Brute-force maximizer of [`dual_objective`] over `β ∈ [0, 1]`.
///
/// Scans a uniform grid (ties go to the smallest β), then refines around the
/// best grid point with golden-section search to a bracket of `1e-8`.
pub fn qp_oracle(inputs: &BetaInputs<'_>, grid_points: usize) -> Result<f64> {
    if grid_points < 1001 {
        return Err(invalid(format!("qp_oracle needs at least 1001 grid points, got {grid_points}")));
    }
    inputs.validate()?;
    let h = 1.0 / (grid_points - 1) as f64;
    let mut best = (0.0, dual_objective(inputs, 0.0));
    for k in 1..grid_points {
        let b = k as f64 * h;
        let v = dual_objective(inputs, b);
        if v > best.1 + 1e-15 {
            best = (b, v);
        }
    }

    let phi = |b: f64| dual_objective(inputs, b);
    let refined = golden_section_max(phi, (best.0 - h).max(0.0), (best.0 + h).min(1.0), 1e-8);
    if phi(refined) > best.1 + 1e-15 {
        Ok(refined)
    } else {
        Ok(best.0)
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// The β in `[0, 1]` minimizing `‖x_{t+1}(β) − x*‖²` for one heavy-ball step
/// `x_{t+1} = x − η(βd + (1 − β)g)`. Needs the minimizer, so it is only an
/// oracle.
pub fn one_step_optimal_beta(
    x: &DenseVector,
    x_star: &DenseVector,
    d: &DenseVector,
    g: &DenseVector,
    eta: f64,
) -> Result<f64> {
    check_dims(x.len(), x_star.len())?;
    check_dims(x.len(), d.len())?;
    check_dims(x.len(), g.len())?;
    if !(eta > 0.0) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    let diff = d.sub(g)?;
    let offset = x.sub(x_star)?;
    let num = dot_slices(diff.as_slice(), offset.as_slice()) / eta - dot_slices(d.as_slice(), g.as_slice())
        + g.norm_sq();
    Ok(clipped(ratio(num, diff.norm_sq()), BetaBounds::unit()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::new(xs.to_vec()).unwrap()
    }

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DenseVector {
        v(&(0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
    }

    #[test]
    fn deterministic_hand_example() {
        let (g, d) = (v(&[1.0]), v(&[0.0]));
        let inputs = BetaInputs::plain(&g, &d, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(beta_deterministic(&inputs).unwrap(), 1.0);
        assert!((qp_oracle(&inputs, DEFAULT_GRID_POINTS).unwrap() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn degenerate_denominator_gives_zero() {
        let g = v(&[0.3, -2.0]);
        let inputs = BetaInputs::plain(&g, &g, 0.1, 0.1, 5.0, 1.0);
        assert_eq!(beta_deterministic(&inputs).unwrap(), 0.0);
        assert_eq!(beta_stochastic(&g, &g, 0.1, BetaBounds::unit()).unwrap(), 0.0);
        assert_eq!(beta_theory_variant(&g, &g, BetaBounds::unit()).unwrap(), 0.0);
        let p = DiagPreconditioner::new(vec![2.0, 3.0]).unwrap();
        let b = beta_stochastic_adamw(&g, &g, &g, &p, 0.1, 0.1, 1e-4, 0.1, BetaBounds::unit()).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn deterministic_rejects_preconditioner_and_mismatch() {
        let (g, d) = (v(&[1.0]), v(&[0.0, 1.0]));
        assert!(beta_deterministic(&BetaInputs::plain(&g, &d, 1.0, 0.0, 0.0, 0.0)).is_err());
        let d = v(&[0.5]);
        let p = DiagPreconditioner::identity(1);
        let mut inputs = BetaInputs::plain(&g, &d, 1.0, 0.0, 0.0, 0.0);
        inputs.precond = Some(&p);
        assert!(beta_deterministic(&inputs).is_err());
        inputs.precond = None;
        inputs.eta = 0.0;
        assert!(beta_deterministic(&inputs).is_err());
    }

    #[test]
    fn stochastic_examples() {
        let (g, d) = (v(&[1.0, 0.0]), v(&[0.0, 1.0]));
        assert_eq!(beta_stochastic(&g, &d, 0.0, BetaBounds::new(0.9).unwrap()).unwrap(), 0.5);
        let direct = (dot_slices(g.as_slice(), d.as_slice())
            - dot_slices(d.sub(&g).unwrap().as_slice(), g.as_slice()))
            / d.sub(&g).unwrap().norm_sq();
        assert_eq!(direct, 0.5);
    }

    #[test]
    fn theory_variant_examples() {
        let b9 = BetaBounds::new(0.9).unwrap();
        assert_eq!(beta_theory_variant(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), b9).unwrap(), 0.5);
        assert_eq!(beta_theory_variant(&v(&[1.0]), &v(&[1.1]), b9).unwrap(), 0.9);
        let r = theory_ratio(&v(&[1.0]), &v(&[1.1])).unwrap().unwrap();
        assert!((r - 100.0).abs() < 1e-9);
        assert_eq!(beta_theory_variant(&v(&[0.0, 0.0]), &v(&[1.0, 2.0]), b9).unwrap(), 0.0);
    }

    #[test]
    fn velocity_can_exceed_twice_gradient_when_memory_is_aligned() {
        // The cross term 2β⟨g, d − g⟩ is positive here, so ‖d₊‖² ≤ 2‖g‖²
        // does not hold for this single step.
        let (g, d) = (v(&[1.0]), v(&[2.0]));
        let b = beta_theory_variant(&g, &d, BetaBounds::new(0.9).unwrap()).unwrap();
        assert_eq!(b, 0.9);
        let next = b * d[0] + (1.0 - b) * g[0];
        assert!((next * next - 3.61).abs() < 1e-12);
        assert!(next * next > 2.0 * g.norm_sq());
    }

    #[test]
    fn oracle_constant_objective_ties_to_zero() {
        let g = v(&[0.7, -1.2, 3.0]);
        let inputs = BetaInputs::plain(&g, &g, 0.5, 0.1, 2.0, 2.0);
        assert_eq!(qp_oracle(&inputs, DEFAULT_GRID_POINTS).unwrap(), 0.0);
        assert!(qp_oracle(&inputs, 1000).is_err());
    }

    #[test]
    fn oracle_beats_every_grid_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (g, d) = (gaussian(&mut rng, 5, 1.0), gaussian(&mut rng, 5, 1.0));
            let inputs = BetaInputs::plain(&g, &d, 0.1, 0.1, rng.random_range(-1.0..1.0), 0.0);
            let b = qp_oracle(&inputs, 1001).unwrap();
            let best = dual_objective(&inputs, b);
            for k in 0..1001 {
                assert!(best >= dual_objective(&inputs, k as f64 / 1000.0) - 1e-12);
            }
        }
    }

    #[test]
    fn closed_forms_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..120 {
            let n = [1, 2, 10][case % 3];
            let (g, d, x) = (gaussian(&mut rng, n, 1.0), gaussian(&mut rng, n, 1.0), gaussian(&mut rng, n, 1.0));
            let eta = [1e-3, 1e-1, 1.0][(case / 3) % 3];
            let lambda = [0.0, 0.1, 1.0][(case / 9) % 3];
            let gap = eta * d.sub(&g).unwrap().norm_sq() * rng.random_range(-0.5..1.5);
            let inputs = BetaInputs::plain(&g, &d, eta, lambda, gap, 0.0);
            let closed = beta_deterministic(&inputs).unwrap();
            let oracle = qp_oracle(&inputs, DEFAULT_GRID_POINTS).unwrap();
            assert!((closed - oracle).abs() <= 1e-6, "case {case}: {closed} vs {oracle}");

            let p = DiagPreconditioner::new((0..n).map(|_| rng.random_range(0.1..10.0)).collect()).unwrap();
            let pre = BetaInputs { mu: 1e-4, x: Some(&x), precond: Some(&p), ..inputs };
            let closed = beta_preconditioned(&pre, BetaBounds::unit()).unwrap();
            let oracle = qp_oracle(&pre, DEFAULT_GRID_POINTS).unwrap();
            assert!((closed - oracle).abs() <= 1e-6, "case {case}: {closed} vs {oracle}");
        }
    }

    #[test]
    fn identity_preconditioner_reduces_to_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (g, d) = (gaussian(&mut rng, 7, 1.0), gaussian(&mut rng, 7, 1.0));
            let id = DiagPreconditioner::identity(7);
            let lambda = rng.random_range(0.0..1.0);
            let plain = BetaInputs::plain(&g, &d, 0.1, lambda, rng.random_range(-1.0..1.0), 0.0);
            let pre = BetaInputs { precond: Some(&id), ..plain };
            let a = deterministic_ratio(&plain).unwrap().unwrap();
            let b = preconditioned_ratio(&pre).unwrap().unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn scalar_preconditioner_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (g, d) = (gaussian(&mut rng, 6, 1.0), gaussian(&mut rng, 6, 1.0));
        let base = BetaInputs::plain(&g, &d, 0.1, 0.0, 0.3, 0.0);
        let reference = {
            let p = DiagPreconditioner::identity(6);
            preconditioned_ratio(&BetaInputs { precond: Some(&p), ..base }).unwrap().unwrap()
        };
        // With λ = 0 the gap term does not scale with c, so use a zero gap.
        let zero_gap = BetaInputs { f_hat: 0.0, ..base };
        let reference_zero = preconditioned_ratio(&zero_gap).unwrap().unwrap();
        for c in [0.01, 0.5, 3.0, 250.0] {
            let p = DiagPreconditioner::new(vec![c; 6]).unwrap();
            let r = preconditioned_ratio(&BetaInputs { precond: Some(&p), ..zero_gap }).unwrap().unwrap();
            assert!((r - reference_zero).abs() <= 1e-12 * reference_zero.abs().max(1.0));
        }
        assert!(reference.is_finite());
    }

    #[test]
    fn stochastic_adamw_reduces_to_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let (g, d, x) = (gaussian(&mut rng, 9, 1.0), gaussian(&mut rng, 9, 1.0), gaussian(&mut rng, 9, 1.0));
            let lambda = rng.random_range(0.0..1.0);
            let id = DiagPreconditioner::identity(9);
            let delta = adamw_loss_decrease_estimate(g.as_slice(), d.as_slice(), x.as_slice(), id.diag(), 0.05, 0.0);
            let pre = BetaInputs { precond: Some(&id), ..BetaInputs::plain(&g, &d, 0.05, lambda, delta, 0.0) };
            let a = preconditioned_ratio(&pre).unwrap().unwrap();
            let b = stochastic_ratio(&g, &d, lambda).unwrap().unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            let bounds = BetaBounds::new(0.9).unwrap();
            let clipped_a = beta_stochastic_adamw(&g, &d, &x, &id, 0.05, lambda, 0.0, 0.05, bounds).unwrap();
            let clipped_b = beta_stochastic(&g, &d, lambda, bounds).unwrap();
            assert!((clipped_a - clipped_b).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_step_optimal_examples() {
        let x = v(&[1.0, -2.0]);
        let zero = v(&[0.0, 0.0]);
        assert_eq!(one_step_optimal_beta(&x, &zero, &x, &x, 0.1).unwrap(), 0.0);

        // f = a x²/2, x* = 0: minimize (x − η(βd + (1−β)g))² over β by hand:
        // β = (x − ηg) / (η(d − g)).
        let (a, xs, eta): (f64, f64, f64) = (2.0, 1.0, 0.2);
        let g = a * xs;
        let d: f64 = 8.0;
        let hand = ((xs - eta * g) / (eta * (d - g))).clamp(0.0, 1.0);
        let got = one_step_optimal_beta(&v(&[xs]), &v(&[0.0]), &v(&[d]), &v(&[g]), eta).unwrap();
        assert!((got - hand).abs() < 1e-15);
        assert!(hand > 0.0 && hand < 1.0);
    }

    #[test]
    fn one_step_optimal_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = 4;
            let (x, xs, d, g) =
                (gaussian(&mut rng, n, 1.0), gaussian(&mut rng, n, 1.0), gaussian(&mut rng, n, 1.0), gaussian(&mut rng, n, 1.0));
            let eta = 0.3;
            let dist = |b: f64| -> f64 {
                (0..n).map(|i| (x[i] - eta * (b * d[i] + (1.0 - b) * g[i]) - xs[i]).powi(2)).sum()
            };
            let best = dist(one_step_optimal_beta(&x, &xs, &d, &g, eta).unwrap());
            for k in 0..1001 {
                assert!(best <= dist(k as f64 / 1000.0) + 1e-12);
            }
        }
    }

    fn triple(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(-10.0..10.0_f64, n), prop::collection::vec(-10.0..10.0_f64, n))
    }

    proptest! {
        #[test]
        fn lambda_zero_stochastic_equals_theory_ratio((g, d) in triple(6)) {
            let (g, d) = (v(&g), v(&d));
            if let (Some(a), Some(b)) = (stochastic_ratio(&g, &d, 0.0).unwrap(), theory_ratio(&g, &d).unwrap()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-300 || (a - b).abs() <= 1e-12 * a.abs());
            }
        }

        #[test]
        fn every_beta_within_bounds((g, d) in triple(5), gap in -1e3..1e3_f64, hi in 0.01..1.0_f64,
                                    lambda in 0.0..2.0_f64, p in prop::collection::vec(1e-6..1e6_f64, 5)) {
            let (g, d) = (v(&g), v(&d));
            let bounds = BetaBounds::new(hi).unwrap();
            let inputs = BetaInputs::plain(&g, &d, 0.1, lambda, gap, 0.0);
            let b = beta_deterministic(&inputs).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            let p = DiagPreconditioner::new(p).unwrap();
            let b = beta_preconditioned(&BetaInputs { precond: Some(&p), mu: 0.1, x: Some(&g), ..inputs }, bounds).unwrap();
            prop_assert!(bounds.contains(b));
            prop_assert!(bounds.contains(beta_stochastic(&g, &d, lambda, bounds).unwrap()));
            prop_assert!(bounds.contains(beta_theory_variant(&g, &d, bounds).unwrap()));
            prop_assert!(bounds.contains(beta_stochastic_adamw(&g, &d, &g, &p, 0.1, lambda, 0.1, 0.1, bounds).unwrap()));
        }

        #[test]
        fn deterministic_monotone_in_fhat((g, d) in triple(4), f1 in -5.0..5.0_f64, df in 0.0..5.0_f64) {
            let (g, d) = (v(&g), v(&d));
            let lo = beta_deterministic(&BetaInputs::plain(&g, &d, 0.1, 0.1, f1, 0.0)).unwrap();
            let hi = beta_deterministic(&BetaInputs::plain(&g, &d, 0.1, 0.1, f1 + df, 0.0)).unwrap();
            prop_assert!(hi >= lo);
        }

        // β‖d − g‖² ≤ ‖g‖² gives ‖g + β(d − g)‖ ≤ (1 + √β)‖g‖.
        #[test]
        fn theory_variant_velocity_bound((g, d) in triple(6), hi in 0.01..1.0_f64) {
            let (g, d) = (v(&g), v(&d));
            let b = beta_theory_variant(&g, &d, BetaBounds::new(hi).unwrap()).unwrap();
            let next: f64 = g.iter().zip(d.iter()).map(|(gi, di)| (b * di + (1.0 - b) * gi).powi(2)).sum();
            let bound = (1.0 + b.sqrt()).powi(2) * g.norm_sq();
            prop_assert!(next <= bound + 1e-12 * (1.0 + bound));
        }
    }
}
