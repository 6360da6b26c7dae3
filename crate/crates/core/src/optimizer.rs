//! Exact-gradient robust primal-dual (RPD) method.
//!
//! Each step first takes a projected, regularised descent step on the dual
//! variable and then an ascent step on the policy logits using the new dual
//! value:
//!
//! ```text
//! λ_{t+1} = Π_[0,Λ*]( λ_t − (V_σ,c(ρ) − b)/β_t − (b_t/β_t) λ_t )
//! θ_{t+1} = θ_t + (∇_θ V_σ,r(ρ) + λ_{t+1} ∇_θ V_σ,c(ρ)) / α_t
//! ```
//!
//! The logit space is unconstrained, so the projection on `θ` is the
//! identity. Convergence is measured by the gradient mapping `G_t`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::gradient_from_q;
use crate::math;
use crate::mdp::{Signal, SoftmaxPolicy, TabularCMDP};
use crate::robust::{
    robust_value, smoothed_robust_value, ContaminationSet, SmoothingParam,
};

/// Lipschitz constant `k` of `θ ↦ π_θ(a|s)` for tabular softmax.
pub const SOFTMAX_LIPSCHITZ: f64 = 0.5;
/// Smoothness constant `l` of `θ ↦ π_θ(a|s)` for tabular softmax.
pub const SOFTMAX_SMOOTHNESS: f64 = 1.0;

/// Closed-form constants that drive the theoretical step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub l_v: f64,
    /// Upper bound on smoothed robust values.
    pub c_sigma: f64,
    /// Lipschitz constant of `∇_λ V^L_σ` in `θ`.
    pub c_sigma_v: f64,
    pub k_b: f64,
    /// Smoothness of the smoothed robust value in `θ`.
    pub l_sigma: f64,
}

/// Evaluates the constants for a problem of the given size. `k`, `l` are the
/// policy class's Lipschitz and smoothness constants.
pub fn constants(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    delta: f64,
    sigma: SmoothingParam,
    k: f64,
    l: f64,
) -> Result<ConstantsTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Discount(gamma));
    }
    let s = n_states as f64;
    let a = n_actions as f64;
    let sig = sigma.get().abs();
    let one_m = 1.0 - gamma;
    let mix = 1.0 - gamma + gamma * delta;
    let l_v = k * a / (one_m * one_m);
    let c_sigma = (1.0 + 2.0 * gamma * delta * math::ln(s) / sig) / one_m;
    let c_sigma_v = a * k * c_sigma / one_m;
    let k_b = (a * c_sigma * l + a * k * c_sigma_v) / mix
        + 2.0 * a * a * gamma * (1.0 - delta) * k * k * c_sigma / (mix * mix);
    let l_sigma = k_b
        + gamma * delta / one_m * (math::sqrt(s) * k_b + 2.0 * sig * s * c_sigma_v * k * a * c_sigma / mix);
    Ok(ConstantsTable { l_v, c_sigma, c_sigma_v, k_b, l_sigma })
}

/// Dual bound `Λ* = max{2 C_σ / ζ′, 2 / (ζ (1−γ))}`.
pub fn lambda_star(zeta: f64, zeta_prime: f64, c_sigma: f64, gamma: f64) -> Result<f64> {
    if !(zeta > 0.0) || !(zeta_prime > 0.0) {
        return Err(Error::Parameter(alloc::format!(
            "Slater constants must be positive, got zeta = {zeta}, zeta' = {zeta_prime}"
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Discount(gamma));
    }
    Ok(f64::max(2.0 * c_sigma / zeta_prime, 2.0 / (zeta * (1.0 - gamma))))
}

/// Empirical Slater constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaterEstimate {
    pub zeta: f64,
    pub zeta_prime: f64,
}

/// Lower floor on the estimated Slater slack.
pub const ZETA_FLOOR: f64 = 0.05;

/// Estimates `ζ` as the best robust slack `V_c(ρ) − b` among random
/// policies (floored at [`ZETA_FLOOR`]) and `ζ′` as `ζ` minus the smoothing
/// gap, floored at `ζ/2`.
pub fn estimate_slater(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    sigma: SmoothingParam,
    seed: u64,
) -> Result<SlaterEstimate> {
    let values = crate::envs::random_policy_utilities(mdp, set, seed)?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zeta = (best - mdp.threshold()).max(ZETA_FLOOR);
    let gap = crate::robust::smoothing_gap_bound(set, mdp, sigma);
    Ok(SlaterEstimate { zeta, zeta_prime: (zeta - gap).max(zeta / 2.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `b_t = 19/(20 ξ t^{1/4})`, `β_t = 1/ξ`,
    /// `α_t = ν + ξ C² + 16 τ C² / (ξ b_{t+1}²) − 2ν` with `C = C_σ^V`.
    Theoretical,
    /// Constant primal and dual step sizes with a decaying dual regulariser
    /// `b_t = reg · t^{−1/4}`.
    Practical { theta_step: f64, lambda_step: f64, reg: f64 },
}

/// Step-size schedule plus the dual box `[0, Λ*]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub xi: f64,
    pub nu: f64,
    pub tau: f64,
    pub c_sigma_v: f64,
    pub lambda_max: f64,
    pub kind: ScheduleKind,
}

/// Default `ν`.
pub const DEFAULT_NU: f64 = 0.1;
/// Default `τ`.
pub const DEFAULT_TAU: f64 = 3.0;
/// `ξ` is set this factor above its lower bound.
pub const XI_MARGIN: f64 = 1.05;

impl Schedule {
    /// Theoretical schedule with the smallest admissible `ξ` (times [`XI_MARGIN`]).
    pub fn theoretical(consts: &ConstantsTable, lambda_max: f64, nu: f64, tau: f64) -> Result<Self> {
        if !(nu > 0.0) || !(tau > 2.0) {
            return Err(Error::Parameter(alloc::format!("need nu > 0 and tau > 2, got {nu}, {tau}")));
        }
        let xi = XI_MARGIN * Self::xi_lower_bound(consts, lambda_max, nu);
        Ok(Self { xi, nu, tau, c_sigma_v: consts.c_sigma_v, lambda_max, kind: ScheduleKind::Theoretical })
    }

    pub fn practical(lambda_max: f64, theta_step: f64, lambda_step: f64, reg: f64) -> Result<Self> {
        if !(theta_step > 0.0) || !(lambda_step > 0.0) || !(reg >= 0.0) {
            return Err(Error::Parameter("practical steps must be positive".into()));
        }
        Ok(Self {
            xi: 1.0 / lambda_step,
            nu: 0.0,
            tau: 0.0,
            c_sigma_v: 0.0,
            lambda_max,
            kind: ScheduleKind::Practical { theta_step, lambda_step, reg },
        })
    }

    /// `(2ν + (1+Λ*) L_σ) / (C_σ^V)²`.
    pub fn xi_lower_bound(consts: &ConstantsTable, lambda_max: f64, nu: f64) -> f64 {
        (2.0 * nu + (1.0 + lambda_max) * consts.l_sigma) / (consts.c_sigma_v * consts.c_sigma_v)
    }

    /// Dual regulariser `b_t` (`b_0 = b_1`).
    pub fn b(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        match self.kind {
            ScheduleKind::Theoretical => 19.0 / (20.0 * self.xi * math::powf(t, 0.25)),
            ScheduleKind::Practical { reg, .. } => reg / math::powf(t, 0.25),
        }
    }

    pub fn beta(&self, _t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Theoretical => 1.0 / self.xi,
            ScheduleKind::Practical { lambda_step, .. } => 1.0 / lambda_step,
        }
    }

    pub fn mu(&self, t: usize) -> f64 {
        let c2 = self.c_sigma_v * self.c_sigma_v;
        let b_next = self.b(t + 1);
        self.xi * c2 + 16.0 * self.tau * c2 / (self.xi * b_next * b_next) - 2.0 * self.nu
    }

    pub fn alpha(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Theoretical => self.nu + self.mu(t),
            ScheduleKind::Practical { theta_step, .. } => 1.0 / theta_step,
        }
    }
}

/// Primal-dual iterate `(θ_t, λ_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub theta: SoftmaxPolicy,
    pub lam: f64,
    pub t: usize,
}

impl DualIterate {
    pub fn new(theta: SoftmaxPolicy, lam: f64) -> Self {
        Self { theta, lam, t: 0 }
    }
}

/// Gradient mapping `G_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradMapping {
    pub g_lambda: f64,
    pub g_theta: Vec<f64>,
    pub norm: f64,
}

impl GradMapping {
    /// Builds `G_t` from the Lagrangian partials at `(θ_t, λ_t)`.
    pub fn from_partials(lam: f64, d_lambda: f64, d_theta: &[f64], alpha: f64, beta: f64, lambda_max: f64) -> Self {
        let projected = (lam - d_lambda / beta).clamp(0.0, lambda_max);
        let g_lambda = beta * (lam - projected);
        // α(θ − (θ + ∇/α)) = −∇ with the identity projection
        let _ = alpha;
        let g_theta: Vec<f64> = d_theta.iter().map(|g| -g).collect();
        let norm = math::sqrt(g_lambda * g_lambda + math::dot(&g_theta, &g_theta));
        Self { g_lambda, g_theta, norm }
    }
}

/// One logged step: the iterate `(θ_t, λ_t)` and the quantities evaluated at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    pub lambda: f64,
    pub v_sigma_r_rho: f64,
    pub v_sigma_c_rho: f64,
    pub grad_mapping_norm: f64,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub b_t: f64,
}

/// CSV header of a trace, in column order.
pub const TRACE_COLUMNS: [&str; 8] =
    ["t", "lambda", "V_sigma_r_rho", "V_sigma_c_rho", "grad_mapping_norm", "alpha_t", "beta_t", "b_t"];

/// Values and gradients of both signals at one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub v_r: f64,
    pub v_c: f64,
    pub grad_r: Vec<f64>,
    pub grad_c: Vec<f64>,
}

impl Oracle {
    pub fn exact(
        mdp: &TabularCMDP,
        set: &ContaminationSet,
        sigma: SmoothingParam,
        theta: &SoftmaxPolicy,
    ) -> Result<Self> {
        let probs = theta.probs();
        let vr = smoothed_robust_value(set, mdp, &probs, sigma, Signal::Reward)?;
        let vc = smoothed_robust_value(set, mdp, &probs, sigma, Signal::Utility(0))?;
        Ok(Self {
            v_r: vr.at(mdp.rho()),
            v_c: vc.at(mdp.rho()),
            grad_r: gradient_from_q(mdp, set.delta(), sigma, &probs, &vr.q)?,
            grad_c: gradient_from_q(mdp, set.delta(), sigma, &probs, &vc.q)?,
        })
    }

    /// `∇_θ V^L = ∇V_r + λ ∇V_c`.
    pub fn lagrangian_grad(&self, lam: f64) -> Vec<f64> {
        self.grad_r.iter().zip(&self.grad_c).map(|(r, c)| r + lam * c).collect()
    }
}

/// Applies one primal-dual update from precomputed values and gradients.
pub fn update(iterate: &DualIterate, schedule: &Schedule, oracle: &Oracle, b: f64) -> DualIterate {
    let t = iterate.t;
    let beta = schedule.beta(t);
    let pre = dual_pre_projection(iterate.lam, oracle.v_c - b, beta, schedule.b(t));
    let lam = pre.clamp(0.0, schedule.lambda_max);
    let step = 1.0 / schedule.alpha(t);
    let mut theta = iterate.theta.clone();
    for ((th, gr), gc) in theta.theta_mut().iter_mut().zip(&oracle.grad_r).zip(&oracle.grad_c) {
        *th += step * (gr + lam * gc);
    }
    DualIterate { theta, lam, t: t + 1 }
}

/// `λ − (V_c − b)/β − (b_t/β) λ` before clipping.
pub fn dual_pre_projection(lam: f64, slack: f64, beta: f64, b_t: f64) -> f64 {
    lam - slack / beta - (b_t / beta) * lam
}

fn record(iterate: &DualIterate, schedule: &Schedule, oracle: &Oracle, b: f64) -> RunRecord {
    let t = iterate.t;
    let gm = GradMapping::from_partials(
        iterate.lam,
        oracle.v_c - b,
        &oracle.lagrangian_grad(iterate.lam),
        schedule.alpha(t),
        schedule.beta(t),
        schedule.lambda_max,
    );
    RunRecord {
        t,
        lambda: iterate.lam,
        v_sigma_r_rho: oracle.v_r,
        v_sigma_c_rho: oracle.v_c,
        grad_mapping_norm: gm.norm,
        alpha_t: schedule.alpha(t),
        beta_t: schedule.beta(t),
        b_t: schedule.b(t),
    }
}

/// Smoothed Lagrangian `V_σ,r(ρ) + λ (V_σ,c(ρ) − b)`.
pub fn lagrangian(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    theta: &SoftmaxPolicy,
    lam: f64,
    sigma: SmoothingParam,
) -> Result<f64> {
    if !(lam >= 0.0) {
        return Err(Error::Parameter(alloc::format!("lambda must be nonnegative, got {lam}")));
    }
    let probs = theta.probs();
    let vr = smoothed_robust_value(set, mdp, &probs, sigma, Signal::Reward)?.at(mdp.rho());
    let vc = smoothed_robust_value(set, mdp, &probs, sigma, Signal::Utility(0))?.at(mdp.rho());
    Ok(vr + lam * (vc - mdp.threshold()))
}

/// One exact-gradient RPD step.
pub fn rpd_step(
    iterate: &DualIterate,
    schedule: &Schedule,
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    sigma: SmoothingParam,
) -> Result<DualIterate> {
    check_iterate(iterate, schedule)?;
    let oracle = Oracle::exact(mdp, set, sigma, &iterate.theta)?;
    Ok(update(iterate, schedule, &oracle, mdp.threshold()))
}

fn check_iterate(iterate: &DualIterate, schedule: &Schedule) -> Result<()> {
    if !(0.0..=schedule.lambda_max).contains(&iterate.lam) {
        return Err(Error::Parameter(alloc::format!(
            "lambda {} outside [0, {}]",
            iterate.lam,
            schedule.lambda_max
        )));
    }
    Ok(())
}

/// `G_t` at the given iterate.
pub fn gradient_mapping(
    iterate: &DualIterate,
    schedule: &Schedule,
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    sigma: SmoothingParam,
) -> Result<GradMapping> {
    let oracle = Oracle::exact(mdp, set, sigma, &iterate.theta)?;
    let t = iterate.t;
    Ok(GradMapping::from_partials(
        iterate.lam,
        oracle.v_c - mdp.threshold(),
        &oracle.lagrangian_grad(iterate.lam),
        schedule.alpha(t),
        schedule.beta(t),
        schedule.lambda_max,
    ))
}

/// Output of a primal-dual run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Iterate `W = argmin_{1≤t≤T} ‖G_t‖`.
    pub best: DualIterate,
    /// Records for `t = 0, …, T`.
    pub trace: Vec<RunRecord>,
    /// Iterates `θ_0, …, θ_T` (only when requested).
    pub iterates: Vec<DualIterate>,
}

impl RunOutput {
    pub fn best_record(&self) -> &RunRecord {
        &self.trace[self.best.t]
    }
}

/// Runs `T` exact-gradient RPD steps from `init` and returns the iterate with
/// the smallest gradient mapping among `t = 1, …, T`.
pub fn rpd_run(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    sigma: SmoothingParam,
    schedule: &Schedule,
    steps: usize,
    init: DualIterate,
    keep_iterates: bool,
) -> Result<RunOutput> {
    run_with_oracle(schedule, steps, init, keep_iterates, mdp.threshold(), |theta, _| {
        Oracle::exact(mdp, set, sigma, theta)
    })
}

/// Shared driver: `oracle(θ_t, t)` supplies values and gradients.
pub fn run_with_oracle<F>(
    schedule: &Schedule,
    steps: usize,
    init: DualIterate,
    keep_iterates: bool,
    b: f64,
    mut oracle: F,
) -> Result<RunOutput>
where
    F: FnMut(&SoftmaxPolicy, usize) -> Result<Oracle>,
{
    if steps == 0 {
        return Err(Error::Parameter("need at least one step".into()));
    }
    check_iterate(&init, schedule)?;
    let mut trace = Vec::with_capacity(steps + 1);
    let mut iterates = Vec::new();
    let mut current = init;
    let mut best: Option<(f64, DualIterate)> = None;
    for _ in 0..=steps {
        let o = oracle(&current.theta, current.t)?;
        let rec = record(&current, schedule, &o, b);
        trace.push(rec);
        if current.t >= 1 && best.as_ref().map_or(true, |(n, _)| rec.grad_mapping_norm < *n) {
            best = Some((rec.grad_mapping_norm, current.clone()));
        }
        if keep_iterates {
            iterates.push(current.clone());
        }
        if current.t == steps {
            break;
        }
        current = update(&current, schedule, &o, b);
    }
    let (_, best) = best.expect("steps >= 1");
    Ok(RunOutput { best, trace, iterates })
}

/// Feasibility of the returned iterate at tolerance `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `V_σ,c(ρ) − b` at the iterate.
    pub slack: f64,
    pub epsilon: f64,
    /// `slack ≥ −2ε`.
    pub feasible: bool,
    /// Dual step before projection, `λ_W − ∇_λ V^L_σ / β_W`.
    pub dual_pre_projection: f64,
    /// Whether the pre-projection dual step lies in `[0, Λ*)`.
    pub hypothesis_holds: bool,
    /// Largest constraint value any policy can reach (`1/(1−γ)`).
    pub max_achievable: f64,
}

pub fn check_feasibility(
    best: &DualIterate,
    schedule: &Schedule,
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    sigma: SmoothingParam,
    epsilon: f64,
) -> Result<FeasibilityReport> {
    let probs = best.theta.probs();
    let vc = smoothed_robust_value(set, mdp, &probs, sigma, Signal::Utility(0))?.at(mdp.rho());
    let slack = vc - mdp.threshold();
    let pre = best.lam - slack / schedule.beta(best.t);
    Ok(FeasibilityReport {
        slack,
        epsilon,
        feasible: slack >= -2.0 * epsilon,
        dual_pre_projection: pre,
        hypothesis_holds: (0.0..schedule.lambda_max).contains(&pre),
        max_achievable: mdp.value_range(),
    })
}

/// Exact (unsmoothed) robust values of both signals at `ρ`.
pub fn robust_objectives(mdp: &TabularCMDP, set: &ContaminationSet, theta: &SoftmaxPolicy) -> Result<(f64, f64)> {
    let probs = theta.probs();
    Ok((
        robust_value(set, mdp, &probs, Signal::Reward)?.at(mdp.rho()),
        robust_value(set, mdp, &probs, Signal::Utility(0))?.at(mdp.rho()),
    ))
}
