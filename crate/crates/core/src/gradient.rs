//! Policy gradient of the smoothed robust value for tabular softmax policies.
//!
//! Writing `g(s) = Σ_a ∇π(a|s) Q_σ(s,a)`, the smoothed value satisfies
//! `∇V_σ = g + γ(1−δ) P_π ∇V_σ + γδ 1 wᵀ∇V_σ` with `w = softmax(σ V_σ)`.
//! Solving the linear recursion gives
//!
//! ```text
//! B(s, θ)  = 1/(1−γ+γδ) · Σ_{s'} d_s(s') Σ_a ∇π(a|s') Q_σ(s', a)
//! ∇V_σ(s)  = B(s, θ) + γδ/(1−γ) · Σ_{s'} w(s') B(s', θ)
//! ```
//!
//! where `d_s` is the discounted visitation of `π` under the centroid kernel
//! from `s`, taken with the effective discount `γ(1−δ)` of the centroid part
//! of the backup.
//!
//! For softmax logits `∂π(a|s)/∂θ[s][b] = π(a|s)(1{a=b} − π(b|s))`, so
//! `Σ_a ∇π(a|s') Q(s',a)` is the advantage row `π(b|s')(Q(s',b) − V(s'))`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{state_occupancy, ActionProbs, Signal, SoftmaxPolicy, SolverOptions, TabularCMDP};
use crate::robust::{lse_weights, smoothed_robust_value, smoothed_robust_value_with, ContaminationSet, RobustValues, SmoothingParam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientResult {
    /// `∇_θ V_σ(ρ)`, flat `[s][a]`.
    pub grad_theta: Vec<f64>,
    /// `V_σ(ρ)`.
    pub value_rho: f64,
    /// `B(s, θ)` for every start state, flat `[s][s'][a]`.
    pub per_state_b: Option<Vec<f64>>,
}

/// `π(b|s) (Q(s,b) − Σ_a π(a|s) Q(s,a))` for every `(s, b)`.
pub fn advantage_rows(probs: &ActionProbs, q: &[f64]) -> Vec<f64> {
    let na = probs.n_actions();
    let mut out = vec![0.0; q.len()];
    for (s, (qs, o)) in q.chunks_exact(na).zip(out.chunks_exact_mut(na)).enumerate() {
        let pi = probs.row(s);
        let v = math::dot(pi, qs);
        for b in 0..na {
            o[b] = pi[b] * (qs[b] - v);
        }
    }
    out
}

fn centroid_discount(mdp: &TabularCMDP, delta: f64) -> f64 {
    mdp.gamma() * (1.0 - delta)
}

fn weighted_b(
    mdp: &TabularCMDP,
    delta: f64,
    probs: &ActionProbs,
    advantage: &[f64],
    start: &[f64],
) -> Result<Vec<f64>> {
    let discount = centroid_discount(mdp, delta);
    let occ = state_occupancy(mdp.kernel(), probs, discount, start)?;
    let scale = 1.0 / (1.0 - discount);
    let na = mdp.n_actions();
    let mut out = vec![0.0; advantage.len()];
    for (s, (adv, o)) in advantage.chunks_exact(na).zip(out.chunks_exact_mut(na)).enumerate() {
        for b in 0..na {
            o[b] = scale * occ[s] * adv[b];
        }
    }
    Ok(out)
}

/// `B(s, θ)` for start state `s`, given smoothed values computed for the
/// same policy and smoothing parameter.
pub fn b_term(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    policy: &SoftmaxPolicy,
    robust: &RobustValues,
    s: usize,
) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na || robust.q.len() != ns * na || s >= ns {
        return Err(Error::Dimension(alloc::format!(
            "b_term: model {ns}x{na}, policy {}x{}, q {} entries, state {s}",
            policy.n_states(),
            policy.n_actions(),
            robust.q.len()
        )));
    }
    let probs = policy.probs();
    let adv = advantage_rows(&probs, &robust.q);
    let mut start = vec![0.0; ns];
    start[s] = 1.0;
    weighted_b(mdp, set.delta(), &probs, &adv, &start)
}

/// Gradient of `Σ_s ρ(s) V_σ(s)` assembled from a table of action values.
///
/// With exact smoothed `Q_σ` this is the exact gradient. The model-free
/// solver passes TD estimates instead. With `delta = 0` it is the classic
/// policy gradient under the centroid kernel.
pub fn gradient_from_q(
    mdp: &TabularCMDP,
    delta: f64,
    sigma: SmoothingParam,
    probs: &ActionProbs,
    q: &[f64],
) -> Result<Vec<f64>> {
    let v = probs.average(q);
    let w = lse_weights(sigma.get(), &v);
    let gamma = mdp.gamma();
    let coef = gamma * delta / (1.0 - gamma);
    let start: Vec<f64> = mdp.rho().iter().zip(&w).map(|(r, w)| r + coef * w).collect();
    let adv = advantage_rows(probs, q);
    weighted_b(mdp, delta, probs, &adv, &start)
}

/// Classic (non-robust) policy gradient `1/(1−γ) Σ_s d_ρ(s) Σ_a ∇π(a|s) Q(s,a)`
/// under the centroid kernel.
pub fn nominal_gradient_from_q(mdp: &TabularCMDP, probs: &ActionProbs, q: &[f64]) -> Result<Vec<f64>> {
    let adv = advantage_rows(probs, q);
    weighted_b(mdp, 0.0, probs, &adv, mdp.rho())
}

/// Exact `∇_θ V_σ^{π_θ}(ρ)`.
pub fn smoothed_gradient(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    policy: &SoftmaxPolicy,
    sigma: SmoothingParam,
    signal: Signal,
) -> Result<GradientResult> {
    let probs = policy.probs();
    let values = smoothed_robust_value(set, mdp, &probs, sigma, signal)?;
    let grad_theta = gradient_from_q(mdp, set.delta(), sigma, &probs, &values.q)?;
    Ok(GradientResult { grad_theta, value_rho: values.at(mdp.rho()), per_state_b: None })
}

/// [`smoothed_gradient`] plus the stacked `B(s, θ)` diagnostic.
pub fn smoothed_gradient_with_b(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    policy: &SoftmaxPolicy,
    sigma: SmoothingParam,
    signal: Signal,
) -> Result<GradientResult> {
    let mut out = smoothed_gradient(mdp, set, policy, sigma, signal)?;
    let values = smoothed_robust_value(set, mdp, &policy.probs(), sigma, signal)?;
    let mut stacked = Vec::with_capacity(mdp.n_states() * mdp.n_states() * mdp.n_actions());
    for s in 0..mdp.n_states() {
        stacked.extend(b_term(mdp, set, policy, &values, s)?);
    }
    out.per_state_b = Some(stacked);
    Ok(out)
}

/// Coordinate-wise central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fixed-point tolerance used when differencing values.
pub const FINITE_DIFF_SOLVER: SolverOptions = SolverOptions { tol: 1e-13, max_sweeps: 200_000 };

/// Central-difference approximation of `∇_θ V_σ(ρ)`.
pub fn finite_diff_gradient(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    policy: &SoftmaxPolicy,
    sigma: SmoothingParam,
    signal: Signal,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Parameter(alloc::format!("step h must be positive, got {h}")));
    }
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let mut failure = None;
    let grad = central_difference(
        |theta| {
            let pi = SoftmaxPolicy::from_logits(ns, na, theta.to_vec()).expect("same shape");
            match smoothed_robust_value_with(set, mdp, &pi.probs(), sigma, signal, FINITE_DIFF_SOLVER) {
                Ok(v) => v.at(mdp.rho()),
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        policy.theta(),
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Kernel;

    fn bandit(r: [f64; 2]) -> TabularCMDP {
        let k = Kernel::new(1, 2, vec![1.0, 1.0]).unwrap();
        TabularCMDP::new(k, r.to_vec(), vec![vec![0.0; 2]], 0.9, vec![1.0], vec![0.0]).unwrap()
    }

    #[test]
    fn constant_q_rows_give_zero_b() {
        let m = crate::envs::garnet(4, 3, 2).unwrap();
        let set = ContaminationSet::new(0.3).unwrap();
        let pi = SoftmaxPolicy::from_logits(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let q: Vec<f64> = (0..4).flat_map(|s| [s as f64; 3]).collect();
        let rv = RobustValues { v: vec![0.0; 4], q, residual: 0.0, smoothed: true, sigma: Some(-5.0) };
        for s in 0..4 {
            assert!(b_term(&m, &set, &pi, &rv, s).unwrap().iter().all(|x| x.abs() < 1e-15));
        }
    }

    #[test]
    fn single_state_two_actions_by_hand() {
        // One state, V = Σ π_a r_a / (1−γ) for any δ, since LSE of a single
        // value is the value itself. With π = (p, 1−p), p = 1/(1+e^{θ1−θ0}):
        //   ∂V/∂θ0 = p(1−p)(r0 − r1)/(1−γ),  ∂V/∂θ1 = −∂V/∂θ0.
        let m = bandit([0.8, 0.2]);
        let set = ContaminationSet::new(0.4).unwrap();
        let pi = SoftmaxPolicy::from_logits(1, 2, vec![0.3, -0.2]).unwrap();
        let g = smoothed_gradient(&m, &set, &pi, SmoothingParam::new(-7.0).unwrap(), Signal::Reward).unwrap();
        let p = 1.0 / (1.0 + math::exp(-0.5));
        let want = p * (1.0 - p) * 0.6 / 0.1;
        assert!((g.grad_theta[0] - want).abs() < 1e-8, "{:?}", g.grad_theta);
        assert!((g.grad_theta[1] + want).abs() < 1e-8);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let mut m = crate::envs::garnet(5, 3, 9).unwrap();
        let k = m.kernel().clone();
        m = TabularCMDP::new(k, vec![1.0; 15], vec![vec![0.5; 15]], 0.9, m.rho().to_vec(), vec![0.0]).unwrap();
        let set = ContaminationSet::new(0.2).unwrap();
        let pi = SoftmaxPolicy::from_logits(5, 3, (0..15).map(|i| (i % 4) as f64).collect()).unwrap();
        let g = smoothed_gradient(&m, &set, &pi, SmoothingParam::new(-10.0).unwrap(), Signal::Reward).unwrap();
        assert!(g.grad_theta.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn central_difference_of_quadratic() {
        // f(x) = 3x0² − x0 x1 + 2x1, ∇f = (6x0 − x1, −x0 + 2)
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - x[0] * x[1] + 2.0 * x[1];
        let g = central_difference(f, &[0.5, -1.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9);
        assert!((g[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn richardson_refinement() {
        // central differences of sin have error ≈ h² cos(x)/6
        let f = |x: &[f64]| libm::sin(x[0]);
        let exact = libm::cos(0.7);
        let e4 = (central_difference(f, &[0.7], 1e-2)[0] - exact).abs();
        let e5 = (central_difference(f, &[0.7], 1e-3)[0] - exact).abs();
        let ratio = e4 / e5;
        assert!((80.0..120.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let m = bandit([0.1, 0.2]);
        let set = ContaminationSet::new(0.1).unwrap();
        let pi = SoftmaxPolicy::zeros(1, 2);
        assert!(finite_diff_gradient(&m, &set, &pi, SmoothingParam::new(-1.0).unwrap(), Signal::Reward, 0.0).is_err());
    }

    #[test]
    fn mismatched_b_term_dims() {
        let m = bandit([0.1, 0.2]);
        let set = ContaminationSet::new(0.1).unwrap();
        let pi = SoftmaxPolicy::zeros(2, 2);
        let rv = RobustValues { v: vec![0.0], q: vec![0.0; 2], residual: 0.0, smoothed: true, sigma: None };
        assert!(matches!(b_term(&m, &set, &pi, &rv, 0), Err(Error::Dimension(_))));
    }
}
