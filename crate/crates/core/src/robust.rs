//! Robust evaluation under the δ-contamination uncertainty set.
//!
//! For a centroid kernel `p` the set of admissible next-state laws at
//! `(s, a)` is `{(1−δ) p_s^a + δ q : q ∈ Δ_S}`. The inner minimisation of
//! `qᵀV` over the simplex is attained at the vertex on `argmin V`, which
//! gives the closed-form robust backup
//!
//! ```text
//! (T_π V)(s) = Σ_a π(a|s) [ r(s,a) + γ (δ · min V + (1−δ) p_s^a · V) ]
//! ```
//!
//! The smoothed operator replaces `min V` by `LSE(σ, V) = log(Σ e^{σ V_i}) / σ`
//! with `σ < 0`, which is differentiable and satisfies
//! `min V − ln|S|/|σ| ≤ LSE(σ, V) ≤ min V`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{ActionProbs, Kernel, Signal, SolverOptions, TabularCMDP};

/// δ-contamination set around the centroid kernel of a [`TabularCMDP`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSet {
    delta: f64,
}

impl ContaminationSet {
    pub fn new(delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Radius(delta));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Strictly negative LSE temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParam(f64);

impl SmoothingParam {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma < 0.0) || !sigma.is_finite() {
            return Err(Error::Smoothing(sigma));
        }
        Ok(Self(sigma))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Worst-case gap `ln n / |σ|` between `LSE(σ, ·)` and `min` on `n` entries.
    pub fn lse_gap(self, n: usize) -> f64 {
        math::ln(n as f64) / self.0.abs()
    }
}

/// Robust (or smoothed robust) state and action values of a fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustValues {
    pub v: Vec<f64>,
    /// Flat `[s][a]` action values.
    pub q: Vec<f64>,
    pub residual: f64,
    pub smoothed: bool,
    pub sigma: Option<f64>,
}

impl RobustValues {
    /// `Σ_s ρ(s) V(s)`.
    pub fn at(&self, rho: &[f64]) -> f64 {
        math::dot(&self.v, rho)
    }
}

/// `LSE(σ, v) = log(Σ_i e^{σ v_i}) / σ`, shifted by `min v` so that every
/// exponent is `≤ 0`.
pub fn lse(sigma: f64, v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("lse input"));
    }
    let sigma = SmoothingParam::new(sigma)?;
    Ok(lse_unchecked(sigma.get(), v))
}

pub(crate) fn lse_unchecked(sigma: f64, v: &[f64]) -> f64 {
    let (arg, m) = math::min_with_index(v);
    // the minimiser contributes exactly e^0; sum the rest for log1p
    let rest: f64 = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, x)| math::exp(sigma * (x - m)))
        .sum();
    m + math::ln_1p(rest) / sigma
}

/// Gradient of `LSE(σ, v)` with respect to `v`: the softmax weights
/// `e^{σ v_i} / Σ_j e^{σ v_j}`.
pub fn lse_weights(sigma: f64, v: &[f64]) -> Vec<f64> {
    let (_, m) = math::min_with_index(v);
    let mut w: Vec<f64> = v.iter().map(|x| math::exp(sigma * (x - m))).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

#[derive(Clone, Copy)]
enum Adversary {
    Min,
    Lse(f64),
}

impl Adversary {
    fn apply(self, v: &[f64]) -> f64 {
        match self {
            Adversary::Min => math::min_with_index(v).1,
            Adversary::Lse(sigma) => lse_unchecked(sigma, v),
        }
    }
}

fn backup(
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    r: &[f64],
    delta: f64,
    adversary: Adversary,
    v: &[f64],
) -> Vec<f64> {
    let q = action_values(mdp, r, delta, adversary.apply(v), v);
    policy.average(&q)
}

fn action_values(mdp: &TabularCMDP, r: &[f64], delta: f64, worst: f64, v: &[f64]) -> Vec<f64> {
    let (ns, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let kernel = mdp.kernel();
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = r[s * na + a]
                + gamma * (delta * worst + (1.0 - delta) * math::dot(kernel.row(s, a), v));
        }
    }
    q
}

fn check_inputs(mdp: &TabularCMDP, policy: &ActionProbs, v: Option<&[f64]>) -> Result<()> {
    policy.check_dims(mdp.n_states(), mdp.n_actions())?;
    if let Some(v) = v {
        if v.len() != mdp.n_states() {
            return Err(Error::Dimension(alloc::format!(
                "value vector has {} entries, expected {}",
                v.len(),
                mdp.n_states()
            )));
        }
    }
    Ok(())
}

/// One application of the exact robust Bellman operator.
pub fn robust_bellman_apply(
    set: &ContaminationSet,
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    signal: Signal,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(mdp, policy, Some(v))?;
    Ok(backup(mdp, policy, mdp.signal(signal)?, set.delta, Adversary::Min, v))
}

/// One application of the LSE-smoothed robust Bellman operator.
pub fn smoothed_bellman_apply(
    set: &ContaminationSet,
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    sigma: SmoothingParam,
    signal: Signal,
    v: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(mdp, policy, Some(v))?;
    Ok(backup(mdp, policy, mdp.signal(signal)?, set.delta, Adversary::Lse(sigma.get()), v))
}

fn fixed_point(
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    signal: Signal,
    delta: f64,
    adversary: Adversary,
    opts: SolverOptions,
) -> Result<RobustValues> {
    check_inputs(mdp, policy, None)?;
    let r = mdp.signal(signal)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let r_pi = policy.average(r);
    let p_pi = mdp.kernel().under_policy(policy);
    // Picard iteration from zero
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps && residual > opts.tol {
        let worst = adversary.apply(&v);
        for s in 0..n {
            next[s] = r_pi[s]
                + gamma * (delta * worst + (1.0 - delta) * math::dot(&p_pi[s * n..(s + 1) * n], &v));
        }
        residual = math::sup_norm_diff(&next, &v);
        core::mem::swap(&mut v, &mut next);
        sweeps += 1;
    }
    let q = action_values(mdp, r, delta, adversary.apply(&v), &v);
    // report V as the policy average of Q so that v = Σ_a π q holds exactly
    let v = policy.average(&q);
    let (smoothed, sigma) = match adversary {
        Adversary::Min => (false, None),
        Adversary::Lse(s) => (true, Some(s)),
    };
    Ok(RobustValues { v, q, residual, smoothed, sigma })
}

/// Robust value: fixed point of [`robust_bellman_apply`].
pub fn robust_value(
    set: &ContaminationSet,
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    signal: Signal,
) -> Result<RobustValues> {
    robust_value_with(set, mdp, policy, signal, SolverOptions::default())
}

pub fn robust_value_with(
    set: &ContaminationSet,
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    signal: Signal,
    opts: SolverOptions,
) -> Result<RobustValues> {
    fixed_point(mdp, policy, signal, set.delta, Adversary::Min, opts)
}

/// Smoothed robust value: fixed point of [`smoothed_bellman_apply`].
pub fn smoothed_robust_value(
    set: &ContaminationSet,
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    sigma: SmoothingParam,
    signal: Signal,
) -> Result<RobustValues> {
    smoothed_robust_value_with(set, mdp, policy, sigma, signal, SolverOptions::default())
}

pub fn smoothed_robust_value_with(
    set: &ContaminationSet,
    mdp: &TabularCMDP,
    policy: &ActionProbs,
    sigma: SmoothingParam,
    signal: Signal,
    opts: SolverOptions,
) -> Result<RobustValues> {
    fixed_point(mdp, policy, signal, set.delta, Adversary::Lse(sigma.get()), opts)
}

/// Optimal robust values `max_π` of the robust value, by robust value iteration.
/// `q` holds the optimal robust action values.
pub fn robust_control(set: &ContaminationSet, mdp: &TabularCMDP, signal: Signal) -> Result<RobustValues> {
    let r = mdp.signal(signal)?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let opts = SolverOptions::default();
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    let mut q = Vec::new();
    while sweeps < opts.max_sweeps && residual > opts.tol {
        q = action_values(mdp, r, set.delta, math::min_with_index(&v).1, &v);
        let next: Vec<f64> = q
            .chunks_exact(na)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        residual = math::sup_norm_diff(&next, &v);
        v = next;
        sweeps += 1;
    }
    Ok(RobustValues { v, q, residual, smoothed: false, sigma: None })
}

/// Deterministic policy picking `argmax_a q(s,a)` (lowest index on ties).
pub fn greedy_policy(values: &RobustValues, n_actions: usize) -> ActionProbs {
    let n = values.q.len() / n_actions;
    let mut p = vec![0.0; n * n_actions];
    for (s, row) in values.q.chunks_exact(n_actions).enumerate() {
        let mut best = 0;
        for a in 1..n_actions {
            if row[a] > row[best] {
                best = a;
            }
        }
        p[s * n_actions + best] = 1.0;
    }
    ActionProbs::new(n, n_actions, p).expect("one-hot rows")
}

/// Sup-norm bound `γδ ln|S| / (|σ| (1−γ))` between smoothed and exact robust values.
pub fn smoothing_gap_bound(set: &ContaminationSet, mdp: &TabularCMDP, sigma: SmoothingParam) -> f64 {
    mdp.gamma() * set.delta * sigma.lse_gap(mdp.n_states()) / (1.0 - mdp.gamma())
}

/// Kernel in the set that attains the robust backup for `v`:
/// `(1−δ) p_s^a + δ e_{s*}` with `s* = argmin v` (lowest index on ties).
pub fn worst_case_kernel(set: &ContaminationSet, mdp: &TabularCMDP, v: &[f64]) -> Result<Kernel> {
    if v.len() != mdp.n_states() {
        return Err(Error::Dimension("value vector".into()));
    }
    let (target, _) = math::min_with_index(v);
    let delta = set.delta;
    let mut p: Vec<f64> = mdp.kernel().as_slice().iter().map(|x| (1.0 - delta) * x).collect();
    let n = mdp.n_states();
    for row in p.chunks_exact_mut(n) {
        row[target] += delta;
    }
    Ok(Kernel::from_raw(n, mdp.n_actions(), p))
}
