//! Finite constrained MDPs, policies, non-robust evaluation and visitation.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::math;

const ROW_TOL: f64 = 1e-12;

/// Largest `|S|·|A|` for which visitation is computed by a dense solve.
pub const DENSE_VISITATION_LIMIT: usize = 4096;

/// Transition kernel `P[s][a][s']`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    n_states: usize,
    n_actions: usize,
    p: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel from flat row-major probabilities, checking that every
    /// row `P[s][a][·]` is a distribution.
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Empty("kernel dimensions"));
        }
        if p.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "kernel has {} entries, expected {}",
                p.len(),
                n_states * n_actions * n_states
            )));
        }
        let k = Self { n_states, n_actions, p };
        k.validate()?;
        Ok(k)
    }

    /// Builds a kernel from `[s][a][s']` nested rows.
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_state) in rows.iter().enumerate() {
            if per_state.len() != n_actions {
                return Err(Error::Dimension(format!("kernel[{s}] has {} actions", per_state.len())));
            }
            for (a, row) in per_state.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::Dimension(format!("kernel[{s}][{a}] has {} entries", row.len())));
                }
                p.extend_from_slice(row);
            }
        }
        Self::new(n_states, n_actions, p)
    }

    pub(crate) fn from_raw(n_states: usize, n_actions: usize, p: Vec<f64>) -> Self {
        debug_assert_eq!(p.len(), n_states * n_actions * n_states);
        Self { n_states, n_actions, p }
    }

    pub fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                if let Some(next) = row.iter().position(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::KernelEntry { state: s, action: a, next });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(Error::KernelRow { state: s, action: a, sum });
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
            .collect()
    }

    /// State-to-state matrix `P_π[s][s'] = Σ_a π(a|s) P[s][a][s']`.
    pub fn under_policy(&self, policy: &ActionProbs) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            let dst = &mut out[s * n..(s + 1) * n];
            for (a, &pa) in policy.row(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (d, &p) in dst.iter_mut().zip(self.row(s, a)) {
                    *d += pa * p;
                }
            }
        }
        out
    }

    fn check_dims(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Dimension(format!(
                "kernel is {}x{}, model is {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }
}

/// Which per-step signal to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signal {
    Reward,
    /// Utility `c_i` of the i-th constraint.
    Utility(usize),
}

/// A finite constrained MDP with a centroid (nominal) kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCMDP {
    n_states: usize,
    n_actions: usize,
    kernel: Kernel,
    reward: Vec<f64>,
    utilities: Vec<Vec<f64>>,
    gamma: f64,
    rho: Vec<f64>,
    thresholds: Vec<f64>,
}

impl TabularCMDP {
    /// Validates and assembles a CMDP. `reward` and each utility are flat
    /// `[s][a]` arrays with entries in `[0, 1]`.
    pub fn new(
        kernel: Kernel,
        reward: Vec<f64>,
        utilities: Vec<Vec<f64>>,
        gamma: f64,
        rho: Vec<f64>,
        thresholds: Vec<f64>,
    ) -> Result<Self> {
        let (n_states, n_actions) = (kernel.n_states, kernel.n_actions);
        let sa = n_states * n_actions;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Discount(gamma));
        }
        if utilities.is_empty() {
            return Err(Error::Empty("utilities"));
        }
        if thresholds.len() != utilities.len() {
            return Err(Error::Dimension(format!(
                "{} utilities but {} thresholds",
                utilities.len(),
                thresholds.len()
            )));
        }
        check_signal("reward", &reward, sa, n_actions)?;
        for (i, c) in utilities.iter().enumerate() {
            check_signal(&format!("utility {i}"), c, sa, n_actions)?;
        }
        check_distribution(&rho, n_states).map_err(Error::InitialDistribution)?;
        if let Some(b) = thresholds.iter().find(|b| !b.is_finite()) {
            return Err(Error::Parameter(format!("threshold {b} is not finite")));
        }
        Ok(Self { n_states, n_actions, kernel, reward, utilities, gamma, rho, thresholds })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn utilities(&self) -> &[Vec<f64>] {
        &self.utilities
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Threshold of the single constraint the optimizers handle.
    pub fn threshold(&self) -> f64 {
        self.thresholds[0]
    }

    pub fn signal(&self, signal: Signal) -> Result<&[f64]> {
        match signal {
            Signal::Reward => Ok(&self.reward),
            Signal::Utility(i) => self
                .utilities
                .get(i)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::Parameter(format!("no utility with index {i}"))),
        }
    }

    /// Same model with the given thresholds.
    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() != self.utilities.len() {
            return Err(Error::Dimension("threshold count".to_string()));
        }
        self.thresholds = thresholds;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Discount(gamma));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// Upper bound `1/(1−γ)` on any value with signals in `[0, 1]`.
    pub fn value_range(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }
}

fn check_signal(what: &str, v: &[f64], len: usize, n_actions: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{what} has {} entries, expected {len}", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::SignalRange {
            what: what.to_string(),
            state: i / n_actions,
            action: i % n_actions,
            value: v[i],
        });
    }
    Ok(())
}

fn check_distribution(v: &[f64], n: usize) -> core::result::Result<(), alloc::string::String> {
    if v.len() != n {
        return Err(format!("length {} instead of {n}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("negative or non-finite entry".to_string());
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Tabular softmax policy with logits `θ[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    theta: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, theta: vec![0.0; n_states * n_actions] }
    }

    pub fn from_logits(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                n_states * n_actions
            )));
        }
        Ok(Self { n_states, n_actions, theta })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    /// Action probabilities `π(a|s)`.
    pub fn probs(&self) -> ActionProbs {
        policy_probs(self)
    }
}

/// Softmax over each logit row, shifted by the row maximum.
pub fn policy_probs(policy: &SoftmaxPolicy) -> ActionProbs {
    let na = policy.n_actions;
    let mut p = vec![0.0; policy.theta.len()];
    for (logits, out) in policy.theta.chunks_exact(na).zip(p.chunks_exact_mut(na)) {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &l) in out.iter_mut().zip(logits) {
            *o = math::exp(l - max);
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
    ActionProbs { n_states: policy.n_states, n_actions: na, p }
}

/// A stochastic policy given directly by its action probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProbs {
    n_states: usize,
    n_actions: usize,
    p: Vec<f64>,
}

impl ActionProbs {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, p: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n_states * n_actions {
            return Err(Error::Dimension("policy table size".to_string()));
        }
        for (s, row) in p.chunks_exact(n_actions).enumerate() {
            check_distribution(row, n_actions)
                .map_err(|e| Error::Parameter(format!("policy row {s}: {e}")))?;
        }
        Ok(Self { n_states, n_actions, p })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.p[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    /// `x_π(s) = Σ_a π(a|s) x(s,a)` for a flat `[s][a]` table.
    pub fn average(&self, table: &[f64]) -> Vec<f64> {
        table
            .chunks_exact(self.n_actions)
            .zip(self.p.chunks_exact(self.n_actions))
            .map(|(x, p)| math::dot(x, p))
            .collect()
    }

    pub(crate) fn check_dims(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, model is {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }
}

/// Stopping rule for fixed-point iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once `‖V_{k+1} − V_k‖_∞` falls to this level.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 10_000 }
    }
}

/// Result of a fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub values: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
}

/// Non-robust value `V^π` of `signal` under `kernel`.
pub fn evaluate(
    mdp: &TabularCMDP,
    kernel: &Kernel,
    policy: &ActionProbs,
    signal: Signal,
) -> Result<Vec<f64>> {
    evaluate_with(mdp, kernel, policy, signal, SolverOptions::default()).map(|fp| fp.values)
}

pub fn evaluate_with(
    mdp: &TabularCMDP,
    kernel: &Kernel,
    policy: &ActionProbs,
    signal: Signal,
    opts: SolverOptions,
) -> Result<FixedPoint> {
    kernel.check_dims(mdp.n_states, mdp.n_actions)?;
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    let r_pi = policy.average(mdp.signal(signal)?);
    let p_pi = kernel.under_policy(policy);
    let n = mdp.n_states;
    let gamma = mdp.gamma;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps && residual > opts.tol {
        for s in 0..n {
            next[s] = r_pi[s] + gamma * math::dot(&p_pi[s * n..(s + 1) * n], &v);
        }
        residual = math::sup_norm_diff(&next, &v);
        core::mem::swap(&mut v, &mut next);
        sweeps += 1;
    }
    Ok(FixedPoint { values: v, residual, sweeps })
}

/// Discounted state-action occupancy `d(s,a) = (1−γ) Σ_t γ^t Pr(s_t = s, a_t = a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visitation {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: Vec<f64>,
}

impl Visitation {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.n_actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks_exact(self.n_actions).map(|r| r.iter().sum()).collect()
    }

    /// Largest violation of the flow equations under `kernel` and discount `gamma`.
    pub fn flow_residual(&self, kernel: &Kernel, gamma: f64, start: &[f64]) -> f64 {
        let n = self.n_states;
        let mut inflow: Vec<f64> = start.iter().map(|x| (1.0 - gamma) * x).collect();
        for sp in 0..n {
            for ap in 0..self.n_actions {
                let mass = self.get(sp, ap);
                if mass == 0.0 {
                    continue;
                }
                for (i, p) in inflow.iter_mut().zip(kernel.row(sp, ap)) {
                    *i += gamma * p * mass;
                }
            }
        }
        math::sup_norm_diff(&inflow, &self.state_marginal())
    }
}

/// Visitation of `policy` under `kernel` from `start`, with the model's discount.
pub fn visitation(
    mdp: &TabularCMDP,
    kernel: &Kernel,
    policy: &ActionProbs,
    start: &[f64],
) -> Result<Visitation> {
    kernel.check_dims(mdp.n_states, mdp.n_actions)?;
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    check_distribution(start, mdp.n_states).map_err(Error::InitialDistribution)?;
    let x = state_occupancy(kernel, policy, mdp.gamma, start)?;
    let mut d = vec![0.0; mdp.n_states * mdp.n_actions];
    for s in 0..mdp.n_states {
        for (a, &pa) in policy.row(s).iter().enumerate() {
            d[s * mdp.n_actions + a] = x[s] * pa;
        }
    }
    Ok(Visitation { n_states: mdp.n_states, n_actions: mdp.n_actions, d })
}

/// Discounted state occupancy `x = (1−β) (I − β P_πᵀ)⁻¹ start` for an
/// arbitrary discount `β ∈ [0,1)` and arbitrary (possibly unnormalised)
/// nonnegative start weights.
pub fn state_occupancy(
    kernel: &Kernel,
    policy: &ActionProbs,
    discount: f64,
    start: &[f64],
) -> Result<Vec<f64>> {
    let n = kernel.n_states;
    if start.len() != n {
        return Err(Error::Dimension("start weights".to_string()));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Discount(discount));
    }
    let p_pi = kernel.under_policy(policy);
    let rhs: Vec<f64> = start.iter().map(|x| (1.0 - discount) * x).collect();
    if n * kernel.n_actions <= DENSE_VISITATION_LIMIT {
        // (I − β P_πᵀ) x = (1−β) start
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = -discount * p_pi[j * n + i];
            }
            a[i * n + i] += 1.0;
        }
        solve_dense(a, rhs)
    } else {
        // truncated series; stop once β^T/(1−β) ≤ 1e-10
        let mut term = rhs.clone();
        let mut x = rhs;
        let mut tail = 1.0 / (1.0 - discount);
        let mut next = vec![0.0; n];
        while tail > 1e-10 {
            next.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..n {
                let m = term[s];
                if m == 0.0 {
                    continue;
                }
                for (nv, p) in next.iter_mut().zip(&p_pi[s * n..(s + 1) * n]) {
                    *nv += discount * p * m;
                }
            }
            for (xi, ni) in x.iter_mut().zip(&next) {
                *xi += ni;
            }
            core::mem::swap(&mut term, &mut next);
            tail *= discount;
        }
        Ok(x)
    }
}
