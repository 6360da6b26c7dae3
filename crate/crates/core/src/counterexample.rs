//! A three-state robust MDP whose set of robust visitation distributions is
//! not convex.
//!
//! States `1, 2, 3` (indices 0, 1, 2), actions `a, b` (0, 1). From state 1,
//! `a` moves to 2 with reward 0 and `b` moves to 3 with reward 2; states 2
//! and 3 return to 1 with reward 1 whatever the action. Rewards are stored
//! halved so they lie in `[0, 1]`, and reported values are doubled back.
//!
//! Mixing the visitations of `π₁ = a` and `π₂ = b` with weight `λ` gives the
//! policy `π′(a|1) = λ`. Convexity would require state 1 and state 2 to be
//! tied minimisers of `V^{π′}`; the report checks whether they are.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::mdp::{visitation, ActionProbs, Kernel, Signal, TabularCMDP};
use crate::robust::{robust_value, worst_case_kernel, ContaminationSet};

/// Rewards are divided by this to fit in `[0, 1]`.
pub const REWARD_SCALE: f64 = 2.0;
/// Mixing weight of `π₁`.
pub const DEFAULT_LAMBDA: f64 = 1.0 / 3.0;
/// Verdict threshold on `|V(1) − V(2)|`.
pub const VERDICT_TOL: f64 = 1e-6;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    /// `V^{π′}` in native reward units.
    pub v_prime: [f64; 3],
    /// Visitations of `π₁` and `π₂` under the centroid kernel, `[s][a]`.
    pub d1: Vec<[f64; 2]>,
    pub d2: Vec<[f64; 2]>,
    /// Visitations under each policy's own worst-case kernel.
    pub d1_worst: Vec<[f64; 2]>,
    pub d2_worst: Vec<[f64; 2]>,
    /// Largest deviation of `d1`, `d2` from the closed forms.
    pub closed_form_error: f64,
    /// Minimising states (1-based) of `V^{π₁}`, `V^{π₂}`, `V^{π′}`.
    pub argmin: [usize; 3],
    /// `π′(a|1)`.
    pub pi_prime_a1: f64,
    pub verdict: bool,
}

/// The three-state model with halved rewards.
pub fn build(gamma: f64) -> Result<TabularCMDP> {
    #[rustfmt::skip]
    let kernel = Kernel::new(3, 2, vec![
        0.0, 1.0, 0.0,   0.0, 0.0, 1.0,
        1.0, 0.0, 0.0,   1.0, 0.0, 0.0,
        1.0, 0.0, 0.0,   1.0, 0.0, 0.0,
    ])?;
    let reward: Vec<f64> = [0.0, 2.0, 1.0, 1.0, 1.0, 1.0].iter().map(|r| r / REWARD_SCALE).collect();
    TabularCMDP::new(kernel, reward, vec![vec![0.0; 6]], gamma, vec![1.0, 0.0, 0.0], vec![0.0])
}

/// `π₁` takes `a` in state 1, `π₂` takes `b`; state 2 plays `a`, state 3 plays `b`.
pub fn pure_policy(first_action: usize) -> ActionProbs {
    let mut p = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    if first_action == 1 {
        p[0] = 0.0;
        p[1] = 1.0;
    }
    ActionProbs::new(3, 2, p).expect("valid rows")
}

fn table(d: &[f64]) -> Vec<[f64; 2]> {
    d.chunks_exact(2).map(|r| [r[0], r[1]]).collect()
}

/// Lowest index within `TIE_TOL` of the minimum.
fn argmin(v: &[f64]) -> usize {
    let m = v.iter().copied().fold(f64::INFINITY, f64::min);
    v.iter().position(|&x| x <= m + TIE_TOL).expect("nonempty")
}

/// `π′(a|s) ∝ λ d₁(s,a) + (1−λ) d₂(s,a)`, uniform where both vanish.
pub fn mix_policy(d1: &[f64], d2: &[f64], lambda: f64, n_actions: usize) -> Result<ActionProbs> {
    let mut p = Vec::with_capacity(d1.len());
    for (r1, r2) in d1.chunks_exact(n_actions).zip(d2.chunks_exact(n_actions)) {
        let row: Vec<f64> = r1.iter().zip(r2).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let mass: f64 = row.iter().sum();
        if mass > 0.0 {
            p.extend(row.iter().map(|x| x / mass));
        } else {
            p.extend(core::iter::repeat(1.0 / n_actions as f64).take(n_actions));
        }
    }
    ActionProbs::new(d1.len() / n_actions, n_actions, p)
}

/// Robust values of `probs`: for each candidate minimiser `m`, solve the
/// linear system `V = r_π + γ(1−δ) P_π V + γδ V(m)` and keep the solution
/// whose minimiser is `m`.
pub fn robust_values_by_enumeration(mdp: &TabularCMDP, delta: f64, probs: &ActionProbs) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let p_pi = mdp.kernel().under_policy(probs);
    let r_pi = probs.average(mdp.reward());
    for m in 0..n {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = -gamma * (1.0 - delta) * p_pi[i * n + j];
            }
            a[i * n + i] += 1.0;
            a[i * n + m] -= gamma * delta;
        }
        let v = solve_dense(a, r_pi.clone())?;
        let vm = v[m];
        if v.iter().all(|&x| x >= vm - TIE_TOL) {
            return Ok(v);
        }
    }
    Err(Error::Parameter("no self-consistent minimiser".into()))
}

/// Builds the report for `γ, δ ∈ (0, 1)` and mixing weight `λ ∈ (0, 1)`.
pub fn counterexample(gamma: f64, delta: f64, lambda: f64) -> Result<CounterexampleReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Discount(gamma));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Radius(delta));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Parameter(alloc::format!("lambda {lambda} outside (0, 1)")));
    }
    let mdp = build(gamma)?;
    let set = ContaminationSet::new(delta)?;
    let (pi1, pi2) = (pure_policy(0), pure_policy(1));
    let d1 = visitation(&mdp, mdp.kernel(), &pi1, mdp.rho())?;
    let d2 = visitation(&mdp, mdp.kernel(), &pi2, mdp.rho())?;

    let near = (1.0 - gamma) / (1.0 - gamma * gamma);
    let far = gamma * near;
    let want1 = [near, 0.0, far, 0.0, 0.0, 0.0];
    let want2 = [0.0, near, 0.0, 0.0, 0.0, far];
    let closed_form_error = d1
        .d
        .iter()
        .zip(&want1)
        .chain(d2.d.iter().zip(&want2))
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));

    let v1 = robust_value(&set, &mdp, &pi1, Signal::Reward)?;
    let v2 = robust_value(&set, &mdp, &pi2, Signal::Reward)?;
    let worst1 = visitation(&mdp, &worst_case_kernel(&set, &mdp, &v1.v)?, &pi1, mdp.rho())?;
    let worst2 = visitation(&mdp, &worst_case_kernel(&set, &mdp, &v2.v)?, &pi2, mdp.rho())?;

    let pi_prime = mix_policy(&d1.d, &d2.d, lambda, 2)?;
    let v_prime = robust_values_by_enumeration(&mdp, delta, &pi_prime)?;
    let native = [v_prime[0] * REWARD_SCALE, v_prime[1] * REWARD_SCALE, v_prime[2] * REWARD_SCALE];
    Ok(CounterexampleReport {
        gamma,
        delta,
        lambda,
        v_prime: native,
        d1: table(&d1.d),
        d2: table(&d2.d),
        d1_worst: table(&worst1.d),
        d2_worst: table(&worst2.d),
        closed_form_error,
        argmin: [argmin(&v1.v) + 1, argmin(&v2.v) + 1, argmin(&v_prime) + 1],
        pi_prime_a1: pi_prime.row(0)[0],
        verdict: (native[0] - native[1]).abs() > VERDICT_TOL,
    })
}
