//! Seeded generators for the benchmark environments.
//!
//! Every generator returns a [`TabularCMDP`] whose reward and utility lie in
//! `[0, 1]`. Environments whose native signals fall outside that range are
//! rescaled by a per-environment affine map, reported by
//! [`EnvKind::signal_maps`] so results can be mapped back.

mod chain;
mod frozen_lake;
mod garnet;
mod taxi;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use chain::n_chain;
pub use frozen_lake::frozen_lake;
pub use garnet::garnet;
pub use taxi::taxi;

use crate::error::{Error, Result};
use crate::mdp::{SoftmaxPolicy, Signal, TabularCMDP};
use crate::rng;
use crate::robust::{robust_value, ContaminationSet};

/// Discount used when an experiment does not set one.
pub const DEFAULT_GAMMA: f64 = 0.95;

/// Affine map `native = offset + scale · stored` between the environment's
/// native signal and the `[0, 1]` value stored in the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    pub const IDENTITY: Self = Self { offset: 0.0, scale: 1.0 };

    /// Map that sends `[lo, hi]` onto `[0, 1]`.
    pub fn from_range(lo: f64, hi: f64) -> Self {
        Self { offset: lo, scale: hi - lo }
    }

    pub fn to_unit(&self, native: f64) -> f64 {
        (native - self.offset) / self.scale
    }

    pub fn to_native(&self, unit: f64) -> f64 {
        self.offset + self.scale * unit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    Garnet { sn: usize, an: usize },
    FrozenLake { size: usize },
    Taxi,
    NChain { n: usize, slip: f64 },
}

impl EnvKind {
    /// `(reward_map, utility_map)` used by the generator.
    pub fn signal_maps(&self) -> (AffineMap, AffineMap) {
        match self {
            EnvKind::Garnet { .. } => (AffineMap::IDENTITY, AffineMap::IDENTITY),
            EnvKind::FrozenLake { .. } => (frozen_lake::REWARD_MAP, AffineMap::IDENTITY),
            EnvKind::Taxi => (taxi::REWARD_MAP, AffineMap::IDENTITY),
            EnvKind::NChain { .. } => (chain::REWARD_MAP, chain::UTILITY_MAP),
        }
    }
}

/// Full description of a generated environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub seed: u64,
    pub gamma: f64,
    /// Constraint threshold `b` in the stored (unit) scale.
    pub threshold: f64,
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularCMDP> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Discount(self.gamma));
        }
        let mdp = match self.kind {
            EnvKind::Garnet { sn, an } => garnet(sn, an, self.seed)?,
            EnvKind::FrozenLake { size } => frozen_lake(size, self.seed)?,
            EnvKind::Taxi => taxi(self.seed)?,
            EnvKind::NChain { n, slip } => n_chain(n, self.seed, slip)?,
        };
        mdp.with_gamma(self.gamma)?.with_thresholds(vec![self.threshold])
    }
}

/// Uniform draws on `[0, 1]` for each `(s, a)`.
pub(crate) fn uniform_table<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen::<f64>()).collect()
}

/// How an experiment picks the constraint threshold `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    Fixed { b: f64 },
    /// Half of the best robust utility value among random policies.
    HalfRandomMax,
    /// Midway between the robust-optimal utility value and the nominal
    /// utility value of the reward-greedy policy, so the constraint binds.
    Active,
}

/// Number of random softmax policies sampled by the threshold and Slater estimates.
pub const RANDOM_POLICIES: usize = 64;

/// Logit range of the random policies.
pub const RANDOM_LOGIT_SCALE: f64 = 3.0;

pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> SoftmaxPolicy {
    let theta = (0..n_states * n_actions)
        .map(|_| RANDOM_LOGIT_SCALE * (2.0 * rng.gen::<f64>() - 1.0))
        .collect();
    SoftmaxPolicy::from_logits(n_states, n_actions, theta).expect("dimensions match")
}

/// Robust `V_c(ρ)` for [`RANDOM_POLICIES`] random policies plus the uniform one.
pub fn random_policy_utilities(mdp: &TabularCMDP, set: &ContaminationSet, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::stream(seed, 0x7e5);
    let mut out = Vec::with_capacity(RANDOM_POLICIES + 1);
    let uniform = SoftmaxPolicy::zeros(mdp.n_states(), mdp.n_actions());
    out.push(robust_value(set, mdp, &uniform.probs(), Signal::Utility(0))?.at(mdp.rho()));
    for _ in 0..RANDOM_POLICIES {
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        out.push(robust_value(set, mdp, &pi.probs(), Signal::Utility(0))?.at(mdp.rho()));
    }
    Ok(out)
}

pub fn resolve_threshold(
    rule: ThresholdRule,
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    seed: u64,
) -> Result<f64> {
    match rule {
        ThresholdRule::Fixed { b } => Ok(b),
        ThresholdRule::HalfRandomMax => {
            let vals = random_policy_utilities(mdp, set, seed)?;
            Ok(0.5 * vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
        ThresholdRule::Active => {
            let best = crate::robust::robust_control(set, mdp, Signal::Utility(0))?;
            let greedy = crate::robust::greedy_policy(
                &crate::robust::robust_control(&ContaminationSet::new(0.0)?, mdp, Signal::Reward)?,
                mdp.n_actions(),
            );
            let nominal = crate::mdp::evaluate(mdp, mdp.kernel(), &greedy, Signal::Utility(0))?;
            let nominal_rho = crate::math::dot(&nominal, mdp.rho());
            let best_rho = crate::math::dot(&best.v, mdp.rho());
            Ok(0.5 * (nominal_rho + best_rho))
        }
    }
}
