//! Sample-based smoothed robust TD evaluation of a fixed policy.
//!
//! Transitions are simulated from the centroid kernel only. Each step
//! updates the visited entry toward
//! `c + γ(1−δ) V(s') + γδ LSE(σ, V)` where `V(s) = Σ_a π(a|s) Q(s, a)`;
//! without smoothing the exact `min V` is used instead of the LSE.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{ActionProbs, Signal, TabularCMDP};
use crate::rng::{self, StreamRng};
use crate::robust::{ContaminationSet, SmoothingParam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSizeRule {
    /// `α_t = a / (t + b)^power`.
    Polynomial { a: f64, b: f64, power: f64 },
    Constant { alpha: f64 },
}

impl StepSizeRule {
    /// `α_t = 1 / (1 + (1−γ) t)^0.6`.
    pub fn for_gamma(gamma: f64) -> Self {
        let power = 0.6;
        Self::Polynomial { a: math::powf(1.0 - gamma, -power), b: 1.0 / (1.0 - gamma), power }
    }

    /// `α_t = 1 / (1 + (1−γ) t / n)^0.6`: the default rule on a clock that
    /// advances once per `n` samples, for `n` state-action pairs.
    pub fn per_pair(gamma: f64, n_pairs: usize) -> Self {
        let power = 0.6;
        let b = n_pairs.max(1) as f64 / (1.0 - gamma);
        Self::Polynomial { a: math::powf(b, power), b, power }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            Self::Polynomial { a, b, power } => a / math::powf(t as f64 + b, power),
            Self::Constant { alpha } => alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Polynomial { a, b, power } => a > 0.0 && b >= 0.0 && power > 0.0 && (b > 0.0 || power == 0.0),
            Self::Constant { alpha } => alpha > 0.0 && alpha <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(alloc::format!("invalid step-size rule {self:?}")))
        }
    }
}

/// Trajectories restart from `ρ` this often by default.
pub const DEFAULT_RESTART: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TDConfig {
    pub inner_steps: usize,
    pub step_size: StepSizeRule,
    /// Smoothing of the worst-case term; `None` uses the exact minimum.
    pub sigma: Option<SmoothingParam>,
    pub seed: u64,
    /// Restart the trajectory from `ρ` every this many steps (0 disables).
    pub restart_every: usize,
}

impl TDConfig {
    pub fn new(mdp: &TabularCMDP, inner_steps: usize, sigma: SmoothingParam, seed: u64) -> Self {
        Self {
            inner_steps,
            step_size: StepSizeRule::for_gamma(mdp.gamma()),
            sigma: Some(sigma),
            seed,
            restart_every: DEFAULT_RESTART,
        }
    }
}

/// One simulated transition: state, action, next state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next: usize,
}

/// On-policy sampler over the centroid kernel with periodic restarts.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    mdp: &'a TabularCMDP,
    probs: &'a ActionProbs,
    rng: StreamRng,
    state: usize,
    steps: usize,
    restart_every: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(mdp: &'a TabularCMDP, probs: &'a ActionProbs, seed: u64, restart_every: usize) -> Self {
        let mut rng = rng::stream(seed, 0x7d);
        let state = rng::categorical(&mut rng, mdp.rho());
        Self { mdp, probs, rng, state, steps: 0, restart_every }
    }

    pub fn next_transition(&mut self) -> Transition {
        if self.restart_every > 0 && self.steps > 0 && self.steps % self.restart_every == 0 {
            self.state = rng::categorical(&mut self.rng, self.mdp.rho());
        }
        let s = self.state;
        let a = rng::categorical(&mut self.rng, self.probs.row(s));
        let next = rng::categorical(&mut self.rng, self.mdp.kernel().row(s, a));
        self.state = next;
        self.steps += 1;
        Transition { state: s, action: a, next }
    }
}

/// Worst-case term `LSE(σ, V)` or `min V`, maintained under single-entry updates of `V`.
enum Adversary {
    Lse(RunningLse),
    Min(f64),
}

impl Adversary {
    fn new(sigma: Option<SmoothingParam>, v: &[f64]) -> Self {
        match sigma {
            Some(s) => Self::Lse(RunningLse::new(s.get(), v)),
            None => Self::Min(v.iter().copied().fold(f64::INFINITY, f64::min)),
        }
    }

    fn value(&self) -> f64 {
        match self {
            Self::Lse(l) => l.value(),
            Self::Min(m) => *m,
        }
    }

    fn update(&mut self, v: &[f64], old: f64, new: f64) {
        match self {
            Self::Lse(l) => l.update(v, old, new),
            Self::Min(m) => {
                if new <= *m {
                    *m = new;
                } else if old <= *m {
                    *m = v.iter().copied().fold(f64::INFINITY, f64::min);
                }
            }
        }
    }
}

/// Running `LSE(σ, V)`: a sum of `exp(σ (v − shift))` refreshed whenever
/// cancellation could cost precision.
struct RunningLse {
    sigma: f64,
    shift: f64,
    sum: f64,
    peak: f64,
    updates: usize,
}

impl RunningLse {
    const REFRESH: usize = 1024;
    const MAX_TERM: f64 = 2.0;

    fn new(sigma: f64, v: &[f64]) -> Self {
        let mut out = Self { sigma, shift: 0.0, sum: 0.0, peak: 0.0, updates: 0 };
        out.refresh(v);
        out
    }

    fn refresh(&mut self, v: &[f64]) {
        self.shift = v.iter().copied().fold(f64::INFINITY, f64::min);
        self.sum = v.iter().map(|&x| math::exp(self.sigma * (x - self.shift))).sum();
        self.peak = self.sum;
        self.updates = 0;
    }

    fn value(&self) -> f64 {
        self.shift + math::ln(self.sum) / self.sigma
    }

    /// `v` already holds the new value at the changed index.
    fn update(&mut self, v: &[f64], old: f64, new: f64) {
        self.updates += 1;
        let term = math::exp(self.sigma * (new - self.shift));
        if self.updates >= Self::REFRESH || term > Self::MAX_TERM {
            self.refresh(v);
            return;
        }
        self.sum += term - math::exp(self.sigma * (old - self.shift));
        self.peak = self.peak.max(self.sum);
        if self.sum < 0.5 * self.peak {
            self.refresh(v);
        }
    }
}

fn check(mdp: &TabularCMDP, probs: &ActionProbs, config: &TDConfig) -> Result<()> {
    probs.check_dims(mdp.n_states(), mdp.n_actions())?;
    config.step_size.validate()
}

/// Robust TD estimate of `Q_σ` for one signal. Returns `Q₀ = 0` when
/// `inner_steps` is zero.
pub fn robust_td(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    probs: &ActionProbs,
    config: &TDConfig,
    signal: Signal,
) -> Result<Vec<f64>> {
    Ok(robust_td_signals(mdp, set, probs, config, &[signal])?.pop().expect("one signal"))
}

/// Runs robust TD for several signals on one shared trajectory.
pub fn robust_td_signals(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    probs: &ActionProbs,
    config: &TDConfig,
    signals: &[Signal],
) -> Result<Vec<Vec<f64>>> {
    check(mdp, probs, config)?;
    let tables = signals.iter().map(|&sig| mdp.signal(sig)).collect::<Result<Vec<_>>>()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let delta = set.delta();
    let robust = delta > 0.0;

    let mut qs = vec![vec![0.0; ns * na]; signals.len()];
    let mut vs = vec![vec![0.0; ns]; signals.len()];
    let mut adversaries: Vec<Adversary> = vs.iter().map(|v| Adversary::new(config.sigma, v)).collect();
    let mut sampler = Sampler::new(mdp, probs, config.seed, config.restart_every);
    for t in 0..config.inner_steps {
        let tr = sampler.next_transition();
        let alpha = config.step_size.alpha(t);
        let idx = tr.state * na + tr.action;
        let pi = probs.row(tr.state)[tr.action];
        for k in 0..signals.len() {
            let (q, v) = (&mut qs[k], &mut vs[k]);
            let soft = if robust { adversaries[k].value() } else { 0.0 };
            let target = tables[k][idx] + gamma * (1.0 - delta) * v[tr.next] + gamma * delta * soft;
            let step = alpha * (target - q[idx]);
            q[idx] += step;
            let old = v[tr.state];
            let new = old + pi * step;
            v[tr.state] = new;
            if robust {
                adversaries[k].update(v, old, new);
            }
        }
    }
    Ok(qs)
}

/// `Σ_s ρ(s) Σ_a π(a|s) Q(s, a)`.
pub fn td_value_estimate(q: &[f64], probs: &ActionProbs, rho: &[f64]) -> Result<f64> {
    let ns = probs.n_states();
    if q.len() != ns * probs.n_actions() || rho.len() != ns {
        return Err(Error::Dimension(alloc::format!(
            "Q has {} entries and rho {} for a {}x{} policy",
            q.len(),
            rho.len(),
            ns,
            probs.n_actions()
        )));
    }
    Ok(math::dot(&probs.average(q), rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::garnet;
    use crate::mdp::Kernel;

    fn one_state(gamma: f64) -> TabularCMDP {
        let k = Kernel::new(1, 1, vec![1.0]).unwrap();
        TabularCMDP::new(k, vec![1.0], vec![vec![0.5]], gamma, vec![1.0], vec![0.0]).unwrap()
    }

    #[test]
    fn default_step_size_rule() {
        let r = StepSizeRule::for_gamma(0.9);
        for t in [0usize, 1, 10, 1000] {
            let want = 1.0 / (1.0 + 0.1 * t as f64).powf(0.6);
            assert!((r.alpha(t) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn per_pair_rule_rescales_the_clock() {
        let r = StepSizeRule::per_pair(0.9, 50);
        for t in [0usize, 7, 500, 100_000] {
            let want = 1.0 / (1.0 + 0.1 * t as f64 / 50.0).powf(0.6);
            assert!((r.alpha(t) - want).abs() < 1e-12);
        }
        assert_eq!(StepSizeRule::per_pair(0.9, 1), StepSizeRule::for_gamma(0.9));
    }

    #[test]
    fn deterministic_recursion_converges_geometrically() {
        let m = one_state(0.9);
        let probs = ActionProbs::uniform(1, 1);
        let set = ContaminationSet::new(0.0).unwrap();
        let sigma = SmoothingParam::new(-10.0).unwrap();
        let mut prev_err = f64::INFINITY;
        for steps in [10, 20, 40, 80, 160] {
            let cfg = TDConfig {
                inner_steps: steps,
                step_size: StepSizeRule::Constant { alpha: 0.5 },
                sigma: Some(sigma),
                seed: 0,
                restart_every: 0,
            };
            let q = robust_td(&m, &set, &probs, &cfg, Signal::Reward).unwrap();
            // Q_{t+1} = 0.5 Q_t + 0.5 (1 + 0.9 Q_t): the error shrinks by 0.95 per step
            let err = (q[0] - 10.0).abs();
            assert!((err - 10.0 * 0.95f64.powi(steps as i32)).abs() < 1e-9);
            assert!(err < prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn zero_steps_returns_initialisation() {
        let m = garnet(3, 2, 0).unwrap();
        let cfg = TDConfig::new(&m, 0, SmoothingParam::new(-10.0).unwrap(), 1);
        let q = robust_td(&m, &ContaminationSet::new(0.3).unwrap(), &ActionProbs::uniform(3, 2), &cfg, Signal::Reward)
            .unwrap();
        assert_eq!(q, vec![0.0; 6]);
    }

    #[test]
    fn unvisited_entries_stay_at_zero() {
        // action 1 never taken
        let m = garnet(4, 2, 2).unwrap();
        let probs = ActionProbs::new(4, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let cfg = TDConfig::new(&m, 5000, SmoothingParam::new(-10.0).unwrap(), 3);
        let q = robust_td(&m, &ContaminationSet::new(0.2).unwrap(), &probs, &cfg, Signal::Reward).unwrap();
        for s in 0..4 {
            assert_eq!(q[s * 2 + 1], 0.0);
        }
    }

    #[test]
    fn running_lse_tracks_direct_value() {
        let mut v = vec![0.3, 1.2, 4.0, 0.0];
        let mut run = RunningLse::new(-7.0, &v);
        let mut r = rng::stream(5, 0);
        for _ in 0..5000 {
            let i = rand::Rng::gen_range(&mut r, 0..4);
            let old = v[i];
            v[i] = 5.0 * rand::Rng::gen::<f64>(&mut r);
            run.update(&v, old, v[i]);
            let want = crate::robust::lse(-7.0, &v).unwrap();
            assert!((run.value() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn running_min_tracks_direct_value() {
        let mut v = vec![0.3, 1.2, 4.0, 0.0];
        let mut adv = Adversary::new(None, &v);
        let mut r = rng::stream(6, 0);
        for _ in 0..2000 {
            let i = rand::Rng::gen_range(&mut r, 0..4);
            let old = v[i];
            v[i] = 5.0 * rand::Rng::gen::<f64>(&mut r);
            adv.update(&v, old, v[i]);
            assert_eq!(adv.value(), v.iter().copied().fold(f64::INFINITY, f64::min));
        }
    }

    #[test]
    fn value_estimate_weights_rho() {
        let probs = ActionProbs::uniform(2, 2);
        assert_eq!(td_value_estimate(&[3.0; 4], &probs, &[0.5, 0.5]).unwrap(), 3.0);
        let q = [1.0, 3.0, 5.0, 7.0];
        assert_eq!(td_value_estimate(&q, &probs, &[0.0, 1.0]).unwrap(), 6.0);
        assert!(td_value_estimate(&q, &probs, &[1.0]).is_err());
    }

    #[test]
    fn shared_trajectory_matches_single_runs() {
        let m = garnet(4, 3, 9).unwrap();
        let set = ContaminationSet::new(0.2).unwrap();
        let probs = ActionProbs::uniform(4, 3);
        let cfg = TDConfig::new(&m, 3000, SmoothingParam::new(-10.0).unwrap(), 4);
        let both = robust_td_signals(&m, &set, &probs, &cfg, &[Signal::Reward, Signal::Utility(0)]).unwrap();
        let r = robust_td(&m, &set, &probs, &cfg, Signal::Reward).unwrap();
        let c = robust_td(&m, &set, &probs, &cfg, Signal::Utility(0)).unwrap();
        assert_eq!(both[0], r);
        assert_eq!(both[1], c);
    }
}
