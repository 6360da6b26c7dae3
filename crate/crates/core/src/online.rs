//! Model-free robust primal-dual training and the two baselines.
//!
//! All three methods share the dual update and the inner-loop budget and
//! differ only in how the values and the policy gradient are estimated:
//!
//! | method         | evaluation                 | gradient                  |
//! |----------------|----------------------------|---------------------------|
//! | `robust_rpd`   | smoothed robust TD         | robust (worst-case) form  |
//! | `heuristic_pd` | smoothed robust TD         | nominal policy gradient   |
//! | `nonrobust_pd` | TD(0) on the centroid      | nominal policy gradient   |

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{gradient_from_q, nominal_gradient_from_q};
use crate::math;
use crate::mdp::{Signal, SoftmaxPolicy, TabularCMDP};
use crate::optimizer::{run_with_oracle, DualIterate, Oracle, RunOutput, Schedule};
use crate::rng;
use crate::robust::{robust_value, ContaminationSet, SmoothingParam};
use crate::stats::Band;
use crate::td::{robust_td_signals, td_value_estimate, StepSizeRule, TDConfig};

/// Default cap on the inner TD budget.
pub const DEFAULT_INNER_CAP: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    /// Outer steps `T`.
    pub outer_steps: usize,
    pub eps_est: f64,
    pub kappa: f64,
    pub inner_cap: usize,
    pub sigma: SmoothingParam,
    /// Step-size rule of the inner TD runs.
    pub td_step: StepSizeRule,
    pub schedule: Schedule,
    pub seed: u64,
}

impl OnlineConfig {
    /// `T_inner(t) = min(cap, ⌈κ (t+1)^{1.5} / ε_est²⌉)`.
    pub fn inner_steps(&self, t: usize) -> usize {
        let raw = math::ceil(self.kappa * math::powf((t + 1) as f64, 1.5) / (self.eps_est * self.eps_est));
        if raw >= self.inner_cap as f64 {
            self.inner_cap
        } else {
            raw as usize
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_est > 0.0) || !(self.kappa > 0.0) {
            return Err(Error::Parameter(alloc::format!(
                "eps_est and kappa must be positive, got {} and {}",
                self.eps_est,
                self.kappa
            )));
        }
        if self.outer_steps == 0 || self.inner_cap == 0 {
            return Err(Error::Parameter("outer steps and inner cap must be positive".into()));
        }
        Ok(())
    }
}

/// Estimation target `0.1 ε² / (1−γ)` for a gradient-mapping tolerance `ε`.
pub fn default_eps_est(gamma: f64, epsilon: f64) -> f64 {
    0.1 * epsilon * epsilon / (1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RobustRpd,
    HeuristicPd,
    NonrobustPd,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::RobustRpd, Self::HeuristicPd, Self::NonrobustPd];

    pub fn name(self) -> &'static str {
        match self {
            Self::RobustRpd => "robust_rpd",
            Self::HeuristicPd => "heuristic_pd",
            Self::NonrobustPd => "nonrobust_pd",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn run(
        self,
        mdp: &TabularCMDP,
        set: &ContaminationSet,
        config: &OnlineConfig,
        init: DualIterate,
        keep_iterates: bool,
    ) -> Result<RunOutput> {
        let nominal = ContaminationSet::new(0.0)?;
        let (eval_set, robust_grad) = match self {
            Self::RobustRpd => (set, true),
            Self::HeuristicPd => (set, false),
            Self::NonrobustPd => (&nominal, false),
        };
        config.validate()?;
        // methods share random streams, so runs with equal seeds are paired
        let seed = config.seed;
        run_with_oracle(&config.schedule, config.outer_steps, init, keep_iterates, mdp.threshold(), |theta, t| {
            let probs = theta.probs();
            let td = TDConfig {
                seed: rng::split_seed(seed, t as u64),
                step_size: config.td_step,
                ..TDConfig::new(mdp, config.inner_steps(t), config.sigma, 0)
            };
            let mut qs = robust_td_signals(mdp, eval_set, &probs, &td, &[Signal::Reward, Signal::Utility(0)])?;
            let qc = qs.pop().expect("two signals");
            let qr = qs.pop().expect("two signals");
            let grad = |q: &[f64]| {
                if robust_grad {
                    gradient_from_q(mdp, eval_set.delta(), config.sigma, &probs, q)
                } else {
                    nominal_gradient_from_q(mdp, &probs, q)
                }
            };
            Ok(Oracle {
                v_r: td_value_estimate(&qr, &probs, mdp.rho())?,
                v_c: td_value_estimate(&qc, &probs, mdp.rho())?,
                grad_r: grad(&qr)?,
                grad_c: grad(&qc)?,
            })
        })
    }
}

/// Model-free robust primal-dual method.
pub fn online_rpd_run(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    config: &OnlineConfig,
    init: DualIterate,
    keep_iterates: bool,
) -> Result<RunOutput> {
    BaselineKind::RobustRpd.run(mdp, set, config, init, keep_iterates)
}

/// Robust evaluation paired with the nominal policy gradient.
pub fn heuristic_pd_run(
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    config: &OnlineConfig,
    init: DualIterate,
    keep_iterates: bool,
) -> Result<RunOutput> {
    BaselineKind::HeuristicPd.run(mdp, set, config, init, keep_iterates)
}

/// Non-robust primal-dual on centroid TD(0) estimates.
pub fn nonrobust_pd_run(mdp: &TabularCMDP, config: &OnlineConfig, init: DualIterate, keep_iterates: bool) -> Result<RunOutput> {
    BaselineKind::NonrobustPd.run(mdp, &ContaminationSet::new(0.0)?, config, init, keep_iterates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Vr,
    Vc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Vr => "Vr",
            Self::Vc => "Vc",
        }
    }

    fn signal(self) -> Signal {
        match self {
            Self::Vr => Signal::Reward,
            Self::Vc => Signal::Utility(0),
        }
    }
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iterate: usize,
    pub method: String,
    pub metric: Metric,
    pub mean: f64,
    pub p5: f64,
    pub p95: f64,
    /// Exact robust value at `ρ`.
    pub exact: f64,
}

/// CSV header of an evaluation table, in column order.
pub const EVAL_COLUMNS: [&str; 7] = ["iterate", "method", "metric", "mean", "p5", "p95", "exact"];

/// Robust-TD evaluation of each policy: `n_reps` independent runs of
/// `sample_size` transitions with the exact worst-case backup and the
/// per-pair step-size rule, summarised
/// as mean and 5/95 percentiles, next to the exact robust value.
pub fn evaluate_trace(
    policies: &[(usize, SoftmaxPolicy)],
    method: &str,
    mdp: &TabularCMDP,
    set: &ContaminationSet,
    n_reps: usize,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if n_reps < 1 {
        return Err(Error::Parameter("need at least one evaluation replica".into()));
    }
    let mut rows = Vec::with_capacity(2 * policies.len());
    for (iterate, theta) in policies {
        let probs = theta.probs();
        let mut samples = [Vec::with_capacity(n_reps), Vec::with_capacity(n_reps)];
        for rep in 0..n_reps {
            let td = TDConfig {
                sigma: None,
                step_size: StepSizeRule::per_pair(mdp.gamma(), mdp.n_states() * mdp.n_actions()),
                seed: rng::split_seed(rng::split_seed(seed, *iterate as u64), rep as u64),
                ..TDConfig::new(mdp, sample_size, SmoothingParam::new(-1.0)?, 0)
            };
            let qs = robust_td_signals(mdp, set, &probs, &td, &[Signal::Reward, Signal::Utility(0)])?;
            for (k, q) in qs.iter().enumerate() {
                samples[k].push(td_value_estimate(q, &probs, mdp.rho())?);
            }
        }
        for (k, metric) in [Metric::Vr, Metric::Vc].into_iter().enumerate() {
            let band = Band::of(&samples[k]);
            let exact = robust_value(set, mdp, &probs, metric.signal())?.at(mdp.rho());
            rows.push(EvalRow {
                iterate: *iterate,
                method: method.into(),
                metric,
                mean: band.mean,
                p5: band.p5,
                p95: band.p95,
                exact,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::envs::garnet;
    use crate::mdp::Kernel;

    fn config(schedule: Schedule, outer: usize, eps: f64) -> OnlineConfig {
        OnlineConfig {
            outer_steps: outer,
            eps_est: eps,
            kappa: 1.0,
            inner_cap: DEFAULT_INNER_CAP,
            sigma: SmoothingParam::new(-10.0).unwrap(),
            td_step: StepSizeRule::per_pair(0.95, 6),
            schedule,
            seed: 3,
        }
    }

    #[test]
    fn inner_budget_is_monotone_and_capped() {
        let cfg = config(Schedule::practical(10.0, 1.0, 1.0, 0.1).unwrap(), 10, 0.05);
        let mut prev = 0;
        for t in 0..500 {
            let n = cfg.inner_steps(t);
            assert!(n >= prev && n <= DEFAULT_INNER_CAP);
            prev = n;
        }
        assert_eq!(cfg.inner_steps(0), 400);
        assert_eq!(cfg.inner_steps(499), DEFAULT_INNER_CAP);
    }

    #[test]
    fn coarse_budget_still_runs() {
        let m = garnet(3, 2, 1).unwrap().with_thresholds(vec![5.0]).unwrap();
        let set = ContaminationSet::new(0.2).unwrap();
        let sched = Schedule::practical(10.0, 1.0, 1.0, 0.1).unwrap();
        let cfg = config(sched, 15, 1e3);
        assert_eq!(cfg.inner_steps(14), 1);
        let out = online_rpd_run(&m, &set, &cfg, DualIterate::new(SoftmaxPolicy::zeros(3, 2), 0.0), false).unwrap();
        for r in &out.trace {
            assert!(r.v_sigma_r_rho.is_finite() && r.grad_mapping_norm.is_finite());
            assert!((0.0..=10.0).contains(&r.lambda));
        }
    }

    #[test]
    fn baselines_coincide_without_contamination() {
        let m = garnet(3, 2, 4).unwrap().with_thresholds(vec![8.0]).unwrap();
        let set = ContaminationSet::new(0.0).unwrap();
        let cfg = config(Schedule::practical(10.0, 0.5, 1.0, 0.1).unwrap(), 5, 0.2);
        let init = DualIterate::new(SoftmaxPolicy::zeros(3, 2), 0.0);
        let h = heuristic_pd_run(&m, &set, &cfg, init.clone(), false).unwrap();
        let n = nonrobust_pd_run(&m, &cfg, init, false).unwrap();
        assert_eq!(h.trace, n.trace);
    }

    #[test]
    fn deterministic_mdp_has_degenerate_band() {
        let k = Kernel::new(1, 1, vec![1.0]).unwrap();
        let m = TabularCMDP::new(k, vec![0.5], vec![vec![1.0]], 0.5, vec![1.0], vec![0.0]).unwrap();
        let set = ContaminationSet::new(0.1).unwrap();
        let rows = evaluate_trace(&[(0, SoftmaxPolicy::zeros(1, 1))], "robust_rpd", &m, &set, 2, 50, 0).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.p5, r.mean);
            assert_eq!(r.p95, r.mean);
        }
    }

    #[test]
    fn baseline_names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(BaselineKind::parse(k.name()), Some(k));
        }
        assert_eq!(BaselineKind::parse("other"), None);
    }
}
