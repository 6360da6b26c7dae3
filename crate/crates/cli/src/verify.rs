//! Invariant suites run against one environment document.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_crl::gradient::{finite_diff_gradient, smoothed_gradient};
use robust_crl::mdp::{evaluate, visitation};
use robust_crl::robust::{
    lse, robust_bellman_apply, robust_value, smoothed_bellman_apply, smoothed_robust_value, smoothing_gap_bound,
    worst_case_kernel,
};
use robust_crl::{ActionProbs, ContaminationSet, Signal, SmoothingParam, SoftmaxPolicy, TabularCMDP};

use crate::document::MdpDocument;

const POLICIES: usize = 3;
const GRADIENT_MAX_PARAMS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failure: Option<String>) -> Self {
        match failure {
            None => Self { name, passed: true, detail: String::new() },
            Some(detail) => Self { name, passed: false, detail },
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed {
            write!(f, "PASS {}", self.name)
        } else {
            write!(f, "FAIL {}: {}", self.name, self.detail)
        }
    }
}

fn first_failure<I: Iterator<Item = Option<String>>>(it: I) -> Option<String> {
    it.flatten().next()
}

fn structural(doc: &MdpDocument) -> Vec<Check> {
    let (ns, na) = (doc.n_states, doc.n_actions);
    let mut checks = Vec::new();
    let shape = first_failure(
        [
            (doc.kernel.len() != ns).then(|| format!("kernel has {} state rows, expected {ns}", doc.kernel.len())),
            (doc.reward.len() != ns).then(|| format!("reward has {} rows, expected {ns}", doc.reward.len())),
            (doc.rho.len() != ns).then(|| format!("rho has {} entries, expected {ns}", doc.rho.len())),
            (doc.utilities.len() != doc.thresholds.len())
                .then(|| format!("{} utilities but {} thresholds", doc.utilities.len(), doc.thresholds.len())),
        ]
        .into_iter()
        .chain(doc.kernel.iter().enumerate().flat_map(|(s, rows)| {
            let bad_actions = (rows.len() != na).then(|| format!("kernel state {s} has {} actions, expected {na}", rows.len()));
            let bad_width = rows
                .iter()
                .enumerate()
                .find(|(_, r)| r.len() != ns)
                .map(|(a, r)| format!("kernel row (s={s}, a={a}) has {} entries, expected {ns}", r.len()));
            [bad_actions, bad_width]
        })),
    );
    let shape_ok = shape.is_none();
    checks.push(Check::new("dimensions", shape));
    if !shape_ok {
        return checks;
    }

    let rows = doc.kernel.iter().flatten().enumerate();
    checks.push(Check::new(
        "kernel_stochastic",
        first_failure(rows.map(|(i, row)| {
            let sum: f64 = row.iter().sum();
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            (!(min >= 0.0 && (sum - 1.0).abs() <= 1e-9))
                .then(|| format!("row {i} (s={}, a={}): sum {sum}, min {min}", i / na, i % na))
        })),
    ));
    let signals = std::iter::once(("reward", &doc.reward)).chain(doc.utilities.iter().map(|u| ("utility", u)));
    checks.push(Check::new(
        "signals_in_unit_interval",
        first_failure(signals.flat_map(|(name, t)| {
            t.iter().enumerate().flat_map(move |(s, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(a, &x)| (!(0.0..=1.0).contains(&x)).then(|| format!("{name}[{s}][{a}] = {x}")))
            })
        })),
    ));
    let rho_sum: f64 = doc.rho.iter().sum();
    checks.push(Check::new(
        "rho_distribution",
        (doc.rho.iter().any(|&x| !(x >= 0.0)) || (rho_sum - 1.0).abs() > 1e-9)
            .then(|| format!("rho sums to {rho_sum} or has negative entries")),
    ));
    checks.push(Check::new(
        "gamma_range",
        (!(0.0..1.0).contains(&doc.gamma)).then(|| format!("gamma = {}", doc.gamma)),
    ));
    checks
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Robust backup evaluated at each vertex `(1−δ)p + δe_j` of the set.
fn vertex_backup(mdp: &TabularCMDP, pi: &ActionProbs, delta: f64, v: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let pv: f64 = mdp.kernel().row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
                    let worst = v.iter().map(|&vj| (1.0 - delta) * pv + delta * vj).fold(f64::INFINITY, f64::min);
                    pi.row(s)[a] * (mdp.reward()[s * na + a] + mdp.gamma() * worst)
                })
                .sum()
        })
        .collect()
}

fn semantic(mdp: &TabularCMDP, set: &ContaminationSet, sigma: SmoothingParam, seed: u64) -> anyhow::Result<Vec<Check>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policies = vec![SoftmaxPolicy::zeros(ns, na)];
    for _ in 1..POLICIES {
        let theta = (0..ns * na).map(|_| rng.gen_range(-2.0..2.0)).collect();
        policies.push(SoftmaxPolicy::from_logits(ns, na, theta)?);
    }
    let range = mdp.value_range();
    let random_v = |rng: &mut ChaCha8Rng| (0..ns).map(|_| rng.gen_range(0.0..range)).collect::<Vec<f64>>();

    let (mut bellman, mut worst, mut sandwich, mut gap, mut contraction, mut nominal, mut flow) =
        (None, None, None, None, None, None, None);
    let nominal_set = ContaminationSet::new(0.0)?;
    let bound = smoothing_gap_bound(set, mdp, sigma);
    for (k, pol) in policies.iter().enumerate() {
        let pi = pol.probs();
        let v = random_v(&mut rng);
        let w = random_v(&mut rng);
        let got = robust_bellman_apply(set, mdp, &pi, Signal::Reward, &v)?;
        let err = sup(&got, &vertex_backup(mdp, &pi, set.delta(), &v));
        if err > 1e-10 && bellman.is_none() {
            bellman = Some(format!("policy {k}: backup differs from vertex enumeration by {err:e}"));
        }
        let rv = robust_value(set, mdp, &pi, Signal::Reward)?;
        let kernel_v = evaluate(mdp, &worst_case_kernel(set, mdp, &rv.v)?, &pi, Signal::Reward)?;
        let err = sup(&rv.v, &kernel_v);
        if err > 1e-6 && worst.is_none() {
            worst = Some(format!("policy {k}: robust value vs worst-case kernel value differ by {err:e}"));
        }
        let l = lse(sigma.get(), &v)?;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let floor = min - (ns as f64).ln() / sigma.get().abs();
        if !(l <= min + 1e-12 && l >= floor - 1e-12) && sandwich.is_none() {
            sandwich = Some(format!("policy {k}: LSE {l} outside [{floor}, {min}]"));
        }
        let sv = smoothed_robust_value(set, mdp, &pi, sigma, Signal::Reward)?;
        let g = sup(&sv.v, &rv.v);
        if g > bound + 1e-9 && gap.is_none() {
            gap = Some(format!("policy {k}: smoothing gap {g} exceeds bound {bound}"));
        }
        let d = sup(&v, &w);
        let tv = smoothed_bellman_apply(set, mdp, &pi, sigma, Signal::Reward, &v)?;
        let tw = smoothed_bellman_apply(set, mdp, &pi, sigma, Signal::Reward, &w)?;
        let (r1, r2) = (sup(&got, &robust_bellman_apply(set, mdp, &pi, Signal::Reward, &w)?), sup(&tv, &tw));
        if (r1 > mdp.gamma() * d + 1e-12 || r2 > mdp.gamma() * d + 1e-12) && contraction.is_none() {
            contraction = Some(format!("policy {k}: ‖TV − TW‖ = {} against γ‖V − W‖ = {}", r1.max(r2), mdp.gamma() * d));
        }
        let r0 = robust_value(&nominal_set, mdp, &pi, Signal::Reward)?;
        let err = sup(&r0.v, &evaluate(mdp, mdp.kernel(), &pi, Signal::Reward)?);
        if err > 1e-8 && nominal.is_none() {
            nominal = Some(format!("policy {k}: zero-radius robust value differs from nominal by {err:e}"));
        }
        let vis = visitation(mdp, mdp.kernel(), &pi, mdp.rho())?;
        let res = vis.flow_residual(mdp.kernel(), mdp.gamma(), mdp.rho());
        let total: f64 = vis.d.iter().sum();
        if (res > 1e-8 || (total - 1.0).abs() > 1e-8) && flow.is_none() {
            flow = Some(format!("policy {k}: flow residual {res:e}, mass {total}"));
        }
    }
    let mut checks = vec![
        Check::new("bellman_vertex_enumeration", bellman),
        Check::new("robust_value_worst_case_kernel", worst),
        Check::new("lse_sandwich", sandwich),
        Check::new("smoothing_gap_bound", gap),
        Check::new("contraction", contraction),
        Check::new("zero_radius_equivalence", nominal),
        Check::new("visitation_flow", flow),
    ];
    if ns * na <= GRADIENT_MAX_PARAMS {
        let pol = &policies[1];
        let exact = smoothed_gradient(mdp, set, pol, sigma, Signal::Reward)?.grad_theta;
        let fd = finite_diff_gradient(mdp, set, pol, sigma, Signal::Reward, 1e-5)?;
        let scale = fd.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-8);
        let rel = sup(&exact, &fd) / scale;
        checks.push(Check::new(
            "gradient_finite_difference",
            (rel > 1e-3).then(|| format!("max relative error {rel:e}")),
        ));
    }
    Ok(checks)
}

/// Runs the structural checks, then, if they pass, the operator suites.
pub fn verify(doc: &MdpDocument, delta: f64, sigma: f64, seed: u64) -> anyhow::Result<Vec<Check>> {
    let mut checks = structural(doc);
    if checks.iter().all(|c| c.passed) {
        let mdp = doc.to_mdp()?;
        checks.extend(semantic(&mdp, &ContaminationSet::new(delta)?, SmoothingParam::new(sigma)?, seed)?);
    }
    Ok(checks)
}
