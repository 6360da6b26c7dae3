//! Training runs: one task per (method, replica), written as CSV and JSON.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use robust_crl::online::BaselineKind;
use robust_crl::optimizer::{
    check_feasibility, constants, estimate_slater, lambda_star, rpd_run, ConstantsTable, DualIterate,
    FeasibilityReport, RunOutput, RunRecord, Schedule, SlaterEstimate, SOFTMAX_LIPSCHITZ, SOFTMAX_SMOOTHNESS,
    TRACE_COLUMNS,
};
use robust_crl::{ContaminationSet, SmoothingParam, SoftmaxPolicy, TabularCMDP};
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::document::{env_hash, MdpDocument};
use crate::pool::fan_out;

/// Everything derived from the config before any run starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mdp: TabularCMDP,
    pub set: ContaminationSet,
    pub sigma: SmoothingParam,
    pub constants: ConstantsTable,
    pub slater: SlaterEstimate,
    pub lambda_max: f64,
    pub schedule: Schedule,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mdp = cfg.env.build(cfg.delta)?;
    let set = ContaminationSet::new(cfg.delta)?;
    let sigma = cfg.sigma()?;
    let consts = constants(
        mdp.n_states(),
        mdp.n_actions(),
        mdp.gamma(),
        cfg.delta,
        sigma,
        SOFTMAX_LIPSCHITZ,
        SOFTMAX_SMOOTHNESS,
    )?;
    let slater = estimate_slater(&mdp, &set, sigma, cfg.env.seed)?;
    let lambda_max = match cfg.schedule.lambda_max {
        Some(l) => l,
        None => lambda_star(slater.zeta, slater.zeta_prime, consts.c_sigma, mdp.gamma())?,
    };
    let schedule = cfg.schedule.build(&consts, lambda_max)?;
    Ok(Prepared { mdp, set, sigma, constants: consts, slater, lambda_max, schedule })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedPolicy {
    pub t: usize,
    pub theta: Vec<f64>,
}

/// Policies kept for evaluation from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLog {
    pub method: Method,
    pub replica: usize,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub iterates: Vec<LoggedPolicy>,
}

impl PolicyLog {
    pub fn policies(&self) -> Result<Vec<(usize, SoftmaxPolicy)>> {
        self.iterates
            .iter()
            .map(|p| Ok((p.t, SoftmaxPolicy::from_logits(self.n_states, self.n_actions, p.theta.clone())?)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityEntry {
    pub method: Method,
    pub replica: usize,
    pub best_t: usize,
    pub report: FeasibilityReport,
}

#[derive(Debug, Clone)]
pub struct ReplicaResult {
    pub trace: Vec<RunRecord>,
    pub policies: PolicyLog,
    pub feasibility: FeasibilityEntry,
}

/// Runs one method from `θ = 0, λ = 0`.
pub fn run_method(cfg: &RunConfig, prep: &Prepared, method: Method, seed: u64) -> Result<RunOutput> {
    let init = DualIterate::new(SoftmaxPolicy::zeros(prep.mdp.n_states(), prep.mdp.n_actions()), 0.0);
    let kind = match method {
        Method::ExactRpd => return Ok(rpd_run(&prep.mdp, &prep.set, prep.sigma, &prep.schedule, cfg.steps, init, true)?),
        Method::RobustRpd => BaselineKind::RobustRpd,
        Method::HeuristicPd => BaselineKind::HeuristicPd,
        Method::NonrobustPd => BaselineKind::NonrobustPd,
    };
    let online = cfg.online(&prep.mdp, prep.schedule, seed)?;
    Ok(kind.run(&prep.mdp, &prep.set, &online, init, true)?)
}

pub fn run_replica(cfg: &RunConfig, prep: &Prepared, method: Method, replica: usize) -> Result<ReplicaResult> {
    let seed = cfg.replica_seed(replica);
    let out = run_method(cfg, prep, method, seed)?;
    let eps = out.best_record().grad_mapping_norm;
    let report = check_feasibility(&out.best, &prep.schedule, &prep.mdp, &prep.set, prep.sigma, eps)?;
    let stride = cfg.eval.stride;
    let last = out.iterates.len() - 1;
    let iterates = out
        .iterates
        .iter()
        .enumerate()
        .filter(|(t, _)| t % stride == 0 || *t == last)
        .map(|(t, it)| LoggedPolicy { t, theta: it.theta.theta().to_vec() })
        .collect();
    Ok(ReplicaResult {
        feasibility: FeasibilityEntry { method, replica, best_t: out.best.t, report },
        policies: PolicyLog {
            method,
            replica,
            seed,
            n_states: prep.mdp.n_states(),
            n_actions: prep.mdp.n_actions(),
            iterates,
        },
        trace: out.trace,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub prepared: Prepared,
    pub replicas: Vec<ReplicaResult>,
}

/// All (method, replica) runs, merged in config order.
pub fn train(cfg: &RunConfig, jobs: usize) -> Result<TrainOutput> {
    let prep = prepare(cfg)?;
    let tasks: Vec<(Method, usize)> =
        cfg.methods.iter().flat_map(|&m| (0..cfg.replicas).map(move |r| (m, r))).collect();
    let replicas = fan_out(tasks, jobs, |(m, r)| {
        run_replica(cfg, &prep, m, r).with_context(|| format!("{} replica {r}", m.name()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutput { prepared: prep, replicas })
}

pub const TRACE_PREFIX: [&str; 3] = ["method", "replica", "seed"];

pub fn trace_csv(replicas: &[ReplicaResult]) -> String {
    let mut s = TRACE_PREFIX.iter().chain(TRACE_COLUMNS.iter()).copied().collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in replicas {
        let p = &r.policies;
        for rec in &r.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                p.method.name(),
                p.replica,
                p.seed,
                rec.t,
                rec.lambda,
                rec.v_sigma_r_rho,
                rec.v_sigma_c_rho,
                rec.grad_mapping_norm,
                rec.alpha_t,
                rec.beta_t,
                rec.b_t
            );
        }
    }
    s
}

/// Reproduction record written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub env_hash: String,
    pub threshold: f64,
    pub constants: ConstantsTable,
    pub slater: SlaterEstimate,
    pub lambda_max: f64,
    pub schedule: Schedule,
    pub seeds: Vec<u64>,
    pub feasibility: Vec<FeasibilityEntry>,
    pub wall_clock_secs: f64,
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn manifest(cfg: &RunConfig, out: &TrainOutput, wall_clock_secs: f64) -> RunManifest {
    let p = &out.prepared;
    RunManifest {
        version: VERSION.to_owned(),
        config: cfg.clone(),
        env_hash: env_hash(&p.mdp),
        threshold: p.mdp.threshold(),
        constants: p.constants,
        slater: p.slater,
        lambda_max: p.lambda_max,
        schedule: p.schedule,
        seeds: (0..cfg.replicas).map(|i| cfg.replica_seed(i)).collect(),
        feasibility: out.replicas.iter().map(|r| r.feasibility.clone()).collect(),
        wall_clock_secs,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Writes trace.csv, policies.json, env.json and manifest.json.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, out: &TrainOutput, wall_clock_secs: f64) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("trace.csv"), trace_csv(&out.replicas))?;
    let logs: Vec<&PolicyLog> = out.replicas.iter().map(|r| &r.policies).collect();
    write_json(&dir.join("policies.json"), &logs)?;
    std::fs::write(dir.join("env.json"), MdpDocument::from_mdp(&out.prepared.mdp).to_json())?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, out, wall_clock_secs))
}
