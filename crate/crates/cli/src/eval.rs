//! Evaluation of logged policies and the V_r / V_c charts.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use robust_crl::online::{evaluate_trace, EvalRow, Metric, EVAL_COLUMNS};
use robust_crl::rng::split_seed;
use robust_crl::stats::{mean, Band};
use robust_crl::{ContaminationSet, TabularCMDP};

use crate::config::Method;
use crate::document::{env_hash, MdpDocument};
use crate::pool::fan_out;
use crate::svg::{Chart, Series};
use crate::train::{PolicyLog, RunManifest};

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_policies(dir: &Path) -> Result<Vec<PolicyLog>> {
    let path = dir.join("policies.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads the environment and refuses one whose hash differs from the run's.
pub fn load_env(dir: &Path, env: Option<&Path>, manifest: &RunManifest) -> Result<TabularCMDP> {
    let path = env.map_or_else(|| dir.join("env.json"), Path::to_path_buf);
    let mdp = MdpDocument::load(&path)?.to_mdp()?;
    let hash = env_hash(&mdp);
    if hash != manifest.env_hash {
        bail!("environment hash mismatch: run used {}, {} has {hash}; refusing to evaluate", manifest.env_hash, path.display());
    }
    Ok(mdp)
}

/// Per-policy TD bands for each run, merged across replicas: with one
/// replica the band is over TD repetitions, otherwise over the replicas'
/// mean estimates.
pub fn evaluate_logs(logs: &[PolicyLog], manifest: &RunManifest, mdp: &TabularCMDP, jobs: usize) -> Result<Vec<EvalRow>> {
    let cfg = &manifest.config;
    let set = ContaminationSet::new(cfg.delta)?;
    let per_run = fan_out(logs.iter().collect(), jobs, |log: &PolicyLog| -> Result<Vec<EvalRow>> {
        evaluate_trace(
            &log.policies()?,
            log.method.name(),
            mdp,
            &set,
            cfg.eval.n_reps,
            cfg.eval.sample_size,
            split_seed(cfg.eval.seed, log.replica as u64),
        )
        .map_err(Into::into)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let runs: Vec<&Vec<EvalRow>> =
            logs.iter().zip(&per_run).filter(|(l, _)| l.method == method).map(|(_, r)| r).collect();
        let Some(first) = runs.first() else { continue };
        if runs.len() == 1 {
            rows.extend(first.iter().cloned());
            continue;
        }
        for (k, row) in first.iter().enumerate() {
            let means: Vec<f64> = runs.iter().map(|r| r[k].mean).collect();
            let exact: Vec<f64> = runs.iter().map(|r| r[k].exact).collect();
            let band = Band::of(&means);
            rows.push(EvalRow { mean: band.mean, p5: band.p5, p95: band.p95, exact: mean(&exact), ..row.clone() });
        }
    }
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = EVAL_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.iterate, r.method, r.metric.name(), r.mean, r.p5, r.p95, r.exact);
    }
    s
}

pub fn chart(rows: &[EvalRow], methods: &[Method], metric: Metric, b: Option<f64>) -> Chart {
    let series = methods
        .iter()
        .map(|m| Series {
            label: m.name().to_owned(),
            points: rows
                .iter()
                .filter(|r| r.method == m.name() && r.metric == metric)
                .map(|r| (r.iterate as f64, r.mean, r.p5, r.p95))
                .collect(),
        })
        .collect();
    Chart {
        title: format!("robust {}", metric.name()),
        x_label: "iterate".into(),
        y_label: format!("{} (TD estimate)", metric.name()),
        series,
        rule: b.map(|b| ("b".to_owned(), b)),
    }
}

/// Evaluates the run in `run_dir` and writes eval.csv, vr.svg and vc.svg to `out`.
pub fn run_eval(run_dir: &Path, env: Option<&Path>, out: &Path, jobs: usize) -> Result<Vec<EvalRow>> {
    let manifest = load_manifest(run_dir)?;
    let mdp = load_env(run_dir, env, &manifest)?;
    let logs = load_policies(run_dir)?;
    let rows = evaluate_logs(&logs, &manifest, &mdp, jobs)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("eval.csv"), eval_csv(&rows))?;
    let methods = &manifest.config.methods;
    std::fs::write(out.join("vr.svg"), chart(&rows, methods, Metric::Vr, None).render())?;
    std::fs::write(out.join("vc.svg"), chart(&rows, methods, Metric::Vc, Some(mdp.threshold())).render())?;
    Ok(rows)
}
