use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use robust_crl::counterexample::{counterexample, DEFAULT_LAMBDA};
use robust_crl_cli::config::{ConfigError, EnvConfig, EnvName, RuleName, RunConfig, ThresholdSetting};
use robust_crl_cli::document::{env_hash, MdpDocument};
use robust_crl_cli::pool::default_jobs;
use robust_crl_cli::train::{train, write_json, write_outputs};
use robust_crl_cli::{eval, verify};

#[derive(Parser)]
#[command(name = "robust-crl", version, about = "Robust constrained RL experiments under delta-contamination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Garnet,
    FrozenLake,
    Taxi,
    NChain,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment as JSON.
    Gen {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        sn: Option<usize>,
        #[arg(long)]
        an: Option<usize>,
        /// Frozen-Lake side length (4 or 8).
        #[arg(long)]
        size: Option<usize>,
        /// Chain length.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        slip: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        gamma: Option<f64>,
        /// A number, `half_random_max` or `active`.
        #[arg(long)]
        threshold: Option<String>,
        /// Radius used when the threshold comes from a rule.
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured methods and write trace.csv, policies.json, env.json and manifest.json.
    Train {
        /// TOML config, or a manifest.json to repeat a run.
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, e.g. `--set schedule.theta_step=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = "ROBUST_CRL_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run and write eval.csv, vr.svg and vc.svg.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Environment file; defaults to the run's env.json.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the non-convexity witness and write counterexample.json.
    Counterexample {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suites against an environment file.
    Verify {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_override(raw: &str) -> Result<(String, String), ConfigError> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| ConfigError::Invalid(format!("override `{raw}` is not KEY=VALUE")))
}

fn threshold_setting(raw: &str) -> Result<ThresholdSetting, ConfigError> {
    if let Ok(b) = raw.parse::<f64>() {
        return Ok(ThresholdSetting::Fixed(b));
    }
    match raw {
        "half_random_max" => Ok(ThresholdSetting::Rule(RuleName::HalfRandomMax)),
        "active" => Ok(ThresholdSetting::Rule(RuleName::Active)),
        _ => Err(ConfigError::Invalid(format!("unknown threshold `{raw}`"))),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { kind, sn, an, size, n, slip, seed, gamma, threshold, delta, out } => {
            let env = EnvConfig {
                kind: match kind {
                    Kind::Garnet => EnvName::Garnet,
                    Kind::FrozenLake => EnvName::FrozenLake,
                    Kind::Taxi => EnvName::Taxi,
                    Kind::NChain => EnvName::NChain,
                },
                sn,
                an,
                size,
                n,
                slip,
                path: None,
                seed,
                gamma,
                threshold: Some(threshold.as_deref().map_or(Ok(ThresholdSetting::Fixed(0.0)), threshold_setting)?),
            };
            let mdp = env.build(delta)?;
            write_or_print(out.as_deref(), &MdpDocument::from_mdp(&mdp).to_json())?;
            eprintln!("env hash {}", env_hash(&mdp));
        }
        Command::Train { config, overrides, seed, replicas, steps, jobs, out } => {
            let mut pairs = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>, _>>()?;
            for (key, value) in [("seed", seed.map(|v| v as usize)), ("replicas", replicas), ("steps", steps)] {
                if let Some(v) = value {
                    pairs.push((key.to_owned(), v.to_string()));
                }
            }
            let cfg = RunConfig::load(&config, &pairs)?;
            let start = Instant::now();
            let result = train(&cfg, jobs.unwrap_or_else(default_jobs))?;
            for r in &result.replicas {
                let f = &r.feasibility;
                if !f.report.feasible {
                    eprintln!(
                        "warning: {} replica {}: V_c - b = {:.4} at t = {} is below -2 * {:.4}",
                        f.method.name(),
                        f.replica,
                        f.report.slack,
                        f.best_t,
                        f.report.epsilon
                    );
                }
            }
            write_outputs(&out, &cfg, &result, start.elapsed().as_secs_f64())?;
            eprintln!("wrote {} runs to {}", result.replicas.len(), out.display());
        }
        Command::Eval { run, env, jobs, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            let rows = eval::run_eval(&run, env.as_deref(), &out, jobs.unwrap_or_else(default_jobs))?;
            eprintln!("wrote {} rows to {}", rows.len(), out.join("eval.csv").display());
        }
        Command::Counterexample { gamma, delta, lambda, out } => {
            let report = counterexample(gamma, delta, lambda)?;
            let [v1, v2, v3] = report.v_prime;
            println!("V'(1) = {v1:.9}  V'(2) = {v2:.9}  V'(3) = {v3:.9}");
            println!("closed-form visitation error = {:.3e}", report.closed_form_error);
            println!("non-convex: {}", report.verdict);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_json(&dir.join("counterexample.json"), &report)?;
            }
        }
        Command::Verify { env, delta, sigma, seed } => {
            let doc = MdpDocument::load(&env)?;
            let checks = verify::verify(&doc, delta, sigma, seed)?;
            for c in &checks {
                println!("{c}");
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
