//! `psec`: command-line front end for the batch value-prediction toolkit.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 divergence.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use psec_core::analysis::{alpha_stability_for, IterationKind};
use psec_core::experiment::{emit_plots, plot_dir, run_experiment, write_outputs, ExperimentConfig};
use psec_core::oracles::DEFAULT_TOL;
use psec_core::sampling::DEFAULT_MAX_STEPS;
use psec_core::{
    build_gridworld, check_convergence_conditions, estimate, fit_lstd, fit_td0, matrix_form, study_policies,
    solve_mdp_cee, solve_mrp_cee, solve_psec_cee, solve_true_values, Batch, Behavior, Error, FeatureMap,
    GridworldConfig, LearnerConfig, LstdConfig, LstdMode, PolicyMode, TabularMDP, TabularPolicy, WeightMode,
};

#[derive(Parser)]
#[command(name = "psec", version, about = "Batch TD(0), PSEC-TD, LSTD and certainty-equivalence oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ModelArgs {
    /// MDP JSON file; defaults to the deterministic 4x4 Gridworld.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Evaluation policy JSON; defaults to the uniform policy.
    #[arg(long)]
    eval_policy: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit an environment as JSON.
    Env {
        #[command(subcommand)]
        which: EnvCommand,
    },
    /// Emit one of the Gridworld study policies as JSON.
    Policy {
        #[arg(long, value_enum, default_value = "on-policy")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "eval")]
        which: WhichPolicy,
        /// Seed of the off-policy softmax preferences.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a batch of episodes to JSONL.
    Sample {
        #[arg(long)]
        env: Option<PathBuf>,
        /// Behavior policy JSON; defaults to uniform.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Batch linear TD(0) until convergence.
    Fit {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, default_value = "none")]
        mode: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-10)]
        delta: f64,
        #[arg(long, default_value_t = psec_core::learners::DEFAULT_MAX_PRESENTATIONS)]
        max_presentations: usize,
        #[arg(long, value_enum, default_value = "tabular")]
        features: FeaturesArg,
        #[command(flatten)]
        model: ModelArgs,
        /// True behavior policy JSON, needed by the is_true_behavior modes.
        #[arg(long)]
        behavior_policy: Option<PathBuf>,
        /// Omit the per-presentation delta trace from the report.
        #[arg(long)]
        no_trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LSTD(0) / PSEC-LSTD(0).
    Lstd {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, default_value = "none")]
        mode: String,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Also weight the reward term by rho.
        #[arg(long)]
        weight_reward: bool,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        behavior_policy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certainty-equivalence or true values.
    Oracle {
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long, value_enum)]
        which: OracleArg,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectral convergence report for a batch.
    Analyze {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Config-driven experiments.
    Experiment {
        #[command(subcommand)]
        action: ExperimentCommand,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    Gridworld {
        #[arg(long, default_value_t = 1.0)]
        slip_p: f64,
        #[arg(long, default_value_t = 1.0)]
        discount: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run a TOML experiment config and write CSV tables and plots.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Render SVG plots from an output directory.
    Plot { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OnPolicy,
    OffPolicy,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichPolicy {
    Eval,
    Behavior,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeaturesArg {
    Tabular,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Mrp,
    Mdp,
    Psec,
    True,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: Option<&Path>) -> Result<TabularMDP> {
    Ok(match path {
        Some(p) => TabularMDP::from_json(&read_text(p)?)?,
        None => build_gridworld(&GridworldConfig::default())?,
    })
}

fn load_policy(path: Option<&Path>, model: &TabularMDP) -> Result<TabularPolicy> {
    Ok(match path {
        Some(p) => TabularPolicy::from_json(&read_text(p)?)?,
        None => TabularPolicy::uniform(model.n_states(), model.n_actions()),
    })
}

fn load_batch(path: &Path) -> Result<Batch> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Batch::read_jsonl(BufReader::new(f))?)
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            if !body.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn pretty(v: &serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Env { which: EnvCommand::Gridworld { slip_p, discount, out } } => {
            let m = build_gridworld(&GridworldConfig { slip_p, discount })?;
            emit(out.as_deref(), &m.to_json()?)
        }
        Command::Policy { mode, which, seed, out } => {
            let mode = match mode {
                ModeArg::OnPolicy => PolicyMode::OnPolicy,
                ModeArg::OffPolicy => PolicyMode::OffPolicy,
            };
            let (eval, behavior) = study_policies(mode, seed);
            let p = match which {
                WhichPolicy::Eval => eval,
                WhichPolicy::Behavior => behavior,
            };
            emit(out.as_deref(), &p.to_json()?)
        }
        Command::Sample { env, policy, episodes, seed, max_steps, out } => {
            let model = load_model(env.as_deref())?;
            let pi = load_policy(policy.as_deref(), &model)?;
            let batch = psec_core::sample_batch(&model, &pi, episodes, seed, max_steps)?;
            emit(out.as_deref(), &batch.to_jsonl_string()?)
        }
        Command::Fit { batch, mode, alpha, delta, max_presentations, features: _, model, behavior_policy, no_trace, out } => {
            let m = load_model(model.env.as_deref())?;
            let pe = load_policy(model.eval_policy.as_deref(), &m)?;
            let pb = behavior_policy.as_deref().map(|p| load_policy(Some(p), &m)).transpose()?;
            let batch = load_batch(&batch)?;
            let f = FeatureMap::tabular(&m);
            let mut cfg = LearnerConfig::new(alpha, WeightMode::parse(&mode)?);
            cfg.threshold = delta;
            cfg.max_presentations = max_presentations;
            cfg.record_trace = !no_trace;
            let behavior = pb.as_ref().map_or(Behavior::Empirical, Behavior::Policy);
            if cfg.weight_mode.needs_behavior() && pb.is_none() {
                log::warn!("no --behavior-policy given; using the empirical policy as pi_b");
            }
            let (v, report) = fit_td0(&batch, &f, &pe, behavior, m.discount(), &cfg)?;
            emit(out.as_deref(), &pretty(&json!({ "estimate": v, "report": report }))?)
        }
        Command::Lstd { batch, mode, epsilon, weight_reward, model, behavior_policy, out } => {
            let m = load_model(model.env.as_deref())?;
            let pe = load_policy(model.eval_policy.as_deref(), &m)?;
            let pb = behavior_policy.as_deref().map(|p| load_policy(Some(p), &m)).transpose()?;
            let batch = load_batch(&batch)?;
            let cfg = LstdConfig { mode: LstdMode::parse(&mode)?, epsilon, weight_reward };
            let behavior = pb.as_ref().map_or(Behavior::Empirical, Behavior::Policy);
            let v = fit_lstd(&batch, &FeatureMap::tabular(&m), &pe, behavior, m.discount(), &cfg)?;
            emit(out.as_deref(), &pretty(&json!({ "estimate": v }))?)
        }
        Command::Oracle { batch, which, model, out } => {
            let m = load_model(model.env.as_deref())?;
            let pe = load_policy(model.eval_policy.as_deref(), &m)?;
            let g = m.discount();
            let values = match which {
                OracleArg::True => solve_true_values(&m, &pe, psec_core::mdp::TRUE_VALUE_TOL)?,
                _ => {
                    let path = batch.ok_or_else(|| Error::Config("--batch is required for CEE oracles".into()))?;
                    let em = estimate(&load_batch(&path)?);
                    match which {
                        OracleArg::Mrp => solve_mrp_cee(&em, g, DEFAULT_TOL)?,
                        OracleArg::Mdp => solve_mdp_cee(&em, g, DEFAULT_TOL)?,
                        _ => solve_psec_cee(&em, &pe, g, DEFAULT_TOL)?,
                    }
                }
            };
            emit(out.as_deref(), &pretty(&json!({ "values": values }))?)
        }
        Command::Analyze { batch, alpha, model, out } => {
            let m = load_model(model.env.as_deref())?;
            let pe = load_policy(model.eval_policy.as_deref(), &m)?;
            let em = estimate(&load_batch(&batch)?);
            let mf = matrix_form(&em, &pe, &FeatureMap::tabular(&m))?;
            let report = check_convergence_conditions(&mf, m.discount())?;
            let stability: Vec<_> = IterationKind::ALL
                .iter()
                .map(|&k| alpha_stability_for(&mf, m.discount(), alpha, k).map(|s| json!({ "kind": k, "stability": s })))
                .collect::<psec_core::Result<_>>()?;
            let body = json!({ "states": mf.states, "alpha": alpha, "conditions": report, "stability": stability });
            emit(out.as_deref(), &pretty(&body)?)
        }
        Command::Experiment { action: ExperimentCommand::Run { config, out, no_plots } } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("results").join(cfg.id()));
            let output = run_experiment(&cfg)?;
            let mut written = write_outputs(&output, &dir)?;
            if !no_plots {
                written.extend(emit_plots(&output.aggregates, &dir)?);
            }
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Experiment { action: ExperimentCommand::Plot { dir } } => {
            for p in plot_dir(&dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
