//! Trial execution, parameter selection and aggregation.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{AlgorithmSpec, ExperimentConfig, ExperimentKind, OracleKind, Reference};
use crate::empirical::{estimate, unvisited_fraction, EmpiricalModel};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::gridworld::{build_gridworld, study_policies};
use crate::learners::{fit_td0, Behavior, InitWeights, LearnerConfig};
use crate::lstd::{fit_lstd, LstdConfig};
use crate::mdp::{solve_true_values, TabularMDP, TabularPolicy, TRUE_VALUE_TOL};
use crate::metrics::{aggregate_trials, msve_values, StateWeighting};
use crate::oracles::{solve_mdp_cee, solve_mrp_cee, solve_psec_cee, DEFAULT_TOL};
use crate::sampling::sample_batch;
use crate::seed::trial_seed;
use crate::trajectory::Batch;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "PSEC_WORKERS";

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub experiment: String,
    pub algorithm: String,
    pub batch_size: usize,
    pub trial: usize,
    pub seed: u64,
    /// `inf` for divergent runs.
    pub msve: f64,
    pub presentations: usize,
    pub converged: bool,
    pub unvisited_fraction: f64,
    pub wall_time_ms: f64,
    pub divergent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRecord {
    pub experiment: String,
    pub algorithm: String,
    pub batch_size: usize,
    pub trials: usize,
    pub mean_msve: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub divergent_count: usize,
}

/// Mean MSVE of one grid point of a parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub experiment: String,
    pub algorithm: String,
    pub batch_size: usize,
    pub parameter: &'static str,
    pub value: f64,
    pub mean_msve: f64,
    pub divergent_count: usize,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioRecord {
    pub experiment: String,
    pub slip_p: f64,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRecord>,
    pub sweep: Vec<SweepRecord>,
    pub ratios: Vec<RatioRecord>,
}

impl ExperimentOutput {
    pub fn aggregate(&self, experiment: &str, algorithm: &str, batch_size: usize) -> Option<&AggregateRecord> {
        self.aggregates
            .iter()
            .find(|a| a.experiment == experiment && a.algorithm == algorithm && a.batch_size == batch_size)
    }

    fn extend(&mut self, other: ExperimentOutput) {
        self.trials.extend(other.trials);
        self.aggregates.extend(other.aggregates);
        self.sweep.extend(other.sweep);
        self.ratios.extend(other.ratios);
    }
}

#[derive(Clone, Copy, Debug)]
struct Outcome {
    msve: f64,
    presentations: usize,
    converged: bool,
    divergent: bool,
    wall_time_ms: f64,
}

struct Setup {
    model: TabularMDP,
    eval: TabularPolicy,
    behavior: TabularPolicy,
    features: FeatureMap,
    truth: Vec<f64>,
    weighting: StateWeighting,
}

/// Worker count from `PSEC_WORKERS`, if set.
pub fn worker_override() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every trial of `config`. The result depends only on the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let run = || match config.kind {
        ExperimentKind::StochasticitySweep => run_stochasticity_sweep(config),
        _ => run_single(config, &config.id()),
    };
    match worker_override()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// One data-efficiency run per slip value, plus the configured MSVE ratio.
pub fn run_stochasticity_sweep(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    if config.sweep.slip_ps.is_empty() {
        return Err(Error::Config("stochasticity sweep needs sweep.slip_ps".into()));
    }
    let mut out = ExperimentOutput::default();
    for &p in &config.sweep.slip_ps {
        let mut cfg = config.clone();
        cfg.environment.slip_p = p;
        let id = format!("{}/p={p}", config.id());
        let part = run_single(&cfg, &id)?;
        if let Some([num, den]) = &config.sweep.ratio {
            let n = config.batch_sizes[0];
            let mean = |label: &str| part.aggregate(&id, label, n).map_or(f64::NAN, |a| a.mean_msve);
            out.ratios.push(RatioRecord {
                experiment: id.clone(),
                slip_p: p,
                numerator: num.clone(),
                denominator: den.clone(),
                ratio: mean(num) / mean(den),
            });
        }
        out.extend(part);
    }
    Ok(out)
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let model = build_gridworld(&config.environment)?;
    let (eval, behavior) = study_policies(config.policy.mode, config.policy.eval_seed);
    let truth = solve_true_values(&model, &eval, TRUE_VALUE_TOL)?;
    Ok(Setup {
        features: FeatureMap::tabular(&model),
        weighting: StateWeighting::non_terminal_uniform(&model)?,
        model,
        eval,
        behavior,
        truth,
    })
}

fn padded(mut v: Vec<f64>, n: usize) -> Vec<f64> {
    v.resize(n.max(v.len()), 0.0);
    v
}

fn reference_values(setup: &Setup, em: &EmpiricalModel, reference: Reference) -> Result<Vec<f64>> {
    let gamma = setup.model.discount();
    let n = setup.model.n_states();
    Ok(match reference {
        Reference::True => setup.truth.clone(),
        Reference::MdpCee => padded(solve_mdp_cee(em, gamma, DEFAULT_TOL)?, n),
        Reference::PsecCee => padded(solve_psec_cee(em, &setup.eval, gamma, DEFAULT_TOL)?, n),
    })
}

fn param_grid<'a>(config: &'a ExperimentConfig, spec: &'a AlgorithmSpec) -> &'a [f64] {
    match spec {
        AlgorithmSpec::Td { .. } => config.alphas_for(spec),
        AlgorithmSpec::Lstd { .. } => config.epsilons_for(spec),
        AlgorithmSpec::Oracle { .. } => &[0.0],
    }
}

fn param_name(spec: &AlgorithmSpec) -> &'static str {
    match spec {
        AlgorithmSpec::Td { .. } => "alpha",
        AlgorithmSpec::Lstd { .. } => "epsilon",
        AlgorithmSpec::Oracle { .. } => "none",
    }
}

fn run_algorithm(
    setup: &Setup,
    spec: &AlgorithmSpec,
    param: f64,
    batch: &Batch,
    em: &EmpiricalModel,
    reference: &[f64],
    timed: bool,
) -> Result<Outcome> {
    let start = timed.then(Instant::now);
    let gamma = setup.model.discount();
    let behavior = Behavior::Policy(&setup.behavior);
    let fitted: Result<(Vec<f64>, usize, bool)> = match spec {
        AlgorithmSpec::Td { weight_mode, threshold, max_presentations, decay, .. } => {
            let cfg = LearnerConfig {
                step_size: param,
                decay: *decay,
                threshold: *threshold,
                max_presentations: *max_presentations,
                weight_mode: *weight_mode,
                init_weights: InitWeights::Zero,
                record_trace: false,
            };
            fit_td0(batch, &setup.features, &setup.eval, behavior, gamma, &cfg)
                .map(|(v, r)| (v.values, r.presentations, r.converged))
        }
        AlgorithmSpec::Lstd { mode, weight_reward, .. } => {
            let cfg = LstdConfig { mode: *mode, epsilon: param, weight_reward: *weight_reward };
            fit_lstd(batch, &setup.features, &setup.eval, behavior, gamma, &cfg).map(|v| (v.values, 0, true))
        }
        AlgorithmSpec::Oracle { which, .. } => {
            let v = match which {
                OracleKind::Mrp => solve_mrp_cee(em, gamma, DEFAULT_TOL),
                OracleKind::Mdp => solve_mdp_cee(em, gamma, DEFAULT_TOL),
                OracleKind::Psec => solve_psec_cee(em, &setup.eval, gamma, DEFAULT_TOL),
            };
            v.map(|v| (padded(v, setup.model.n_states()), 0, true))
        }
    };
    let wall_time_ms = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3);
    match fitted {
        Ok((values, presentations, converged)) => Ok(Outcome {
            msve: msve_values(&values, reference, &setup.weighting)?,
            presentations,
            converged,
            divergent: false,
            wall_time_ms,
        }),
        Err(Error::Divergence { iterations, .. }) => Ok(Outcome {
            msve: f64::INFINITY,
            presentations: iterations,
            converged: false,
            divergent: true,
            wall_time_ms,
        }),
        Err(Error::Singular { .. }) => Ok(Outcome {
            msve: f64::INFINITY,
            presentations: 0,
            converged: false,
            divergent: true,
            wall_time_ms,
        }),
        Err(e) => Err(e),
    }
}

struct Cell {
    batch_index: usize,
    trial: usize,
    seed: u64,
    unvisited: f64,
    /// `outcomes[algorithm][param]`.
    outcomes: Vec<Vec<Outcome>>,
}

fn run_single(config: &ExperimentConfig, id: &str) -> Result<ExperimentOutput> {
    let setup = setup(config)?;
    let reference = config.reference();
    let work: Vec<(usize, usize)> =
        (0..config.batch_sizes.len()).flat_map(|b| (0..config.trials).map(move |t| (b, t))).collect();
    let cells: Vec<Cell> = work
        .into_par_iter()
        .map(|(batch_index, trial)| {
            let n = config.batch_sizes[batch_index];
            let seed = trial_seed(config.base_seed, n, trial);
            let batch = sample_batch(&setup.model, &setup.behavior, n, seed, config.max_steps)?;
            let em = estimate(&batch);
            let target = reference_values(&setup, &em, reference)?;
            let outcomes = config
                .algorithms
                .iter()
                .map(|spec| {
                    param_grid(config, spec)
                        .iter()
                        .map(|&p| run_algorithm(&setup, spec, p, &batch, &em, &target, config.record_wall_time))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Cell { batch_index, trial, seed, unvisited: unvisited_fraction(&em, &setup.model, &setup.eval), outcomes })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput::default();
    for (ai, spec) in config.algorithms.iter().enumerate() {
        let grid = param_grid(config, spec);
        for (bi, &n) in config.batch_sizes.iter().enumerate() {
            let row: Vec<&Cell> = cells.iter().filter(|c| c.batch_index == bi).collect();
            let scores: Vec<(f64, usize)> = (0..grid.len())
                .map(|pi| {
                    let outs: Vec<Outcome> = row.iter().map(|c| c.outcomes[ai][pi]).collect();
                    let div = outs.iter().filter(|o| o.divergent).count();
                    (mean_of(outs.iter().filter(|o| !o.divergent).map(|o| o.msve)), div)
                })
                .collect();
            let chosen = select(&scores);
            if grid.len() > 1 || !matches!(spec, AlgorithmSpec::Oracle { .. }) {
                for (pi, &(mean, div)) in scores.iter().enumerate() {
                    out.sweep.push(SweepRecord {
                        experiment: id.to_string(),
                        algorithm: spec.label().to_string(),
                        batch_size: n,
                        parameter: param_name(spec),
                        value: grid[pi],
                        mean_msve: mean,
                        divergent_count: div,
                        selected: pi == chosen,
                    });
                }
            }
            let mut records: Vec<TrialRecord> = row
                .iter()
                .map(|c| {
                    let o = c.outcomes[ai][chosen];
                    TrialRecord {
                        experiment: id.to_string(),
                        algorithm: spec.label().to_string(),
                        batch_size: n,
                        trial: c.trial,
                        seed: c.seed,
                        msve: o.msve,
                        presentations: o.presentations,
                        converged: o.converged,
                        unvisited_fraction: c.unvisited,
                        wall_time_ms: o.wall_time_ms,
                        divergent: o.divergent,
                    }
                })
                .collect();
            records.sort_by_key(|r| r.trial);
            out.aggregates.push(aggregate_records(id, spec.label(), n, &records, config.confidence)?);
            out.trials.extend(records);
        }
    }
    Ok(out)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Minimum mean MSVE among grid points with no divergent trial; if every
/// point diverged somewhere, the fewest divergences win. Ties keep grid order.
fn select(scores: &[(f64, usize)]) -> usize {
    let key = |&(mean, div): &(f64, usize)| (div, if mean.is_nan() { f64::INFINITY } else { mean });
    let mut best = 0;
    for i in 1..scores.len() {
        let (a, b) = (key(&scores[i]), key(&scores[best]));
        if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) {
            best = i;
        }
    }
    best
}

fn aggregate_records(id: &str, label: &str, n: usize, records: &[TrialRecord], confidence: f64) -> Result<AggregateRecord> {
    let values: Vec<f64> = records.iter().filter(|r| !r.divergent).map(|r| r.msve).collect();
    let (mean_msve, ci_low, ci_high) = match values.len() {
        0 => (f64::NAN, f64::NAN, f64::NAN),
        1 => (values[0], f64::NAN, f64::NAN),
        _ => {
            let a = aggregate_trials(&values, confidence)?;
            (a.mean, a.ci_low, a.ci_high)
        }
    };
    Ok(AggregateRecord {
        experiment: id.to_string(),
        algorithm: label.to_string(),
        batch_size: n,
        trials: records.len(),
        mean_msve,
        ci_low,
        ci_high,
        divergent_count: records.len() - values.len(),
    })
}
