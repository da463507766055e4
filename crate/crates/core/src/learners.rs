//! Batch linear TD(0) and its importance-weighted variants.
//!
//! One presentation accumulates `u += [k_y * y_hat - k_v * w.x(s)] x(s)` over
//! the whole batch and then applies `w += alpha * u`. The accumulation is
//! affine in `w`, so it is assembled once per fit as `u = b - A w` from the
//! distinct transition tuples of the batch and replayed every presentation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::empirical::{estimate, EmpiricalModel};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::TabularPolicy;
use crate::trajectory::Batch;

/// Weight-norm guard of the divergence check.
pub const DIVERGENCE_BOUND: f64 = 1e12;
pub const DEFAULT_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_MAX_PRESENTATIONS: usize = 1_000_000;
/// Step sizes of the Gridworld sweep.
pub const ALPHA_GRID: [f64; 5] = [5e-3, 1e-3, 5e-2, 1e-2, 5e-1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Plain TD(0).
    None,
    /// `pi_e / pi_b` on the TD-error.
    IsTrueBehavior,
    /// `pi_e / pi_b` on the bootstrap target only.
    IsTrueBehaviorEstimate,
    /// `pi_e / pi_hat` on the TD-error (PSEC-TD).
    PsecTdError,
    /// `pi_e / pi_hat` on the bootstrap target only (PSEC-TD-Estimate).
    PsecEstimate,
}

impl WeightMode {
    pub const ALL: [WeightMode; 5] = [
        WeightMode::None,
        WeightMode::IsTrueBehavior,
        WeightMode::IsTrueBehaviorEstimate,
        WeightMode::PsecTdError,
        WeightMode::PsecEstimate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightMode::None => "none",
            WeightMode::IsTrueBehavior => "is_true_behavior",
            WeightMode::IsTrueBehaviorEstimate => "is_true_behavior_estimate",
            WeightMode::PsecTdError => "psec_td_error",
            WeightMode::PsecEstimate => "psec_estimate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        WeightMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown weight mode `{s}`")))
    }

    pub fn needs_behavior(self) -> bool {
        matches!(self, WeightMode::IsTrueBehavior | WeightMode::IsTrueBehaviorEstimate)
    }

    fn on_error(self) -> bool {
        matches!(self, WeightMode::IsTrueBehavior | WeightMode::PsecTdError)
    }
}

/// Multiply the step size by `factor` every `every` presentations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decay {
    pub factor: f64,
    pub every: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitWeights {
    #[default]
    Zero,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub step_size: f64,
    #[serde(default)]
    pub decay: Option<Decay>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_presentations")]
    pub max_presentations: usize,
    pub weight_mode: WeightMode,
    #[serde(default)]
    pub init_weights: InitWeights,
    /// Keep the per-presentation delta trace in the report.
    #[serde(default = "default_true")]
    pub record_trace: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_max_presentations() -> usize {
    DEFAULT_MAX_PRESENTATIONS
}

fn default_true() -> bool {
    true
}

impl LearnerConfig {
    pub fn new(step_size: f64, weight_mode: WeightMode) -> Self {
        LearnerConfig {
            step_size,
            decay: None,
            threshold: DEFAULT_THRESHOLD,
            max_presentations: DEFAULT_MAX_PRESENTATIONS,
            weight_mode,
            init_weights: InitWeights::Zero,
            record_trace: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        if self.max_presentations == 0 {
            return Err(Error::Config("max_presentations must be at least 1".into()));
        }
        if let Some(d) = self.decay {
            if !(d.factor > 0.0 && d.factor <= 1.0) || d.every == 0 {
                return Err(Error::Config("decay needs factor in (0, 1] and every >= 1".into()));
            }
        }
        Ok(())
    }
}

/// `v(s) = w.x(s)` for every state of the feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

impl ValueEstimate {
    pub fn new(weights: Vec<f64>, features: &FeatureMap) -> Self {
        let values = features.values(&weights);
        ValueEstimate { weights, values }
    }

    pub fn value(&self, s: usize) -> f64 {
        self.values[s]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub presentations: usize,
    pub final_delta: f64,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Source of `pi_b` for the true-behavior importance modes.
#[derive(Clone, Copy, Debug)]
pub enum Behavior<'a> {
    Empirical,
    Policy(&'a TabularPolicy),
}

/// `pi_e(a|s) / pi_hat(a|s)` for an observed pair.
pub fn psec_weight(eval_policy: &TabularPolicy, em: &EmpiricalModel, s: usize, a: usize) -> Result<f64> {
    if em.sa_count(s, a) == 0 {
        return Err(Error::Precondition(format!("pair ({s}, {a}) is not in the batch")));
    }
    if s >= eval_policy.n_states() || a >= eval_policy.n_actions() {
        return Err(Error::MissingPolicyState { state: s });
    }
    Ok(eval_policy.prob(s, a) / em.mle_policy(s, a))
}

/// True when every action with `pi_e(a|s) > 0` is observed in every visited
/// non-terminal state.
pub fn eval_support_covered(eval_policy: &TabularPolicy, em: &EmpiricalModel) -> bool {
    em.source_states()
        .into_iter()
        .all(|s| (0..eval_policy.n_actions()).all(|a| eval_policy.prob(s, a) == 0.0 || em.sa_count(s, a) > 0))
}

/// Distinct `(s, a, r, s', terminal)` tuples with multiplicities, in a
/// canonical order.
pub(crate) fn compress(batch: &Batch) -> Vec<(usize, usize, f64, usize, bool, f64)> {
    let mut counts: BTreeMap<(usize, usize, u64, usize, bool), u64> = BTreeMap::new();
    for t in batch.transitions() {
        *counts.entry((t.state, t.action, t.reward.to_bits(), t.next_state, t.next_is_terminal)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((s, a, r, n, term), c)| (s, a, f64::from_bits(r), n, term, c as f64))
        .collect()
}

/// Per-transition multipliers `(k_y, k_v)` for the target and current value.
pub(crate) fn weight_fn<'a>(
    mode: WeightMode,
    eval_policy: &'a TabularPolicy,
    behavior: Behavior<'a>,
    em: &'a EmpiricalModel,
) -> Result<impl Fn(usize, usize) -> Result<(f64, f64)> + 'a> {
    if mode.needs_behavior() {
        if let Behavior::Policy(pb) = behavior {
            if pb.n_states() < em.n_states() || pb.n_actions() < em.n_actions() {
                return Err(Error::Shape("behavior policy does not cover the batch".into()));
            }
        }
    }
    Ok(move |s: usize, a: usize| -> Result<(f64, f64)> {
        let rho = match mode {
            WeightMode::None => return Ok((1.0, 1.0)),
            WeightMode::PsecTdError | WeightMode::PsecEstimate => psec_weight(eval_policy, em, s, a)?,
            WeightMode::IsTrueBehavior | WeightMode::IsTrueBehaviorEstimate => {
                let pb = match behavior {
                    Behavior::Policy(p) => p.prob(s, a),
                    Behavior::Empirical => em.mle_policy(s, a),
                };
                if pb <= 0.0 {
                    return Err(Error::Precondition(format!(
                        "behavior policy gives zero probability to observed pair ({s}, {a})"
                    )));
                }
                eval_policy.prob(s, a) / pb
            }
        };
        Ok(if mode.on_error() { (rho, rho) } else { (rho, 1.0) })
    })
}

/// Sparse affine form `u(w) = b - A w` of one presentation.
#[derive(Clone, Debug)]
pub(crate) struct AffineUpdate {
    pub dim: usize,
    /// CSR rows of `A`.
    pub row_start: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub b: Vec<f64>,
}

impl AffineUpdate {
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let mut acc = self.b[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                acc -= self.vals[k] * w[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for k in self.row_start[i]..self.row_start[i + 1] {
                m[(i, self.cols[k])] += self.vals[k];
            }
        }
        m
    }
}

pub(crate) fn check_inputs(batch: &Batch, features: &FeatureMap, eval_policy: &TabularPolicy, em: &EmpiricalModel) -> Result<()> {
    if batch.num_transitions() == 0 {
        return Err(Error::InvalidInput("batch has no transitions".into()));
    }
    features.check_states(em.n_states())?;
    if let Some(s) = em.source_states().into_iter().find(|&s| s >= eval_policy.n_states()) {
        return Err(Error::MissingPolicyState { state: s });
    }
    if eval_policy.n_actions() < em.n_actions() {
        return Err(Error::Shape("evaluation policy has fewer actions than the batch".into()));
    }
    Ok(())
}

/// Assembles `A = sum c x(s) [k_v x(s) - k_y gamma x(s')]^T` and
/// `b = sum c k_y r x(s)`, with `x(s') = 0` on terminal transitions.
pub(crate) fn assemble(
    batch: &Batch,
    features: &FeatureMap,
    gamma: f64,
    weights: impl Fn(usize, usize) -> Result<(f64, f64)>,
    reward_weighted: bool,
) -> Result<AffineUpdate> {
    let dim = features.dim();
    let mut a: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut b = vec![0.0; dim];
    for (s, act, r, next, term, c) in compress(batch) {
        let (ky, kv) = weights(s, act)?;
        let xs = features.nonzeros(s);
        let xn: &[(usize, f64)] = if term { &[] } else { features.nonzeros(next) };
        let kr = if reward_weighted { ky } else { 1.0 };
        for &(i, xi) in xs {
            b[i] += c * kr * r * xi;
            for &(j, xj) in xs {
                *a.entry((i, j)).or_default() += c * kv * xi * xj;
            }
            for &(j, xj) in xn {
                *a.entry((i, j)).or_default() -= c * ky * gamma * xi * xj;
            }
        }
    }
    let mut row_start = vec![0; dim + 1];
    let mut cols = Vec::with_capacity(a.len());
    let mut vals = Vec::with_capacity(a.len());
    for (&(i, j), &v) in &a {
        row_start[i + 1] += 1;
        cols.push(j);
        vals.push(v);
    }
    for i in 0..dim {
        row_start[i + 1] += row_start[i];
    }
    Ok(AffineUpdate { dim, row_start, cols, vals, b })
}

/// Batch linear TD(0) with the weighting selected by `config.weight_mode`.
/// The discount is `gamma`; a divergent run returns `Error::Divergence`.
pub fn fit_td0(
    batch: &Batch,
    features: &FeatureMap,
    eval_policy: &TabularPolicy,
    behavior: Behavior<'_>,
    gamma: f64,
    config: &LearnerConfig,
) -> Result<(ValueEstimate, FitReport)> {
    config.validate()?;
    let em = estimate(batch);
    check_inputs(batch, features, eval_policy, &em)?;
    let weights = weight_fn(config.weight_mode, eval_policy, behavior, &em)?;
    let update = assemble(batch, features, gamma, weights, true)?;
    iterate_td(&update, features, config)
}

pub(crate) fn iterate_td(update: &AffineUpdate, features: &FeatureMap, config: &LearnerConfig) -> Result<(ValueEstimate, FitReport)> {
    let dim = update.dim;
    let mut w = match &config.init_weights {
        InitWeights::Zero => vec![0.0; dim],
        InitWeights::Explicit(v) if v.len() == dim => v.clone(),
        InitWeights::Explicit(v) => {
            return Err(Error::Shape(format!("init weights have {} entries, features have {dim}", v.len())))
        }
    };
    let mut u = vec![0.0; dim];
    let mut alpha = config.step_size;
    let mut trace = Vec::new();
    let mut delta = f64::INFINITY;
    for k in 1..=config.max_presentations {
        update.apply(&w, &mut u);
        delta = 0.0;
        let mut norm = 0.0f64;
        for (wi, ui) in w.iter_mut().zip(&u) {
            let step = alpha * ui;
            *wi += step;
            delta = delta.max(step.abs());
            norm = norm.max(wi.abs());
        }
        if config.record_trace {
            trace.push(delta);
        }
        if !norm.is_finite() || !delta.is_finite() || norm > DIVERGENCE_BOUND {
            return Err(Error::Divergence {
                reason: format!("weight max-norm {norm:e} exceeded {DIVERGENCE_BOUND:e}"),
                residual: delta,
                iterations: k,
                trace,
            });
        }
        if delta < config.threshold {
            let report = FitReport { presentations: k, final_delta: delta, converged: true, trace };
            return Ok((ValueEstimate::new(w, features), report));
        }
        if let Some(d) = config.decay {
            if k % d.every == 0 {
                alpha *= d.factor;
            }
        }
    }
    log::debug!("no convergence after {} presentations, delta {delta:e}", config.max_presentations);
    let report = FitReport { presentations: config.max_presentations, final_delta: delta, converged: false, trace };
    Ok((ValueEstimate::new(w, features), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Episode, Transition};

    fn one_step() -> Batch {
        let t = Transition { state: 0, action: 0, reward: 1.0, next_state: 1, next_is_terminal: true };
        Batch::new(vec![Episode { transitions: vec![t], truncated: false }], 0, "t")
    }

    fn feats() -> FeatureMap {
        FeatureMap::from_columns(1, vec![vec![1.0], vec![0.0]], [1]).unwrap()
    }

    #[test]
    fn single_backup_converges_for_every_mode() {
        let pe = TabularPolicy::uniform(2, 1);
        for mode in WeightMode::ALL {
            let cfg = LearnerConfig::new(0.5, mode);
            let (v, rep) = fit_td0(&one_step(), &feats(), &pe, Behavior::Policy(&pe), 1.0, &cfg).unwrap();
            assert!(rep.converged, "{mode:?}");
            assert!((v.value(0) - 1.0).abs() < 1e-9);
            assert_eq!(v.value(1), 0.0);
        }
    }

    #[test]
    fn psec_weight_arithmetic() {
        let mk = |a, n| Transition { state: 0, action: a, reward: 0.0, next_state: n, next_is_terminal: true };
        let b = Batch::new(
            vec![Episode { transitions: vec![mk(0, 1)], truncated: false }; 3]
                .into_iter()
                .chain([Episode { transitions: vec![mk(1, 1)], truncated: false }])
                .collect(),
            0,
            "t",
        );
        let em = estimate(&b);
        let pe = TabularPolicy::uniform(2, 4);
        assert!((psec_weight(&pe, &em, 0, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((psec_weight(&pe, &em, 0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(psec_weight(&pe, &em, 0, 2), Err(Error::Precondition(_))));
        let half = TabularPolicy::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let b2 = Batch::new(
            vec![mk(0, 1), mk(0, 1), mk(1, 1)].into_iter().map(|t| Episode { transitions: vec![t], truncated: false }).collect(),
            0,
            "t",
        );
        assert!((psec_weight(&half, &estimate(&b2), 0, 0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn divergence_guard_fires() {
        let pe = TabularPolicy::uniform(2, 1);
        let mut cfg = LearnerConfig::new(3.0, WeightMode::None);
        cfg.max_presentations = 10_000;
        let err = fit_td0(&one_step(), &feats(), &pe, Behavior::Empirical, 1.0, &cfg).unwrap_err();
        match err {
            Error::Divergence { trace, .. } => assert!(!trace.is_empty()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zero_behavior_probability_is_rejected() {
        let pe = TabularPolicy::uniform(2, 2);
        let pb = TabularPolicy::new(2, 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        let cfg = LearnerConfig::new(0.5, WeightMode::IsTrueBehavior);
        let r = fit_td0(&one_step(), &FeatureMap::from_columns(1, vec![vec![1.0], vec![0.0]], [1]).unwrap(), &pe, Behavior::Policy(&pb), 1.0, &cfg);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn decay_and_explicit_init() {
        let pe = TabularPolicy::uniform(2, 1);
        let mut cfg = LearnerConfig::new(0.5, WeightMode::None);
        cfg.decay = Some(Decay { factor: 0.9, every: 2 });
        cfg.init_weights = InitWeights::Explicit(vec![1.0]);
        let (v, rep) = fit_td0(&one_step(), &feats(), &pe, Behavior::Empirical, 1.0, &cfg).unwrap();
        assert_eq!(rep.presentations, 1);
        assert_eq!(v.weights, vec![1.0]);
        cfg.init_weights = InitWeights::Explicit(vec![1.0, 2.0]);
        assert!(fit_td0(&one_step(), &feats(), &pe, Behavior::Empirical, 1.0, &cfg).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in WeightMode::ALL {
            assert_eq!(WeightMode::parse(m.name()).unwrap(), m);
        }
        assert!(WeightMode::parse("psec").is_err());
    }
}
