//! LSTD(0) and PSEC-LSTD(0).
//!
//! `A = sum rho x(s) (x(s) - gamma x(s'))^T`, `b = sum r x(s)` and
//! `(A + eps I) w = b`. With `weight_reward` the reward term also carries
//! `rho`, which makes the tabular solution coincide with the weighted TD
//! fixed point.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::empirical::estimate;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::learners::{assemble, check_inputs, weight_fn, Behavior, ValueEstimate, WeightMode};
use crate::mdp::TabularPolicy;
use crate::trajectory::Batch;

/// Condition number above which an unregularized system is refused.
pub const MAX_CONDITION: f64 = 1e12;
pub const EPSILON_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstdMode {
    None,
    IsTrueBehavior,
    Psec,
}

impl LstdMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LstdMode::None),
            "is_true_behavior" => Ok(LstdMode::IsTrueBehavior),
            "psec" => Ok(LstdMode::Psec),
            _ => Err(Error::Config(format!("unknown lstd mode `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LstdMode::None => "none",
            LstdMode::IsTrueBehavior => "is_true_behavior",
            LstdMode::Psec => "psec",
        }
    }

    fn weight_mode(self) -> WeightMode {
        match self {
            LstdMode::None => WeightMode::None,
            LstdMode::IsTrueBehavior => WeightMode::IsTrueBehavior,
            LstdMode::Psec => WeightMode::PsecTdError,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstdConfig {
    pub mode: LstdMode,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_reward: bool,
}

impl LstdConfig {
    pub fn new(mode: LstdMode, epsilon: f64) -> Self {
        LstdConfig { mode, epsilon, weight_reward: false }
    }
}

/// `(A, b)` of the batch.
pub fn lstd_system(
    batch: &Batch,
    features: &FeatureMap,
    eval_policy: &TabularPolicy,
    behavior: Behavior<'_>,
    gamma: f64,
    config: &LstdConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let em = estimate(batch);
    check_inputs(batch, features, eval_policy, &em)?;
    let weights = weight_fn(config.mode.weight_mode(), eval_policy, behavior, &em)?;
    let update = assemble(batch, features, gamma, weights, config.weight_reward)?;
    Ok((update.dense(), DVector::from_vec(update.b.clone())))
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn fit_lstd(
    batch: &Batch,
    features: &FeatureMap,
    eval_policy: &TabularPolicy,
    behavior: Behavior<'_>,
    gamma: f64,
    config: &LstdConfig,
) -> Result<ValueEstimate> {
    if !(config.epsilon >= 0.0 && config.epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be a finite non-negative number, got {}", config.epsilon)));
    }
    let (a, b) = lstd_system(batch, features, eval_policy, behavior, gamma, config)?;
    let dim = a.nrows();
    let reg = a + DMatrix::identity(dim, dim) * config.epsilon;
    let condition = condition_number(&reg);
    if config.epsilon == 0.0 && !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let w = reg.lu().solve(&b).ok_or(Error::Singular { condition })?;
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { condition });
    }
    Ok(ValueEstimate::new(w.iter().copied().collect(), features))
}
