//! Mean squared value error and trial aggregation.
//!
//! Sums are taken over sorted terms so results do not depend on the order of
//! states or trials.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::learners::ValueEstimate;
use crate::mdp::TabularMDP;

/// Normalized non-negative weights `d(s)` over states.
#[derive(Clone, Debug, PartialEq)]
pub struct StateWeighting {
    weights: Vec<f64>,
}

impl StateWeighting {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput("state weights must be finite and non-negative".into()));
        }
        let total = exact_order_sum(weights.clone());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("state weights sum to {total}, expected 1")));
        }
        Ok(StateWeighting { weights })
    }

    /// Uniform over `states`, zero elsewhere.
    pub fn uniform_over(states: impl IntoIterator<Item = usize>, n_states: usize) -> Result<Self> {
        let states: Vec<usize> = states.into_iter().collect();
        if states.is_empty() || states.iter().any(|&s| s >= n_states) {
            return Err(Error::InvalidInput("uniform weighting needs a non-empty in-range support".into()));
        }
        let mut weights = vec![0.0; n_states];
        let w = 1.0 / states.len() as f64;
        for s in states {
            weights[s] = w;
        }
        Ok(StateWeighting { weights })
    }

    /// Uniform over the non-terminal states of `model`.
    pub fn non_terminal_uniform(model: &TabularMDP) -> Result<Self> {
        StateWeighting::uniform_over(model.non_terminal_states(), model.n_states())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(s, _)| s)
    }
}

fn exact_order_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().fold(0.0, |a, b| a + b)
}

/// `sum_s d(s) (v(s) - v_hat(s))^2`.
pub fn msve(estimate: &ValueEstimate, truth: &[f64], weighting: &StateWeighting) -> Result<f64> {
    msve_values(&estimate.values, truth, weighting)
}

pub fn msve_values(values: &[f64], truth: &[f64], weighting: &StateWeighting) -> Result<f64> {
    let mut terms = Vec::new();
    for s in weighting.support() {
        let (Some(v), Some(t)) = (values.get(s), truth.get(s)) else {
            return Err(Error::Shape(format!("state {s} is weighted but has no estimate or true value")));
        };
        terms.push(weighting.weights[s] * (t - v).powi(2));
    }
    Ok(exact_order_sum(terms))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Sample mean with a two-sided Student-t interval.
pub fn aggregate_trials(values: &[f64], confidence: f64) -> Result<Aggregate> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 values, got {}", values.len())));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidInput(format!("confidence {confidence} is outside (0, 1)")));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok(Aggregate { mean: values[0], ci_low: values[0], ci_high: values[0] });
    }
    let n = values.len() as f64;
    let mean = exact_order_sum(values.to_vec()) / n;
    let var = exact_order_sum(values.iter().map(|v| (v - mean).powi(2)).collect()) / (n - 1.0);
    if var == 0.0 || !var.is_finite() {
        let spread = if var.is_finite() { 0.0 } else { f64::INFINITY };
        return Ok(Aggregate { mean, ci_low: mean - spread, ci_high: mean + spread });
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.5 + confidence / 2.0);
    let half = t * (var / n).sqrt();
    Ok(Aggregate { mean, ci_low: mean - half, ci_high: mean + half })
}
