//! Tabular environment and policy types, model validation, and exact policy
//! evaluation on the true model.
//!
//! State and action ids are dense integers `0..n`. Tables are stored
//! row-major: `transition[(s * n_actions + a) * n_states + s']`.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dp;
use crate::error::{Error, Result};

/// Tolerance used for every sum-to-one check.
pub const PROB_TOL: f64 = 1e-12;

/// Default tolerance for [`solve_true_values`].
pub const TRUE_VALUE_TOL: f64 = 1e-12;

/// Iteration cap shared by the dynamic-programming solvers.
pub const DP_MAX_ITERS: usize = 1_000_000;

/// A complete finite MDP: dynamics, rewards, discount, terminals and start
/// distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpRepr", into = "MdpRepr")]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    terminals: BTreeSet<usize>,
    start_dist: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpRepr {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    terminals: Vec<usize>,
    start_dist: Vec<f64>,
}

impl TryFrom<MdpRepr> for TabularMDP {
    type Error = Error;

    fn try_from(r: MdpRepr) -> Result<Self> {
        TabularMDP::new(
            r.n_states,
            r.n_actions,
            r.transition,
            r.reward,
            r.discount,
            r.terminals,
            r.start_dist,
        )
    }
}

impl From<TabularMDP> for MdpRepr {
    fn from(m: TabularMDP) -> Self {
        MdpRepr {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: m.transition,
            reward: m.reward,
            discount: m.discount,
            terminals: m.terminals.into_iter().collect(),
            start_dist: m.start_dist,
        }
    }
}

impl TabularMDP {
    /// Builds a model after checking table shapes. Probabilistic soundness is
    /// reported separately by [`validate_mdp`].
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        terminals: impl IntoIterator<Item = usize>,
        start_dist: Vec<f64>,
    ) -> Result<Self> {
        let cube = n_states * n_actions * n_states;
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Shape("model needs at least one state and one action".into()));
        }
        if transition.len() != cube {
            return Err(Error::Shape(format!(
                "transition table has {} entries, expected {cube}",
                transition.len()
            )));
        }
        if reward.len() != cube {
            return Err(Error::Shape(format!(
                "reward table has {} entries, expected {cube}",
                reward.len()
            )));
        }
        if start_dist.len() != n_states {
            return Err(Error::Shape(format!(
                "start_dist has {} entries, expected {n_states}",
                start_dist.len()
            )));
        }
        let terminals: BTreeSet<usize> = terminals.into_iter().collect();
        if let Some(&t) = terminals.iter().find(|&&t| t >= n_states) {
            return Err(Error::Shape(format!("terminal state {t} out of range")));
        }
        Ok(TabularMDP {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            terminals,
            start_dist,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Returns a copy with a different discount.
    pub fn with_discount(&self, discount: f64) -> Self {
        TabularMDP { discount, ..self.clone() }
    }

    pub fn terminals(&self) -> &BTreeSet<usize> {
        &self.terminals
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminals.contains(&s)
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|s| !self.is_terminal(*s))
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    fn row_offset(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_states
    }

    /// `P(.|s,a)` as a slice over next states.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.row_offset(s, a);
        &self.transition[o..o + self.n_states]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.row_offset(s, a);
        &self.reward[o..o + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.row_offset(s, a) + next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.row_offset(s, a) + next]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-state action distribution `pi(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyRepr {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<PolicyRepr> for TabularPolicy {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        TabularPolicy::new(r.n_states, r.n_actions, r.probs)
    }
}

impl From<TabularPolicy> for PolicyRepr {
    fn from(p: TabularPolicy) -> Self {
        PolicyRepr { n_states: p.n_states, n_actions: p.n_actions, probs: p.probs }
    }
}

impl TabularPolicy {
    /// Builds a policy, rejecting rows that are not probability distributions.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidPolicy(format!("state {s} has probability {p}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("state {s} row sums to {sum}")));
            }
        }
        Ok(TabularPolicy { n_states, n_actions, probs })
    }

    /// The equiprobable policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// A policy that always picks `actions[s]`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Shape(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        TabularPolicy::new(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub(crate) fn check_shape(&self, model: &TabularMDP) -> Result<()> {
        if self.n_states != model.n_states || self.n_actions != model.n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, model is {}x{}",
                self.n_states, self.n_actions, model.n_states, model.n_actions
            )));
        }
        Ok(())
    }
}

/// Softmax preferences `theta(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl SoftmaxParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        SoftmaxParams { n_states, n_actions, theta: vec![0.0; n_states * n_actions] }
    }

    /// Preferences drawn i.i.d. from a standard normal under `seed`.
    pub fn standard_normal(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let theta = (0..n_states * n_actions)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        SoftmaxParams { n_states, n_actions, theta }
    }
}

/// `pi(a|s) = exp(theta_sa) / sum_a' exp(theta_sa')`, computed with the row
/// maximum subtracted.
pub fn softmax_policy(params: &SoftmaxParams) -> Result<TabularPolicy> {
    let (ns, na) = (params.n_states, params.n_actions);
    if params.theta.len() != ns * na || na == 0 {
        return Err(Error::Shape(format!(
            "theta has {} entries for a {ns}x{na} table",
            params.theta.len()
        )));
    }
    if let Some(i) = params.theta.iter().position(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite theta at state {}, action {}",
            i / na,
            i % na
        )));
    }
    let mut probs = Vec::with_capacity(ns * na);
    for row in params.theta.chunks(na) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|t| (t - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        probs.extend(exps.iter().map(|e| e / z));
    }
    TabularPolicy::new(ns, na, probs)
}

/// One violated model invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ProbabilityOutOfRange { state: usize, action: usize, next: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64, deficit: f64 },
    DiscountOutOfRange { value: f64 },
    StartDistribution { sum: f64 },
    NonFiniteReward { state: usize, action: usize, next: usize },
    /// `discount == 1` but some non-terminal states cannot reach a terminal.
    ImproperUndiscounted { stuck_states: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ProbabilityOutOfRange { state, action, next, value } => write!(
                f,
                "P({next}|{state},{action}) = {value} is outside [0, 1]"
            ),
            Violation::RowSum { state, action, sum, deficit } => write!(
                f,
                "transition row ({state},{action}) sums to {sum} (deficit {deficit:e})"
            ),
            Violation::DiscountOutOfRange { value } => {
                write!(f, "discount {value} is outside [0, 1]")
            }
            Violation::StartDistribution { sum } => {
                write!(f, "start distribution sums to {sum}")
            }
            Violation::NonFiniteReward { state, action, next } => {
                write!(f, "reward R({state},{action},{next}) is not finite")
            }
            Violation::ImproperUndiscounted { stuck_states } => write!(
                f,
                "discount is 1 but states {stuck_states:?} cannot reach a terminal"
            ),
        }
    }
}

/// Lists every violated invariant of `model`; empty iff well-formed.
pub fn validate_mdp(model: &TabularMDP) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(0.0..=1.0).contains(&model.discount) {
        out.push(Violation::DiscountOutOfRange { value: model.discount });
    }
    for s in model.non_terminal_states() {
        for a in 0..model.n_actions {
            let row = model.transition_row(s, a);
            for (next, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::ProbabilityOutOfRange { state: s, action: a, next, value: p });
                }
                if !model.reward(s, a, next).is_finite() {
                    out.push(Violation::NonFiniteReward { state: s, action: a, next });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(Violation::RowSum { state: s, action: a, sum, deficit: 1.0 - sum });
            }
        }
    }
    let start_sum: f64 = model.start_dist.iter().sum();
    if (start_sum - 1.0).abs() > PROB_TOL || model.start_dist.iter().any(|p| *p < 0.0) {
        out.push(Violation::StartDistribution { sum: start_sum });
    }
    if model.discount == 1.0 {
        let stuck = states_without_exit(model, |_, _| true);
        if !stuck.is_empty() {
            out.push(Violation::ImproperUndiscounted { stuck_states: stuck });
        }
    }
    out
}

/// Non-terminal states from which no terminal is reachable when actions are
/// restricted to `allowed(s, a)`. A finite chain where every state has a
/// positive-probability path to a terminal is absorbed with probability 1.
pub fn states_without_exit(model: &TabularMDP, allowed: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let n = model.n_states;
    let mut reaches = vec![false; n];
    for &t in &model.terminals {
        reaches[t] = true;
    }
    loop {
        let mut changed = false;
        for s in model.non_terminal_states() {
            if reaches[s] {
                continue;
            }
            let exits = (0..model.n_actions).any(|a| {
                allowed(s, a)
                    && model
                        .transition_row(s, a)
                        .iter()
                        .enumerate()
                        .any(|(j, &p)| p > 0.0 && reaches[j])
            });
            if exits {
                reaches[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    model.non_terminal_states().filter(|s| !reaches[*s]).collect()
}

/// Exact `v^pi` on the true model by iterated Bellman sweeps.
///
/// Terminal states are exactly 0. With `discount == 1` every non-terminal
/// state must reach a terminal under the policy's support.
pub fn solve_true_values(model: &TabularMDP, policy: &TabularPolicy, tol: f64) -> Result<Vec<f64>> {
    policy.check_shape(model)?;
    let violations = validate_mdp(model);
    if let Some(v) = violations
        .iter()
        .find(|v| !matches!(v, Violation::ImproperUndiscounted { .. }))
    {
        return Err(Error::InvalidModel(v.to_string()));
    }
    let gamma = model.discount;
    if gamma == 1.0 {
        let stuck = states_without_exit(model, |s, a| policy.prob(s, a) > 0.0);
        if !stuck.is_empty() {
            return Err(Error::InvalidModel(format!(
                "discount is 1 and states {stuck:?} never terminate under the policy"
            )));
        }
    }

    let n = model.n_states;
    let mut chain = dp::SparseChain::new(n);
    for s in model.non_terminal_states() {
        for a in 0..model.n_actions {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (j, &p) in model.transition_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let w = pa * p;
                chain.reward[s] += w * model.reward(s, a, j);
                if !model.is_terminal(j) {
                    chain.add(s, j, w);
                }
            }
        }
    }
    dp::iterate(&chain, gamma, tol, DP_MAX_ITERS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMDP {
        // state 0 -> {0: 0.5, 1: 0.5} under either action, 1 terminal
        TabularMDP::new(
            2,
            2,
            vec![0.5, 0.5, 0.2, 0.8, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0],
            0.9,
            [1],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn deficient_row_is_reported() {
        let mut m = two_state();
        m.transition[1] = 0.4;
        let report = validate_mdp(&m);
        assert_eq!(report.len(), 1);
        match &report[0] {
            Violation::RowSum { state, action, deficit, .. } => {
                assert_eq!((*state, *action), (0, 0));
                assert!((deficit - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn discount_out_of_range_is_reported() {
        let m = two_state().with_discount(1.1);
        let report = validate_mdp(&m);
        assert!(report.iter().any(|v| matches!(v, Violation::DiscountOutOfRange { .. })));
    }

    #[test]
    fn undiscounted_without_exit_is_reported() {
        let m = TabularMDP::new(
            2,
            1,
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0; 4],
            1.0,
            [1],
            vec![1.0, 0.0],
        )
        .unwrap();
        let report = validate_mdp(&m);
        assert_eq!(report, vec![Violation::ImproperUndiscounted { stuck_states: vec![0] }]);
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax_policy(&SoftmaxParams::zeros(3, 4)).unwrap();
        assert!(p.probs.iter().all(|x| (*x - 0.25).abs() < 1e-15));

        let p = softmax_policy(&SoftmaxParams {
            n_states: 1,
            n_actions: 2,
            theta: vec![2f64.ln(), 0.0],
        })
        .unwrap();
        assert!((p.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.prob(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let params = SoftmaxParams { n_states: 1, n_actions: 2, theta: vec![f64::NAN, 0.0] };
        assert!(softmax_policy(&params).is_err());
    }

    #[test]
    fn softmax_large_preferences_do_not_overflow() {
        let params = SoftmaxParams { n_states: 1, n_actions: 2, theta: vec![1000.0, 999.0] };
        let p = softmax_policy(&params).unwrap();
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_normal_rows_sum_to_one() {
        let p = softmax_policy(&SoftmaxParams::standard_normal(16, 4, 7)).unwrap();
        for s in 0..16 {
            assert!((p.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.row(s).iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn zero_discount_gives_one_step_reward() {
        let m = two_state().with_discount(0.0);
        let pi = TabularPolicy::uniform(2, 2);
        let v = solve_true_values(&m, &pi, 1e-12).unwrap();
        // 0.5 * (0.5 * 1 + 0.5 * 2) + 0.5 * (0.2 * 3 + 0.8 * 4)
        assert!((v[0] - (0.75 + 1.9)).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn improper_policy_is_rejected_when_undiscounted() {
        // action 0 self-loops forever, action 1 terminates
        let m = TabularMDP::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![-1.0; 8],
            1.0,
            [1],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(validate_mdp(&m).is_empty());
        let stay = TabularPolicy::deterministic(2, &[0, 0]).unwrap();
        assert!(solve_true_values(&m, &stay, 1e-12).is_err());
        let go = TabularPolicy::deterministic(2, &[1, 1]).unwrap();
        assert_eq!(solve_true_values(&m, &go, 1e-12).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn json_shape_is_checked() {
        let bad = r#"{"n_states":2,"n_actions":1,"transition":[1.0],"reward":[0.0],
            "discount":1.0,"terminals":[1],"start_dist":[1.0,0.0]}"#;
        assert!(TabularMDP::from_json(bad).is_err());
        let bad_policy = r#"{"n_states":1,"n_actions":2,"probs":[0.7,0.7]}"#;
        assert!(TabularPolicy::from_json(bad_policy).is_err());
    }
}
