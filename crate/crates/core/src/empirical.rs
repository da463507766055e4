//! Maximum-likelihood quantities estimated from a batch, and the matrix
//! forms of the certainty-equivalence fixed points.
//!
//! Everything is defined on observed support only: no smoothing, no
//! pseudo-counts. "Visited non-terminal" states are the states that appear
//! as a transition source; they index every matrix in ascending id order.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{TabularMDP, TabularPolicy};
use crate::trajectory::Batch;

/// Counts and maximum-likelihood estimates from one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModel {
    n_states: usize,
    n_actions: usize,
    state_count: Vec<u64>,
    start_count: Vec<u64>,
    sa_count: Vec<u64>,
    sa_reward: Vec<f64>,
    triple_count: Vec<u64>,
    triple_reward: Vec<f64>,
    /// States seen as a next state flagged terminal.
    terminals_seen: BTreeSet<usize>,
    /// Every state id that appears anywhere in the batch.
    visited: BTreeSet<usize>,
    completed_episodes: usize,
    truncated_episodes: usize,
}

/// Counting pass over a batch. Works on empty batches too, in which case
/// every visited set is empty.
pub fn estimate(batch: &Batch) -> EmpiricalModel {
    let n_states = batch.max_state().map_or(0, |s| s + 1);
    let n_actions = batch.transitions().map(|t| t.action + 1).max().unwrap_or(0);
    let mut em = EmpiricalModel::empty(n_states, n_actions);
    for ep in &batch.episodes {
        if ep.transitions.is_empty() {
            continue;
        }
        em.start_count[ep.transitions[0].state] += 1;
        if ep.truncated {
            em.truncated_episodes += 1;
        } else {
            em.completed_episodes += 1;
        }
        for t in &ep.transitions {
            em.visited.insert(t.state);
            em.visited.insert(t.next_state);
            if t.next_is_terminal {
                em.terminals_seen.insert(t.next_state);
            }
            em.state_count[t.state] += 1;
            let sa = t.state * n_actions + t.action;
            em.sa_count[sa] += 1;
            em.sa_reward[sa] += t.reward;
            let sas = sa * n_states + t.next_state;
            em.triple_count[sas] += 1;
            em.triple_reward[sas] += t.reward;
        }
    }
    em
}

impl EmpiricalModel {
    fn empty(n_states: usize, n_actions: usize) -> Self {
        EmpiricalModel {
            n_states,
            n_actions,
            state_count: vec![0; n_states],
            start_count: vec![0; n_states],
            sa_count: vec![0; n_states * n_actions],
            sa_reward: vec![0.0; n_states * n_actions],
            triple_count: vec![0; n_states * n_actions * n_states],
            triple_reward: vec![0.0; n_states * n_actions * n_states],
            terminals_seen: BTreeSet::new(),
            visited: BTreeSet::new(),
            completed_episodes: 0,
            truncated_episodes: 0,
        }
    }

    fn resized(&self, n_states: usize, n_actions: usize) -> Self {
        let mut out = EmpiricalModel::empty(n_states, n_actions);
        out.terminals_seen = self.terminals_seen.clone();
        out.visited = self.visited.clone();
        out.completed_episodes = self.completed_episodes;
        out.truncated_episodes = self.truncated_episodes;
        for s in 0..self.n_states {
            out.state_count[s] = self.state_count[s];
            out.start_count[s] = self.start_count[s];
            for a in 0..self.n_actions {
                let (src, dst) = (s * self.n_actions + a, s * n_actions + a);
                out.sa_count[dst] = self.sa_count[src];
                out.sa_reward[dst] = self.sa_reward[src];
                for j in 0..self.n_states {
                    out.triple_count[dst * n_states + j] = self.triple_count[src * self.n_states + j];
                    out.triple_reward[dst * n_states + j] = self.triple_reward[src * self.n_states + j];
                }
            }
        }
        out
    }

    /// Combines counts from two disjoint parts of a batch.
    pub fn merge(&self, other: &EmpiricalModel) -> EmpiricalModel {
        let ns = self.n_states.max(other.n_states);
        let na = self.n_actions.max(other.n_actions);
        let mut out = self.resized(ns, na);
        let rhs = other.resized(ns, na);
        let add_u = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        let add_f = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add_u(&mut out.state_count, &rhs.state_count);
        add_u(&mut out.start_count, &rhs.start_count);
        add_u(&mut out.sa_count, &rhs.sa_count);
        add_f(&mut out.sa_reward, &rhs.sa_reward);
        add_u(&mut out.triple_count, &rhs.triple_count);
        add_f(&mut out.triple_reward, &rhs.triple_reward);
        out.terminals_seen.extend(rhs.terminals_seen);
        out.visited.extend(rhs.visited);
        out.completed_episodes += rhs.completed_episodes;
        out.truncated_episodes += rhs.truncated_episodes;
        out
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Non-terminal visited states (transition sources), ascending.
    pub fn source_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.state_count[s] > 0).collect()
    }

    pub fn terminal_states(&self) -> &BTreeSet<usize> {
        &self.terminals_seen
    }

    pub fn visited_states(&self) -> &BTreeSet<usize> {
        &self.visited
    }

    pub fn visited_actions(&self, s: usize) -> Vec<usize> {
        (0..self.n_actions).filter(|&a| self.sa_count(s, a) > 0).collect()
    }

    pub fn has_truncated(&self) -> bool {
        self.truncated_episodes > 0
    }

    pub fn completed_episodes(&self) -> usize {
        self.completed_episodes
    }

    pub fn state_count(&self, s: usize) -> u64 {
        self.state_count.get(s).copied().unwrap_or(0)
    }

    pub fn start_count(&self, s: usize) -> u64 {
        self.start_count.get(s).copied().unwrap_or(0)
    }

    pub fn sa_count(&self, s: usize, a: usize) -> u64 {
        if s >= self.n_states || a >= self.n_actions {
            return 0;
        }
        self.sa_count[s * self.n_actions + a]
    }

    pub fn triple_count(&self, s: usize, a: usize, next: usize) -> u64 {
        if s >= self.n_states || a >= self.n_actions || next >= self.n_states {
            return 0;
        }
        self.triple_count[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Observed next states of `(s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(move |&j| self.triple_count(s, a, j) > 0)
    }

    pub fn is_terminal_seen(&self, s: usize) -> bool {
        self.terminals_seen.contains(&s)
    }

    /// `pi_hat(a|s)`; zero off the observed support.
    pub fn mle_policy(&self, s: usize, a: usize) -> f64 {
        let d = self.state_count(s);
        if d == 0 {
            return 0.0;
        }
        self.sa_count(s, a) as f64 / d as f64
    }

    /// `P_hat(next|s,a)`; zero off the observed support.
    pub fn mle_dynamics(&self, s: usize, a: usize, next: usize) -> f64 {
        let c = self.sa_count(s, a);
        if c == 0 {
            return 0.0;
        }
        self.triple_count(s, a, next) as f64 / c as f64
    }

    /// `R_bar(s, a)`, the mean reward after taking `a` in `s`.
    pub fn mean_reward_sa(&self, s: usize, a: usize) -> Option<f64> {
        let c = self.sa_count(s, a);
        (c > 0).then(|| self.sa_reward[s * self.n_actions + a] / c as f64)
    }

    /// `r_bar^a_ij`, the mean reward on `(s, a, next)`.
    pub fn mean_reward_sas(&self, s: usize, a: usize, next: usize) -> Option<f64> {
        let c = self.triple_count(s, a, next);
        (c > 0).then(|| self.triple_reward[(s * self.n_actions + a) * self.n_states + next] / c as f64)
    }

    /// `R_bar(s)`, the mean reward of every transition leaving `s`.
    pub fn mean_reward_state(&self, s: usize) -> Option<f64> {
        let d = self.state_count(s);
        (d > 0).then(|| {
            (0..self.n_actions).map(|a| self.sa_reward[s * self.n_actions + a]).sum::<f64>() / d as f64
        })
    }

    /// `P_hat(next|s)` of the action-marginalized chain.
    pub fn mrp_dynamics(&self, s: usize, next: usize) -> f64 {
        let d = self.state_count(s);
        if d == 0 {
            return 0.0;
        }
        (0..self.n_actions).map(|a| self.triple_count(s, a, next)).sum::<u64>() as f64 / d as f64
    }

    /// `pi_hat` as a full policy table. Rows of unvisited states, which the
    /// estimate leaves undefined, are filled uniformly.
    pub fn mle_policy_table(&self, n_states: usize, n_actions: usize) -> Result<TabularPolicy> {
        if n_states < self.n_states || n_actions < self.n_actions {
            return Err(Error::Shape("requested table is smaller than the batch".into()));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            let row = &mut probs[s * n_actions..(s + 1) * n_actions];
            if self.state_count(s) == 0 {
                row.iter_mut().for_each(|p| *p = 1.0 / n_actions as f64);
            } else {
                let d = self.state_count(s) as f64;
                for (a, p) in row.iter_mut().enumerate() {
                    *p = self.sa_count(s, a) as f64 / d;
                }
            }
        }
        TabularPolicy::new(n_states, n_actions, probs)
    }

    /// JSON dump with explicit visited-id to matrix-index maps.
    pub fn to_json(&self) -> Result<String> {
        let sources = self.source_states();
        let dump = EmpiricalDump {
            n_states: self.n_states,
            n_actions: self.n_actions,
            visited_states: self.visited.iter().copied().collect(),
            non_terminal_states: sources.clone(),
            terminal_states: self.terminals_seen.iter().copied().collect(),
            matrix_index: sources.iter().enumerate().map(|(i, &s)| (s, i)).collect(),
            state_count: sources.iter().map(|&s| (s, self.state_count(s))).collect(),
            start_count: (0..self.n_states)
                .filter(|&s| self.start_count(s) > 0)
                .map(|s| (s, self.start_count(s)))
                .collect(),
            visited_actions: sources.iter().map(|&s| (s, self.visited_actions(s))).collect(),
            mle_policy: sources
                .iter()
                .flat_map(|&s| {
                    self.visited_actions(s)
                        .into_iter()
                        .map(move |a| PolicyEntry { state: s, action: a, prob: self.mle_policy(s, a) })
                })
                .collect(),
            triples: sources
                .iter()
                .flat_map(|&s| {
                    self.visited_actions(s).into_iter().flat_map(move |a| {
                        self.successors(s, a).map(move |j| TripleEntry {
                            state: s,
                            action: a,
                            next_state: j,
                            count: self.triple_count(s, a, j),
                            mle_prob: self.mle_dynamics(s, a, j),
                            mean_reward: self.mean_reward_sas(s, a, j).unwrap_or(0.0),
                        })
                    })
                })
                .collect(),
            completed_episodes: self.completed_episodes,
            truncated_episodes: self.truncated_episodes,
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

#[derive(Serialize)]
struct PolicyEntry {
    state: usize,
    action: usize,
    prob: f64,
}

#[derive(Serialize)]
struct TripleEntry {
    state: usize,
    action: usize,
    next_state: usize,
    count: u64,
    mle_prob: f64,
    mean_reward: f64,
}

#[derive(Serialize)]
struct EmpiricalDump {
    n_states: usize,
    n_actions: usize,
    visited_states: Vec<usize>,
    non_terminal_states: Vec<usize>,
    terminal_states: Vec<usize>,
    matrix_index: BTreeMap<usize, usize>,
    state_count: BTreeMap<usize, u64>,
    start_count: BTreeMap<usize, u64>,
    visited_actions: BTreeMap<usize, Vec<usize>>,
    mle_policy: Vec<PolicyEntry>,
    triples: Vec<TripleEntry>,
    completed_episodes: usize,
    truncated_episodes: usize,
}

/// Matrix forms over the visited non-terminal states.
///
/// `q`, `m`, `h` use `pi_hat`; `u`, `o`, `l` substitute the evaluation policy
/// over the observed actions. `m`/`o` collect expected reward into
/// non-terminal successors, `h`/`l` into terminal ones.
#[derive(Clone, Debug)]
pub struct CEMatrixForm {
    pub states: Vec<usize>,
    pub q: DMatrix<f64>,
    pub m: DVector<f64>,
    pub h: DVector<f64>,
    pub u: DMatrix<f64>,
    pub o: DVector<f64>,
    pub l: DVector<f64>,
    /// Diagonal of `D`: source counts `d_i`.
    pub d: DVector<f64>,
    /// Episode-start counts `mu_i`.
    pub mu: DVector<f64>,
    /// Feature columns of the visited non-terminal states.
    pub x: DMatrix<f64>,
    /// `sum_{a observed} pi_e(a|i)`, the eval-policy mass on observed actions.
    pub eval_support: DVector<f64>,
    /// `pi_hat`-weighted probability of entering a terminal.
    pub terminal_mass: DVector<f64>,
    pub has_truncated: bool,
    pub completed_episodes: usize,
}

impl CEMatrixForm {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: usize) -> Option<usize> {
        self.states.binary_search(&s).ok()
    }

    /// Lifts a vector over `states` to a full table, zero elsewhere.
    pub fn expand(&self, values: &DVector<f64>, n_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_states];
        for (i, &s) in self.states.iter().enumerate() {
            out[s] = values[i];
        }
        out
    }
}

pub fn matrix_form(em: &EmpiricalModel, eval_policy: &TabularPolicy, features: &FeatureMap) -> Result<CEMatrixForm> {
    let states = em.source_states();
    if let Some(&s) = states.iter().find(|&&s| s >= eval_policy.n_states()) {
        return Err(Error::MissingPolicyState { state: s });
    }
    if eval_policy.n_actions() < em.n_actions() {
        return Err(Error::Shape(format!(
            "evaluation policy has {} actions, batch uses {}",
            eval_policy.n_actions(),
            em.n_actions()
        )));
    }
    features.check_states(em.n_states())?;
    let n = states.len();
    let index: BTreeMap<usize, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut q = DMatrix::zeros(n, n);
    let mut u = DMatrix::zeros(n, n);
    let (mut m, mut h, mut o, mut l) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
    let mut eval_support = DVector::zeros(n);
    let mut terminal_mass = DVector::zeros(n);
    for (i, &s) in states.iter().enumerate() {
        for a in em.visited_actions(s) {
            let pi_hat = em.mle_policy(s, a);
            let pi_e = eval_policy.prob(s, a);
            eval_support[i] += pi_e;
            for j in em.successors(s, a) {
                let p = em.mle_dynamics(s, a, j);
                let r = em.mean_reward_sas(s, a, j).expect("observed triple");
                if em.is_terminal_seen(j) {
                    h[i] += pi_hat * p * r;
                    l[i] += pi_e * p * r;
                    terminal_mass[i] += pi_hat * p;
                } else {
                    m[i] += pi_hat * p * r;
                    o[i] += pi_e * p * r;
                    if let Some(&k) = index.get(&j) {
                        q[(i, k)] += pi_hat * p;
                        u[(i, k)] += pi_e * p;
                    }
                }
            }
        }
    }
    Ok(CEMatrixForm {
        d: DVector::from_iterator(n, states.iter().map(|&s| em.state_count(s) as f64)),
        mu: DVector::from_iterator(n, states.iter().map(|&s| em.start_count(s) as f64)),
        x: features.matrix_for(&states),
        states,
        q,
        m,
        h,
        u,
        o,
        l,
        eval_support,
        terminal_mass,
        has_truncated: em.has_truncated(),
        completed_episodes: em.completed_episodes(),
    })
}

/// Fraction of `(s, a, s')` triples with positive probability under
/// `(policy, model)` that never occur in the batch.
pub fn unvisited_fraction(em: &EmpiricalModel, model: &TabularMDP, policy: &TabularPolicy) -> f64 {
    let mut total = 0usize;
    let mut seen = 0usize;
    for s in model.non_terminal_states() {
        for a in 0..model.n_actions() {
            if policy.prob(s, a) <= 0.0 {
                continue;
            }
            for (j, &p) in model.transition_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    total += 1;
                    if em.triple_count(s, a, j) > 0 {
                        seen += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    1.0 - seen as f64 / total as f64
}
