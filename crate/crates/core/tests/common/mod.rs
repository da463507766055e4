//! Test-side oracles. Nothing here calls the library's estimators or
//! solvers: values are rebuilt from raw transitions and solved by plain
//! Gaussian elimination.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use psec_core::{Batch, TabularMDP, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counts recomputed in one pass with plain maps.
#[derive(Debug, Default)]
pub struct Recount {
    pub state: BTreeMap<usize, u64>,
    pub sa: BTreeMap<(usize, usize), u64>,
    pub sas: BTreeMap<(usize, usize, usize), u64>,
    pub starts: BTreeMap<usize, u64>,
    pub reward_sas: BTreeMap<(usize, usize, usize), f64>,
    pub terminals: BTreeSet<usize>,
}

pub fn recount(batch: &Batch) -> Recount {
    let mut rc = Recount::default();
    for ep in &batch.episodes {
        if let Some(first) = ep.transitions.first() {
            *rc.starts.entry(first.state).or_default() += 1;
        }
        for t in &ep.transitions {
            *rc.state.entry(t.state).or_default() += 1;
            *rc.sa.entry((t.state, t.action)).or_default() += 1;
            *rc.sas.entry((t.state, t.action, t.next_state)).or_default() += 1;
            *rc.reward_sas.entry((t.state, t.action, t.next_state)).or_default() += t.reward;
            if t.next_is_terminal {
                rc.terminals.insert(t.next_state);
            }
        }
    }
    rc
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        assert!(a[col][col].abs() > 1e-300, "singular test system");
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Certainty-equivalence values over source states by direct solve.
///
/// With `eval = None` each source state averages over all of its
/// transitions (the action-marginalized chain); with `Some(pi)` each
/// observed action's transitions are averaged and mixed with `pi`.
pub fn cee_direct(batch: &Batch, eval: Option<&TabularPolicy>, gamma: f64) -> BTreeMap<usize, f64> {
    let rc = recount(batch);
    let sources: Vec<usize> = rc.state.keys().copied().collect();
    let index: BTreeMap<usize, usize> = sources.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = sources.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for t in batch.transitions() {
        let i = index[&t.state];
        let w = match eval {
            None => 1.0 / rc.state[&t.state] as f64,
            Some(pi) => pi.prob(t.state, t.action) / rc.sa[&(t.state, t.action)] as f64,
        };
        b[i] += w * t.reward;
        if !t.next_is_terminal {
            if let Some(&j) = index.get(&t.next_state) {
                a[i][j] -= w * gamma;
            }
        }
    }
    let x = gauss(a, b);
    sources.into_iter().zip(x).collect()
}

/// True values by direct solve of the policy-induced chain.
pub fn true_values_direct(model: &TabularMDP, pi: &TabularPolicy) -> Vec<f64> {
    let nt: Vec<usize> = model.non_terminal_states().collect();
    let index: BTreeMap<usize, usize> = nt.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = nt.len();
    let g = model.discount();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for (i, &s) in nt.iter().enumerate() {
        a[i][i] += 1.0;
        for act in 0..model.n_actions() {
            let p_a = pi.prob(s, act);
            for next in 0..model.n_states() {
                let p = p_a * model.prob(s, act, next);
                if p == 0.0 {
                    continue;
                }
                b[i] += p * model.reward(s, act, next);
                if let Some(&j) = index.get(&next) {
                    a[i][j] -= g * p;
                }
            }
        }
    }
    let x = gauss(a, b);
    let mut v = vec![0.0; model.n_states()];
    for (i, &s) in nt.iter().enumerate() {
        v[s] = x[i];
    }
    v
}

pub fn max_gap_on(values: &[f64], reference: &BTreeMap<usize, f64>) -> f64 {
    reference.iter().map(|(&s, &r)| (values[s] - r).abs()).fold(0.0, f64::max)
}

pub fn max_gap(a: &[f64], b: &[f64], states: &[usize]) -> f64 {
    states.iter().map(|&s| (a[s] - b[s]).abs()).fold(0.0, f64::max)
}

/// Random MDP with `n` states, the last one terminal, and every action
/// having positive probability of reaching the terminal. Rewards are
/// integers so sums are exact.
pub fn random_mdp(seed: u64, n: usize, n_actions: usize, gamma: f64) -> TabularMDP {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let term = n - 1;
    let mut transition = vec![0.0; n * n_actions * n];
    let mut reward = vec![0.0; n * n_actions * n];
    for s in 0..term {
        for a in 0..n_actions {
            let base = (s * n_actions + a) * n;
            let mut raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.6) { rng.random::<f64>() } else { 0.0 }).collect();
            raw[term] += 0.1 + rng.random::<f64>() * 0.3;
            let z: f64 = raw.iter().sum();
            let mut acc = 0.0;
            for j in 0..n - 1 {
                transition[base + j] = raw[j] / z;
                acc += transition[base + j];
            }
            transition[base + term] = 1.0 - acc;
            for j in 0..n {
                reward[base + j] = rng.random_range(-5..=5) as f64;
            }
        }
    }
    let mut start = vec![0.0; n];
    start[0] = 1.0;
    TabularMDP::new(n, n_actions, transition, reward, gamma, [term], start).unwrap()
}

/// Random strictly positive policy.
pub fn random_policy(seed: u64, n: usize, n_actions: usize) -> TabularPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mut probs = Vec::with_capacity(n * n_actions);
    for _ in 0..n {
        let raw: Vec<f64> = (0..n_actions).map(|_| 0.2 + rng.random::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let head: f64 = row[..n_actions - 1].iter().sum();
        row[n_actions - 1] = 1.0 - head;
        probs.extend(row);
    }
    TabularPolicy::new(n, n_actions, probs).unwrap()
}
