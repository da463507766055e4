//! Certainty-equivalence fixed points.
//!
//! The iterative solvers return one value per state id of the batch
//! (`em.n_states()` entries). Terminals, unvisited states and states only
//! seen as the end of a truncated episode hold 0, and so contribute 0 to
//! every backup. Unobserved actions contribute 0 to the PSEC backup.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dp::{iterate, SparseChain};
use crate::empirical::{CEMatrixForm, EmpiricalModel};
use crate::error::{Error, Result};
use crate::lstd::condition_number;
use crate::mdp::{TabularPolicy, DP_MAX_ITERS};

pub const DEFAULT_TOL: f64 = 1e-12;
/// Condition number above which a closed-form solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

fn check(em: &EmpiricalModel, gamma: f64) -> Result<()> {
    if em.source_states().is_empty() {
        return Err(Error::Precondition("batch visits no non-terminal state".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("discount {gamma} is outside [0, 1]")));
    }
    Ok(())
}

fn successor_lives(em: &EmpiricalModel, j: usize) -> bool {
    !em.is_terminal_seen(j)
}

/// `v(s) = R_bar(s) + gamma sum_s' P_hat(s'|s) v(s')`.
pub fn solve_mrp_cee(em: &EmpiricalModel, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    check(em, gamma)?;
    let mut chain = SparseChain::new(em.n_states());
    for s in em.source_states() {
        chain.reward[s] = em.mean_reward_state(s).expect("source state");
        for j in (0..em.n_states()).filter(|&j| successor_lives(em, j)) {
            let p = em.mrp_dynamics(s, j);
            if p > 0.0 {
                chain.add(s, j, p);
            }
        }
    }
    iterate(&chain, gamma, tol, DP_MAX_ITERS)
}

fn policy_chain(em: &EmpiricalModel, pi: impl Fn(usize, usize) -> f64) -> SparseChain {
    let mut chain = SparseChain::new(em.n_states());
    for s in em.source_states() {
        for a in em.visited_actions(s) {
            let w = pi(s, a);
            if w == 0.0 {
                continue;
            }
            chain.reward[s] += w * em.mean_reward_sa(s, a).expect("observed pair");
            for j in em.successors(s, a).filter(|&j| successor_lives(em, j)) {
                chain.add(s, j, w * em.mle_dynamics(s, a, j));
            }
        }
    }
    chain
}

/// `v(s) = sum_a pi_hat(a|s) [R_bar(s,a) + gamma sum_s' P_hat(s'|s,a) v(s')]`.
pub fn solve_mdp_cee(em: &EmpiricalModel, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    check(em, gamma)?;
    iterate(&policy_chain(em, |s, a| em.mle_policy(s, a)), gamma, tol, DP_MAX_ITERS)
}

/// The MDP-CEE backup with `pi_e` in place of `pi_hat`, summed over the
/// observed actions of each state.
pub fn solve_psec_cee(em: &EmpiricalModel, eval_policy: &TabularPolicy, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    check(em, gamma)?;
    if let Some(s) = em.source_states().into_iter().find(|&s| s >= eval_policy.n_states()) {
        return Err(Error::MissingPolicyState { state: s });
    }
    if eval_policy.n_actions() < em.n_actions() {
        return Err(Error::Shape("evaluation policy has fewer actions than the batch".into()));
    }
    iterate(&policy_chain(em, |s, a| eval_policy.prob(s, a)), gamma, tol, DP_MAX_ITERS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySource {
    MlePolicy,
    EvalPolicy,
}

/// Direct solve of `(I - gamma Q) v = m + h` or `(I - gamma U) v = o + l`,
/// one entry per `mf.states`.
pub fn closed_form_values(mf: &CEMatrixForm, which: PolicySource, gamma: f64) -> Result<DVector<f64>> {
    let n = mf.len();
    let (p, rhs) = match which {
        PolicySource::MlePolicy => (&mf.q, &mf.m + &mf.h),
        PolicySource::EvalPolicy => (&mf.u, &mf.o + &mf.l),
    };
    let system = DMatrix::identity(n, n) - p * gamma;
    let condition = condition_number(&system);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    system.lu().solve(&rhs).ok_or(Error::Singular { condition })
}
