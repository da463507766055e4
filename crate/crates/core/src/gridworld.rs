//! The 4x4 Gridworld with slip parameter `p`.
//!
//! States are row-major cell indices `row * 4 + col`; the agent starts at
//! (0,0) and (3,3) is terminal. Actions are up, right, down, left. The
//! intended move happens with probability `p`, each of the two perpendicular
//! moves with probability `(1 - p) / 2`. Moving into a wall leaves the agent
//! in place. The reward is a function of the cell entered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{softmax_policy, SoftmaxParams, TabularMDP, TabularPolicy};

pub const SIDE: usize = 4;
pub const N_STATES: usize = SIDE * SIDE;
pub const N_ACTIONS: usize = 4;
pub const START: usize = 0;
pub const GOAL: usize = cell(3, 3);

pub const fn cell(row: usize, col: usize) -> usize {
    row * SIDE + col
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Right => (0, 1),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
        }
    }

    fn perpendicular(self) -> [Action; 2] {
        match self {
            Action::Up | Action::Down => [Action::Left, Action::Right],
            Action::Left | Action::Right => [Action::Up, Action::Down],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridworldConfig {
    pub slip_p: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    1.0
}

impl Default for GridworldConfig {
    fn default() -> Self {
        GridworldConfig { slip_p: 1.0, discount: 1.0 }
    }
}

/// Reward for entering `s`.
pub fn entry_reward(s: usize) -> f64 {
    match s {
        GOAL => 100.0,
        x if x == cell(1, 1) => -10.0,
        x if x == cell(1, 3) => 1.0,
        _ => -1.0,
    }
}

/// Cell reached by moving `a` from `s`, staying put at walls.
pub fn moved(s: usize, a: Action) -> usize {
    let (r, c) = ((s / SIDE) as isize, (s % SIDE) as isize);
    let (dr, dc) = a.delta();
    let (nr, nc) = (r + dr, c + dc);
    if (0..SIDE as isize).contains(&nr) && (0..SIDE as isize).contains(&nc) {
        cell(nr as usize, nc as usize)
    } else {
        s
    }
}

pub fn build_gridworld(config: &GridworldConfig) -> Result<TabularMDP> {
    let p = config.slip_p;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("slip_p {p} is outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&config.discount) {
        return Err(Error::Config(format!("discount {} is outside [0, 1]", config.discount)));
    }
    let cube = N_STATES * N_ACTIONS * N_STATES;
    let mut transition = vec![0.0; cube];
    let mut reward = vec![0.0; cube];
    for s in 0..N_STATES {
        for a in Action::ALL {
            let base = (s * N_ACTIONS + a as usize) * N_STATES;
            for next in 0..N_STATES {
                reward[base + next] = entry_reward(next);
            }
            if s == GOAL {
                continue;
            }
            let [side_a, side_b] = a.perpendicular();
            transition[base + moved(s, a)] += p;
            transition[base + moved(s, side_a)] += (1.0 - p) / 2.0;
            transition[base + moved(s, side_b)] += (1.0 - p) / 2.0;
        }
    }
    let mut start = vec![0.0; N_STATES];
    start[START] = 1.0;
    TabularMDP::new(N_STATES, N_ACTIONS, transition, reward, config.discount, [GOAL], start)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    OnPolicy,
    OffPolicy,
}

/// `(evaluation, behavior)` policies for the Gridworld studies. On-policy both
/// are equiprobable; off-policy the evaluation policy is a softmax over
/// standard-normal preferences drawn from `seed`.
pub fn study_policies(mode: PolicyMode, seed: u64) -> (TabularPolicy, TabularPolicy) {
    let uniform = TabularPolicy::uniform(N_STATES, N_ACTIONS);
    match mode {
        PolicyMode::OnPolicy => (uniform.clone(), uniform),
        PolicyMode::OffPolicy => {
            let params = SoftmaxParams::standard_normal(N_STATES, N_ACTIONS, seed);
            let eval = softmax_policy(&params).expect("normal draws are finite");
            (eval, uniform)
        }
    }
}
