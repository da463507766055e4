//! Transitions, episodes and batches, with JSON-lines persistence.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// Learners never bootstrap through a transition with this flag set.
    pub next_is_terminal: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// Ended by the step cap rather than by entering a terminal.
    pub truncated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// True when each transition starts where the previous one ended.
    pub fn is_chained(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].next_state == w[1].state && !w[0].next_is_terminal)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub episodes: Vec<Episode>,
    pub seed: u64,
    pub behavior_policy_id: String,
}

/// One line of the batch file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeLine {
    index: usize,
    seed: u64,
    behavior_policy_id: String,
    truncated: bool,
    transitions: Vec<Transition>,
}

impl Batch {
    pub fn new(episodes: Vec<Episode>, seed: u64, behavior_policy_id: impl Into<String>) -> Self {
        Batch { episodes, seed, behavior_policy_id: behavior_policy_id.into() }
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.iter().all(Episode::is_empty)
    }

    /// Largest state id mentioned anywhere in the batch, if any.
    pub fn max_state(&self) -> Option<usize> {
        self.transitions().map(|t| t.state.max(t.next_state)).max()
    }

    /// Writes one JSON object per episode, each tagged with the batch metadata.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (index, ep) in self.episodes.iter().enumerate() {
            let line = EpisodeLine {
                index,
                seed: self.seed,
                behavior_policy_id: self.behavior_policy_id.clone(),
                truncated: ep.truncated,
                transitions: ep.transitions.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut batch = Batch::default();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ep: EpisodeLine = serde_json::from_str(&line)?;
            if ep.index != batch.episodes.len() {
                return Err(Error::InvalidInput(format!(
                    "line {}: episode index {} out of order",
                    lineno + 1,
                    ep.index
                )));
            }
            if batch.episodes.is_empty() {
                batch.seed = ep.seed;
                batch.behavior_policy_id = ep.behavior_policy_id;
            }
            batch.episodes.push(Episode { transitions: ep.transitions, truncated: ep.truncated });
        }
        Ok(batch)
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
    }
}
