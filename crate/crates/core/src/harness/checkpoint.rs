use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::GreedyTable;
use crate::env::tabular::ExactMdp;
use crate::env::{Action, Observation};
use crate::policy::{Actor, PolicyParams};
use crate::{Error, Result, SimRng};

/// A policy as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoredPolicy {
    Parametric { params: PolicyParams },
    Greedy { actions: Vec<usize> },
}

impl StoredPolicy {
    /// Per-state action probabilities, for exact evaluation on a tabular
    /// model.
    pub fn state_probabilities(&self, mdp: &ExactMdp) -> Result<Vec<Vec<f64>>> {
        match self {
            StoredPolicy::Parametric { params } => params.state_probabilities(),
            StoredPolicy::Greedy { actions } => {
                if actions.len() != mdp.n_states {
                    return Err(Error::DimensionMismatch {
                        what: "greedy table length",
                        expected: mdp.n_states,
                        got: actions.len(),
                    });
                }
                Ok(mdp.deterministic_policy(actions))
            }
        }
    }
}

impl Actor for StoredPolicy {
    fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        match self {
            StoredPolicy::Parametric { params } => params.act(obs, rng),
            StoredPolicy::Greedy { actions } => GreedyTable {
                actions: actions.clone(),
            }
            .act(obs, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Learner name, or `expert`.
    pub label: String,
    /// Number of completed updates; `None` for experts.
    pub iteration: Option<usize>,
    pub env_hash: String,
    pub policy: StoredPolicy,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
