//! Environment abstraction and the built-in environments.
//!
//! Environments are immutable descriptions: all mutable simulation state is
//! carried in the `State` value and all randomness comes from the caller's
//! generator, so one description can be shared by many rollout workers.

mod finite;
mod gridworld;
pub mod tabular;
mod waterworld;

pub use finite::FiniteMdp;
pub use gridworld::{GridAction, Gridworld, GridworldConfig, StartDistribution};
pub use tabular::{ExactMdp, TabularModel};
pub use waterworld::{Waterworld, WaterworldConfig, WaterworldState};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Discrete(usize),
    Continuous(usize),
}

/// Interface-level description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub discount: f64,
    /// Rollout truncation length.
    pub horizon: usize,
    pub obs_dim: usize,
    pub action_kind: ActionKind,
    pub basis_dim: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(0.0..1.0).contains(&self.discount) {
            errs.push(format!("discount must lie in [0, 1), got {}", self.discount));
        }
        if self.horizon == 0 {
            errs.push("horizon must be at least 1".to_string());
        }
        if self.obs_dim == 0 {
            errs.push("obs_dim must be at least 1".to_string());
        }
        if self.basis_dim == 0 {
            errs.push("basis_dim must be at least 1".to_string());
        }
        match self.action_kind {
            ActionKind::Discrete(0) | ActionKind::Continuous(0) => {
                errs.push("action space must be non-empty".to_string())
            }
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// What a policy sees. Tabular environments expose the state index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Index(usize),
    Features(Vec<f64>),
}

impl Observation {
    pub fn as_index(&self) -> Option<usize> {
        match self {
            Observation::Index(i) => Some(*i),
            Observation::Features(_) => None,
        }
    }

    pub fn as_features(&self) -> Option<&[f64]> {
        match self {
            Observation::Index(_) => None,
            Observation::Features(f) => Some(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(a) => Some(a),
        }
    }

    /// Checks the action against an action space.
    pub fn validate(&self, kind: ActionKind) -> Result<()> {
        match (self, kind) {
            (Action::Discrete(a), ActionKind::Discrete(n)) if *a < n => Ok(()),
            (Action::Discrete(a), ActionKind::Discrete(n)) => Err(Error::InvalidAction(format!(
                "index {a} out of range for {n} actions"
            ))),
            (Action::Continuous(v), ActionKind::Continuous(d)) if v.len() == d => {
                if v.iter().all(|x| x.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidAction("non-finite action component".into()))
                }
            }
            (Action::Continuous(v), ActionKind::Continuous(d)) => Err(Error::InvalidAction(
                format!("expected a {d}-dimensional action, got {}", v.len()),
            )),
            (Action::Discrete(_), ActionKind::Continuous(_)) => Err(Error::InvalidAction(
                "discrete action given to a continuous action space".into(),
            )),
            (Action::Continuous(_), ActionKind::Discrete(_)) => Err(Error::InvalidAction(
                "continuous action given to a discrete action space".into(),
            )),
        }
    }
}

/// A Markov decision process with a bounded cost basis `φ(s, a) ∈ [0, C_max]^k`
/// and a hidden true cost used only for expert generation and evaluation.
pub trait Environment: Sync {
    type State: Clone + Send + Sync;

    fn spec(&self) -> &EnvSpec;

    /// Samples an initial state.
    fn reset(&self, rng: &mut SimRng) -> Self::State;

    /// Samples a successor state. Rejects actions outside the action space.
    fn step(&self, state: &Self::State, action: &Action, rng: &mut SimRng)
        -> Result<Self::State>;

    fn observe(&self, state: &Self::State) -> Observation;

    /// Cost basis vector of length `spec().basis_dim`.
    fn basis_features(&self, state: &Self::State, action: &Action) -> Vec<f64>;

    /// Upper bound on every basis component.
    fn c_max(&self) -> f64;

    /// Hidden weights of the true cost. Never handed to learners.
    fn true_weights(&self) -> &[f64];

    fn true_cost(&self, state: &Self::State, action: &Action) -> f64 {
        crate::dot(self.true_weights(), &self.basis_features(state, action))
    }

    fn is_terminal(&self, _state: &Self::State) -> bool {
        false
    }

    /// Exact model access, for environments with enumerable dynamics.
    fn tabular(&self) -> Option<&dyn TabularModel> {
        None
    }
}
