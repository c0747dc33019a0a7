use rand::Rng;

use super::{Action, ActionKind, EnvSpec, Environment, Observation, TabularModel};
use crate::{Error, Result, SimRng};

/// A small MDP given by explicit tables. Mostly useful for exact checks.
#[derive(Clone, Debug)]
pub struct FiniteMdp {
    spec: EnvSpec,
    /// `transitions[s][a]` lists `(next_state, probability)`.
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// `features[s][a]` is the basis vector.
    features: Vec<Vec<Vec<f64>>>,
    initial: Vec<f64>,
    true_weights: Vec<f64>,
    c_max: f64,
}

impl FiniteMdp {
    pub fn new(
        transitions: Vec<Vec<Vec<(usize, f64)>>>,
        features: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
        true_weights: Vec<f64>,
        discount: f64,
        horizon: usize,
    ) -> Result<Self> {
        let ns = transitions.len();
        let na = transitions.first().map_or(0, Vec::len);
        let k = true_weights.len();
        let mut errs = Vec::new();
        if ns == 0 || na == 0 {
            errs.push("finite MDP needs at least one state and one action".to_string());
        }
        if features.len() != ns || initial.len() != ns {
            errs.push("feature and initial tables must have one entry per state".to_string());
        }
        let mut c_max = 0.0f64;
        for (s, rows) in transitions.iter().enumerate() {
            if rows.len() != na {
                errs.push(format!("state {s} has {} actions, expected {na}", rows.len()));
            }
            for (a, row) in rows.iter().enumerate() {
                let total: f64 = row.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-9 || row.iter().any(|&(t, p)| t >= ns || p < 0.0) {
                    errs.push(format!("transition row ({s}, {a}) is not a distribution"));
                }
            }
        }
        for (s, rows) in features.iter().enumerate() {
            if rows.len() != na {
                errs.push(format!("features for state {s} have {} actions", rows.len()));
            }
            for f in rows {
                if f.len() != k {
                    errs.push(format!("feature vector length {} differs from k = {k}", f.len()));
                }
                if f.iter().any(|&x| !(x >= 0.0)) {
                    errs.push("basis features must be non-negative".to_string());
                }
                c_max = f.iter().copied().fold(c_max, f64::max);
            }
        }
        if (initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errs.push("initial distribution must sum to 1".to_string());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let spec = EnvSpec {
            discount,
            horizon,
            obs_dim: 1,
            action_kind: ActionKind::Discrete(na),
            basis_dim: k,
        };
        spec.validate()?;
        Ok(Self {
            spec,
            transitions,
            features,
            initial,
            true_weights,
            c_max: c_max.max(f64::MIN_POSITIVE),
        })
    }

    fn sample_index(probs: impl Iterator<Item = (usize, f64)>, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }
}

impl Environment for FiniteMdp {
    type State = usize;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> usize {
        Self::sample_index(self.initial.iter().copied().enumerate(), rng)
    }

    fn step(&self, state: &usize, action: &Action, rng: &mut SimRng) -> Result<usize> {
        action.validate(self.spec.action_kind)?;
        let a = action.as_discrete().expect("validated discrete action");
        Ok(Self::sample_index(
            self.transitions[*state][a].iter().copied(),
            rng,
        ))
    }

    fn observe(&self, state: &usize) -> Observation {
        Observation::Index(*state)
    }

    fn basis_features(&self, state: &usize, action: &Action) -> Vec<f64> {
        let a = action.as_discrete().unwrap_or(0);
        self.features[*state][a].clone()
    }

    fn c_max(&self) -> f64 {
        self.c_max
    }

    fn true_weights(&self) -> &[f64] {
        &self.true_weights
    }

    fn tabular(&self) -> Option<&dyn TabularModel> {
        Some(self)
    }
}

impl TabularModel for FiniteMdp {
    fn n_states(&self) -> usize {
        self.transitions.len()
    }

    fn n_actions(&self) -> usize {
        self.transitions[0].len()
    }

    fn discount(&self) -> f64 {
        self.spec.discount
    }

    fn transitions(&self, state: usize, action: usize) -> Vec<(usize, f64)> {
        self.transitions[state][action].clone()
    }

    fn initial_distribution(&self) -> Vec<f64> {
        self.initial.clone()
    }

    fn state_action_features(&self, state: usize, action: usize) -> Vec<f64> {
        self.features[state][action].clone()
    }
}
