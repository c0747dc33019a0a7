//! Experts and reference policies: value iteration on tabular MDPs, expert
//! trajectory sampling, behavioral cloning and the uniform-random policy.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::tabular::ExactMdp;
use crate::env::{Action, ActionKind, Environment, Observation};
use crate::policy::Actor;
use crate::rollout::{self, TrajectoryBatch};
use crate::{Error, Result, SimRng};

const VI_TOLERANCE: f64 = 1e-10;

/// Optimal action values for a fixed cost, with the greedy policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSolution {
    /// `q_values[s][a]`.
    pub q_values: Vec<Vec<f64>>,
    pub greedy_policy: Vec<usize>,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
}

impl TabularSolution {
    pub fn actor(&self) -> GreedyTable {
        GreedyTable {
            actions: self.greedy_policy.clone(),
        }
    }
}

/// Cost-minimizing value iteration until the sup-norm change is at most
/// `1e-10`. Greedy ties go to the lowest action index.
pub fn value_iteration(mdp: &ExactMdp, cost_weights: &[f64]) -> Result<TabularSolution> {
    if cost_weights.len() != mdp.basis_dim {
        return Err(Error::DimensionMismatch {
            what: "cost weights",
            expected: mdp.basis_dim,
            got: cost_weights.len(),
        });
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let costs: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..na).map(|a| crate::dot(cost_weights, mdp.features(s, a))).collect())
        .collect();
    let mut v = vec![0.0; ns];
    let mut q = costs.clone();
    let mut residual;
    loop {
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = mdp.transitions(s, a).iter().map(|&(t, p)| p * v[t]).sum();
                q[s][a] = costs[s][a] + mdp.discount * next;
            }
        }
        residual = 0.0f64;
        for s in 0..ns {
            let best = q[s].iter().copied().fold(f64::INFINITY, f64::min);
            residual = residual.max((best - v[s]).abs());
            v[s] = best;
        }
        if residual <= VI_TOLERANCE {
            break;
        }
    }
    let greedy_policy = q
        .iter()
        .map(|row| {
            let mut best = 0;
            for (a, &x) in row.iter().enumerate().skip(1) {
                if x < row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok(TabularSolution {
        q_values: q,
        greedy_policy,
        residual,
    })
}

/// Deterministic state-indexed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTable {
    pub actions: Vec<usize>,
}

impl Actor for GreedyTable {
    fn act(&self, obs: &Observation, _rng: &mut SimRng) -> Result<Action> {
        let s = state_index(obs)?;
        self.actions
            .get(s)
            .map(|&a| Action::Discrete(a))
            .ok_or_else(|| Error::DimensionMismatch {
                what: "state index bound",
                expected: self.actions.len(),
                got: s,
            })
    }
}

fn state_index(obs: &Observation) -> Result<usize> {
    obs.as_index().ok_or_else(|| {
        Error::UnsupportedObservation("tabular lookup needs a state index".into())
    })
}

/// Samples `n_trajectories` from `expert` and tags the batch with `policy_id`.
pub fn make_expert_batch<E: Environment, A: Actor + ?Sized>(
    env: &E,
    expert: &A,
    policy_id: &str,
    n_trajectories: usize,
    rng: &mut SimRng,
) -> Result<TrajectoryBatch> {
    let mut batch = rollout::collect(env, expert, n_trajectories, rng)?;
    batch.source_policy_id = policy_id.to_string();
    Ok(batch)
}

/// Per-state empirical action frequencies from expert data, uniform on
/// states the data never visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneTable {
    pub n_actions: usize,
    pub table: BTreeMap<usize, Vec<f64>>,
}

impl CloneTable {
    pub fn distribution(&self, state: usize) -> Vec<f64> {
        self.table
            .get(&state)
            .cloned()
            .unwrap_or_else(|| vec![1.0 / self.n_actions as f64; self.n_actions])
    }
}

impl Actor for CloneTable {
    fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        let probs = self.distribution(state_index(obs)?);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(Action::Discrete(a));
            }
        }
        Ok(Action::Discrete(self.n_actions - 1))
    }
}

/// Tabular behavioral cloning. Continuous observations or actions are
/// rejected.
pub fn behavioral_clone(batch: &TrajectoryBatch, n_actions: usize) -> Result<CloneTable> {
    let mut counts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for step in batch.trajectories.iter().flat_map(|t| &t.steps) {
        let s = state_index(&step.observation)?;
        let a = step
            .action
            .as_discrete()
            .filter(|&a| a < n_actions)
            .ok_or_else(|| Error::InvalidAction("behavioral cloning needs discrete actions".into()))?;
        counts.entry(s).or_insert_with(|| vec![0.0; n_actions])[a] += 1.0;
    }
    for row in counts.values_mut() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(CloneTable {
        n_actions,
        table: counts,
    })
}

/// Uniform over discrete actions; standard normal per continuous dimension.
#[derive(Debug, Clone, Copy)]
pub struct UniformRandom {
    kind: ActionKind,
}

impl UniformRandom {
    pub fn new(kind: ActionKind) -> Self {
        Self { kind }
    }
}

impl Actor for UniformRandom {
    fn act(&self, _obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        Ok(match self.kind {
            ActionKind::Discrete(n) => Action::Discrete(rng.random_range(0..n)),
            ActionKind::Continuous(d) => Action::Continuous(
                (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect(),
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive_rng;
    use crate::env::{
        FiniteMdp, Gridworld, GridworldConfig, StartDistribution, TabularModel, Waterworld,
        WaterworldConfig,
    };
    use crate::rollout::{Step, Trajectory};
    use nalgebra::{DMatrix, DVector};

    fn grid4(seed: u64, slip: f64, start: StartDistribution) -> Gridworld {
        let mut rng = derive_rng(seed, 0);
        let config = GridworldConfig {
            side: 4,
            slip_prob: slip,
            region_size: 2,
            region_costs: GridworldConfig::random_costs(4, 2, &mut rng),
            start,
        };
        Gridworld::new(config, 0.9, 60).unwrap()
    }

    /// Exact expected cost of a stochastic policy by a dense linear solve.
    fn linear_solve_cost(mdp: &ExactMdp, probs: &[Vec<f64>], w: &[f64]) -> f64 {
        let n = mdp.n_states;
        let mut p = DMatrix::<f64>::zeros(n, n);
        let mut c = DVector::<f64>::zeros(n);
        for s in 0..n {
            for a in 0..mdp.n_actions {
                c[s] += probs[s][a] * crate::dot(w, mdp.features(s, a));
                for &(t, pt) in mdp.transitions(s, a) {
                    p[(s, t)] += probs[s][a] * pt;
                }
            }
        }
        let v = (DMatrix::<f64>::identity(n, n) - mdp.discount * p)
            .lu()
            .solve(&c)
            .unwrap();
        mdp.initial.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn zero_cost_gives_zero_values() {
        let env = grid4(0, 0.3, StartDistribution::Uniform);
        let mdp = ExactMdp::from_model(&env);
        let sol = value_iteration(&mdp, &[0.0; 4]).unwrap();
        assert!(sol.q_values.iter().flatten().all(|&q| q == 0.0));
        assert!(sol.greedy_policy.iter().all(|&a| a == 0));
    }

    #[test]
    fn one_state_fixed_point() {
        let mdp = FiniteMdp::new(
            vec![vec![vec![(0, 1.0)], vec![(0, 1.0)]]],
            vec![vec![vec![2.0], vec![1.0]]],
            vec![1.0],
            vec![1.0],
            0.5,
            10,
        )
        .unwrap();
        let sol = value_iteration(&ExactMdp::from_model(&mdp), &[1.0]).unwrap();
        assert!((sol.q_values[0][0] - 3.0).abs() < 1e-9);
        assert!((sol.q_values[0][1] - 2.0).abs() < 1e-9);
        assert_eq!(sol.greedy_policy, vec![1]);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn greedy_is_bellman_consistent() {
        let env = grid4(1, 0.3, StartDistribution::Uniform);
        let mdp = ExactMdp::from_model(&env);
        let sol = value_iteration(&mdp, &env.config().region_costs).unwrap();
        for (row, &a) in sol.q_values.iter().zip(&sol.greedy_policy) {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(row[a], min);
            assert!(row[..a].iter().all(|&x| x > min));
        }
    }

    #[test]
    fn greedy_beats_random_policies() {
        let env = grid4(2, 0.3, StartDistribution::Uniform);
        let mdp = ExactMdp::from_model(&env);
        let w = env.config().region_costs.clone();
        let sol = value_iteration(&mdp, &w).unwrap();
        let best = linear_solve_cost(&mdp, &mdp.deterministic_policy(&sol.greedy_policy), &w);
        let mut rng = derive_rng(2, 1);
        for _ in 0..1000 {
            let probs: Vec<Vec<f64>> = (0..16)
                .map(|_| {
                    let raw: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / z).collect()
                })
                .collect();
            assert!(best <= linear_solve_cost(&mdp, &probs, &w) + 1e-9);
        }
    }

    #[test]
    fn waterworld_expert_batch_size() {
        let env = Waterworld::new(WaterworldConfig::default(), 0.99, 50).unwrap();
        let batch = make_expert_batch(
            &env,
            &UniformRandom::new(env.spec().action_kind),
            "random",
            25,
            &mut derive_rng(0, 0),
        )
        .unwrap();
        assert_eq!(batch.len(), 25);
        assert_eq!(batch.source_policy_id, "random");
    }

    #[test]
    fn slip_free_greedy_expert_is_deterministic() {
        let env = grid4(3, 0.0, StartDistribution::Fixed(5));
        let mdp = ExactMdp::from_model(&env);
        let sol = value_iteration(&mdp, &env.config().region_costs).unwrap();
        let batch = make_expert_batch(&env, &sol.actor(), "vi", 10, &mut derive_rng(3, 3)).unwrap();
        assert!(batch.trajectories.iter().all(|t| *t == batch.trajectories[0]));
    }

    #[test]
    fn expert_feature_expectation_matches_linear_solve() {
        // Two states; action 0 stays, action 1 switches.
        let mdp = FiniteMdp::new(
            vec![
                vec![vec![(0, 0.8), (1, 0.2)], vec![(1, 0.9), (0, 0.1)]],
                vec![vec![(1, 0.8), (0, 0.2)], vec![(0, 0.9), (1, 0.1)]],
            ],
            vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.5]],
                vec![vec![0.0, 1.0], vec![0.5, 1.0]],
            ],
            vec![0.5, 0.5],
            vec![1.0, 0.2],
            0.9,
            300,
        )
        .unwrap();
        let exact = ExactMdp::from_model(&mdp);
        let sol = value_iteration(&exact, &[1.0, 0.2]).unwrap();
        let probs = exact.deterministic_policy(&sol.greedy_policy);
        let batch = make_expert_batch(&mdp, &sol.actor(), "vi", 400, &mut derive_rng(4, 0)).unwrap();
        let (phi, se) = rollout::feature_expectation_with_se(&batch).unwrap();
        for j in 0..2 {
            let mut e = [0.0; 2];
            e[j] = 1.0;
            let truth = linear_solve_cost(&exact, &probs, &e);
            assert!((phi.phi_hat[j] - truth).abs() <= 2.0 * se[j] + 1e-12);
        }
        assert_eq!(TabularModel::n_states(&mdp), 2);
    }

    fn step(s: usize, a: usize) -> Step {
        Step {
            observation: Observation::Index(s),
            action: Action::Discrete(a),
            features: vec![0.0],
            true_cost: 0.0,
        }
    }

    #[test]
    fn clone_table_lookup_and_fallback() {
        let batch = TrajectoryBatch::new(
            vec![Trajectory {
                steps: vec![step(7, 2), step(7, 2), step(3, 1), step(3, 4)],
            }],
            0.9,
            "e",
        )
        .unwrap();
        let table = behavioral_clone(&batch, 5).unwrap();
        assert_eq!(table.distribution(7), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(table.distribution(3), vec![0.0, 0.5, 0.0, 0.0, 0.5]);
        assert_eq!(table.distribution(0), vec![0.2; 5]);
        for row in table.table.values() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn clone_rejects_continuous_data() {
        let batch = TrajectoryBatch::new(
            vec![Trajectory {
                steps: vec![Step {
                    observation: Observation::Features(vec![0.1]),
                    action: Action::Continuous(vec![0.0]),
                    features: vec![0.0],
                    true_cost: 0.0,
                }],
            }],
            0.9,
            "e",
        )
        .unwrap();
        assert!(behavioral_clone(&batch, 2).is_err());
    }

    #[test]
    fn clone_of_deterministic_expert_matches_its_cost() {
        let env = grid4(5, 0.3, StartDistribution::Uniform);
        let mdp = ExactMdp::from_model(&env);
        let sol = value_iteration(&mdp, &env.config().region_costs).unwrap();
        let expert = make_expert_batch(&env, &sol.actor(), "vi", 200, &mut derive_rng(5, 1)).unwrap();
        let table = behavioral_clone(&expert, 5).unwrap();
        assert_eq!(table.table.len(), 16);
        let expert_eval = rollout::collect(&env, &sol.actor(), 500, &mut derive_rng(5, 2)).unwrap();
        let clone_eval = rollout::collect(&env, &table, 500, &mut derive_rng(5, 3)).unwrap();
        let (ce, se_e) = rollout::mean_and_se(&rollout::discounted_true_costs(&expert_eval));
        let (cc, se_c) = rollout::mean_and_se(&rollout::discounted_true_costs(&clone_eval));
        assert!((ce - cc).abs() <= 2.0 * (se_e * se_e + se_c * se_c).sqrt());
    }
}
