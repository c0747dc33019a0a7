//! Per-iteration training reports and true-cost reference points.

use serde::{Deserialize, Serialize};

use crate::baselines::UniformRandom;
use crate::env::tabular::ExactMdp;
use crate::env::Environment;
use crate::rollout::{self, TrajectoryBatch};
use crate::{Result, SimRng};

/// One row of an imitation-learning run.
///
/// `delta` and `phi_gap_norm` describe the policy at the start of the
/// iteration (the one whose rollouts were collected); the step taken during
/// the iteration is described by `kl`, `accepted`, `step_norm` and the
/// surrogate fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Empirical apprenticeship objective `δ̂`.
    pub delta: f64,
    /// Standard error of `δ̂` from the per-component feature SEs.
    pub delta_se: f64,
    /// `‖φ̂(π) − φ̂(π_E)‖₂`.
    pub phi_gap_norm: f64,
    pub true_cost: f64,
    pub true_cost_se: f64,
    pub excess_cost: f64,
    pub performance_ratio: f64,
    /// Average KL between the policy before and after the step.
    pub kl: f64,
    pub accepted: bool,
    pub backtracks: usize,
    pub step_norm: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// `|f̂(θ₀) − δ̂|`, zero up to rounding.
    pub anchor_gap: f64,
    /// Max-abs difference between the surrogate gradient at `θ₀` and the
    /// plain policy gradient for the same cost.
    pub grad_gap: f64,
    pub clamped_ratios: usize,
    pub cg_fallback: bool,
    /// Maximizing cost weights at the start of the iteration.
    pub weights: Vec<f64>,
    /// Wall-clock time of the iteration. Not written to `reports.csv` so that
    /// reports stay byte-identical across runs.
    pub wall_secs: f64,
}

impl IterationReport {
    pub(crate) fn blank(iteration: usize) -> Self {
        Self {
            iteration,
            delta: 0.0,
            delta_se: 0.0,
            phi_gap_norm: 0.0,
            true_cost: 0.0,
            true_cost_se: 0.0,
            excess_cost: 0.0,
            performance_ratio: 0.0,
            kl: 0.0,
            accepted: true,
            backtracks: 0,
            step_norm: 0.0,
            surrogate_before: 0.0,
            surrogate_after: 0.0,
            anchor_gap: 0.0,
            grad_gap: 0.0,
            clamped_ratios: 0,
            cg_fallback: false,
            weights: Vec::new(),
            wall_secs: 0.0,
        }
    }

    pub(crate) fn set_true_cost(&mut self, cost: f64, se: f64, reference: &Reference) {
        self.true_cost = cost;
        self.true_cost_se = se;
        self.excess_cost = reference.excess(cost);
        self.performance_ratio = reference.ratio(cost);
    }
}

/// One row of a fixed-cost reinforcement-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlIterationReport {
    pub iteration: usize,
    pub true_cost: f64,
    pub true_cost_se: f64,
    pub kl: f64,
    pub accepted: bool,
    pub backtracks: usize,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub wall_secs: f64,
}

/// Expected true costs that excess cost and performance ratio are measured
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub expert_cost: f64,
    /// Zero when the expert cost is exact.
    pub expert_cost_se: f64,
    pub random_cost: f64,
}

impl Reference {
    pub fn excess(&self, cost: f64) -> f64 {
        cost - self.expert_cost
    }

    /// `(η_rand − η) / (η_rand − η_E)`: 1 at expert parity, 0 at the
    /// uniform-random level.
    pub fn ratio(&self, cost: f64) -> f64 {
        (self.random_cost - cost) / (self.random_cost - self.expert_cost)
    }

    /// Expert cost from the recorded true costs of the expert batch; random
    /// cost exactly for tabular environments, otherwise from `n_rollouts`
    /// rollouts of [`UniformRandom`].
    pub fn estimate<E: Environment>(
        env: &E,
        expert_batch: &TrajectoryBatch,
        n_rollouts: usize,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let (expert_cost, expert_cost_se) =
            rollout::mean_and_se(&rollout::discounted_true_costs(expert_batch));
        let random_cost = random_policy_cost(env, n_rollouts, rng)?;
        Ok(Self {
            expert_cost,
            expert_cost_se,
            random_cost,
        })
    }
}

/// Expected true cost of [`UniformRandom`].
pub fn random_policy_cost<E: Environment>(
    env: &E,
    n_rollouts: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    if let Some(model) = env.tabular() {
        let mdp = ExactMdp::from_model(model);
        return Ok(mdp.cost(&mdp.uniform_policy(), env.true_weights()));
    }
    let batch = rollout::collect(env, &UniformRandom::new(env.spec().action_kind), n_rollouts, rng)?;
    Ok(rollout::mean_and_se(&rollout::discounted_true_costs(&batch)).0)
}

/// Standard error of `δ̂` given per-component feature-expectation SEs of the
/// learner and the expert: the class support function of the combined SE
/// vector, which bounds the expected magnitude of `δ̂` under pure noise.
pub fn delta_standard_error(
    kind: crate::cost_class::CostClassKind,
    se_pi: &[f64],
    se_expert: &[f64],
) -> f64 {
    let combined: Vec<f64> = se_pi
        .iter()
        .zip(se_expert)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    match kind {
        crate::cost_class::CostClassKind::LinearL2 => crate::norm(&combined),
        crate::cost_class::CostClassKind::ConvexSimplex => {
            combined.iter().copied().fold(0.0, f64::max)
        }
    }
}
