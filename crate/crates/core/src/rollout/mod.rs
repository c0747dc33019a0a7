//! Trajectory collection and the empirical estimators built on it.
//!
//! Every expectation over the discounted visitation `ρ_π` is estimated as the
//! mean over trajectories of `Σ_t γᵗ v_t` (explicit discount weights, not a
//! time average). Episodes are truncated at the environment horizon without a
//! tail correction, which biases discounted sums by at most
//! `γ^H · C_max / (1 − γ)` per component.

mod store;

pub use store::{read_batch, write_batch, BatchMeta, TRAJECTORY_SCHEMA};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Environment, Observation};
use crate::policy::Actor;
use crate::{Error, Result, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: Observation,
    pub action: Action,
    /// Cost basis vector `φ(s_t, a_t)`.
    pub features: Vec<f64>,
    /// Hidden true cost; only evaluation code reads it.
    pub true_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub trajectories: Vec<Trajectory>,
    pub discount: f64,
    pub source_policy_id: String,
}

impl TrajectoryBatch {
    /// Validates shared basis dimension and non-empty trajectories.
    pub fn new(
        trajectories: Vec<Trajectory>,
        discount: f64,
        source_policy_id: impl Into<String>,
    ) -> Result<Self> {
        let batch = Self {
            trajectories,
            discount,
            source_policy_id: source_policy_id.into(),
        };
        batch.basis_dim()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Common length of the feature vectors. Fails on empty or ragged batches.
    pub fn basis_dim(&self) -> Result<usize> {
        let first = self
            .trajectories
            .first()
            .and_then(|t| t.steps.first())
            .ok_or(Error::EmptyBatch)?;
        let k = first.features.len();
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.is_empty() {
                return Err(Error::Misaligned(format!("trajectory {i} has no steps")));
            }
            if let Some(step) = traj.steps.iter().find(|s| s.features.len() != k) {
                return Err(Error::DimensionMismatch {
                    what: "basis features",
                    expected: k,
                    got: step.features.len(),
                });
            }
        }
        Ok(k)
    }

    /// Per-trajectory discount weights `γᵗ`.
    pub fn discount_weights(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .map(|t| discount_weights(t.len(), self.discount))
            .collect()
    }
}

pub fn discount_weights(len: usize, discount: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(len);
    let mut g = 1.0;
    for _ in 0..len {
        w.push(g);
        g *= discount;
    }
    w
}

/// Empirical feature expectation `φ̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExpectation {
    pub phi_hat: Vec<f64>,
}

/// Rolls out one trajectory from an independent generator.
pub fn rollout<E: Environment, A: Actor + ?Sized>(
    env: &E,
    actor: &A,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    let horizon = env.spec().horizon;
    let mut steps = Vec::with_capacity(horizon);
    let mut state = env.reset(rng);
    for t in 0..horizon {
        if t > 0 && env.is_terminal(&state) {
            break;
        }
        let observation = env.observe(&state);
        let action = actor.act(&observation, rng)?;
        let features = env.basis_features(&state, &action);
        let true_cost = crate::dot(env.true_weights(), &features);
        if t + 1 < horizon {
            state = env.step(&state, &action, rng)?;
        }
        steps.push(Step {
            observation,
            action,
            features,
            true_cost,
        });
    }
    Ok(Trajectory { steps })
}

/// Collects `n_rollouts` independent trajectories.
///
/// One seed per trajectory is drawn from `rng` up front; trajectories are then
/// simulated in parallel and returned in index order, so the batch depends
/// only on the generator state and not on scheduling.
pub fn collect<E: Environment, A: Actor + ?Sized>(
    env: &E,
    actor: &A,
    n_rollouts: usize,
    rng: &mut SimRng,
) -> Result<TrajectoryBatch> {
    if n_rollouts == 0 {
        return Err(Error::EmptyBatch);
    }
    let seeds: Vec<u64> = (0..n_rollouts).map(|_| rng.random()).collect();
    let trajectories = seeds
        .par_iter()
        .map(|&seed| rollout(env, actor, &mut SimRng::seed_from_u64(seed)))
        .collect::<Result<Vec<_>>>()?;
    TrajectoryBatch::new(trajectories, env.spec().discount, "")
}

/// `φ̂ = mean over trajectories of Σ_t γᵗ φ(s_t, a_t)`.
pub fn feature_expectation(batch: &TrajectoryBatch) -> Result<FeatureExpectation> {
    Ok(feature_expectation_with_se(batch)?.0)
}

/// Feature expectation together with the per-component standard error of
/// the mean across trajectories.
pub fn feature_expectation_with_se(
    batch: &TrajectoryBatch,
) -> Result<(FeatureExpectation, Vec<f64>)> {
    let k = batch.basis_dim()?;
    let n = batch.len() as f64;
    let per_traj: Vec<Vec<f64>> = batch
        .trajectories
        .iter()
        .map(|t| {
            let mut sum = vec![0.0; k];
            let mut g = 1.0;
            for step in &t.steps {
                crate::axpy(g, &step.features, &mut sum);
                g *= batch.discount;
            }
            sum
        })
        .collect();
    let mut mean = vec![0.0; k];
    for s in &per_traj {
        crate::axpy(1.0 / n, s, &mut mean);
    }
    let se = (0..k)
        .map(|j| {
            if per_traj.len() < 2 {
                return 0.0;
            }
            let var = per_traj.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    Ok((FeatureExpectation { phi_hat: mean }, se))
}

/// `F_t = Σ_{t' ≥ t} γ^{t'−t} φ(s_{t'}, a_{t'})` by one backward pass.
pub fn future_feature_sums(trajectory: &Trajectory, discount: f64) -> Vec<Vec<f64>> {
    let k = trajectory.steps.first().map_or(0, |s| s.features.len());
    let mut out = vec![vec![0.0; k]; trajectory.len()];
    let mut acc = vec![0.0; k];
    for (t, step) in trajectory.steps.iter().enumerate().rev() {
        for (a, f) in acc.iter_mut().zip(&step.features) {
            *a = f + discount * *a;
        }
        out[t].copy_from_slice(&acc);
    }
    out
}

/// `future_feature_sums` for every trajectory of a batch.
pub fn batch_future_sums(batch: &TrajectoryBatch) -> Vec<Vec<Vec<f64>>> {
    batch
        .trajectories
        .iter()
        .map(|t| future_feature_sums(t, batch.discount))
        .collect()
}

/// `Q̂(s_t, a_t) = w · F_t` for every step of every trajectory.
pub fn q_estimates(batch: &TrajectoryBatch, w: &[f64]) -> Result<Vec<Vec<f64>>> {
    let k = batch.basis_dim()?;
    if w.len() != k {
        return Err(Error::DimensionMismatch {
            what: "cost weights",
            expected: k,
            got: w.len(),
        });
    }
    Ok(batch
        .trajectories
        .iter()
        .map(|t| {
            future_feature_sums(t, batch.discount)
                .iter()
                .map(|f| crate::dot(w, f))
                .collect()
        })
        .collect())
}

/// `Ê_ρ[v] = mean over trajectories of Σ_t γᵗ v_t`.
pub fn discounted_mean(batch: &TrajectoryBatch, values: &[Vec<f64>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if values.len() != batch.len() {
        return Err(Error::Misaligned(format!(
            "{} value rows for {} trajectories",
            values.len(),
            batch.len()
        )));
    }
    let mut total = 0.0;
    for (i, (traj, row)) in batch.trajectories.iter().zip(values).enumerate() {
        if row.len() != traj.len() {
            return Err(Error::Misaligned(format!(
                "trajectory {i} has {} steps but {} values",
                traj.len(),
                row.len()
            )));
        }
        let mut g = 1.0;
        let mut sum = 0.0;
        for v in row {
            sum += g * v;
            g *= batch.discount;
        }
        total += sum;
    }
    Ok(total / batch.len() as f64)
}

/// Discounted true cost of each trajectory.
pub fn discounted_true_costs(batch: &TrajectoryBatch) -> Vec<f64> {
    batch
        .trajectories
        .iter()
        .map(|t| {
            let mut g = 1.0;
            let mut sum = 0.0;
            for s in &t.steps {
                sum += g * s.true_cost;
                g *= batch.discount;
            }
            sum
        })
        .collect()
}

/// Mean and standard error of a sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests;
