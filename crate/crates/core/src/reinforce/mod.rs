//! Vanilla policy-gradient apprenticeship learning (IM-REINFORCE).
//!
//! Each iteration rolls out the current policy, picks the cost in the class
//! with the largest gap to the expert, estimates the policy gradient of that
//! cost and takes a descent step. The estimator uses raw discounted future
//! cost sums; its variance is the reason the trust-region learner exists.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_class::{self, CostClassSpec};
use crate::env::tabular::ExactMdp;
use crate::env::Environment;
use crate::metrics::{self, IterationReport, Reference};
use crate::policy::{PolicyFamily, PolicyParams};
use crate::rollout::{self, TrajectoryBatch};
use crate::{derive_rng, Error, Result};

/// Random stream used for training rollouts.
pub const ROLLOUT_STREAM: u64 = 1;
/// Random stream used for reference estimates.
pub const REFERENCE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Constant { alpha: f64 },
    /// `α₀ / (1 + i)^power` at iteration `i`.
    Decaying { alpha0: f64, power: f64 },
}

impl StepRule {
    pub fn at(&self, iteration: usize) -> f64 {
        match *self {
            StepRule::Constant { alpha } => alpha,
            StepRule::Decaying { alpha0, power } => alpha0 / (1.0 + iteration as f64).powf(power),
        }
    }

    /// 1e-2 for tabular policies, 1e-4 for networks.
    pub fn default_for(family: &PolicyFamily) -> Self {
        let alpha = match family {
            PolicyFamily::Boltzmann { .. } => 1e-2,
            PolicyFamily::GaussianMlp { .. } => 1e-4,
        };
        StepRule::Constant { alpha }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Rollout estimates.
    #[default]
    MonteCarlo,
    /// Exact policy evaluation on a tabular environment.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub n_rollouts: usize,
    pub n_iterations: usize,
    pub step_rule: StepRule,
    /// Global-norm clip; `None` disables clipping.
    pub gradient_clip: Option<f64>,
    /// Subtract a per-time-step mean of the cost-to-go before weighting scores.
    pub mean_subtract: bool,
    pub gradient_mode: GradientMode,
    /// Rollouts for the random-policy reference on non-tabular environments.
    pub reference_rollouts: usize,
    pub seed: u64,
}

impl ReinforceConfig {
    pub fn new(family: &PolicyFamily, seed: u64) -> Self {
        Self {
            n_rollouts: 50,
            n_iterations: 100,
            step_rule: StepRule::default_for(family),
            gradient_clip: Some(10.0),
            mean_subtract: false,
            gradient_mode: GradientMode::MonteCarlo,
            reference_rollouts: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_rollouts == 0 {
            problems.push("learner.n_rollouts: must be at least 1".to_string());
        }
        let alpha = match self.step_rule {
            StepRule::Constant { alpha } => alpha,
            StepRule::Decaying { alpha0, .. } => alpha0,
        };
        if !(alpha > 0.0 && alpha.is_finite()) {
            problems.push(format!("learner.step_rule: step size must be positive, got {alpha}"));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                problems.push(format!("learner.gradient_clip: must be positive, got {c}"));
            }
        }
        if self.reference_rollouts == 0 {
            problems.push("learner.reference_rollouts: must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// `mean_traj Σ_t γᵗ ∇log π_θ(a_t|o_t) Q̂_t` with `Q̂_t = w · F_t`.
pub fn policy_gradient(params: &PolicyParams, batch: &TrajectoryBatch, w: &[f64]) -> Result<Vec<f64>> {
    policy_gradient_with(params, batch, w, false)
}

/// [`policy_gradient`], optionally subtracting from `Q̂_t` its mean over the
/// trajectories that reach step `t`.
pub fn policy_gradient_with(
    params: &PolicyParams,
    batch: &TrajectoryBatch,
    w: &[f64],
    mean_subtract: bool,
) -> Result<Vec<f64>> {
    let dim = params.len();
    if w.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; dim]);
    }
    let mut q = rollout::q_estimates(batch, w)?;
    if mean_subtract {
        let longest = q.iter().map(Vec::len).max().unwrap_or(0);
        for t in 0..longest {
            let (sum, count) = q
                .iter()
                .filter_map(|qs| qs.get(t))
                .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
            let mean = sum / count as f64;
            for qs in q.iter_mut() {
                if let Some(x) = qs.get_mut(t) {
                    *x -= mean;
                }
            }
        }
    }
    let weights = batch.discount_weights();
    let per_traj = batch
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let mut g = vec![0.0; dim];
            for (t, step) in traj.steps.iter().enumerate() {
                let scale = weights[i][t] * q[i][t];
                if scale != 0.0 {
                    params.accumulate_grad_log_prob(&step.observation, &step.action, scale, &mut g)?;
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; dim];
    for g in &per_traj {
        crate::axpy(1.0 / n, g, &mut grad);
    }
    Ok(grad)
}

/// Exact policy gradient of `η^w(π_θ)` for a Boltzmann policy:
/// `Σ_s ρ(s) Σ_a π(a|s) ∇log π(a|s) Q(s,a)`, which for the softmax table is
/// `ρ(s) π(a|s) (Q(s,a) − V(s))` at entry `(s, a)`.
pub fn exact_gradient_mode(mdp: &ExactMdp, params: &PolicyParams, w: &[f64]) -> Result<Vec<f64>> {
    ExactSolver::new(mdp, params)?.step(params, w).map(|(_, g)| g)
}

/// Exact evaluator that warm-starts policy evaluation from the previous call.
struct ExactSolver<'a> {
    mdp: &'a ExactMdp,
    values: Option<Vec<Vec<f64>>>,
    visitation: Option<Vec<f64>>,
}

impl<'a> ExactSolver<'a> {
    fn new(mdp: &'a ExactMdp, params: &PolicyParams) -> Result<Self> {
        match params.family {
            PolicyFamily::Boltzmann {
                n_states,
                n_actions,
            } if n_states == mdp.n_states && n_actions == mdp.n_actions => Ok(Self {
                mdp,
                values: None,
                visitation: None,
            }),
            PolicyFamily::Boltzmann { .. } => Err(Error::FamilyMismatch(format!(
                "policy table does not match {} states x {} actions",
                mdp.n_states, mdp.n_actions
            ))),
            PolicyFamily::GaussianMlp { .. } => Err(Error::NotTabular),
        }
    }

    fn phi(&mut self, probs: &[Vec<f64>]) -> Vec<f64> {
        let values = self.mdp.feature_values(probs, self.values.as_deref());
        let phi = self.mdp.start_average(&values);
        self.values = Some(values);
        phi
    }

    /// Exact `φ(π_θ)` and gradient of `η^w(π_θ)`.
    fn step(&mut self, params: &PolicyParams, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if w.len() != self.mdp.basis_dim {
            return Err(Error::DimensionMismatch {
                what: "cost weights",
                expected: self.mdp.basis_dim,
                got: w.len(),
            });
        }
        let probs = params.state_probabilities()?;
        let phi = self.phi(&probs);
        let na = self.mdp.n_actions;
        let mut grad = vec![0.0; params.len()];
        if w.iter().all(|&x| x == 0.0) {
            return Ok((phi, grad));
        }
        let values = self.values.as_ref().expect("values computed above");
        let q = self.mdp.feature_q(values);
        let rho = self.mdp.visitation(&probs, self.visitation.as_deref());
        for s in 0..self.mdp.n_states {
            let v = crate::dot(w, &values[s]);
            for a in 0..na {
                let qa = crate::dot(w, &q[s * na + a]);
                grad[s * na + a] = rho[s] * probs[s][a] * (qa - v);
            }
        }
        self.visitation = Some(rho);
        Ok((phi, grad))
    }
}

fn clip(grad: &mut [f64], limit: Option<f64>) {
    if let Some(limit) = limit {
        let n = crate::norm(grad);
        if n > limit {
            grad.iter_mut().for_each(|g| *g *= limit / n);
        }
    }
}

/// Runs IM-REINFORCE without an observer.
pub fn train<E: Environment>(
    env: &E,
    expert_batch: &TrajectoryBatch,
    spec: &CostClassSpec,
    config: &ReinforceConfig,
    init_params: PolicyParams,
) -> Result<(PolicyParams, Vec<IterationReport>)> {
    let reference = Reference::estimate(
        env,
        expert_batch,
        config.reference_rollouts,
        &mut derive_rng(config.seed, REFERENCE_STREAM),
    )?;
    train_with(env, expert_batch, spec, config, init_params, &reference, |_, _| Ok(()))
}

/// Runs IM-REINFORCE against a given true-cost reference, calling
/// `observer` after every iteration with the report and the updated
/// parameters.
///
/// In [`GradientMode::Exact`] the learner's feature expectation, the
/// gradient and the true cost are all computed exactly; only the expert side
/// comes from samples.
pub fn train_with<E, F>(
    env: &E,
    expert_batch: &TrajectoryBatch,
    spec: &CostClassSpec,
    config: &ReinforceConfig,
    init_params: PolicyParams,
    reference: &Reference,
    mut observer: F,
) -> Result<(PolicyParams, Vec<IterationReport>)>
where
    E: Environment,
    F: FnMut(&IterationReport, &PolicyParams) -> Result<()>,
{
    config.validate()?;
    spec.validate()?;
    let env_spec = env.spec();
    if spec.k != env_spec.basis_dim {
        return Err(Error::DimensionMismatch {
            what: "cost class basis",
            expected: env_spec.basis_dim,
            got: spec.k,
        });
    }
    let n_states = env.tabular().map(|m| m.n_states());
    init_params.family.check_compatible(&env_spec, n_states)?;
    let (phi_expert, se_expert) = rollout::feature_expectation_with_se(expert_batch)?;
    let phi_expert = phi_expert.phi_hat;
    if phi_expert.len() != spec.k {
        return Err(Error::DimensionMismatch {
            what: "expert basis",
            expected: spec.k,
            got: phi_expert.len(),
        });
    }

    let exact_mdp = match config.gradient_mode {
        GradientMode::Exact => Some(ExactMdp::from_model(env.tabular().ok_or(Error::NotTabular)?)),
        GradientMode::MonteCarlo => None,
    };
    let mut solver = match &exact_mdp {
        Some(mdp) => Some(ExactSolver::new(mdp, &init_params)?),
        None => None,
    };

    let mut rng = derive_rng(config.seed, ROLLOUT_STREAM);
    let mut params = init_params;
    let mut reports = Vec::with_capacity(config.n_iterations);
    for iteration in 0..config.n_iterations {
        let started = Instant::now();
        let mut report = IterationReport::blank(iteration);
        let mut grad = if let Some(solver) = solver.as_mut() {
            // The cost is chosen from the exact gap before differentiating.
            let probs = params.state_probabilities()?;
            let phi = solver.phi(&probs);
            let (w, delta) = cost_class::empirical_delta(spec, &phi, &phi_expert)?;
            let (_, grad) = solver.step(&params, &w.w)?;
            let true_cost = crate::dot(env.true_weights(), &phi);
            report.delta = delta;
            report.delta_se = metrics::delta_standard_error(spec.kind, &vec![0.0; spec.k], &se_expert);
            report.phi_gap_norm = gap_norm(&phi, &phi_expert);
            report.set_true_cost(true_cost, 0.0, reference);
            report.weights = w.w;
            grad
        } else {
            let batch = rollout::collect(env, &params, config.n_rollouts, &mut rng)?;
            let (phi, se) = rollout::feature_expectation_with_se(&batch)?;
            let (w, delta) = cost_class::empirical_delta(spec, &phi.phi_hat, &phi_expert)?;
            let grad = policy_gradient_with(&params, &batch, &w.w, config.mean_subtract)?;
            let (cost, cost_se) = rollout::mean_and_se(&rollout::discounted_true_costs(&batch));
            report.delta = delta;
            report.delta_se = metrics::delta_standard_error(spec.kind, &se, &se_expert);
            report.phi_gap_norm = gap_norm(&phi.phi_hat, &phi_expert);
            report.set_true_cost(cost, cost_se, reference);
            report.weights = w.w;
            grad
        };
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "policy gradient component {bad} at iteration {iteration} (delta {})",
                report.delta
            )));
        }
        clip(&mut grad, config.gradient_clip);
        let alpha = config.step_rule.at(iteration);
        params = params.offset(-alpha, &grad);
        report.step_norm = alpha * crate::norm(&grad);
        report.wall_secs = started.elapsed().as_secs_f64();
        log::debug!(
            "reinforce iter {iteration}: delta {:.6} gap {:.6} excess {:.6}",
            report.delta,
            report.phi_gap_norm,
            report.excess_cost
        );
        observer(&report, &params)?;
        reports.push(report);
    }
    Ok((params, reports))
}

pub(crate) fn gap_norm(phi: &[f64], phi_expert: &[f64]) -> f64 {
    phi.iter()
        .zip(phi_expert)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}
