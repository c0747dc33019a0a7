//! Trust-region policy optimization for apprenticeship learning (IM-TRPO)
//! and for plain reinforcement learning on a fixed cost.
//!
//! Each iteration collects rollouts under the current policy `π₀` and
//! approximately solves
//!
//! ```text
//! minimize_θ  f̂(θ)   subject to  average KL(π₀ ‖ π_θ) ≤ Δ
//! ```
//!
//! where `f̂` is the importance-sampled surrogate from [`crate::cost_class`].
//! The step direction is the natural gradient found by conjugate gradient
//! on the damped KL curvature, scaled to the constraint boundary and then
//! shrunk by backtracking until the exact surrogate (with its maximizing
//! cost recomputed at each probe) improves and the sampled KL fits.
//!
//! Only the average-KL relaxation is implemented; the max-KL penalty that
//! would make the surrogate a true majorizer is never evaluated.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost_class::{self, CostClassSpec, CostWeights, Objective, SurrogateState};
use crate::env::Environment;
use crate::metrics::{self, IterationReport, Reference, RlIterationReport};
use crate::policy::{KlCurvature, PolicyParams};
use crate::reinforce::{self, REFERENCE_STREAM, ROLLOUT_STREAM};
use crate::rollout::{self, TrajectoryBatch};
use crate::{derive_rng, Error, Result};

/// How states in a batch are weighted when averaging per-state KL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlWeighting {
    /// `γᵗ`, normalized per trajectory, then averaged over trajectories.
    #[default]
    Discounted,
    /// Every recorded state counts equally.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionConfig {
    /// KL radius `Δ`.
    pub delta: f64,
    pub cg_iterations: usize,
    pub cg_damping: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    pub n_rollouts: usize,
    pub n_iterations: usize,
    pub kl_weighting: KlWeighting,
    /// Curvature products use every `curvature_stride`-th step of each
    /// trajectory. 1 uses all of them.
    pub curvature_stride: usize,
    /// Center cost-to-go sums per time step inside the surrogate.
    pub time_baseline: bool,
    /// Rollouts for the random-policy reference on non-tabular environments.
    pub reference_rollouts: usize,
    pub seed: u64,
}

impl TrustRegionConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            delta: 0.01,
            cg_iterations: 10,
            cg_damping: 0.1,
            backtrack_ratio: 0.8,
            max_backtracks: 15,
            n_rollouts: 50,
            n_iterations: 100,
            kl_weighting: KlWeighting::Discounted,
            curvature_stride: 1,
            time_baseline: true,
            reference_rollouts: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            problems.push(format!("learner.delta: must be positive, got {}", self.delta));
        }
        if self.cg_iterations == 0 {
            problems.push("learner.cg_iterations: must be at least 1".to_string());
        }
        if !(self.cg_damping >= 0.0) {
            problems.push(format!("learner.cg_damping: must be non-negative, got {}", self.cg_damping));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            problems.push(format!(
                "learner.backtrack_ratio: must lie in (0, 1), got {}",
                self.backtrack_ratio
            ));
        }
        if self.n_rollouts == 0 {
            problems.push("learner.n_rollouts: must be at least 1".to_string());
        }
        if self.curvature_stride == 0 {
            problems.push("learner.curvature_stride: must be at least 1".to_string());
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

/// Outcome of one trust-region subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub new_params: PolicyParams,
    pub achieved_kl: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub accepted: bool,
    pub backtracks_used: usize,
    /// Maximizing cost at the returned parameters.
    pub w_final: CostWeights,
    pub step_norm: f64,
    /// Conjugate gradient broke down and the plain gradient was used.
    pub cg_fallback: bool,
    pub clamped_ratios: usize,
}

/// `(observation index, weight)` pairs over a batch for the given weighting,
/// keeping every `stride`-th step of each trajectory. Weights sum to one.
fn state_weights(batch: &TrajectoryBatch, weighting: KlWeighting, stride: usize) -> Vec<(usize, usize, f64)> {
    let mut points = Vec::new();
    match weighting {
        KlWeighting::Discounted => {
            let n = batch.len() as f64;
            for (i, g) in batch.discount_weights().iter().enumerate() {
                let kept: Vec<usize> = (0..g.len()).step_by(stride).collect();
                let total: f64 = kept.iter().map(|&t| g[t]).sum();
                for t in kept {
                    points.push((i, t, g[t] / total / n));
                }
            }
        }
        KlWeighting::Uniform => {
            for (i, traj) in batch.trajectories.iter().enumerate() {
                points.extend((0..traj.len()).step_by(stride).map(|t| (i, t, 1.0)));
            }
            let n = points.len() as f64;
            points.iter_mut().for_each(|p| p.2 /= n);
        }
    }
    points
}

fn kl_over<'a>(
    params_old: &'a PolicyParams,
    batch: &'a TrajectoryBatch,
    weighting: KlWeighting,
    stride: usize,
) -> Result<KlCurvature<'a>> {
    let points = state_weights(batch, weighting, stride);
    KlCurvature::new(
        params_old,
        points
            .into_iter()
            .map(|(i, t, w)| (&batch.trajectories[i].steps[t].observation, w)),
    )
}

/// Discounted, per-trajectory normalized average of `KL(π_old ‖ π_new)`
/// over the states of a batch collected under `params_old`.
pub fn average_kl(params_old: &PolicyParams, params_new: &PolicyParams, batch: &TrajectoryBatch) -> Result<f64> {
    average_kl_with(params_old, params_new, batch, KlWeighting::Discounted)
}

pub fn average_kl_with(
    params_old: &PolicyParams,
    params_new: &PolicyParams,
    batch: &TrajectoryBatch,
    weighting: KlWeighting,
) -> Result<f64> {
    kl_over(params_old, batch, weighting, 1)?.value(params_new)
}

/// Solves `A x = b` by conjugate gradient from `x = 0`. Returns `None` if a
/// search direction has non-positive curvature.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], iterations: usize) -> Result<Option<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = crate::dot(&r, &r);
    for _ in 0..iterations {
        if rr <= 1e-20 {
            break;
        }
        let ap = apply(&p)?;
        let curvature = crate::dot(&p, &ap);
        if !(curvature > 0.0) {
            return Ok(None);
        }
        let alpha = rr / curvature;
        crate::axpy(alpha, &p, &mut x);
        crate::axpy(-alpha, &ap, &mut r);
        let rr_new = crate::dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(Some(x))
}

/// Gradient at `θ₀` and the damped natural-gradient direction
/// `(H + λI)⁻¹ g`, with a flag set when CG fell back to `g`.
pub fn natural_direction(
    state: &SurrogateState<'_>,
    params_old: &PolicyParams,
    trc: &TrustRegionConfig,
) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let anchor = state.anchor();
    let g = state.grad(params_old, &anchor.weights)?;
    let curvature = kl_over(params_old, state.batch(), trc.kl_weighting, trc.curvature_stride)?;
    let damped = |v: &[f64]| -> Result<Vec<f64>> {
        let mut hv = curvature.apply(v)?;
        crate::axpy(trc.cg_damping, v, &mut hv);
        Ok(hv)
    };
    match conjugate_gradient(damped, &g, trc.cg_iterations)? {
        Some(x) => Ok((g, x, false)),
        None => {
            log::warn!("conjugate gradient broke down; using the plain gradient");
            let x = g.clone();
            Ok((g, x, true))
        }
    }
}

/// One trust-region step on the surrogate held by `state`.
pub fn solve_subproblem(
    state: &SurrogateState<'_>,
    params_old: &PolicyParams,
    trc: &TrustRegionConfig,
) -> Result<SubproblemSolution> {
    let anchor = state.anchor();
    let f_before = anchor.value;
    let stay = |accepted: bool, backtracks: usize, fallback: bool| SubproblemSolution {
        new_params: params_old.clone(),
        achieved_kl: 0.0,
        f_before,
        f_after: f_before,
        accepted,
        backtracks_used: backtracks,
        w_final: anchor.weights.clone(),
        step_norm: 0.0,
        cg_fallback: fallback,
        clamped_ratios: 0,
    };

    let (g, x, cg_fallback) = natural_direction(state, params_old, trc)?;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(stay(true, 0, cg_fallback));
    }
    let curvature = kl_over(params_old, state.batch(), trc.kl_weighting, trc.curvature_stride)?;
    let hx = curvature.apply(&x)?;
    let mut shs = crate::dot(&x, &hx);
    if !(shs > 0.0) {
        shs += trc.cg_damping * crate::dot(&x, &x);
    }
    if !(shs > 0.0 && shs.is_finite()) {
        log::warn!("trust-region step has no positive curvature; skipping");
        return Ok(stay(false, 0, cg_fallback));
    }
    let full_step: Vec<f64> = {
        let scale = (2.0 * trc.delta / shs).sqrt();
        x.iter().map(|v| v * scale).collect()
    };
    let kl = kl_over(params_old, state.batch(), trc.kl_weighting, 1)?;

    let mut fraction = 1.0;
    for backtracks in 0..=trc.max_backtracks {
        let candidate = params_old.offset(-fraction, &full_step);
        let eval = state.evaluate(&candidate)?;
        let achieved_kl = kl.value(&candidate)?;
        if eval.value < f_before && achieved_kl <= trc.delta {
            return Ok(SubproblemSolution {
                new_params: candidate,
                achieved_kl,
                f_before,
                f_after: eval.value,
                accepted: true,
                backtracks_used: backtracks,
                w_final: eval.weights,
                step_norm: fraction * crate::norm(&full_step),
                cg_fallback,
                clamped_ratios: eval.clamped,
            });
        }
        fraction *= trc.backtrack_ratio;
    }
    Ok(stay(false, trc.max_backtracks, cg_fallback))
}

fn surrogate<'a>(
    objective: Objective,
    batch: &'a TrajectoryBatch,
    params: &PolicyParams,
    phi_expert: &[f64],
    trc: &TrustRegionConfig,
) -> Result<SurrogateState<'a>> {
    let state = SurrogateState::new(objective, batch, params, phi_expert)?;
    Ok(if trc.time_baseline {
        state.with_time_baseline()
    } else {
        state
    })
}

fn check_setup<E: Environment>(env: &E, k: usize, params: &PolicyParams) -> Result<()> {
    let env_spec = env.spec();
    if k != env_spec.basis_dim {
        return Err(Error::DimensionMismatch {
            what: "cost basis",
            expected: env_spec.basis_dim,
            got: k,
        });
    }
    params
        .family
        .check_compatible(&env_spec, env.tabular().map(|m| m.n_states()))
}

/// Runs IM-TRPO without an observer.
pub fn train_imitation<E: Environment>(
    env: &E,
    expert_batch: &TrajectoryBatch,
    spec: &CostClassSpec,
    trc: &TrustRegionConfig,
    init_params: PolicyParams,
) -> Result<(PolicyParams, Vec<IterationReport>)> {
    let reference = Reference::estimate(
        env,
        expert_batch,
        trc.reference_rollouts,
        &mut derive_rng(trc.seed, REFERENCE_STREAM),
    )?;
    train_imitation_with(env, expert_batch, spec, trc, init_params, &reference, |_, _| Ok(()))
}

/// Runs IM-TRPO against a given true-cost reference, calling `observer`
/// after every iteration.
///
/// Every report carries two consistency diagnostics at `θ₀`: the gap
/// between the surrogate value and `δ̂` computed directly from the batches,
/// and the max-abs difference between the surrogate gradient and the plain
/// policy gradient for the same cost.
pub fn train_imitation_with<E, F>(
    env: &E,
    expert_batch: &TrajectoryBatch,
    spec: &CostClassSpec,
    trc: &TrustRegionConfig,
    init_params: PolicyParams,
    reference: &Reference,
    mut observer: F,
) -> Result<(PolicyParams, Vec<IterationReport>)>
where
    E: Environment,
    F: FnMut(&IterationReport, &PolicyParams) -> Result<()>,
{
    trc.validate()?;
    spec.validate()?;
    check_setup(env, spec.k, &init_params)?;
    let (phi_expert, se_expert) = rollout::feature_expectation_with_se(expert_batch)?;
    let phi_expert = phi_expert.phi_hat;
    let env_spec = env.spec();
    log::info!(
        "trust-region constant 2·c_max/(1−γ) = {:.6} (folded into delta = {})",
        2.0 * env.c_max() / (1.0 - env_spec.discount),
        trc.delta
    );
    let mut rng = derive_rng(trc.seed, ROLLOUT_STREAM);
    let mut params = init_params;
    let mut reports = Vec::with_capacity(trc.n_iterations);
    for iteration in 0..trc.n_iterations {
        let started = Instant::now();
        let batch = rollout::collect(env, &params, trc.n_rollouts, &mut rng)?;
        let (phi, se) = rollout::feature_expectation_with_se(&batch)?;
        let (w_delta, delta) = cost_class::empirical_delta(spec, &phi.phi_hat, &phi_expert)?;
        let state = surrogate(Objective::Supremum(spec.clone()), &batch, &params, &phi_expert, trc)?;
        let at_anchor = state.evaluate(&params)?;
        let surrogate_grad = state.grad(&params, &at_anchor.weights)?;
        let plain_grad = reinforce::policy_gradient_with(&params, &batch, &w_delta.w, trc.time_baseline)?;
        let grad_gap = surrogate_grad
            .iter()
            .zip(&plain_grad)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if let Some(bad) = surrogate_grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "surrogate gradient component {bad} at iteration {iteration}"
            )));
        }

        let solution = solve_subproblem(&state, &params, trc)?;
        let (cost, cost_se) = rollout::mean_and_se(&rollout::discounted_true_costs(&batch));
        let mut report = IterationReport::blank(iteration);
        report.delta = delta;
        report.delta_se = metrics::delta_standard_error(spec.kind, &se, &se_expert);
        report.phi_gap_norm = reinforce::gap_norm(&phi.phi_hat, &phi_expert);
        report.set_true_cost(cost, cost_se, reference);
        report.kl = solution.achieved_kl;
        report.accepted = solution.accepted;
        report.backtracks = solution.backtracks_used;
        report.step_norm = solution.step_norm;
        report.surrogate_before = solution.f_before;
        report.surrogate_after = solution.f_after;
        report.anchor_gap = (at_anchor.value - delta).abs();
        report.grad_gap = grad_gap;
        report.clamped_ratios = solution.clamped_ratios;
        report.cg_fallback = solution.cg_fallback;
        report.weights = w_delta.w;
        if solution.accepted {
            params = solution.new_params;
        }
        report.wall_secs = started.elapsed().as_secs_f64();
        log::debug!(
            "im-trpo iter {iteration}: delta {:.6} gap {:.6} excess {:.6} kl {:.2e} backtracks {}",
            report.delta,
            report.phi_gap_norm,
            report.excess_cost,
            report.kl,
            report.backtracks
        );
        observer(&report, &params)?;
        reports.push(report);
    }
    Ok((params, reports))
}

/// Plain TRPO on a fixed, known cost.
pub fn train_rl<E: Environment>(
    env: &E,
    cost_weights: &CostWeights,
    trc: &TrustRegionConfig,
    init_params: PolicyParams,
) -> Result<(PolicyParams, Vec<RlIterationReport>)> {
    train_rl_with(env, cost_weights, trc, init_params, |_, _| Ok(()))
}

pub fn train_rl_with<E, F>(
    env: &E,
    cost_weights: &CostWeights,
    trc: &TrustRegionConfig,
    init_params: PolicyParams,
    mut observer: F,
) -> Result<(PolicyParams, Vec<RlIterationReport>)>
where
    E: Environment,
    F: FnMut(&RlIterationReport, &PolicyParams) -> Result<()>,
{
    trc.validate()?;
    check_setup(env, cost_weights.w.len(), &init_params)?;
    let mut rng = derive_rng(trc.seed, ROLLOUT_STREAM);
    let mut params = init_params;
    let mut reports = Vec::with_capacity(trc.n_iterations);
    for iteration in 0..trc.n_iterations {
        let started = Instant::now();
        let batch = rollout::collect(env, &params, trc.n_rollouts, &mut rng)?;
        let state = surrogate(Objective::Fixed(cost_weights.clone()), &batch, &params, &[], trc)?;
        let solution = solve_subproblem(&state, &params, trc)?;
        let (cost, cost_se) = rollout::mean_and_se(&rollout::discounted_true_costs(&batch));
        if solution.accepted {
            params = solution.new_params;
        }
        let report = RlIterationReport {
            iteration,
            true_cost: cost,
            true_cost_se: cost_se,
            kl: solution.achieved_kl,
            accepted: solution.accepted,
            backtracks: solution.backtracks_used,
            surrogate_before: solution.f_before,
            surrogate_after: solution.f_after,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "trpo iter {iteration}: cost {:.6} kl {:.2e} accepted {}",
            report.true_cost,
            report.kl,
            report.accepted
        );
        observer(&report, &params)?;
        reports.push(report);
    }
    Ok((params, reports))
}

#[cfg(test)]
mod tests;
