//! Cost classes and the importance-sampled apprenticeship surrogate.
//!
//! A cost class is a set of weight vectors `w` over the basis features.
//! The apprenticeship objective for a policy is the worst case, over the
//! class, of the gap between its expected cost and the expert's:
//!
//! ```text
//! δ(π, π_E) = sup_w  w · (φ(π) − φ(π_E))
//! ```
//!
//! Both supported classes admit a closed-form maximizer: the normalized gap
//! for the unit L2 ball and the largest-gap vertex for the simplex.
//!
//! When the gap is exactly zero the L2 norm is not differentiable; the
//! maximizer is then reported as the zero vector so that no gradient is
//! injected at a perfect match.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::PolicyParams;
use crate::rollout::{self, TrajectoryBatch};
use crate::{Error, Result};

/// Below this norm the gap is treated as a perfect match.
const DEGENERATE_NORM: f64 = 1e-12;

/// Log importance ratios above this are clamped before exponentiation.
pub const MAX_LOG_RATIO: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClassKind {
    /// `{w : ‖w‖₂ ≤ 1}`.
    LinearL2,
    /// `{w : w ≥ 0, Σw = 1}`.
    ConvexSimplex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostClassSpec {
    pub kind: CostClassKind,
    /// Number of basis features.
    pub k: usize,
    /// Bound on the magnitude of every basis feature.
    pub c_max: f64,
}

impl CostClassSpec {
    pub fn new(kind: CostClassKind, k: usize, c_max: f64) -> Result<Self> {
        let spec = Self { kind, k, c_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k == 0 {
            problems.push("cost_class.k: must be at least 1".to_string());
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            problems.push(format!("cost_class.c_max: must be positive, got {}", self.c_max));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn check_dim(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() == self.k {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected: self.k,
                got: v.len(),
            })
        }
    }
}

/// A cost `c_w(s, a) = w · φ(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w: Vec<f64>,
}

impl CostWeights {
    pub fn zeros(k: usize) -> Self {
        Self { w: vec![0.0; k] }
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().all(|&x| x == 0.0)
    }

    /// Whether the weights lie in the class, to within `1e-9`. The zero
    /// vector is accepted for both classes as the degenerate maximizer.
    pub fn satisfies(&self, kind: CostClassKind) -> bool {
        const TOL: f64 = 1e-9;
        match kind {
            CostClassKind::LinearL2 => crate::norm(&self.w) <= 1.0 + TOL,
            CostClassKind::ConvexSimplex => {
                self.is_zero()
                    || (self.w.iter().all(|&x| x >= -TOL)
                        && (self.w.iter().sum::<f64>() - 1.0).abs() <= TOL)
            }
        }
    }

    pub fn cost(&self, features: &[f64]) -> f64 {
        crate::dot(&self.w, features)
    }
}

/// Maximizer and value of `sup_{w ∈ class} w · u`.
pub fn sup_over_class(kind: CostClassKind, u: &[f64]) -> (CostWeights, f64) {
    let k = u.len();
    match kind {
        CostClassKind::LinearL2 => {
            let n = crate::norm(u);
            if n < DEGENERATE_NORM {
                return (CostWeights::zeros(k), 0.0);
            }
            (
                CostWeights {
                    w: u.iter().map(|x| x / n).collect(),
                },
                n,
            )
        }
        CostClassKind::ConvexSimplex => {
            if crate::norm(u) < DEGENERATE_NORM {
                return (CostWeights::zeros(k), 0.0);
            }
            // Strict comparison keeps the lowest index on ties.
            let mut best = 0;
            for (i, &x) in u.iter().enumerate().skip(1) {
                if x > u[best] {
                    best = i;
                }
            }
            let mut w = vec![0.0; k];
            w[best] = 1.0;
            (CostWeights { w }, u[best])
        }
    }
}

/// `δ̂ = sup_w w · (φ̂(π) − φ̂(π_E))` with its maximizing weights.
pub fn empirical_delta(
    spec: &CostClassSpec,
    phi_pi: &[f64],
    phi_expert: &[f64],
) -> Result<(CostWeights, f64)> {
    spec.check_dim("policy feature expectation", phi_pi)?;
    spec.check_dim("expert feature expectation", phi_expert)?;
    let gap: Vec<f64> = phi_pi.iter().zip(phi_expert).map(|(a, b)| a - b).collect();
    Ok(sup_over_class(spec.kind, &gap))
}

/// What the surrogate measures.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Worst-case gap to the expert over a cost class.
    Supremum(CostClassSpec),
    /// Expected cost under fixed weights (plain reinforcement learning).
    Fixed(CostWeights),
}

impl Objective {
    fn k(&self) -> usize {
        match self {
            Objective::Supremum(spec) => spec.k,
            Objective::Fixed(w) => w.w.len(),
        }
    }
}

/// Value of the surrogate at a probe point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub weights: CostWeights,
    pub value: f64,
    /// `u = φ̂(π₀) − φ̂(π_E) + ψ̂(θ)`; for a fixed objective the expert term is absent.
    pub gap: Vec<f64>,
    /// Number of steps whose log-ratio was clamped.
    pub clamped: usize,
}

/// Everything the surrogate needs from one batch collected under `π₀`.
///
/// For a probe `θ` the estimated feature expectation is
/// `φ̂(π₀) + ψ̂(θ)` with
/// `ψ̂(θ) = mean_traj Σ_t γᵗ (π_θ(a_t|o_t)/π₀(a_t|o_t) − 1) F_t`
/// and `F_t` the discounted future feature sum from step `t`. No new
/// environment samples are needed to evaluate it.
pub struct SurrogateState<'a> {
    objective: Objective,
    batch: &'a TrajectoryBatch,
    phi_old: Vec<f64>,
    phi_expert: Vec<f64>,
    future_sums: Vec<Vec<Vec<f64>>>,
    discount_weights: Vec<Vec<f64>>,
    old_log_probs: Vec<Vec<f64>>,
}

impl<'a> SurrogateState<'a> {
    /// `phi_expert` is ignored for a fixed objective.
    pub fn new(
        objective: Objective,
        batch: &'a TrajectoryBatch,
        params_old: &PolicyParams,
        phi_expert: &[f64],
    ) -> Result<Self> {
        let k = objective.k();
        let phi_old = rollout::feature_expectation(batch)?.phi_hat;
        if phi_old.len() != k {
            return Err(Error::DimensionMismatch {
                what: "batch basis",
                expected: k,
                got: phi_old.len(),
            });
        }
        let phi_expert = match &objective {
            Objective::Supremum(spec) => {
                spec.check_dim("expert feature expectation", phi_expert)?;
                phi_expert.to_vec()
            }
            Objective::Fixed(_) => vec![0.0; k],
        };
        let old_log_probs = log_probs(params_old, batch)?;
        Ok(Self {
            objective,
            batch,
            phi_old,
            phi_expert,
            future_sums: rollout::batch_future_sums(batch),
            discount_weights: batch.discount_weights(),
            old_log_probs,
        })
    }

    /// Centers the cost-to-go sums on their per-time-step mean across
    /// trajectories. The expected surrogate is unchanged because the
    /// importance weights have mean one under `π₀`; the anchor value is
    /// unchanged exactly. The gradient at `θ₀` then equals the policy
    /// gradient with mean subtraction.
    pub fn with_time_baseline(mut self) -> Self {
        let longest = self.future_sums.iter().map(Vec::len).max().unwrap_or(0);
        let k = self.phi_old.len();
        for t in 0..longest {
            let mut mean = vec![0.0; k];
            let mut count = 0.0;
            for sums in self.future_sums.iter().filter(|f| f.len() > t) {
                crate::axpy(1.0, &sums[t], &mut mean);
                count += 1.0;
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for sums in self.future_sums.iter_mut().filter(|f| f.len() > t) {
                crate::axpy(-1.0, &mean, &mut sums[t]);
            }
        }
        self
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn batch(&self) -> &TrajectoryBatch {
        self.batch
    }

    pub fn phi_old(&self) -> &[f64] {
        &self.phi_old
    }

    pub fn phi_expert(&self) -> &[f64] {
        &self.phi_expert
    }

    pub fn future_sums(&self) -> &[Vec<Vec<f64>>] {
        &self.future_sums
    }

    /// Importance ratios per step, with the number of clamped log-ratios.
    pub fn ratios(&self, params_new: &PolicyParams) -> Result<(Vec<Vec<f64>>, usize)> {
        let new = log_probs(params_new, self.batch)?;
        let mut clamped = 0;
        let ratios = new
            .iter()
            .zip(&self.old_log_probs)
            .map(|(n, o)| {
                n.iter()
                    .zip(o)
                    .map(|(ln, lo)| {
                        let d = ln - lo;
                        if d > MAX_LOG_RATIO {
                            clamped += 1;
                            MAX_LOG_RATIO.exp()
                        } else {
                            d.exp()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok((ratios, clamped))
    }

    /// `ψ̂(θ)` and the clamp count.
    pub fn psi(&self, params_new: &PolicyParams) -> Result<(Vec<f64>, usize)> {
        let (ratios, clamped) = self.ratios(params_new)?;
        Ok((self.psi_from_ratios(&ratios), clamped))
    }

    fn psi_from_ratios(&self, ratios: &[Vec<f64>]) -> Vec<f64> {
        let k = self.phi_old.len();
        let n = self.batch.len() as f64;
        let mut psi = vec![0.0; k];
        for ((r, g), f) in ratios.iter().zip(&self.discount_weights).zip(&self.future_sums) {
            for t in 0..r.len() {
                let scale = g[t] * (r[t] - 1.0);
                if scale != 0.0 {
                    crate::axpy(scale / n, &f[t], &mut psi);
                }
            }
        }
        psi
    }

    /// The surrogate objective at `θ`, with the maximizing cost recomputed
    /// for this probe.
    pub fn evaluate(&self, params_new: &PolicyParams) -> Result<SurrogateValue> {
        let (psi, clamped) = self.psi(params_new)?;
        let gap: Vec<f64> = self
            .phi_old
            .iter()
            .zip(&self.phi_expert)
            .zip(&psi)
            .map(|((a, b), p)| a - b + p)
            .collect();
        let (weights, value) = match &self.objective {
            Objective::Supremum(spec) => sup_over_class(spec.kind, &gap),
            Objective::Fixed(w) => (w.clone(), w.cost(&gap)),
        };
        Ok(SurrogateValue {
            weights,
            value,
            gap,
            clamped,
        })
    }

    /// Value at `θ₀`, where every ratio is one and `ψ̂ = 0`.
    pub fn anchor(&self) -> SurrogateValue {
        let gap: Vec<f64> = self
            .phi_old
            .iter()
            .zip(&self.phi_expert)
            .map(|(a, b)| a - b)
            .collect();
        let (weights, value) = match &self.objective {
            Objective::Supremum(spec) => sup_over_class(spec.kind, &gap),
            Objective::Fixed(w) => (w.clone(), w.cost(&gap)),
        };
        SurrogateValue {
            weights,
            value,
            gap,
            clamped: 0,
        }
    }

    /// Gradient of the surrogate at `θ` with the cost held at `weights`:
    /// `mean_traj Σ_t γᵗ ratio_t ∇log π_θ(a_t|o_t) (w · F_t)`.
    pub fn grad(&self, params_new: &PolicyParams, weights: &CostWeights) -> Result<Vec<f64>> {
        let dim = params_new.len();
        if weights.is_zero() {
            return Ok(vec![0.0; dim]);
        }
        let (ratios, _) = self.ratios(params_new)?;
        let n = self.batch.len() as f64;
        let per_traj = self
            .batch
            .trajectories
            .par_iter()
            .enumerate()
            .map(|(i, traj)| {
                let mut g = vec![0.0; dim];
                for (t, step) in traj.steps.iter().enumerate() {
                    let q = weights.cost(&self.future_sums[i][t]);
                    let scale = self.discount_weights[i][t] * ratios[i][t] * q;
                    if scale != 0.0 {
                        params_new.accumulate_grad_log_prob(
                            &step.observation,
                            &step.action,
                            scale,
                            &mut g,
                        )?;
                    }
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grad = vec![0.0; dim];
        for g in &per_traj {
            crate::axpy(1.0 / n, g, &mut grad);
        }
        Ok(grad)
    }
}

/// Log-probabilities of the recorded actions under `params`.
pub fn log_probs(params: &PolicyParams, batch: &TrajectoryBatch) -> Result<Vec<Vec<f64>>> {
    batch
        .trajectories
        .par_iter()
        .map(|traj| {
            traj.steps
                .iter()
                .map(|s| params.log_prob(&s.observation, &s.action))
                .collect()
        })
        .collect()
}
