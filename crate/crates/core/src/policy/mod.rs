//! Parameterized stochastic policies: tabular Boltzmann and Gaussian MLP.
//!
//! All operations are pure functions of the parameter vector and inputs.
//! Gradients are analytic (softmax gradient or hand-coded backpropagation).

mod mlp;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionKind, EnvSpec, Observation};
use crate::{Error, Result, SimRng};

const LOG_PROB_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Finite-difference probe length for curvature products.
const CURVATURE_PROBE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFamily {
    /// `π(a|s) ∝ exp(θ[s, a])`.
    Boltzmann { n_states: usize, n_actions: usize },
    /// Diagonal Gaussian whose mean is a tanh MLP of the observation.
    /// `layer_sizes` starts with the observation dimension and lists the
    /// hidden widths; the linear output layer has `action_dim` units.
    GaussianMlp {
        layer_sizes: Vec<usize>,
        action_dim: usize,
    },
}

impl PolicyFamily {
    pub fn gaussian_mlp(obs_dim: usize, hidden: &[usize], action_dim: usize) -> Self {
        let mut layer_sizes = vec![obs_dim];
        layer_sizes.extend_from_slice(hidden);
        PolicyFamily::GaussianMlp {
            layer_sizes,
            action_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            PolicyFamily::Boltzmann {
                n_states,
                n_actions,
            } => n_states * n_actions,
            PolicyFamily::GaussianMlp { action_dim, .. } => {
                mlp::param_count(&self.network_sizes()) + action_dim
            }
        }
    }

    fn network_sizes(&self) -> Vec<usize> {
        match self {
            PolicyFamily::GaussianMlp {
                layer_sizes,
                action_dim,
            } => {
                let mut sizes = layer_sizes.clone();
                sizes.push(*action_dim);
                sizes
            }
            PolicyFamily::Boltzmann { .. } => Vec::new(),
        }
    }

    /// Checks that the family fits an environment's observation and action spaces.
    pub fn check_compatible(&self, spec: &EnvSpec, n_states: Option<usize>) -> Result<()> {
        let mut errs = Vec::new();
        match self {
            PolicyFamily::Boltzmann {
                n_states: ns,
                n_actions,
            } => {
                if spec.action_kind != ActionKind::Discrete(*n_actions) {
                    errs.push(format!(
                        "boltzmann policy with {n_actions} actions does not match action space {:?}",
                        spec.action_kind
                    ));
                }
                match n_states {
                    Some(n) if n == *ns => {}
                    Some(n) => errs.push(format!(
                        "boltzmann policy has {ns} states, environment has {n}"
                    )),
                    None => errs.push("boltzmann policy requires a tabular environment".into()),
                }
            }
            PolicyFamily::GaussianMlp {
                layer_sizes,
                action_dim,
            } => {
                if layer_sizes.first() != Some(&spec.obs_dim) {
                    errs.push(format!(
                        "gaussian_mlp input size {:?} does not match obs_dim {}",
                        layer_sizes.first(),
                        spec.obs_dim
                    ));
                }
                if spec.action_kind != ActionKind::Continuous(*action_dim) {
                    errs.push(format!(
                        "gaussian_mlp action_dim {action_dim} does not match action space {:?}",
                        spec.action_kind
                    ));
                }
                if layer_sizes.iter().any(|&s| s == 0) {
                    errs.push("gaussian_mlp layer sizes must be positive".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Action distribution at one observation.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl ActionDistribution {
    pub fn sample(&self, rng: &mut SimRng) -> Action {
        match self {
            ActionDistribution::Categorical(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(p.len() - 1)
            }
            ActionDistribution::Gaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (ActionDistribution::Categorical(p), Action::Discrete(a)) => {
                let pa = p.get(*a).ok_or_else(|| {
                    Error::InvalidAction(format!("index {a} out of range for {} actions", p.len()))
                })?;
                Ok(pa.max(1e-300).ln())
            }
            (ActionDistribution::Gaussian { mean, std }, Action::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        what: "action",
                        expected: mean.len(),
                        got: a.len(),
                    });
                }
                Ok(gaussian_log_density(mean, std, a))
            }
            _ => Err(Error::InvalidAction(
                "action kind does not match the distribution".into(),
            )),
        }
    }

    /// `KL(self ‖ other)`.
    pub fn kl(&self, other: &ActionDistribution) -> Result<f64> {
        match (self, other) {
            (ActionDistribution::Categorical(p), ActionDistribution::Categorical(q))
                if p.len() == q.len() =>
            {
                Ok(p.iter()
                    .zip(q)
                    .filter(|(pi, _)| **pi > 0.0)
                    .map(|(pi, qi)| pi * (pi.max(1e-300).ln() - qi.max(1e-300).ln()))
                    .sum())
            }
            (
                ActionDistribution::Gaussian { mean: m0, std: s0 },
                ActionDistribution::Gaussian { mean: m1, std: s1 },
            ) if m0.len() == m1.len() => Ok((0..m0.len())
                .map(|j| {
                    let d = m0[j] - m1[j];
                    (s1[j] / s0[j]).ln() + (s0[j] * s0[j] + d * d) / (2.0 * s1[j] * s1[j]) - 0.5
                })
                .sum()),
            _ => Err(Error::FamilyMismatch(
                "KL between distributions of different shapes".into(),
            )),
        }
    }
}

fn gaussian_log_density(mean: &[f64], std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .zip(a)
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// Flat parameter vector plus the family that interprets it.
///
/// Gaussian-MLP parameters store the network first and the per-dimension
/// log standard deviations as the trailing `action_dim` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub family: PolicyFamily,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(family: PolicyFamily, theta: Vec<f64>) -> Result<Self> {
        let expected = family.param_count();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected,
                got: theta.len(),
            });
        }
        Ok(Self { family, theta })
    }

    pub fn zeros(family: PolicyFamily) -> Self {
        let n = family.param_count();
        Self {
            family,
            theta: vec![0.0; n],
        }
    }

    /// Boltzmann: all zeros (uniform). Gaussian MLP: weights uniform in
    /// `±1/√fan_in`, biases zero, log-std zero.
    pub fn initialize(family: PolicyFamily, rng: &mut SimRng) -> Self {
        let mut params = Self::zeros(family);
        if let PolicyFamily::GaussianMlp { .. } = params.family {
            let sizes = params.family.network_sizes();
            let mut offset = 0;
            for w in sizes.windows(2) {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                for x in &mut params.theta[offset..offset + n_in * n_out] {
                    *x = rng.random_range(-bound..bound);
                }
                offset += n_in * n_out + n_out;
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Same family, parameters `θ + α·d`.
    pub fn offset(&self, alpha: f64, direction: &[f64]) -> Self {
        let mut theta = self.theta.clone();
        crate::axpy(alpha, direction, &mut theta);
        Self {
            family: self.family.clone(),
            theta,
        }
    }

    fn row(&self, obs: &Observation) -> Result<(usize, usize)> {
        let PolicyFamily::Boltzmann {
            n_states,
            n_actions,
        } = self.family
        else {
            unreachable!("row() on a non-tabular family")
        };
        let s = obs.as_index().ok_or_else(|| {
            Error::UnsupportedObservation("boltzmann policy needs a state index".into())
        })?;
        if s >= n_states {
            return Err(Error::DimensionMismatch {
                what: "state index bound",
                expected: n_states,
                got: s,
            });
        }
        Ok((s * n_actions, n_actions))
    }

    fn log_softmax_row(&self, obs: &Observation) -> Result<(usize, Vec<f64>)> {
        let (start, n) = self.row(obs)?;
        let row = &self.theta[start..start + n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok((start, row.iter().map(|x| (x - lse).max(LOG_PROB_FLOOR)).collect()))
    }

    fn features<'o>(&self, obs: &'o Observation) -> Result<&'o [f64]> {
        let PolicyFamily::GaussianMlp { layer_sizes, .. } = &self.family else {
            unreachable!("features() on a tabular family")
        };
        let x = obs.as_features().ok_or_else(|| {
            Error::UnsupportedObservation("gaussian_mlp policy needs a feature vector".into())
        })?;
        if x.len() != layer_sizes[0] {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: layer_sizes[0],
                got: x.len(),
            });
        }
        Ok(x)
    }

    fn log_std(&self) -> &[f64] {
        let PolicyFamily::GaussianMlp { action_dim, .. } = &self.family else {
            unreachable!()
        };
        &self.theta[self.theta.len() - action_dim..]
    }

    fn network(&self, obs: &Observation) -> Result<Vec<Vec<f64>>> {
        let x = self.features(obs)?;
        Ok(mlp::forward(&self.theta, &self.family.network_sizes(), x))
    }

    pub fn action_distribution(&self, obs: &Observation) -> Result<ActionDistribution> {
        match &self.family {
            PolicyFamily::Boltzmann { .. } => {
                let (_, logp) = self.log_softmax_row(obs)?;
                Ok(ActionDistribution::Categorical(
                    logp.into_iter().map(f64::exp).collect(),
                ))
            }
            PolicyFamily::GaussianMlp { .. } => {
                let mut acts = self.network(obs)?;
                let mean = acts.pop().expect("network output");
                let std = self.log_std().iter().map(|l| l.exp()).collect();
                Ok(ActionDistribution::Gaussian { mean, std })
            }
        }
    }

    /// Per-state action probabilities of a Boltzmann policy.
    pub fn state_probabilities(&self) -> Result<Vec<Vec<f64>>> {
        let PolicyFamily::Boltzmann { n_states, .. } = self.family else {
            return Err(Error::NotTabular);
        };
        (0..n_states)
            .map(|s| {
                let (_, logp) = self.log_softmax_row(&Observation::Index(s))?;
                Ok(logp.into_iter().map(f64::exp).collect())
            })
            .collect()
    }

    pub fn sample_action(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        Ok(self.action_distribution(obs)?.sample(rng))
    }

    pub fn log_prob(&self, obs: &Observation, action: &Action) -> Result<f64> {
        match &self.family {
            PolicyFamily::Boltzmann { .. } => {
                let (_, logp) = self.log_softmax_row(obs)?;
                let a = action
                    .as_discrete()
                    .ok_or_else(|| Error::InvalidAction("expected a discrete action".into()))?;
                logp.get(a).copied().ok_or_else(|| {
                    Error::InvalidAction(format!("index {a} out of range for {} actions", logp.len()))
                })
            }
            PolicyFamily::GaussianMlp { .. } => {
                self.action_distribution(obs)?.log_prob(action)
            }
        }
    }

    pub fn grad_log_prob(&self, obs: &Observation, action: &Action) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.len()];
        self.accumulate_grad_log_prob(obs, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale · ∇_θ log π_θ(action | obs)` into `grad`.
    pub fn accumulate_grad_log_prob(
        &self,
        obs: &Observation,
        action: &Action,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        match &self.family {
            PolicyFamily::Boltzmann { .. } => {
                let (start, logp) = self.log_softmax_row(obs)?;
                let a = action
                    .as_discrete()
                    .filter(|&a| a < logp.len())
                    .ok_or_else(|| Error::InvalidAction("bad discrete action".into()))?;
                for (j, lp) in logp.iter().enumerate() {
                    let indicator = if j == a { 1.0 } else { 0.0 };
                    grad[start + j] += scale * (indicator - lp.exp());
                }
            }
            PolicyFamily::GaussianMlp { action_dim, .. } => {
                let a = action
                    .as_continuous()
                    .filter(|a| a.len() == *action_dim)
                    .ok_or_else(|| Error::InvalidAction("bad continuous action".into()))?;
                let acts = self.network(obs)?;
                let mean = acts.last().expect("network output");
                let log_std = self.log_std();
                let n = grad.len();
                let mut d_mean = vec![0.0; *action_dim];
                for j in 0..*action_dim {
                    let var = (2.0 * log_std[j]).exp();
                    let diff = a[j] - mean[j];
                    d_mean[j] = diff / var;
                    grad[n - action_dim + j] += scale * (diff * diff / var - 1.0);
                }
                mlp::backward(
                    &self.theta,
                    &self.family.network_sizes(),
                    &acts,
                    &d_mean,
                    scale,
                    grad,
                );
            }
        }
        Ok(())
    }

    /// Adds `scale · ∇_θ KL(old(·|obs) ‖ π_θ(·|obs))` into `grad`, with the
    /// old distribution given explicitly.
    fn accumulate_kl_grad(
        &self,
        old: &ActionDistribution,
        obs: &Observation,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        match (&self.family, old) {
            (PolicyFamily::Boltzmann { .. }, ActionDistribution::Categorical(p)) => {
                let (start, logq) = self.log_softmax_row(obs)?;
                for (j, (lq, pj)) in logq.iter().zip(p).enumerate() {
                    grad[start + j] += scale * (lq.exp() - pj);
                }
            }
            (
                PolicyFamily::GaussianMlp { action_dim, .. },
                ActionDistribution::Gaussian {
                    mean: m0,
                    std: s0,
                },
            ) => {
                let acts = self.network(obs)?;
                let mean = acts.last().expect("network output");
                let log_std = self.log_std();
                let n = grad.len();
                let mut d_mean = vec![0.0; *action_dim];
                for j in 0..*action_dim {
                    let var = (2.0 * log_std[j]).exp();
                    let diff = mean[j] - m0[j];
                    d_mean[j] = diff / var;
                    grad[n - action_dim + j] += scale * (1.0 - (s0[j] * s0[j] + diff * diff) / var);
                }
                mlp::backward(
                    &self.theta,
                    &self.family.network_sizes(),
                    &acts,
                    &d_mean,
                    scale,
                    grad,
                );
            }
            _ => {
                return Err(Error::FamilyMismatch(
                    "old distribution does not match the policy family".into(),
                ))
            }
        }
        Ok(())
    }
}

/// Per-state `KL(π_old(·|obs) ‖ π_new(·|obs))`.
pub fn kl(old: &PolicyParams, new: &PolicyParams, obs: &Observation) -> Result<f64> {
    check_same_family(old, new)?;
    old.action_distribution(obs)?
        .kl(&new.action_distribution(obs)?)
}

fn check_same_family(a: &PolicyParams, b: &PolicyParams) -> Result<()> {
    if a.family != b.family || a.theta.len() != b.theta.len() {
        return Err(Error::FamilyMismatch(format!(
            "{:?} vs {:?}",
            a.family, b.family
        )));
    }
    Ok(())
}

/// Hessian of a weighted average of per-state KL divergences
/// `Σᵢ wᵢ KL(π_old(·|oᵢ) ‖ π_θ(·|oᵢ))`, evaluated at `θ = θ_old`.
///
/// Products are central differences of the analytic KL gradient along the
/// normalized direction, so each product costs two gradient passes.
pub struct KlCurvature<'a> {
    old: &'a PolicyParams,
    points: Vec<(&'a Observation, f64, ActionDistribution)>,
}

impl<'a> KlCurvature<'a> {
    pub fn new(
        old: &'a PolicyParams,
        points: impl IntoIterator<Item = (&'a Observation, f64)>,
    ) -> Result<Self> {
        let points = points
            .into_iter()
            .map(|(obs, w)| Ok((obs, w, old.action_distribution(obs)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { old, points })
    }

    /// Uniform weights over `observations`.
    pub fn uniform(old: &'a PolicyParams, observations: &'a [Observation]) -> Result<Self> {
        let w = 1.0 / observations.len().max(1) as f64;
        Self::new(old, observations.iter().map(|o| (o, w)))
    }

    /// `Σᵢ wᵢ KL(π_old(·|oᵢ) ‖ π_params(·|oᵢ))`.
    pub fn value(&self, params: &PolicyParams) -> Result<f64> {
        let mut total = 0.0;
        for (obs, w, old_dist) in &self.points {
            total += w * old_dist.kl(&params.action_distribution(obs)?)?;
        }
        Ok(total)
    }

    fn kl_grad(&self, params: &PolicyParams) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; params.len()];
        for (obs, w, old_dist) in &self.points {
            params.accumulate_kl_grad(old_dist, obs, *w, &mut grad)?;
        }
        Ok(grad)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.old.len() {
            return Err(Error::DimensionMismatch {
                what: "curvature probe",
                expected: self.old.len(),
                got: v.len(),
            });
        }
        let scale = crate::norm(v);
        if scale == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let step = CURVATURE_PROBE / scale;
        let plus = self.kl_grad(&self.old.offset(step, v))?;
        let minus = self.kl_grad(&self.old.offset(-step, v))?;
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(p, m)| (p - m) / (2.0 * step))
            .collect())
    }
}

/// `H·v` with `H` the Hessian of the mean KL over `observations` at `params_old`.
pub fn kl_hessian_vector_product(
    params_old: &PolicyParams,
    observations: &[Observation],
    v: &[f64],
) -> Result<Vec<f64>> {
    KlCurvature::uniform(params_old, observations)?.apply(v)
}

/// Anything that can choose actions: learned parameters, greedy tables,
/// behavioral-cloning lookups.
pub trait Actor: Sync {
    fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action>;
}

impl Actor for PolicyParams {
    fn act(&self, obs: &Observation, rng: &mut SimRng) -> Result<Action> {
        self.sample_action(obs, rng)
    }
}
