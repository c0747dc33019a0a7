//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/grid"
//!
//! [env]
//! kind = "gridworld"          # or "waterworld"
//! side = 16
//! slip_prob = 0.3
//! region_size = 8
//! discount = 0.9
//! horizon = 100
//! # region_costs = [...]     # drawn from the seed when absent
//!
//! [policy]
//! kind = "boltzmann"          # or "gaussian_mlp" with hidden = [32]
//!
//! [cost_class]
//! kind = "convex_simplex"     # or "linear_l2"
//!
//! [expert]
//! n_trajectories = 200
//! recipe = { kind = "value_iteration" }   # or kind = "trpo", or path = "..."
//!
//! [[learner]]
//! algorithm = "im_reinforce"  # or "im_trpo"
//! name = "reinforce"
//! n_iterations = 500
//!
//! [evaluation]
//! n_rollouts = 100
//! checkpoint_every = 10
//! ```
//!
//! Unknown keys are rejected. [`ExperimentConfig::resolve`] fills every
//! optional field so the snapshot written next to the outputs reproduces the
//! run on its own.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost_class::{CostClassKind, CostClassSpec};
use crate::env::{
    ActionKind, Environment, Gridworld, GridworldConfig, StartDistribution, Waterworld,
    WaterworldConfig,
};
use crate::policy::PolicyFamily;
use crate::reinforce::{GradientMode, ReinforceConfig, StepRule};
use crate::trpo::{KlWeighting, TrustRegionConfig};
use crate::{derive_rng, Error, Result};

/// Stream used to draw gridworld region costs.
pub const ENV_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub cost_class: CostClassConfig,
    #[serde(default)]
    pub expert: ExpertConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(rename = "learner", default)]
    pub learners: Vec<LearnerConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Gridworld(GridworldSection),
    Waterworld(WaterworldSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridworldSection {
    pub side: usize,
    #[serde(default = "default_slip")]
    pub slip_prob: f64,
    #[serde(default = "default_region_size")]
    pub region_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_costs: Option<Vec<f64>>,
    #[serde(default = "default_start")]
    pub start: StartDistribution,
    #[serde(default = "default_grid_discount")]
    pub discount: f64,
    #[serde(default = "default_grid_horizon")]
    pub horizon: usize,
}

fn default_slip() -> f64 {
    0.3
}
fn default_region_size() -> usize {
    8
}
fn default_start() -> StartDistribution {
    StartDistribution::Uniform
}
fn default_grid_discount() -> f64 {
    0.9
}
fn default_grid_horizon() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterworldSection {
    #[serde(default = "default_water_discount")]
    pub discount: f64,
    #[serde(default = "default_water_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub world: WaterworldConfig,
}

fn default_water_discount() -> f64 {
    0.99
}
fn default_water_horizon() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Boltzmann,
    GaussianMlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        /// Optional cross-check against the environment's observation size.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        obs_dim: Option<usize>,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostClassConfig {
    pub kind: CostClassKind,
    /// Optional cross-check against the environment's basis dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    /// Existing expert batch. When set, `recipe` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_expert_trajectories")]
    pub n_trajectories: usize,
    #[serde(default)]
    pub recipe: ExpertRecipe,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            path: None,
            n_trajectories: default_expert_trajectories(),
            recipe: ExpertRecipe::default(),
        }
    }
}

fn default_expert_trajectories() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpertRecipe {
    /// Greedy policy from value iteration on the true cost. Tabular only.
    #[default]
    ValueIteration,
    /// TRPO on the true cost with the configured policy family.
    Trpo(TrpoSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_eval_rollouts")]
    pub n_rollouts: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_rollouts: default_eval_rollouts(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

fn default_eval_rollouts() -> usize {
    100
}
fn default_checkpoint_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum LearnerConfig {
    ImReinforce(ReinforceSettings),
    ImTrpo(TrpoSettings),
}

impl LearnerConfig {
    pub fn name(&self) -> Option<&str> {
        match self {
            LearnerConfig::ImReinforce(s) => s.name.as_deref(),
            LearnerConfig::ImTrpo(s) => s.name.as_deref(),
        }
    }

    pub fn algorithm(&self) -> &'static str {
        match self {
            LearnerConfig::ImReinforce(_) => "im_reinforce",
            LearnerConfig::ImTrpo(_) => "im_trpo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinforceSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_iterations")]
    pub n_iterations: usize,
    #[serde(default = "default_rollouts")]
    pub n_rollouts: usize,
    /// Defaults by policy family when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_rule: Option<StepRule>,
    /// Gradient norm clip; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub gradient_clip: f64,
    #[serde(default)]
    pub mean_subtract: bool,
    #[serde(default)]
    pub gradient_mode: GradientMode,
}

fn default_iterations() -> usize {
    100
}
fn default_rollouts() -> usize {
    50
}
fn default_clip() -> f64 {
    10.0
}

impl ReinforceSettings {
    pub fn to_config(&self, family: &PolicyFamily, seed: u64) -> ReinforceConfig {
        let mut c = ReinforceConfig::new(family, seed);
        c.n_iterations = self.n_iterations;
        c.n_rollouts = self.n_rollouts;
        c.step_rule = self.step_rule.unwrap_or_else(|| StepRule::default_for(family));
        c.gradient_clip = (self.gradient_clip != 0.0).then_some(self.gradient_clip);
        c.mean_subtract = self.mean_subtract;
        c.gradient_mode = self.gradient_mode;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrpoSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_iterations")]
    pub n_iterations: usize,
    #[serde(default = "default_rollouts")]
    pub n_rollouts: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_cg_iterations")]
    pub cg_iterations: usize,
    #[serde(default = "default_cg_damping")]
    pub cg_damping: f64,
    #[serde(default = "default_backtrack_ratio")]
    pub backtrack_ratio: f64,
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: usize,
    #[serde(default)]
    pub kl_weighting: KlWeighting,
    /// Use every n-th visited state in curvature products.
    #[serde(default = "default_stride")]
    pub curvature_stride: usize,
    #[serde(default = "default_true")]
    pub time_baseline: bool,
}

fn default_delta() -> f64 {
    0.01
}
fn default_cg_iterations() -> usize {
    10
}
fn default_cg_damping() -> f64 {
    0.1
}
fn default_backtrack_ratio() -> f64 {
    0.8
}
fn default_max_backtracks() -> usize {
    15
}
fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}

impl Default for TrpoSettings {
    fn default() -> Self {
        Self {
            name: None,
            n_iterations: default_iterations(),
            n_rollouts: default_rollouts(),
            delta: default_delta(),
            cg_iterations: default_cg_iterations(),
            cg_damping: default_cg_damping(),
            backtrack_ratio: default_backtrack_ratio(),
            max_backtracks: default_max_backtracks(),
            kl_weighting: KlWeighting::default(),
            curvature_stride: default_stride(),
            time_baseline: true,
        }
    }
}

impl TrpoSettings {
    pub fn to_config(&self, seed: u64) -> TrustRegionConfig {
        let mut c = TrustRegionConfig::new(seed);
        c.n_iterations = self.n_iterations;
        c.n_rollouts = self.n_rollouts;
        c.delta = self.delta;
        c.cg_iterations = self.cg_iterations;
        c.cg_damping = self.cg_damping;
        c.backtrack_ratio = self.backtrack_ratio;
        c.max_backtracks = self.max_backtracks;
        c.kl_weighting = self.kl_weighting;
        c.curvature_stride = self.curvature_stride;
        c.time_baseline = self.time_baseline;
        c
    }
}

/// Environment built from a resolved config.
pub enum BuiltEnv {
    Grid(Gridworld),
    Water(Waterworld),
}

/// Runs `$body` with `$env` bound to the concrete environment.
macro_rules! with_env {
    ($built:expr, $env:ident => $body:expr) => {
        match $built {
            $crate::harness::BuiltEnv::Grid($env) => $body,
            $crate::harness::BuiltEnv::Water($env) => $body,
        }
    };
}
pub(crate) use with_env;

impl BuiltEnv {
    pub fn n_states(&self) -> Option<usize> {
        match self {
            BuiltEnv::Grid(g) => Some(g.n_states()),
            BuiltEnv::Water(_) => None,
        }
    }

    pub fn spec(&self) -> &crate::env::EnvSpec {
        with_env!(self, e => e.spec())
    }

    pub fn c_max(&self) -> f64 {
        with_env!(self, e => e.c_max())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(
                msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect(),
            ),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Checks every field and every cross-field dimension, reporting all
    /// problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        match &self.env {
            EnvConfig::Gridworld(g) => {
                collect(&mut errs, "env", g.world_config(self.seed).validate());
                check_discount(&mut errs, g.discount);
                if g.horizon == 0 {
                    errs.push("env.horizon: must be at least 1".into());
                }
            }
            EnvConfig::Waterworld(w) => {
                collect(&mut errs, "env.world", w.world.validate());
                check_discount(&mut errs, w.discount);
                if w.horizon == 0 {
                    errs.push("env.horizon: must be at least 1".into());
                }
            }
        }
        let env_ok = errs.is_empty();

        if let PolicyConfig::GaussianMlp { hidden, .. } = &self.policy {
            if hidden.iter().any(|&h| h == 0) {
                errs.push("policy.hidden: layer widths must be positive".into());
            }
        }
        if self.expert.n_trajectories == 0 {
            errs.push("expert.n_trajectories: must be at least 1".into());
        }
        if self.expert.path.is_none() {
            if let ExpertRecipe::Trpo(s) = &self.expert.recipe {
                collect(&mut errs, "expert.recipe", s.to_config(self.seed).validate());
            }
        }
        if self.evaluation.n_rollouts == 0 {
            errs.push("evaluation.n_rollouts: must be at least 1".into());
        }
        if self.evaluation.checkpoint_every == 0 {
            errs.push("evaluation.checkpoint_every: must be at least 1".into());
        }
        if self.learners.is_empty() {
            errs.push("learner: at least one [[learner]] block is required".into());
        }
        let mut names = BTreeSet::new();
        for (i, learner) in self.learners.iter().enumerate() {
            let at = format!("learner[{i}]");
            let name = self.learner_name(i);
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                errs.push(format!("{at}.name: {name:?} is not a usable directory name"));
            }
            if !names.insert(name.clone()) {
                errs.push(format!("{at}.name: duplicate learner name {name:?}"));
            }
            match learner {
                LearnerConfig::ImReinforce(s) => {
                    if s.gradient_clip < 0.0 || !s.gradient_clip.is_finite() {
                        errs.push(format!("{at}.gradient_clip: must be non-negative"));
                    }
                    if s.gradient_mode == GradientMode::Exact
                        && !matches!(self.policy, PolicyConfig::Boltzmann)
                    {
                        errs.push(format!(
                            "{at}.gradient_mode: exact needs a tabular environment and a boltzmann policy"
                        ));
                    }
                }
                LearnerConfig::ImTrpo(s) => {
                    collect(&mut errs, &at, s.to_config(self.seed).validate());
                }
            }
        }

        if env_ok {
            self.validate_against_env(&mut errs)?;
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Cross-checks that need the constructed environment.
    fn validate_against_env(&self, errs: &mut Vec<String>) -> Result<()> {
        let env = self.build_env()?;
        let spec = env.spec().clone();
        let tabular = env.n_states().is_some();
        match &self.policy {
            PolicyConfig::Boltzmann => {
                if !tabular {
                    errs.push("policy.kind: boltzmann needs a tabular environment".into());
                }
            }
            PolicyConfig::GaussianMlp { obs_dim, .. } => {
                if let Some(d) = obs_dim {
                    if *d != spec.obs_dim {
                        errs.push(format!(
                            "policy.obs_dim: {d} does not match the environment's {}",
                            spec.obs_dim
                        ));
                    }
                }
                if !matches!(spec.action_kind, ActionKind::Continuous(_)) {
                    errs.push("policy.kind: gaussian_mlp needs continuous actions".into());
                }
            }
        }
        let family = self.policy_family(&env).ok();
        if let Some(family) = &family {
            collect(errs, "policy", family.check_compatible(&spec, env.n_states()));
        }
        if let Some(k) = self.cost_class.k {
            if k != spec.basis_dim {
                errs.push(format!(
                    "cost_class.k: {k} does not match the environment's basis dimension {}",
                    spec.basis_dim
                ));
            }
        }
        if self.expert.path.is_none()
            && self.expert.recipe == ExpertRecipe::ValueIteration
            && !tabular
        {
            errs.push("expert.recipe: value_iteration needs a tabular environment".into());
        }
        for (i, learner) in self.learners.iter().enumerate() {
            if let (LearnerConfig::ImReinforce(s), Some(family)) = (learner, &family) {
                collect(errs, &format!("learner[{i}]"), s.to_config(family, self.seed).validate());
            }
        }
        Ok(())
    }

    /// Validates, then fills every optional field with the value the run
    /// will actually use.
    pub fn resolve(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        if let EnvConfig::Gridworld(g) = &mut out.env {
            g.region_costs = Some(g.world_config(self.seed).region_costs);
        }
        let env = self.build_env()?;
        let family = self.policy_family(&env)?;
        if let PolicyConfig::GaussianMlp { obs_dim, .. } = &mut out.policy {
            *obs_dim = Some(env.spec().obs_dim);
        }
        out.cost_class.k = Some(env.spec().basis_dim);
        for i in 0..out.learners.len() {
            let name = self.learner_name(i);
            match &mut out.learners[i] {
                LearnerConfig::ImReinforce(s) => {
                    s.name = Some(name);
                    s.step_rule = Some(s.step_rule.unwrap_or_else(|| StepRule::default_for(&family)));
                }
                LearnerConfig::ImTrpo(s) => s.name = Some(name),
            }
        }
        Ok(out)
    }

    /// Configured name, or the algorithm name with a position suffix when
    /// the algorithm appears more than once.
    pub fn learner_name(&self, index: usize) -> String {
        let learner = &self.learners[index];
        if let Some(name) = learner.name() {
            return name.to_string();
        }
        let same = self
            .learners
            .iter()
            .filter(|l| l.algorithm() == learner.algorithm())
            .count();
        if same > 1 {
            format!("{}_{index}", learner.algorithm())
        } else {
            learner.algorithm().to_string()
        }
    }

    /// Index of the learner called `name`, or the first learner.
    pub fn find_learner(&self, name: Option<&str>) -> Result<usize> {
        match name {
            None => Ok(0),
            Some(n) => (0..self.learners.len())
                .find(|&i| self.learner_name(i) == n)
                .ok_or_else(|| Error::Config(vec![format!("learner: no learner named {n:?}")])),
        }
    }

    pub fn build_env(&self) -> Result<BuiltEnv> {
        match &self.env {
            EnvConfig::Gridworld(g) => Ok(BuiltEnv::Grid(Gridworld::new(
                g.world_config(self.seed),
                g.discount,
                g.horizon,
            )?)),
            EnvConfig::Waterworld(w) => Ok(BuiltEnv::Water(Waterworld::new(
                w.world.clone(),
                w.discount,
                w.horizon,
            )?)),
        }
    }

    pub fn policy_family(&self, env: &BuiltEnv) -> Result<PolicyFamily> {
        let spec = env.spec();
        match (&self.policy, spec.action_kind) {
            (PolicyConfig::Boltzmann, ActionKind::Discrete(n_actions)) => {
                let n_states = env.n_states().ok_or(Error::NotTabular)?;
                Ok(PolicyFamily::Boltzmann {
                    n_states,
                    n_actions,
                })
            }
            (PolicyConfig::GaussianMlp { hidden, .. }, ActionKind::Continuous(d)) => {
                Ok(PolicyFamily::gaussian_mlp(spec.obs_dim, hidden, d))
            }
            _ => Err(Error::FamilyMismatch(
                "policy kind does not fit the environment's action space".into(),
            )),
        }
    }

    pub fn cost_class_spec(&self, env: &BuiltEnv) -> Result<CostClassSpec> {
        CostClassSpec::new(self.cost_class.kind, env.spec().basis_dim, env.c_max())
    }
}

impl GridworldSection {
    /// World config with region costs filled from the seed when absent.
    pub fn world_config(&self, seed: u64) -> GridworldConfig {
        let region_costs = self.region_costs.clone().unwrap_or_else(|| {
            GridworldConfig::random_costs(
                self.side,
                self.region_size,
                &mut derive_rng(seed, ENV_STREAM),
            )
        });
        GridworldConfig {
            side: self.side,
            slip_prob: self.slip_prob,
            region_size: self.region_size,
            region_costs,
            start: self.start,
        }
    }
}

fn check_discount(errs: &mut Vec<String>, discount: f64) {
    if !(0.0..1.0).contains(&discount) {
        errs.push(format!("env.discount: must lie in [0, 1), got {discount}"));
    }
}

fn collect(errs: &mut Vec<String>, prefix: &str, result: Result<()>) {
    match result {
        Ok(()) => {}
        Err(Error::Config(msgs)) => {
            errs.extend(msgs.into_iter().map(|m| {
                let rest = ["learner.", "gridworld.", "waterworld."]
                    .iter()
                    .find_map(|p| m.strip_prefix(p));
                match rest {
                    Some(rest) => format!("{prefix}.{rest}"),
                    None => format!("{prefix}: {m}"),
                }
            }));
        }
        Err(other) => errs.push(format!("{prefix}: {other}")),
    }
}
