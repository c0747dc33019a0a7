//! Configuration-driven experiment runs and their on-disk artifacts.
//!
//! A run directory holds:
//!
//! - `config.resolved.toml`: the config with every default expanded
//! - `expert.jsonl` and `expert.policy.json`: the expert batch and policy
//! - `expert_training.csv`: fixed-cost training log for TRPO experts
//! - `reports.csv`, `timing.csv`, `checkpoints/`: per learner, at the top
//!   level for `train` and under `<learner name>/` for `compare`
//! - `comparison.csv` and `plot.py` from `compare`
//! - `eval_<checkpoint>.json` from `evaluate`

mod checkpoint;
mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, StoredPolicy};
pub(crate) use config::with_env;
pub use config::{
    BuiltEnv, CostClassConfig, EnvConfig, EvaluationConfig, ExperimentConfig, ExpertConfig,
    ExpertRecipe, GridworldSection, LearnerConfig, PolicyConfig, ReinforceSettings, TrpoSettings,
    WaterworldSection, ENV_STREAM,
};
pub use report::{
    read_reports, write_comparison, write_reports, write_rl_reports, write_timing, PLOT_SCRIPT,
    REPORT_COLUMNS, RL_REPORT_COLUMNS, TIMING_COLUMNS,
};

pub use crate::metrics::{IterationReport, Reference};

use crate::baselines::{self, value_iteration};
use crate::cost_class::{CostClassSpec, CostWeights};
use crate::env::tabular::ExactMdp;
use crate::env::Environment;
use crate::metrics::random_policy_cost;
use crate::policy::{Actor, PolicyFamily, PolicyParams};
use crate::rollout::{self, BatchMeta, TrajectoryBatch};
use crate::{derive_rng, reinforce, trpo, Error, Result};

pub const EXPERT_STREAM: u64 = 12;
pub const INIT_STREAM: u64 = 13;
pub const EVAL_STREAM: u64 = 14;
pub const EXPERT_EVAL_STREAM: u64 = 15;
pub const RANDOM_STREAM: u64 = 16;
/// Mixed into the seed for expert training so that the expert's rollouts
/// do not replay the learner's.
const EXPERT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const EXPERT_FILE: &str = "expert.jsonl";

/// Path of the policy stored next to an expert batch.
pub fn expert_policy_path(batch_path: &Path) -> PathBuf {
    batch_path.with_extension("policy.json")
}

/// SHA-256 of the resolved environment block.
pub fn env_hash(resolved: &ExperimentConfig) -> Result<String> {
    let text = serde_json::to_string(&resolved.env).map_err(|e| Error::Format(e.to_string()))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Summary written by [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub n_rollouts: usize,
    pub true_cost: f64,
    pub true_cost_se: f64,
    pub expert_cost: f64,
    pub expert_cost_se: f64,
    pub excess_cost: f64,
    /// Combined standard error of the learner and expert estimates.
    pub excess_cost_se: f64,
    pub random_cost: f64,
    pub performance_ratio: f64,
}

/// Mean discounted true cost of `actor` over `n_rollouts`, measured against
/// `reference`.
pub fn evaluate_policy<E: Environment, A: Actor + ?Sized>(
    env: &E,
    actor: &A,
    n_rollouts: usize,
    reference: &Reference,
    rng: &mut crate::SimRng,
) -> Result<EvaluationMetrics> {
    if n_rollouts == 0 {
        return Err(Error::Config(vec!["evaluation.n_rollouts: must be at least 1".into()]));
    }
    let batch = rollout::collect(env, actor, n_rollouts, rng)?;
    let (true_cost, true_cost_se) = rollout::mean_and_se(&rollout::discounted_true_costs(&batch));
    Ok(EvaluationMetrics {
        n_rollouts,
        true_cost,
        true_cost_se,
        expert_cost: reference.expert_cost,
        expert_cost_se: reference.expert_cost_se,
        excess_cost: reference.excess(true_cost),
        excess_cost_se: true_cost_se.hypot(reference.expert_cost_se),
        random_cost: reference.random_cost,
        performance_ratio: reference.ratio(true_cost),
    })
}

/// Expert data shared by every learner of a run.
pub struct Expert {
    pub batch: TrajectoryBatch,
    /// Absent when a batch was loaded without its policy file.
    pub policy: Option<StoredPolicy>,
}

/// Expert cost exact on tabular models when the policy is known, otherwise
/// from `n_rollouts` fresh rollouts of the policy, otherwise from the batch.
/// Random cost exact on tabular models, otherwise from rollouts.
pub fn expert_reference<E: Environment>(
    env: &E,
    expert: &Expert,
    n_rollouts: usize,
    seed: u64,
) -> Result<Reference> {
    let random_cost = random_policy_cost(env, n_rollouts, &mut derive_rng(seed, RANDOM_STREAM))?;
    let (expert_cost, expert_cost_se) = match (&expert.policy, env.tabular()) {
        (Some(policy), Some(model)) => {
            let mdp = ExactMdp::from_model(model);
            (mdp.cost(&policy.state_probabilities(&mdp)?, env.true_weights()), 0.0)
        }
        (Some(policy), None) => {
            let batch = rollout::collect(
                env,
                policy,
                n_rollouts,
                &mut derive_rng(seed, EXPERT_EVAL_STREAM),
            )?;
            rollout::mean_and_se(&rollout::discounted_true_costs(&batch))
        }
        (None, _) => rollout::mean_and_se(&rollout::discounted_true_costs(&expert.batch)),
    };
    Ok(Reference {
        expert_cost,
        expert_cost_se,
        random_cost,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_snapshot(resolved: &ExperimentConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let path = out.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&path, resolved.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn generate_expert<E: Environment>(
    env: &E,
    resolved: &ExperimentConfig,
    family: &PolicyFamily,
    out: &Path,
) -> Result<StoredPolicy> {
    match &resolved.expert.recipe {
        ExpertRecipe::ValueIteration => {
            let model = env.tabular().ok_or(Error::NotTabular)?;
            let solution = value_iteration(&ExactMdp::from_model(model), env.true_weights())?;
            Ok(StoredPolicy::Greedy {
                actions: solution.greedy_policy,
            })
        }
        ExpertRecipe::Trpo(settings) => {
            let trc = settings.to_config(resolved.seed ^ EXPERT_SEED_SALT);
            let init = PolicyParams::initialize(
                family.clone(),
                &mut derive_rng(resolved.seed ^ EXPERT_SEED_SALT, INIT_STREAM),
            );
            let weights = CostWeights {
                w: env.true_weights().to_vec(),
            };
            let (params, log) = trpo::train_rl_with(env, &weights, &trc, init, |r, _| {
                log::info!("expert iteration {}: true cost {:.4}", r.iteration, r.true_cost);
                Ok(())
            })?;
            write_rl_reports(&log, out.join("expert_training.csv"))?;
            Ok(StoredPolicy::Parametric { params })
        }
    }
}

/// Builds the expert policy from the recipe, samples its batch and writes
/// both into `out`.
fn make_expert<E: Environment>(
    env: &E,
    resolved: &ExperimentConfig,
    family: &PolicyFamily,
    out: &Path,
) -> Result<Expert> {
    let hash = env_hash(resolved)?;
    let policy = generate_expert(env, resolved, family, out)?;
    let batch = baselines::make_expert_batch(
        env,
        &policy,
        "expert",
        resolved.expert.n_trajectories,
        &mut derive_rng(resolved.seed, EXPERT_STREAM),
    )?;
    let batch_path = out.join(EXPERT_FILE);
    let meta = BatchMeta {
        role: "expert".into(),
        env_hash: hash.clone(),
        seed: resolved.seed,
    };
    rollout::write_batch(&batch_path, &batch, &meta)?;
    Checkpoint {
        label: "expert".into(),
        iteration: None,
        env_hash: hash,
        policy: policy.clone(),
    }
    .save(expert_policy_path(&batch_path))?;
    Ok(Expert {
        batch,
        policy: Some(policy),
    })
}

/// Reads an expert batch (and its policy file, when present), checking that
/// it was recorded on the configured environment.
pub fn load_expert(path: &Path, resolved: &ExperimentConfig) -> Result<Expert> {
    let (batch, meta) = rollout::read_batch(path)?;
    let hash = env_hash(resolved)?;
    if meta.env_hash != hash {
        return Err(Error::Config(vec![format!(
            "expert.path: {} was recorded on a different environment (hash {}, expected {hash})",
            path.display(),
            meta.env_hash
        )]));
    }
    let policy_path = expert_policy_path(path);
    let policy = if policy_path.exists() {
        Some(Checkpoint::load(&policy_path)?.policy)
    } else {
        None
    };
    Ok(Expert { batch, policy })
}

fn obtain_expert<E: Environment>(
    env: &E,
    resolved: &ExperimentConfig,
    family: &PolicyFamily,
    out: &Path,
) -> Result<Expert> {
    match &resolved.expert.path {
        Some(path) => load_expert(path, resolved),
        None => make_expert(env, resolved, family, out),
    }
}

/// Result of one learner run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub reports: Vec<IterationReport>,
    pub final_params: PolicyParams,
    pub reference: Reference,
}

fn run_learner<E: Environment>(
    env: &E,
    resolved: &ExperimentConfig,
    index: usize,
    family: &PolicyFamily,
    expert: &Expert,
    reference: &Reference,
    dir: &Path,
) -> Result<RunOutcome> {
    let name = resolved.learner_name(index);
    let hash = env_hash(resolved)?;
    let cost_spec = CostClassSpec::new(resolved.cost_class.kind, env.spec().basis_dim, env.c_max())?;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let every = resolved.evaluation.checkpoint_every;
    let init = PolicyParams::initialize(family.clone(), &mut derive_rng(resolved.seed, INIT_STREAM));

    let mut last = Instant::now();
    let mut wall = Vec::new();
    let mut observer = |r: &IterationReport, params: &PolicyParams| -> Result<()> {
        let now = Instant::now();
        wall.push(now.duration_since(last).as_secs_f64());
        last = now;
        let done = r.iteration + 1;
        if done % every == 0 {
            log::info!(
                "{name} iteration {}: delta {:.5}, feature gap {:.5}, true cost {:.5}",
                r.iteration,
                r.delta,
                r.phi_gap_norm,
                r.true_cost
            );
            Checkpoint {
                label: name.clone(),
                iteration: Some(done),
                env_hash: hash.clone(),
                policy: StoredPolicy::Parametric {
                    params: params.clone(),
                },
            }
            .save(ckpt_dir.join(format!("iter_{done:04}.json")))?;
        }
        Ok(())
    };

    let (final_params, reports) = match &resolved.learners[index] {
        LearnerConfig::ImReinforce(s) => reinforce::train_with(
            env,
            &expert.batch,
            &cost_spec,
            &s.to_config(family, resolved.seed),
            init,
            reference,
            &mut observer,
        )?,
        LearnerConfig::ImTrpo(s) => trpo::train_imitation_with(
            env,
            &expert.batch,
            &cost_spec,
            &s.to_config(resolved.seed),
            init,
            reference,
            &mut observer,
        )?,
    };

    write_reports(&reports, dir.join("reports.csv"))?;
    write_timing(&wall, dir.join("timing.csv"))?;
    Checkpoint {
        label: name.clone(),
        iteration: Some(reports.len()),
        env_hash: hash,
        policy: StoredPolicy::Parametric {
            params: final_params.clone(),
        },
    }
    .save(ckpt_dir.join("final.json"))?;
    Ok(RunOutcome {
        name,
        reports,
        final_params,
        reference: *reference,
    })
}

/// Writes the resolved config, the expert batch and the expert policy.
pub fn gen_expert(config: &ExperimentConfig, out: &Path) -> Result<Expert> {
    let resolved = config.resolve()?;
    let env = resolved.build_env()?;
    let family = resolved.policy_family(&env)?;
    write_snapshot(&resolved, out)?;
    with_env!(&env, e => make_expert(e, &resolved, &family, out))
}

/// Trains one learner (the named one, or the first) into `out`.
pub fn train(config: &ExperimentConfig, out: &Path, learner: Option<&str>) -> Result<RunOutcome> {
    let resolved = config.resolve()?;
    let index = resolved.find_learner(learner)?;
    let env = resolved.build_env()?;
    let family = resolved.policy_family(&env)?;
    write_snapshot(&resolved, out)?;
    with_env!(&env, e => {
        let expert = obtain_expert(e, &resolved, &family, out)?;
        let reference = expert_reference(e, &expert, resolved.evaluation.n_rollouts, resolved.seed)?;
        run_learner(e, &resolved, index, &family, &expert, &reference, out)
    })
}

/// Runs every learner on the same expert data, each into `out/<name>/`, and
/// writes `comparison.csv` plus `plot.py`.
pub fn compare(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunOutcome>> {
    let resolved = config.resolve()?;
    let env = resolved.build_env()?;
    let family = resolved.policy_family(&env)?;
    write_snapshot(&resolved, out)?;
    let outcomes = with_env!(&env, e => {
        let expert = obtain_expert(e, &resolved, &family, out)?;
        let reference = expert_reference(e, &expert, resolved.evaluation.n_rollouts, resolved.seed)?;
        (0..resolved.learners.len())
            .map(|i| {
                let dir = out.join(resolved.learner_name(i));
                create_dir(&dir)?;
                run_learner(e, &resolved, i, &family, &expert, &reference, &dir)
            })
            .collect::<Result<Vec<_>>>()?
    });
    let runs: Vec<(String, Vec<IterationReport>)> = outcomes
        .iter()
        .map(|o| (o.name.clone(), o.reports.clone()))
        .collect();
    write_comparison(&runs, out.join("comparison.csv"))?;
    let plot = out.join("plot.py");
    std::fs::write(&plot, PLOT_SCRIPT).map_err(|e| Error::io(&plot, e))?;
    Ok(outcomes)
}

/// Evaluates a checkpoint (default `out/checkpoints/final.json`) with
/// `n_rollouts` rollouts (default from the config) and writes
/// `eval_<checkpoint>.json` into `out`.
pub fn evaluate(
    config: &ExperimentConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    n_rollouts: Option<usize>,
) -> Result<EvaluationMetrics> {
    let resolved = config.resolve()?;
    let n = n_rollouts.unwrap_or(resolved.evaluation.n_rollouts);
    let env = resolved.build_env()?;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("checkpoints").join("final.json"));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let hash = env_hash(&resolved)?;
    if ckpt.env_hash != hash {
        return Err(Error::Config(vec![format!(
            "checkpoint {} was recorded on a different environment",
            ckpt_path.display()
        )]));
    }
    let expert_path = resolved
        .expert
        .path
        .clone()
        .unwrap_or_else(|| out.join(EXPERT_FILE));
    let expert = load_expert(&expert_path, &resolved)?;
    let metrics = with_env!(&env, e => {
        let reference = expert_reference(e, &expert, n, resolved.seed)?;
        evaluate_policy(e, &ckpt.policy, n, &reference, &mut derive_rng(resolved.seed, EVAL_STREAM))?
    });
    create_dir(out)?;
    let stem = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let path = out.join(format!("eval_{stem}.json"));
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(metrics)
}
