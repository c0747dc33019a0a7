//! Line-delimited JSON persistence for trajectory batches.
//!
//! Each line is one trajectory:
//!
//! ```text
//! {"schema":"apprentice.trajectory.v1","role":"expert","env_hash":"…","seed":7,
//!  "policy_id":"…","discount":0.99,"observations":[…],"actions":[…],
//!  "features":[[…],…],"true_costs":[…]}
//! ```
//!
//! Tabular observations and discrete actions are integers; continuous ones
//! are arrays of numbers. Floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Step, Trajectory, TrajectoryBatch};
use crate::env::{Action, Observation};
use crate::{Error, Result};

pub const TRAJECTORY_SCHEMA: &str = "apprentice.trajectory.v1";

/// Batch-level metadata repeated on every record.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchMeta {
    /// `expert`, `learner`, `evaluation`, ...
    pub role: String,
    pub env_hash: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Record {
    schema: String,
    role: String,
    env_hash: String,
    seed: u64,
    policy_id: String,
    discount: f64,
    observations: Vec<Observation>,
    actions: Vec<Action>,
    features: Vec<Vec<f64>>,
    true_costs: Vec<f64>,
}

pub fn write_batch(path: impl AsRef<Path>, batch: &TrajectoryBatch, meta: &BatchMeta) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for traj in &batch.trajectories {
        let record = Record {
            schema: TRAJECTORY_SCHEMA.to_string(),
            role: meta.role.clone(),
            env_hash: meta.env_hash.clone(),
            seed: meta.seed,
            policy_id: batch.source_policy_id.clone(),
            discount: batch.discount,
            observations: traj.steps.iter().map(|s| s.observation.clone()).collect(),
            actions: traj.steps.iter().map(|s| s.action.clone()).collect(),
            features: traj.steps.iter().map(|s| s.features.clone()).collect(),
            true_costs: traj.steps.iter().map(|s| s.true_cost).collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<(TrajectoryBatch, BatchMeta)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trajectories = Vec::new();
    let mut header: Option<(BatchMeta, String, f64)> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if r.schema != TRAJECTORY_SCHEMA {
            return Err(Error::Format(format!(
                "{}:{}: unsupported schema {:?}",
                path.display(),
                lineno + 1,
                r.schema
            )));
        }
        let n = r.observations.len();
        if r.actions.len() != n || r.features.len() != n || r.true_costs.len() != n {
            return Err(Error::Format(format!(
                "{}:{}: column lengths differ",
                path.display(),
                lineno + 1
            )));
        }
        match &header {
            None => {
                let meta = BatchMeta {
                    role: r.role.clone(),
                    env_hash: r.env_hash.clone(),
                    seed: r.seed,
                };
                header = Some((meta, r.policy_id.clone(), r.discount));
            }
            Some((meta, _, discount)) => {
                if meta.env_hash != r.env_hash || *discount != r.discount {
                    return Err(Error::Format(format!(
                        "{}:{}: record disagrees with the batch header",
                        path.display(),
                        lineno + 1
                    )));
                }
            }
        }
        let steps = r
            .observations
            .into_iter()
            .zip(r.actions)
            .zip(r.features)
            .zip(r.true_costs)
            .map(|(((observation, action), features), true_cost)| Step {
                observation,
                action,
                features,
                true_cost,
            })
            .collect();
        trajectories.push(Trajectory { steps });
    }
    let (meta, policy_id, discount) = header.ok_or(Error::EmptyBatch)?;
    Ok((TrajectoryBatch::new(trajectories, discount, policy_id)?, meta))
}
