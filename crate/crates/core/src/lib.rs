//! Model-free apprenticeship learning by policy optimization.
//!
//! Given expert trajectories and a class of linearly parameterized cost
//! functions, the learners in this crate train stochastic policies whose
//! expected cost is no worse than the expert's for every cost in the class:
//!
//! - [`reinforce`]: vanilla policy gradient on the worst-case cost (IM-REINFORCE).
//! - [`trpo`]: trust-region steps on an importance-sampled surrogate whose
//!   supremum over costs is recomputed at every probe (IM-TRPO), plus plain
//!   TRPO on a fixed cost for manufacturing experts.
//!
//! Supporting modules provide the environments ([`env`]), policies
//! ([`policy`]), sampling and empirical estimators ([`rollout`]), the cost
//! classes ([`cost_class`]), tabular experts and baselines ([`baselines`]) and
//! the experiment harness ([`harness`]).

pub mod baselines;
pub mod cost_class;
pub mod env;
mod error;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod reinforce;
pub mod rollout;
pub mod trpo;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Random number generator used for every stochastic operation.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds an independent generator for `(seed, stream)`.
///
/// Streams let one experiment seed drive several uncorrelated consumers
/// (cost generation, expert sampling, rollouts, evaluation).
pub fn derive_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
