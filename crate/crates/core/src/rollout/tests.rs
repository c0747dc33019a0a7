use super::*;
use rand::Rng;
use crate::derive_rng;
use crate::env::{FiniteMdp, TabularModel, Waterworld, WaterworldConfig};
use crate::policy::{PolicyFamily, PolicyParams};
use nalgebra::{DMatrix, DVector};

fn step(features: Vec<f64>) -> Step {
    Step {
        observation: Observation::Index(0),
        action: Action::Discrete(0),
        features,
        true_cost: 0.0,
    }
}

fn traj(features: Vec<Vec<f64>>) -> Trajectory {
    Trajectory {
        steps: features.into_iter().map(step).collect(),
    }
}

fn random_traj(rng: &mut SimRng, len: usize, k: usize) -> Trajectory {
    traj((0..len)
        .map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect())
}

/// Two states that alternate deterministically; features depend on the action.
fn cycle_mdp() -> FiniteMdp {
    let transitions = vec![vec![vec![(1, 1.0)]; 2], vec![vec![(0, 1.0)]; 2]];
    let features = vec![
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        vec![vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]],
    ];
    FiniteMdp::new(transitions, features, vec![0.5, 0.5], vec![1.0, 0.0, 0.0], 0.9, 300).unwrap()
}

/// Independent oracle: solve (I − γ P_πᵀ) ρ = p₀ and average features under ρ.
fn linear_solve_phi(mdp: &FiniteMdp, probs: &[Vec<f64>]) -> Vec<f64> {
    let n = mdp.n_states();
    let gamma = TabularModel::discount(mdp);
    let mut p = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        for (a, pa) in probs[s].iter().enumerate() {
            for (t, pt) in mdp.transitions(s, a) {
                p[(s, t)] += pa * pt;
            }
        }
    }
    let lhs = DMatrix::<f64>::identity(n, n) - gamma * p.transpose();
    let rho = lhs.lu().solve(&DVector::from_vec(mdp.initial_distribution())).unwrap();
    let k = 3;
    let mut phi = vec![0.0; k];
    for s in 0..n {
        for (a, pa) in probs[s].iter().enumerate() {
            for (j, f) in mdp.state_action_features(s, a).iter().enumerate() {
                phi[j] += rho[s] * pa * f;
            }
        }
    }
    phi
}

fn cycle_policy() -> PolicyParams {
    let mut p = PolicyParams::zeros(PolicyFamily::Boltzmann {
        n_states: 2,
        n_actions: 2,
    });
    p.theta = vec![0.7, -0.4, -0.2, 0.9];
    p
}

fn probs_of(p: &PolicyParams, n_states: usize) -> Vec<Vec<f64>> {
    (0..n_states)
        .map(|s| match p.action_distribution(&Observation::Index(s)).unwrap() {
            crate::policy::ActionDistribution::Categorical(q) => q,
            _ => unreachable!(),
        })
        .collect()
}

#[test]
fn waterworld_batch_shape() {
    let env = Waterworld::new(WaterworldConfig::default(), 0.99, 500).unwrap();
    let family = PolicyFamily::gaussian_mlp(27, &[32, 32], 2);
    let params = PolicyParams::initialize(family, &mut derive_rng(0, 0));
    let batch = collect(&env, &params, 50, &mut derive_rng(1, 0)).unwrap();
    assert_eq!(batch.len(), 50);
    assert!(batch.trajectories.iter().all(|t| t.len() == 500));
    assert_eq!(batch.basis_dim().unwrap(), 3);
}

#[test]
fn collection_is_reproducible() {
    let mdp = cycle_mdp();
    let p = cycle_policy();
    let a = collect(&mdp, &p, 20, &mut derive_rng(4, 2)).unwrap();
    let b = collect(&mdp, &p, 20, &mut derive_rng(4, 2)).unwrap();
    assert_eq!(a, b);
    let c = collect(&mdp, &p, 20, &mut derive_rng(5, 2)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn degenerate_mdp_repeats_itself() {
    let mdp = FiniteMdp::new(
        vec![vec![vec![(0, 1.0)]]],
        vec![vec![vec![0.5, 1.0]]],
        vec![1.0],
        vec![1.0, 1.0],
        0.5,
        6,
    )
    .unwrap();
    let p = PolicyParams::zeros(PolicyFamily::Boltzmann {
        n_states: 1,
        n_actions: 1,
    });
    let batch = collect(&mdp, &p, 3, &mut derive_rng(0, 0)).unwrap();
    for t in &batch.trajectories {
        assert_eq!(t.len(), 6);
        assert!(t.steps.iter().all(|s| *s == t.steps[0]));
    }
}

#[test]
fn zero_rollouts_rejected() {
    let mdp = cycle_mdp();
    assert!(matches!(
        collect(&mdp, &cycle_policy(), 0, &mut derive_rng(0, 0)),
        Err(Error::EmptyBatch)
    ));
}

#[test]
fn geometric_feature_expectation() {
    let e0 = vec![1.0, 0.0, 0.0];
    let batch = TrajectoryBatch::new(vec![traj(vec![e0.clone(); 3])], 0.5, "t").unwrap();
    assert_eq!(feature_expectation(&batch).unwrap().phi_hat, vec![1.75, 0.0, 0.0]);
}

#[test]
fn zero_discount_uses_first_step() {
    let mut rng = derive_rng(0, 0);
    let trajs: Vec<Trajectory> = (0..4).map(|_| random_traj(&mut rng, 5, 2)).collect();
    let expected: Vec<f64> = (0..2)
        .map(|j| trajs.iter().map(|t| t.steps[0].features[j]).sum::<f64>() / 4.0)
        .collect();
    let batch = TrajectoryBatch::new(trajs, 0.0, "t").unwrap();
    let phi = feature_expectation(&batch).unwrap().phi_hat;
    for (a, b) in phi.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn empty_batch_rejected() {
    let batch = TrajectoryBatch {
        trajectories: vec![],
        discount: 0.9,
        source_policy_id: String::new(),
    };
    assert!(matches!(feature_expectation(&batch), Err(Error::EmptyBatch)));
    assert!(TrajectoryBatch::new(vec![], 0.9, "").is_err());
}

#[test]
fn feature_expectation_matches_linear_solve() {
    let mdp = cycle_mdp();
    let p = cycle_policy();
    let exact = linear_solve_phi(&mdp, &probs_of(&p, 2));
    // Each 200-rollout estimate should land within 2 SE about 95% of the
    // time; require 17 of 20 seeds and a tight pooled estimate.
    let mut within = 0;
    let mut pooled = vec![0.0; 3];
    for seed in 0..20 {
        let batch = collect(&mdp, &p, 200, &mut derive_rng(seed, 0)).unwrap();
        let (phi, se) = feature_expectation_with_se(&batch).unwrap();
        if (0..3).all(|j| (phi.phi_hat[j] - exact[j]).abs() <= 2.0 * se[j] + 1e-9) {
            within += 1;
        }
        crate::axpy(1.0 / 20.0, &phi.phi_hat, &mut pooled);
    }
    assert!(within >= 17, "only {within} of 20 seeds within 2 SE");
    let big = collect(&mdp, &p, 4000, &mut derive_rng(99, 0)).unwrap();
    let (_, se) = feature_expectation_with_se(&big).unwrap();
    for j in 0..3 {
        assert!((pooled[j] - exact[j]).abs() <= 3.0 * se[j] + 1e-9, "{pooled:?} vs {exact:?}");
    }
}

#[test]
fn short_future_sums() {
    let t = traj(vec![vec![0.3, 0.2]]);
    assert_eq!(future_feature_sums(&t, 0.9), vec![vec![0.3, 0.2]]);
    let v = vec![2.0, 4.0];
    let t = traj(vec![v.clone(); 3]);
    assert_eq!(
        future_feature_sums(&t, 0.5),
        vec![vec![3.5, 7.0], vec![3.0, 6.0], vec![2.0, 4.0]]
    );
}

#[test]
fn future_sums_match_double_loop() {
    let mut rng = derive_rng(3, 3);
    for _ in 0..10 {
        let t = random_traj(&mut rng, 40, 3);
        let gamma = 0.93;
        let fast = future_feature_sums(&t, gamma);
        for s in 0..t.len() {
            for j in 0..3 {
                let brute: f64 = (s..t.len())
                    .map(|u| gamma.powi((u - s) as i32) * t.steps[u].features[j])
                    .sum();
                assert!((fast[s][j] - brute).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn q_estimate_identities() {
    let mut rng = derive_rng(5, 5);
    let trajs: Vec<Trajectory> = (0..5).map(|_| random_traj(&mut rng, 30, 3)).collect();
    let batch = TrajectoryBatch::new(trajs, 0.9, "t").unwrap();
    let zero = q_estimates(&batch, &[0.0; 3]).unwrap();
    assert!(zero.iter().flatten().all(|&q| q == 0.0));

    let sums = batch_future_sums(&batch);
    let e1 = q_estimates(&batch, &[0.0, 1.0, 0.0]).unwrap();
    for (qs, fs) in e1.iter().zip(&sums) {
        for (q, f) in qs.iter().zip(fs) {
            assert_eq!(*q, f[1]);
        }
    }

    let w = [0.3, -0.8, 0.5];
    let q = q_estimates(&batch, &w).unwrap();
    for (traj, qs) in batch.trajectories.iter().zip(&q) {
        let costs: Vec<f64> = traj.steps.iter().map(|s| crate::dot(&w, &s.features)).collect();
        let mut acc = 0.0;
        for t in (0..costs.len()).rev() {
            acc = costs[t] + 0.9 * acc;
            assert!((qs[t] - acc).abs() < 1e-10);
        }
    }
    assert!(q_estimates(&batch, &[1.0]).is_err());
}

#[test]
fn discounted_mean_identities() {
    let batch = TrajectoryBatch::new(vec![traj(vec![vec![1.0]; 3])], 0.5, "t").unwrap();
    assert_eq!(discounted_mean(&batch, &[vec![1.0; 3]]).unwrap(), 1.75);
    assert!(matches!(
        discounted_mean(&batch, &[vec![1.0, 1.0]]),
        Err(Error::Misaligned(_))
    ));
    assert!(discounted_mean(&batch, &[]).is_err());

    let mut rng = derive_rng(6, 6);
    let trajs: Vec<Trajectory> = (0..7).map(|i| random_traj(&mut rng, 10 + i, 4)).collect();
    let batch = TrajectoryBatch::new(trajs, 0.95, "t").unwrap();
    let phi = feature_expectation(&batch).unwrap().phi_hat;
    let sums = batch_future_sums(&batch);
    for _ in 0..20 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<Vec<f64>> = batch
            .trajectories
            .iter()
            .map(|t| t.steps.iter().map(|s| crate::dot(&w, &s.features)).collect())
            .collect();
        let m = discounted_mean(&batch, &values).unwrap();
        assert!((m - crate::dot(&w, &phi)).abs() < 1e-10);
    }
    for j in 0..4 {
        let first: f64 = sums.iter().map(|s| s[0][j]).sum::<f64>() / sums.len() as f64;
        assert!((first - phi[j]).abs() < 1e-10);
    }
}

#[test]
fn persistence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let meta = BatchMeta {
        role: "expert".into(),
        env_hash: "abc".into(),
        seed: 9,
    };

    let mdp = cycle_mdp();
    let mut tab = collect(&mdp, &cycle_policy(), 4, &mut derive_rng(1, 1)).unwrap();
    tab.source_policy_id = "cycle".into();
    let path = dir.path().join("tab.jsonl");
    write_batch(&path, &tab, &meta).unwrap();
    let (back, back_meta) = read_batch(&path).unwrap();
    assert_eq!(back, tab);
    assert_eq!(back_meta, meta);

    let env = Waterworld::new(WaterworldConfig::default(), 0.99, 20).unwrap();
    let params = PolicyParams::initialize(
        PolicyFamily::gaussian_mlp(27, &[8], 2),
        &mut derive_rng(2, 2),
    );
    let cont = collect(&env, &params, 3, &mut derive_rng(3, 3)).unwrap();
    let path = dir.path().join("cont.jsonl");
    write_batch(&path, &cont, &meta).unwrap();
    assert_eq!(read_batch(&path).unwrap().0, cont);
}

#[test]
fn malformed_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"schema\":\"other\"}\n").unwrap();
    assert!(read_batch(&path).is_err());
    std::fs::write(&path, "").unwrap();
    assert!(matches!(read_batch(&path), Err(Error::EmptyBatch)));
    assert!(read_batch(dir.path().join("missing.jsonl")).is_err());
}
