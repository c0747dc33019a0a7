use super::*;
use crate::baselines::value_iteration;
use crate::cost_class::CostClassKind;
use crate::env::tabular::ExactMdp;
use crate::env::{
    Action, FiniteMdp, Gridworld, GridworldConfig, Observation, StartDistribution, Waterworld,
    WaterworldConfig,
};
use crate::policy::{kl, kl_hessian_vector_product, PolicyFamily};
use crate::rollout::{collect, Step, Trajectory};
use crate::SimRng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn boltzmann(n_states: usize, n_actions: usize) -> PolicyFamily {
    PolicyFamily::Boltzmann {
        n_states,
        n_actions,
    }
}

fn random_params(family: PolicyFamily, rng: &mut SimRng, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(family);
    p.theta.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale));
    p
}

fn grid4(seed: u64, horizon: usize) -> Gridworld {
    let config = GridworldConfig {
        side: 4,
        slip_prob: 0.3,
        region_size: 2,
        region_costs: GridworldConfig::random_costs(4, 2, &mut derive_rng(seed, 0)),
        start: StartDistribution::Uniform,
    };
    Gridworld::new(config, 0.9, horizon).unwrap()
}

fn random_mdp(rng: &mut SimRng, n_states: usize, n_actions: usize, k: usize) -> FiniteMdp {
    let transitions = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.05).collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().enumerate().map(|(t, p)| (t, p / z)).collect()
                })
                .collect()
        })
        .collect();
    let features = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
                .collect()
        })
        .collect();
    let initial = vec![1.0 / n_states as f64; n_states];
    FiniteMdp::new(transitions, features, initial, vec![1.0; k], 0.9, 15).unwrap()
}

#[test]
fn kl_of_identical_policies_is_zero() {
    let env = grid4(0, 20);
    let mut rng = derive_rng(0, 0);
    let p = random_params(boltzmann(16, 5), &mut rng, 1.0);
    let batch = collect(&env, &p, 5, &mut rng).unwrap();
    assert_eq!(average_kl(&p, &p, &batch).unwrap(), 0.0);
    assert_eq!(average_kl_with(&p, &p, &batch, KlWeighting::Uniform).unwrap(), 0.0);
}

#[test]
fn single_state_batch_gives_per_state_kl() {
    let mut rng = derive_rng(1, 1);
    let old = random_params(boltzmann(3, 4), &mut rng, 1.0);
    let new = random_params(boltzmann(3, 4), &mut rng, 1.0);
    let obs = Observation::Index(2);
    let batch = TrajectoryBatch::new(
        vec![Trajectory {
            steps: vec![Step {
                observation: obs.clone(),
                action: Action::Discrete(0),
                features: vec![0.0],
                true_cost: 0.0,
            }],
        }],
        0.9,
        "",
    )
    .unwrap();
    assert_eq!(average_kl(&old, &new, &batch).unwrap(), kl(&old, &new, &obs).unwrap());
}

#[test]
fn discounted_weights_sum_to_one() {
    let env = grid4(1, 17);
    let mut rng = derive_rng(1, 2);
    let p = random_params(boltzmann(16, 5), &mut rng, 1.0);
    let batch = collect(&env, &p, 4, &mut rng).unwrap();
    for weighting in [KlWeighting::Discounted, KlWeighting::Uniform] {
        for stride in [1, 3] {
            let total: f64 = state_weights(&batch, weighting, stride).iter().map(|p| p.2).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn kl_matches_second_order_expansion() {
    let env = grid4(2, 20);
    let mut rng = derive_rng(2, 2);
    let old = random_params(boltzmann(16, 5), &mut rng, 1.0);
    let batch = collect(&env, &old, 10, &mut rng).unwrap();
    let curvature = kl_over(&old, &batch, KlWeighting::Discounted, 1).unwrap();
    for _ in 0..5 {
        let d: Vec<f64> = (0..old.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let quad = 0.5 * crate::dot(&d, &curvature.apply(&d).unwrap());
        let scale = (1e-4 / quad).sqrt();
        let d: Vec<f64> = d.iter().map(|x| x * scale).collect();
        let predicted = 0.5 * crate::dot(&d, &curvature.apply(&d).unwrap());
        let actual = average_kl(&old, &old.offset(1.0, &d), &batch).unwrap();
        assert!((actual - predicted).abs() <= 0.1 * predicted, "{actual} vs {predicted}");
    }
}

#[test]
fn conjugate_gradient_solves_spd_systems() {
    let mut rng = derive_rng(3, 3);
    let m = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
    let a = &m * m.transpose() + DMatrix::<f64>::identity(6, 6);
    let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let apply = |v: &[f64]| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec());
    let x = conjugate_gradient(apply, &b, 20).unwrap().unwrap();
    let truth = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
    for (xi, ti) in x.iter().zip(truth.iter()) {
        assert!((xi - ti).abs() < 1e-9);
    }
    let indefinite = |v: &[f64]| Ok(v.iter().map(|x| -x).collect());
    assert!(conjugate_gradient(indefinite, &b, 5).unwrap().is_none());
}

/// Many single-step trajectories from one state under a fixed cost.
fn one_state_batch(old: &PolicyParams, rng: &mut SimRng) -> TrajectoryBatch {
    let mdp = FiniteMdp::new(
        vec![vec![vec![(0, 1.0)]; 3]],
        vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]],
        vec![1.0],
        vec![0.3, 0.9],
        0.9,
        1,
    )
    .unwrap();
    collect(&mdp, old, 300, rng).unwrap()
}

#[test]
fn cg_direction_matches_explicit_solve() {
    let mut rng = derive_rng(4, 4);
    let mut old = PolicyParams::zeros(boltzmann(1, 3));
    old.theta = vec![0.3, -0.4, 0.8];
    let batch = one_state_batch(&old, &mut rng);
    let w = CostWeights { w: vec![0.3, 0.9] };
    let state = SurrogateState::new(Objective::Fixed(w), &batch, &old, &[]).unwrap();
    let trc = TrustRegionConfig::new(0);
    let (g, x, fallback) = natural_direction(&state, &old, &trc).unwrap();
    assert!(!fallback);
    let p = old.state_probabilities().unwrap().remove(0);
    let h = DMatrix::<f64>::from_fn(3, 3, |i, j| {
        (if i == j { p[i] } else { 0.0 }) - p[i] * p[j] + if i == j { trc.cg_damping } else { 0.0 }
    });
    let truth = h.lu().solve(&DVector::from_vec(g.clone())).unwrap();
    for (xi, ti) in x.iter().zip(truth.iter()) {
        assert!((xi - ti).abs() <= 1e-6, "{xi} vs {ti}");
    }
    // The batch-level products agree with the single-state helper.
    let obs = vec![Observation::Index(0)];
    let hv = kl_hessian_vector_product(&old, &obs, &x).unwrap();
    let batch_hv = kl_over(&old, &batch, KlWeighting::Discounted, 1).unwrap().apply(&x).unwrap();
    for (a, b) in hv.iter().zip(&batch_hv) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn matched_expert_is_stationary() {
    let env = grid4(5, 20);
    let mut rng = derive_rng(5, 5);
    let old = random_params(boltzmann(16, 5), &mut rng, 1.0);
    let batch = collect(&env, &old, 10, &mut rng).unwrap();
    let phi = rollout::feature_expectation(&batch).unwrap().phi_hat;
    let spec = CostClassSpec::new(CostClassKind::LinearL2, 4, 1.0).unwrap();
    let state = SurrogateState::new(Objective::Supremum(spec), &batch, &old, &phi).unwrap();
    let sol = solve_subproblem(&state, &old, &TrustRegionConfig::new(0)).unwrap();
    assert!(sol.accepted);
    assert_eq!(sol.f_after, sol.f_before);
    assert_eq!(sol.new_params, old);
    assert_eq!(sol.step_norm, 0.0);
}

#[test]
fn accepted_steps_respect_the_trust_region() {
    let mut rng = derive_rng(6, 6);
    let trc = TrustRegionConfig::new(0);
    let mut accepted = 0;
    for _ in 0..100 {
        let mdp = random_mdp(&mut rng, 3, 2, 3);
        let old = random_params(boltzmann(3, 2), &mut rng, 1.5);
        let batch = collect(&mdp, &old, 20, &mut rng).unwrap();
        let phi_e: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
        let kind = if rng.random::<bool>() {
            CostClassKind::LinearL2
        } else {
            CostClassKind::ConvexSimplex
        };
        let spec = CostClassSpec::new(kind, 3, 1.0).unwrap();
        let state = SurrogateState::new(Objective::Supremum(spec), &batch, &old, &phi_e).unwrap();
        let sol = solve_subproblem(&state, &old, &trc).unwrap();
        if sol.accepted {
            accepted += 1;
            assert!(sol.achieved_kl <= 1.5 * trc.delta);
            assert!(sol.f_after <= sol.f_before);
            assert!(sol.w_final.satisfies(kind));
        } else {
            assert_eq!(sol.new_params, old);
        }
    }
    assert!(accepted >= 50, "only {accepted} accepted");
}

#[test]
fn step_norm_shrinks_with_radius() {
    let env = grid4(7, 20);
    let mut rng = derive_rng(7, 7);
    let old = random_params(boltzmann(16, 5), &mut rng, 1.0);
    let expert = random_params(boltzmann(16, 5), &mut rng, 3.0);
    let batch = collect(&env, &old, 30, &mut rng).unwrap();
    let phi_e = rollout::feature_expectation(&collect(&env, &expert, 30, &mut rng).unwrap())
        .unwrap()
        .phi_hat;
    let spec = CostClassSpec::new(CostClassKind::LinearL2, 4, 1.0).unwrap();
    let state = SurrogateState::new(Objective::Supremum(spec), &batch, &old, &phi_e).unwrap();
    let mut norms = Vec::new();
    for delta in [1e-2, 1e-4, 1e-6] {
        let mut trc = TrustRegionConfig::new(0);
        trc.delta = delta;
        let sol = solve_subproblem(&state, &old, &trc).unwrap();
        assert!(sol.accepted);
        norms.push(sol.step_norm);
    }
    assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
}

#[test]
fn self_imitation_null_case() {
    let env = grid4(8, 30);
    let family = boltzmann(16, 5);
    let init = random_params(family.clone(), &mut derive_rng(8, 0), 0.5);
    let expert = collect(&env, &init, 200, &mut derive_rng(8, 1)).unwrap();
    let spec = CostClassSpec::new(CostClassKind::LinearL2, 4, 1.0).unwrap();
    let mut trc = TrustRegionConfig::new(8);
    trc.n_rollouts = 200;
    trc.n_iterations = 10;
    let (_, reports) = train_imitation(&env, &expert, &spec, &trc, init).unwrap();
    for r in &reports {
        assert!(r.delta.abs() <= 2.0 * r.delta_se, "{} vs se {}", r.delta, r.delta_se);
        if r.accepted {
            assert!(r.kl <= trc.delta);
        }
        assert!(r.anchor_gap <= 1e-12);
        assert!(r.grad_gap <= 1e-8);
    }
}

#[test]
fn zero_cost_leaves_policy_unchanged() {
    let env = grid4(9, 20);
    let mut rng = derive_rng(9, 9);
    let init = random_params(boltzmann(16, 5), &mut rng, 1.0);
    let mut trc = TrustRegionConfig::new(9);
    trc.n_rollouts = 5;
    trc.n_iterations = 3;
    let (params, reports) = train_rl(&env, &CostWeights::zeros(4), &trc, init.clone()).unwrap();
    assert_eq!(params, init);
    assert!(reports.iter().all(|r| r.accepted && r.kl == 0.0));
}

#[test]
fn rl_reaches_value_iteration_optimum_on_small_grid() {
    let env = grid4(10, 50);
    let mdp = ExactMdp::from_model(&env);
    let w = env.config().region_costs.clone();
    let optimum = {
        let sol = value_iteration(&mdp, &w).unwrap();
        mdp.cost(&mdp.deterministic_policy(&sol.greedy_policy), &w)
    };
    let mut trc = TrustRegionConfig::new(10);
    trc.delta = 0.05;
    trc.n_rollouts = 500;
    trc.n_iterations = 60;
    let init = PolicyParams::zeros(boltzmann(16, 5));
    let (params, _) = train_rl(&env, &CostWeights { w: w.clone() }, &trc, init).unwrap();
    let achieved = mdp.cost(&params.state_probabilities().unwrap(), &w);
    assert!(achieved <= 1.05 * optimum, "{achieved} vs optimum {optimum}");
}

#[test]
fn waterworld_rl_improves_on_accepted_iterations() {
    let env = Waterworld::new(WaterworldConfig::default(), 0.99, 100).unwrap();
    let family = PolicyFamily::gaussian_mlp(27, &[16], 2);
    let mut improving = 0;
    let mut accepted = 0;
    for seed in 0..2 {
        let init = PolicyParams::initialize(family.clone(), &mut derive_rng(seed, 0));
        let mut trc = TrustRegionConfig::new(seed);
        trc.n_rollouts = 20;
        trc.n_iterations = 15;
        trc.curvature_stride = 4;
        let w = CostWeights {
            w: env.true_weights().to_vec(),
        };
        let (_, reports) = train_rl(&env, &w, &trc, init).unwrap();
        for r in reports.iter().filter(|r| r.accepted) {
            accepted += 1;
            if r.surrogate_after < r.surrogate_before {
                improving += 1;
            }
        }
        let head: f64 = reports[..5].iter().map(|r| r.true_cost).sum();
        let tail: f64 = reports[reports.len() - 5..].iter().map(|r| r.true_cost).sum();
        assert!(tail < head, "seed {seed}: {tail} vs {head}");
    }
    assert!(accepted > 0 && improving as f64 >= 0.9 * accepted as f64);
}
