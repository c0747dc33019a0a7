use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionKind, EnvSpec, Environment, Observation, TabularModel};
use crate::{Error, Result, SimRng};

/// Compass moves plus staying in place. Index order is the action encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAction {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
    Stay = 4,
}

impl GridAction {
    pub const COUNT: usize = 5;

    fn offset(index: usize) -> (isize, isize) {
        match index {
            0 => (-1, 0),
            1 => (1, 0),
            2 => (0, 1),
            3 => (0, -1),
            _ => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartDistribution {
    Uniform,
    Fixed(usize),
}

fn default_slip() -> f64 {
    0.3
}

fn default_region_size() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridworldConfig {
    pub side: usize,
    #[serde(default = "default_slip")]
    pub slip_prob: f64,
    #[serde(default = "default_region_size")]
    pub region_size: usize,
    /// One cost per region, row-major over the region grid.
    pub region_costs: Vec<f64>,
    pub start: StartDistribution,
}

impl GridworldConfig {
    pub fn n_regions(&self) -> usize {
        if self.region_size == 0 {
            return 0;
        }
        let per_side = self.side / self.region_size;
        per_side * per_side
    }

    /// Region costs drawn uniformly from `[0, 1]`.
    pub fn random_costs(side: usize, region_size: usize, rng: &mut SimRng) -> Vec<f64> {
        let per_side = side / region_size.max(1);
        (0..per_side * per_side).map(|_| rng.random::<f64>()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.side == 0 {
            errs.push("gridworld.side must be positive".to_string());
        }
        if self.region_size == 0 {
            errs.push("gridworld.region_size must be positive".to_string());
        } else if self.side % self.region_size != 0 {
            errs.push(format!(
                "gridworld.side ({}) must be divisible by region_size ({})",
                self.side, self.region_size
            ));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            errs.push(format!("gridworld.slip_prob must lie in [0, 1], got {}", self.slip_prob));
        }
        if self.region_size > 0 && self.region_costs.len() != self.n_regions() {
            errs.push(format!(
                "gridworld.region_costs has {} entries, expected {}",
                self.region_costs.len(),
                self.n_regions()
            ));
        }
        if let StartDistribution::Fixed(s) = self.start {
            if s >= self.side * self.side {
                errs.push(format!("gridworld.start state {s} is outside the grid"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Square gridworld with slipping moves and one cost basis function per
/// square region. Moves off the grid clamp to the border; a slip replaces the
/// commanded move by one drawn uniformly from all five actions.
#[derive(Clone, Debug)]
pub struct Gridworld {
    config: GridworldConfig,
    spec: EnvSpec,
}

impl Gridworld {
    pub fn new(config: GridworldConfig, discount: f64, horizon: usize) -> Result<Self> {
        config.validate()?;
        let spec = EnvSpec {
            discount,
            horizon,
            obs_dim: 1,
            action_kind: ActionKind::Discrete(GridAction::COUNT),
            basis_dim: config.n_regions(),
        };
        spec.validate()?;
        Ok(Self { config, spec })
    }

    pub fn config(&self) -> &GridworldConfig {
        &self.config
    }

    pub fn n_states(&self) -> usize {
        self.config.side * self.config.side
    }

    pub fn region_of(&self, state: usize) -> usize {
        let side = self.config.side;
        let rs = self.config.region_size;
        let (row, col) = (state / side, state % side);
        (row / rs) * (side / rs) + col / rs
    }

    fn moved(&self, state: usize, action: usize) -> usize {
        let side = self.config.side as isize;
        let (dr, dc) = GridAction::offset(action);
        let row = (state as isize / side + dr).clamp(0, side - 1);
        let col = (state as isize % side + dc).clamp(0, side - 1);
        (row * side + col) as usize
    }

    fn region_one_hot(&self, state: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.spec.basis_dim];
        f[self.region_of(state)] = 1.0;
        f
    }

    fn check_action(&self, action: &Action) -> Result<usize> {
        action.validate(self.spec.action_kind)?;
        Ok(action.as_discrete().expect("validated discrete action"))
    }
}

impl Environment for Gridworld {
    type State = usize;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> usize {
        match self.config.start {
            StartDistribution::Fixed(s) => s,
            StartDistribution::Uniform => rng.random_range(0..self.n_states()),
        }
    }

    fn step(&self, state: &usize, action: &Action, rng: &mut SimRng) -> Result<usize> {
        let a = self.check_action(action)?;
        let executed = if rng.random::<f64>() < self.config.slip_prob {
            rng.random_range(0..GridAction::COUNT)
        } else {
            a
        };
        Ok(self.moved(*state, executed))
    }

    fn observe(&self, state: &usize) -> Observation {
        Observation::Index(*state)
    }

    fn basis_features(&self, state: &usize, _action: &Action) -> Vec<f64> {
        self.region_one_hot(*state)
    }

    fn c_max(&self) -> f64 {
        1.0
    }

    fn true_weights(&self) -> &[f64] {
        &self.config.region_costs
    }

    fn tabular(&self) -> Option<&dyn TabularModel> {
        Some(self)
    }
}

impl TabularModel for Gridworld {
    fn n_states(&self) -> usize {
        Gridworld::n_states(self)
    }

    fn n_actions(&self) -> usize {
        GridAction::COUNT
    }

    fn discount(&self) -> f64 {
        self.spec.discount
    }

    fn transitions(&self, state: usize, action: usize) -> Vec<(usize, f64)> {
        let slip = self.config.slip_prob;
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(GridAction::COUNT);
        for executed in 0..GridAction::COUNT {
            let p = if executed == action { 1.0 - slip } else { 0.0 } + slip / GridAction::COUNT as f64;
            if p == 0.0 {
                continue;
            }
            let next = self.moved(state, executed);
            match out.iter_mut().find(|(s, _)| *s == next) {
                Some(entry) => entry.1 += p,
                None => out.push((next, p)),
            }
        }
        out
    }

    fn initial_distribution(&self) -> Vec<f64> {
        let n = Gridworld::n_states(self);
        match self.config.start {
            StartDistribution::Uniform => vec![1.0 / n as f64; n],
            StartDistribution::Fixed(s) => {
                let mut p = vec![0.0; n];
                p[s] = 1.0;
                p
            }
        }
    }

    fn state_action_features(&self, state: usize, _action: usize) -> Vec<f64> {
        self.region_one_hot(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive_rng;

    fn grid(side: usize, region: usize, slip: f64, start: StartDistribution) -> Gridworld {
        let n = (side / region) * (side / region);
        let config = GridworldConfig {
            side,
            slip_prob: slip,
            region_size: region,
            region_costs: vec![0.0; n],
            start,
        };
        Gridworld::new(config, 0.9, 50).unwrap()
    }

    #[test]
    fn fixed_start_is_fixed() {
        let g = grid(4, 2, 0.3, StartDistribution::Fixed(0));
        for seed in 0..20 {
            assert_eq!(g.reset(&mut derive_rng(seed, 0)), 0);
        }
    }

    #[test]
    fn uniform_start_frequencies() {
        let g = grid(2, 1, 0.3, StartDistribution::Uniform);
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            counts[g.reset(&mut derive_rng(seed, 0))] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1000.0 - 0.25).abs() <= 0.05, "{counts:?}");
        }
    }

    #[test]
    fn north_without_slip_moves_up_one_row() {
        let g = grid(8, 4, 0.0, StartDistribution::Fixed(0));
        let s = 3 * 8 + 4;
        let next = g.step(&s, &Action::Discrete(GridAction::North as usize), &mut derive_rng(0, 0));
        assert_eq!(next.unwrap(), 2 * 8 + 4);
    }

    #[test]
    fn border_moves_clamp() {
        let g = grid(4, 2, 0.0, StartDistribution::Fixed(0));
        let mut rng = derive_rng(0, 0);
        assert_eq!(g.step(&0, &Action::Discrete(0), &mut rng).unwrap(), 0);
        assert_eq!(g.step(&0, &Action::Discrete(3), &mut rng).unwrap(), 0);
        assert_eq!(g.step(&15, &Action::Discrete(1), &mut rng).unwrap(), 15);
    }

    #[test]
    fn slip_frequency_matches_mixture() {
        let g = grid(8, 4, 0.3, StartDistribution::Fixed(0));
        let s = 3 * 8 + 4;
        let target = 2 * 8 + 4;
        let mut rng = derive_rng(11, 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| g.step(&s, &Action::Discrete(0), &mut rng).unwrap() == target)
            .count();
        let expected = 0.3 * (1.0 / 5.0) + 0.7;
        assert!((hits as f64 / n as f64 - expected).abs() <= 0.02);
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let g = grid(4, 2, 0.3, StartDistribution::Fixed(0));
        let mut rng = derive_rng(0, 0);
        assert!(g.step(&0, &Action::Discrete(5), &mut rng).is_err());
        assert!(g.step(&0, &Action::Continuous(vec![0.0]), &mut rng).is_err());
    }

    #[test]
    fn transition_rows_sum_to_one() {
        for slip in [0.0, 0.3, 1.0] {
            let g = grid(4, 2, slip, StartDistribution::Uniform);
            for s in 0..16 {
                for a in 0..5 {
                    let total: f64 = g.transitions(s, a).iter().map(|(_, p)| p).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn region_one_hot_and_enumeration() {
        let g = grid(16, 8, 0.3, StartDistribution::Uniform);
        assert_eq!(g.basis_features(&0, &Action::Discrete(0)), vec![1.0, 0.0, 0.0, 0.0]);
        for a in 0..5 {
            let mut total = vec![0.0; 4];
            for s in 0..256 {
                crate::axpy(1.0, &g.basis_features(&s, &Action::Discrete(a)), &mut total);
            }
            assert_eq!(total, vec![64.0; 4]);
        }
    }

    #[test]
    fn true_cost_is_dot_with_region_costs() {
        let config = GridworldConfig {
            side: 16,
            slip_prob: 0.3,
            region_size: 8,
            region_costs: vec![1.0, 0.0, 0.0, 0.0],
            start: StartDistribution::Uniform,
        };
        let g = Gridworld::new(config, 0.9, 10).unwrap();
        assert_eq!(g.true_cost(&0, &Action::Discrete(2)), 1.0);
        assert_eq!(g.true_cost(&255, &Action::Discrete(2)), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = GridworldConfig {
            side: 10,
            slip_prob: 1.5,
            region_size: 4,
            region_costs: vec![],
            start: StartDistribution::Fixed(400),
        };
        match c.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 4, "{errs:?}"),
            other => panic!("{other:?}"),
        }
        c.side = 8;
        c.slip_prob = 0.3;
        c.region_costs = vec![0.5; 4];
        c.start = StartDistribution::Fixed(0);
        assert!(c.validate().is_ok());
    }
}
