use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionKind, EnvSpec, Environment, Observation};
use crate::{Error, Result, SimRng};

/// Number of target colors. Fixed because the observation layout carries one
/// capture indicator per color.
pub const N_COLORS: usize = 2;
const FEATURES_PER_SENSOR: usize = 5;

fn d_sensors() -> usize {
    5
}
fn d_targets() -> usize {
    3
}
fn d_arena() -> f64 {
    1.0
}
fn d_agent_radius() -> f64 {
    0.04
}
fn d_target_radius() -> f64 {
    0.04
}
fn d_force_scale() -> f64 {
    0.005
}
fn d_drag() -> f64 {
    0.2
}
fn d_target_speed() -> f64 {
    0.01
}
fn d_sensor_range() -> f64 {
    0.5
}
fn d_target_costs() -> Vec<f64> {
    vec![-0.6, 0.6]
}
fn d_control_weight() -> f64 {
    0.5
}
fn d_control_clamp() -> f64 {
    2.0
}

/// Planar point-mass navigation among moving colored targets.
///
/// Dynamics (forward Euler, one unit of time per step):
/// `v ← (1 − drag)·v + force_scale·a`, `p ← p + v`, with the agent clamped to
/// the arena (velocity component zeroed on contact). Targets move at constant
/// speed and reflect off the walls. A target overlapping the agent is captured
/// and respawns at a uniformly random position with a random heading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterworldConfig {
    #[serde(default = "d_sensors")]
    pub n_sensors: usize,
    /// Targets per color.
    #[serde(default = "d_targets")]
    pub n_targets: usize,
    #[serde(default = "d_arena")]
    pub arena_size: f64,
    #[serde(default = "d_agent_radius")]
    pub agent_radius: f64,
    #[serde(default = "d_target_radius")]
    pub target_radius: f64,
    #[serde(default = "d_force_scale")]
    pub force_scale: f64,
    #[serde(default = "d_drag")]
    pub drag: f64,
    #[serde(default = "d_target_speed")]
    pub target_speed: f64,
    #[serde(default = "d_sensor_range")]
    pub sensor_range: f64,
    /// True cost of capturing a target, per color.
    #[serde(default = "d_target_costs")]
    pub target_costs: Vec<f64>,
    /// True cost weight on the squared control magnitude.
    #[serde(default = "d_control_weight")]
    pub control_cost_weight: f64,
    /// Bound applied to the squared control feature; this is `C_max`.
    #[serde(default = "d_control_clamp")]
    pub control_clamp: f64,
}

impl Default for WaterworldConfig {
    fn default() -> Self {
        Self {
            n_sensors: d_sensors(),
            n_targets: d_targets(),
            arena_size: d_arena(),
            agent_radius: d_agent_radius(),
            target_radius: d_target_radius(),
            force_scale: d_force_scale(),
            drag: d_drag(),
            target_speed: d_target_speed(),
            sensor_range: d_sensor_range(),
            target_costs: d_target_costs(),
            control_cost_weight: d_control_weight(),
            control_clamp: d_control_clamp(),
        }
    }
}

impl WaterworldConfig {
    pub fn obs_dim(&self) -> usize {
        FEATURES_PER_SENSOR * self.n_sensors + N_COLORS
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_sensors == 0 {
            errs.push("waterworld.n_sensors must be positive".to_string());
        }
        if self.n_targets == 0 {
            errs.push("waterworld.n_targets must be positive".to_string());
        }
        let positive = [
            ("arena_size", self.arena_size),
            ("agent_radius", self.agent_radius),
            ("target_radius", self.target_radius),
            ("force_scale", self.force_scale),
            ("sensor_range", self.sensor_range),
            ("control_clamp", self.control_clamp),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("waterworld.{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.drag) {
            errs.push(format!("waterworld.drag must lie in [0, 1), got {}", self.drag));
        }
        if !(self.target_speed >= 0.0) {
            errs.push("waterworld.target_speed must be non-negative".to_string());
        }
        if self.target_costs.len() != N_COLORS {
            errs.push(format!(
                "waterworld.target_costs needs {N_COLORS} entries, got {}",
                self.target_costs.len()
            ));
        }
        if 2.0 * self.target_radius.max(self.agent_radius) >= self.arena_size {
            errs.push("waterworld radii too large for the arena".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub color: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaterworldState {
    pub agent_pos: [f64; 2],
    pub agent_vel: [f64; 2],
    pub targets: Vec<Target>,
    /// Colors captured on the transition into this state.
    pub captured: [bool; N_COLORS],
}

#[derive(Clone, Debug)]
pub struct Waterworld {
    config: WaterworldConfig,
    spec: EnvSpec,
    weights: Vec<f64>,
}

impl Waterworld {
    pub fn new(config: WaterworldConfig, discount: f64, horizon: usize) -> Result<Self> {
        config.validate()?;
        let spec = EnvSpec {
            discount,
            horizon,
            obs_dim: config.obs_dim(),
            action_kind: ActionKind::Continuous(2),
            basis_dim: 1 + N_COLORS,
        };
        spec.validate()?;
        let mut weights = vec![config.control_cost_weight];
        weights.extend_from_slice(&config.target_costs);
        Ok(Self {
            config,
            spec,
            weights,
        })
    }

    pub fn config(&self) -> &WaterworldConfig {
        &self.config
    }

    fn random_target(&self, color: usize, rng: &mut SimRng) -> Target {
        let lo = self.config.target_radius;
        let hi = self.config.arena_size - lo;
        let heading = rng.random::<f64>() * 2.0 * PI;
        Target {
            pos: [rng.random_range(lo..hi), rng.random_range(lo..hi)],
            vel: [
                self.config.target_speed * heading.cos(),
                self.config.target_speed * heading.sin(),
            ],
            color,
        }
    }

    /// Speed used to normalize relative velocities into `[-1, 1]`.
    fn velocity_scale(&self) -> f64 {
        self.config.target_speed + self.config.force_scale / self.config.drag.max(1e-3)
    }

    fn sensor_reading(&self, state: &WaterworldState, angle: f64) -> [f64; FEATURES_PER_SENSOR] {
        let dir = [angle.cos(), angle.sin()];
        let r = self.config.target_radius;
        let mut best: Option<(f64, &Target)> = None;
        for t in &state.targets {
            let d = [t.pos[0] - state.agent_pos[0], t.pos[1] - state.agent_pos[1]];
            let along = d[0] * dir[0] + d[1] * dir[1];
            let perp_sq = d[0] * d[0] + d[1] * d[1] - along * along;
            if perp_sq > r * r {
                continue;
            }
            let hit = (along - (r * r - perp_sq).max(0.0).sqrt()).max(0.0);
            // The ray starts at the agent; targets entirely behind it are not seen.
            if along + r < 0.0 || hit > self.config.sensor_range {
                continue;
            }
            if best.is_none_or(|(b, _)| hit < b) {
                best = Some((hit, t));
            }
        }
        match best {
            None => [1.0, 0.0, 0.0, 0.0, 0.0],
            Some((dist, t)) => {
                let rel = [t.vel[0] - state.agent_vel[0], t.vel[1] - state.agent_vel[1]];
                let scale = self.velocity_scale();
                let radial = (rel[0] * dir[0] + rel[1] * dir[1]) / scale;
                let lateral = (-rel[0] * dir[1] + rel[1] * dir[0]) / scale;
                let mut out = [dist / self.config.sensor_range, 0.0, 0.0, 0.0, 0.0];
                out[1 + t.color] = 1.0;
                out[3] = radial.clamp(-1.0, 1.0);
                out[4] = lateral.clamp(-1.0, 1.0);
                out
            }
        }
    }

    fn force(&self, action: &Action) -> Result<[f64; 2]> {
        action.validate(self.spec.action_kind)?;
        let a = action.as_continuous().expect("validated continuous action");
        Ok([a[0], a[1]])
    }
}

impl Environment for Waterworld {
    type State = WaterworldState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut SimRng) -> WaterworldState {
        let lo = self.config.agent_radius;
        let hi = self.config.arena_size - lo;
        let agent_pos = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let mut targets = Vec::with_capacity(N_COLORS * self.config.n_targets);
        for color in 0..N_COLORS {
            for _ in 0..self.config.n_targets {
                targets.push(self.random_target(color, rng));
            }
        }
        WaterworldState {
            agent_pos,
            agent_vel: [0.0, 0.0],
            targets,
            captured: [false; N_COLORS],
        }
    }

    fn step(
        &self,
        state: &WaterworldState,
        action: &Action,
        rng: &mut SimRng,
    ) -> Result<WaterworldState> {
        let force = self.force(action)?;
        let c = &self.config;
        let mut next = state.clone();

        let lo = c.agent_radius;
        let hi = c.arena_size - c.agent_radius;
        for i in 0..2 {
            next.agent_vel[i] = (1.0 - c.drag) * state.agent_vel[i] + c.force_scale * force[i];
            let p = state.agent_pos[i] + next.agent_vel[i];
            if p < lo || p > hi {
                next.agent_vel[i] = 0.0;
            }
            next.agent_pos[i] = p.clamp(lo, hi);
        }

        let tlo = c.target_radius;
        let thi = c.arena_size - c.target_radius;
        for t in &mut next.targets {
            for i in 0..2 {
                let mut p = t.pos[i] + t.vel[i];
                if p < tlo {
                    p = 2.0 * tlo - p;
                    t.vel[i] = -t.vel[i];
                } else if p > thi {
                    p = 2.0 * thi - p;
                    t.vel[i] = -t.vel[i];
                }
                t.pos[i] = p.clamp(tlo, thi);
            }
        }

        next.captured = [false; N_COLORS];
        let reach = c.agent_radius + c.target_radius;
        for idx in 0..next.targets.len() {
            let t = &next.targets[idx];
            let dx = t.pos[0] - next.agent_pos[0];
            let dy = t.pos[1] - next.agent_pos[1];
            if dx * dx + dy * dy < reach * reach {
                let color = t.color;
                next.captured[color] = true;
                next.targets[idx] = self.random_target(color, rng);
            }
        }
        Ok(next)
    }

    fn observe(&self, state: &WaterworldState) -> Observation {
        let n = self.config.n_sensors;
        let mut obs = Vec::with_capacity(self.spec.obs_dim);
        for i in 0..n {
            let angle = 2.0 * PI * i as f64 / n as f64;
            obs.extend_from_slice(&self.sensor_reading(state, angle));
        }
        obs.extend(state.captured.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        Observation::Features(obs)
    }

    /// `[min(‖a‖², clamp), captured₀, captured₁]`.
    fn basis_features(&self, state: &WaterworldState, action: &Action) -> Vec<f64> {
        let control = action
            .as_continuous()
            .map_or(0.0, |a| a.iter().map(|x| x * x).sum::<f64>());
        let mut f = vec![control.min(self.config.control_clamp)];
        f.extend(state.captured.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        f
    }

    fn c_max(&self) -> f64 {
        self.config.control_clamp.max(1.0)
    }

    fn true_weights(&self) -> &[f64] {
        &self.weights
    }
}
