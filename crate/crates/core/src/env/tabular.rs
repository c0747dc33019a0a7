//! Exact computations on finite MDPs: policy evaluation of feature values,
//! discounted state visitation and exact feature expectations.

/// Enumerable dynamics of a finite MDP.
pub trait TabularModel: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn discount(&self) -> f64;
    /// Successor distribution as `(state, probability)` pairs.
    fn transitions(&self, state: usize, action: usize) -> Vec<(usize, f64)>;
    fn initial_distribution(&self) -> Vec<f64>;
    fn state_action_features(&self, state: usize, action: usize) -> Vec<f64>;
}

/// Sweeps stop once the sup-norm change drops below this.
const TOLERANCE: f64 = 1e-13;
const MAX_SWEEPS: usize = 1_000_000;

/// Cached copy of a [`TabularModel`] for repeated exact evaluation.
#[derive(Clone, Debug)]
pub struct ExactMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub basis_dim: usize,
    pub initial: Vec<f64>,
    transitions: Vec<Vec<(usize, f64)>>,
    features: Vec<Vec<f64>>,
}

impl ExactMdp {
    pub fn from_model(model: &dyn TabularModel) -> Self {
        let (ns, na) = (model.n_states(), model.n_actions());
        let mut transitions = Vec::with_capacity(ns * na);
        let mut features = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                transitions.push(model.transitions(s, a));
                features.push(model.state_action_features(s, a));
            }
        }
        let basis_dim = features.first().map_or(0, Vec::len);
        Self {
            n_states: ns,
            n_actions: na,
            discount: model.discount(),
            basis_dim,
            initial: model.initial_distribution(),
            transitions,
            features,
        }
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn features(&self, s: usize, a: usize) -> &[f64] {
        &self.features[s * self.n_actions + a]
    }

    pub fn uniform_policy(&self) -> Vec<Vec<f64>> {
        vec![vec![1.0 / self.n_actions as f64; self.n_actions]; self.n_states]
    }

    pub fn deterministic_policy(&self, actions: &[usize]) -> Vec<Vec<f64>> {
        actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; self.n_actions];
                row[a] = 1.0;
                row
            })
            .collect()
    }

    /// Feature-valued state values `Φ(s) = E[Σ γᵗ φ(s_t, a_t) | s_0 = s]`.
    ///
    /// `warm` seeds the iteration, which pays off when the policy changes
    /// little between calls.
    pub fn feature_values(&self, probs: &[Vec<f64>], warm: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        let k = self.basis_dim;
        let mut values = match warm {
            Some(w) => w.to_vec(),
            None => vec![vec![0.0; k]; self.n_states],
        };
        let mut next = values.clone();
        for _ in 0..MAX_SWEEPS {
            let mut change = 0.0f64;
            for s in 0..self.n_states {
                let out = &mut next[s];
                out.iter_mut().for_each(|x| *x = 0.0);
                for a in 0..self.n_actions {
                    let p = probs[s][a];
                    if p == 0.0 {
                        continue;
                    }
                    for (o, f) in out.iter_mut().zip(self.features(s, a)) {
                        *o += p * f;
                    }
                    for &(t, pt) in self.transitions(s, a) {
                        let scale = p * pt * self.discount;
                        for (o, v) in out.iter_mut().zip(&values[t]) {
                            *o += scale * v;
                        }
                    }
                }
                for (o, v) in out.iter().zip(&values[s]) {
                    change = change.max((o - v).abs());
                }
            }
            std::mem::swap(&mut values, &mut next);
            if change < TOLERANCE {
                break;
            }
        }
        values
    }

    /// Feature-valued action values `Φ(s, a) = φ(s, a) + γ Σ p(s'|s,a) Φ(s')`,
    /// indexed `[s * n_actions + a]`.
    pub fn feature_q(&self, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut q = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut row = self.features(s, a).to_vec();
                for &(t, pt) in self.transitions(s, a) {
                    for (r, v) in row.iter_mut().zip(&values[t]) {
                        *r += self.discount * pt * v;
                    }
                }
                q.push(row);
            }
        }
        q
    }

    /// Discounted state visitation `ρ(s) = Σ γᵗ P[s_t = s]`.
    pub fn visitation(&self, probs: &[Vec<f64>], warm: Option<&[f64]>) -> Vec<f64> {
        let mut rho = match warm {
            Some(w) => w.to_vec(),
            None => self.initial.clone(),
        };
        let mut next = vec![0.0; self.n_states];
        for _ in 0..MAX_SWEEPS {
            next.copy_from_slice(&self.initial);
            for s in 0..self.n_states {
                if rho[s] == 0.0 {
                    continue;
                }
                for a in 0..self.n_actions {
                    let mass = self.discount * rho[s] * probs[s][a];
                    if mass == 0.0 {
                        continue;
                    }
                    for &(t, pt) in self.transitions(s, a) {
                        next[t] += mass * pt;
                    }
                }
            }
            let change = rho
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut rho, &mut next);
            if change < TOLERANCE {
                break;
            }
        }
        rho
    }

    /// Exact `φ(π) = Σ_s p₀(s) Φ(s)`.
    pub fn feature_expectation(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        let values = self.feature_values(probs, None);
        self.start_average(&values)
    }

    pub fn start_average(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let mut phi = vec![0.0; self.basis_dim];
        for (p, v) in self.initial.iter().zip(values) {
            crate::axpy(*p, v, &mut phi);
        }
        phi
    }

    /// Exact expected discounted cost `η^w(π) = w · φ(π)`.
    pub fn cost(&self, probs: &[Vec<f64>], weights: &[f64]) -> f64 {
        crate::dot(weights, &self.feature_expectation(probs))
    }
}
