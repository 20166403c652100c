//! Finite discounted MDPs, feature maps, softmax policies and action-value functions.
//!
//! State-action tables are stored row-major: entry `(x, a)` lives at `x * n_actions + a`.

mod eval;
pub(crate) mod io;
mod policy;

pub use eval::{
    bellman_residual, evaluate_q, evaluate_q_with, expected_return, flow_residual,
    occupancy_measures, pdl_gap, policy_update_mw, state_value, Occupancy,
    DENSE_EVAL_THRESHOLD,
};
pub use io::{read_features, read_mdp, write_features, write_mdp};
pub use policy::{softmax, Policy, QFunction};

use std::borrow::Cow;

use crate::error::{validation, Result};

/// Tolerance on probability vectors summing to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Transition kernel storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Transitions {
    /// `P(x'|x,a)` at `((x * A) + a) * |X| + x'`.
    Dense(Vec<f64>),
    /// `P(.|x,a) = sum_j w_j(x,a) m_j` with simplex weights and `dim` anchor distributions.
    Factored {
        dim: usize,
        /// `w_j(x,a)` at `((x * A) + a) * dim + j`.
        weights: Vec<f64>,
        /// `m_j(x')` at `j * |X| + x'`.
        anchors: Vec<f64>,
    },
}

/// A finite discounted MDP with rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Transitions,
    reward: Vec<f64>,
    gamma: f64,
    nu0: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return validation(format!("{what} has a negative or non-finite entry"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return validation(format!("{what} sums to {s}, not 1"));
    }
    Ok(())
}

impl FiniteMdp {
    /// Builds an MDP from a dense `[x][a][x']` transition tensor.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        nu0: Vec<f64>,
    ) -> Result<Self> {
        Self::check_common(n_states, n_actions, &reward, gamma, &nu0)?;
        if transition.len() != n_states * n_actions * n_states {
            return validation(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            ));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(
                row,
                &format!("transition row (x={}, a={})", i / n_actions, i % n_actions),
            )?;
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions: Transitions::Dense(transition),
            reward,
            gamma,
            nu0,
        })
    }

    /// Builds an MDP whose kernel is a per-(x,a) mixture of `dim` anchor distributions.
    pub fn factored(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        weights: Vec<f64>,
        anchors: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        nu0: Vec<f64>,
    ) -> Result<Self> {
        Self::check_common(n_states, n_actions, &reward, gamma, &nu0)?;
        if dim == 0 {
            return validation("factored kernel needs at least one anchor");
        }
        if weights.len() != n_states * n_actions * dim || anchors.len() != dim * n_states {
            return validation("factored kernel has inconsistent shapes");
        }
        for (i, w) in weights.chunks(dim).enumerate() {
            check_distribution(
                w,
                &format!("mixture weights (x={}, a={})", i / n_actions, i % n_actions),
            )?;
        }
        for (j, m) in anchors.chunks(n_states).enumerate() {
            check_distribution(m, &format!("anchor distribution {j}"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions: Transitions::Factored {
                dim,
                weights,
                anchors,
            },
            reward,
            gamma,
            nu0,
        })
    }

    fn check_common(
        n_states: usize,
        n_actions: usize,
        reward: &[f64],
        gamma: f64,
        nu0: &[f64],
    ) -> Result<()> {
        if n_states == 0 || n_actions == 0 {
            return validation("state and action counts must be positive");
        }
        if !(0.0..1.0).contains(&gamma) {
            return validation(format!("discount {gamma} outside [0, 1)"));
        }
        if reward.len() != n_states * n_actions {
            return validation("reward table has the wrong length");
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return validation(format!("reward {r} outside [0, 1]"));
        }
        if nu0.len() != n_states {
            return validation("initial distribution has the wrong length");
        }
        check_distribution(nu0, "initial distribution")
    }

    /// Same dynamics with a different reward table.
    pub fn with_rewards(mut self, reward: Vec<f64>) -> Result<Self> {
        Self::check_common(self.n_states, self.n_actions, &reward, self.gamma, &self.nu0)?;
        self.reward = reward;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu0(&self) -> &[f64] {
        &self.nu0
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.transitions, Transitions::Dense(_))
    }

    /// `P(.|x,a)`; synthesized on demand for factored kernels.
    pub fn transition_row(&self, x: usize, a: usize) -> Cow<'_, [f64]> {
        let n = self.n_states;
        let sa = x * self.n_actions + a;
        match &self.transitions {
            Transitions::Dense(p) => Cow::Borrowed(&p[sa * n..(sa + 1) * n]),
            Transitions::Factored {
                dim,
                weights,
                anchors,
            } => {
                let w = &weights[sa * dim..(sa + 1) * dim];
                let mut row = vec![0.0; n];
                for (j, &wj) in w.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    for (r, &m) in row.iter_mut().zip(&anchors[j * n..(j + 1) * n]) {
                        *r += wj * m;
                    }
                }
                Cow::Owned(row)
            }
        }
    }

    /// `(P v)(x, a) = sum_x' P(x'|x,a) v(x')` for every pair.
    pub fn expect_next(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n_states;
        match &self.transitions {
            Transitions::Dense(p) => p
                .chunks(n)
                .map(|row| row.iter().zip(v).map(|(p, v)| p * v).sum())
                .collect(),
            Transitions::Factored {
                dim,
                weights,
                anchors,
            } => {
                let mv: Vec<f64> = anchors
                    .chunks(n)
                    .map(|m| m.iter().zip(v).map(|(p, v)| p * v).sum())
                    .collect();
                weights
                    .chunks(*dim)
                    .map(|w| w.iter().zip(&mv).map(|(w, m)| w * m).sum())
                    .collect()
            }
        }
    }

    /// `sum_{x,a} P(x'|x,a) mu(x,a)` for every next state `x'`.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n];
        match &self.transitions {
            Transitions::Dense(p) => {
                for (row, &m) in p.chunks(n).zip(mu) {
                    if m == 0.0 {
                        continue;
                    }
                    for (o, &p) in out.iter_mut().zip(row) {
                        *o += m * p;
                    }
                }
            }
            Transitions::Factored {
                dim,
                weights,
                anchors,
            } => {
                let mut mass = vec![0.0; *dim];
                for (w, &m) in weights.chunks(*dim).zip(mu) {
                    for (acc, &wj) in mass.iter_mut().zip(w) {
                        *acc += m * wj;
                    }
                }
                for (j, &c) in mass.iter().enumerate() {
                    for (o, &p) in out.iter_mut().zip(&anchors[j * n..(j + 1) * n]) {
                        *o += c * p;
                    }
                }
            }
        }
        out
    }
}

/// Per state-action feature vectors of a common dimension with a norm bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    phi: Vec<f64>,
    b_phi: f64,
}

impl FeatureMap {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        phi: Vec<f64>,
        b_phi: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || dim == 0 {
            return validation("feature map dimensions must be positive");
        }
        if phi.len() != n_states * n_actions * dim {
            return validation("feature table has the wrong length");
        }
        if !(b_phi > 0.0) || !b_phi.is_finite() {
            return validation("feature norm bound must be positive and finite");
        }
        for (i, f) in phi.chunks(dim).enumerate() {
            if f.iter().any(|v| !v.is_finite()) {
                return validation(format!("non-finite feature at pair {i}"));
            }
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > b_phi {
                return validation(format!(
                    "feature norm {norm} at pair {i} exceeds bound {b_phi}"
                ));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            dim,
            phi,
            b_phi,
        })
    }

    /// Indicator features, `d = |X| * A`.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        let mut phi = vec![0.0; n * n];
        for i in 0..n {
            phi[i * n + i] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            dim: n,
            phi,
            b_phi: 1.0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b_phi(&self) -> f64 {
        self.b_phi
    }

    pub fn table(&self) -> &[f64] {
        &self.phi
    }

    pub fn get(&self, x: usize, a: usize) -> &[f64] {
        let i = (x * self.n_actions + a) * self.dim;
        &self.phi[i..i + self.dim]
    }

    pub fn dot(&self, x: usize, a: usize, theta: &[f64]) -> f64 {
        self.get(x, a).iter().zip(theta).map(|(f, t)| f * t).sum()
    }

    /// `<phi(x,a), theta>` for every pair, row-major.
    pub fn linear_values(&self, theta: &[f64]) -> Vec<f64> {
        self.phi
            .chunks(self.dim)
            .map(|f| f.iter().zip(theta).map(|(f, t)| f * t).sum())
            .collect()
    }

    /// Largest feature norm actually present.
    pub fn max_norm(&self) -> f64 {
        self.phi
            .chunks(self.dim)
            .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rows() {
        let err = FiniteMdp::new(1, 1, vec![0.5], vec![0.0], 0.5, vec![1.0]);
        assert!(err.is_err());
        let err = FiniteMdp::new(1, 1, vec![1.0], vec![1.5], 0.5, vec![1.0]);
        assert!(err.is_err());
        let err = FiniteMdp::new(1, 1, vec![1.0], vec![0.5], 1.0, vec![1.0]);
        assert!(err.is_err());
        let err = FiniteMdp::new(2, 1, vec![1.2, -0.2, 0.0, 1.0], vec![0.5; 2], 0.5, vec![0.5; 2]);
        assert!(err.is_err());
    }

    #[test]
    fn factored_rows_match_dense_mixture() {
        let weights = vec![0.25, 0.75, 1.0, 0.0];
        let anchors = vec![0.5, 0.5, 0.0, 0.1, 0.9, 0.0];
        let mdp =
            FiniteMdp::factored(3, 1, 2, weights, anchors, vec![0.0; 3], 0.9, vec![1.0, 0.0, 0.0]);
        assert!(mdp.is_err(), "weights table is too short for 3 states");

        let weights = vec![0.25, 0.75, 1.0, 0.0, 0.5, 0.5];
        let anchors = vec![0.5, 0.5, 0.0, 0.1, 0.9, 0.0];
        let mdp = FiniteMdp::factored(3, 1, 2, weights, anchors, vec![0.0; 3], 0.9, vec![1.0, 0.0, 0.0])
            .unwrap();
        let row = mdp.transition_row(0, 0);
        assert!((row[0] - (0.25 * 0.5 + 0.75 * 0.1)).abs() < 1e-15);
        assert!((row[1] - (0.25 * 0.5 + 0.75 * 0.9)).abs() < 1e-15);
        let v = [1.0, 2.0, 3.0];
        let pv = mdp.expect_next(&v);
        for x in 0..3 {
            let row = mdp.transition_row(x, 0);
            let direct: f64 = row.iter().zip(&v).map(|(p, v)| p * v).sum();
            assert!((pv[x] - direct).abs() < 1e-14);
        }
        let mu = [0.2, 0.3, 0.5];
        let pushed = mdp.push_forward(&mu);
        for y in 0..3 {
            let direct: f64 = (0..3).map(|x| mu[x] * mdp.transition_row(x, 0)[y]).sum();
            assert!((pushed[y] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn feature_norm_bound_enforced() {
        assert!(FeatureMap::new(1, 1, 2, vec![3.0, 4.0], 4.9).is_err());
        let f = FeatureMap::new(1, 1, 2, vec![3.0, 4.0], 5.0).unwrap();
        assert_eq!(f.dot(0, 0, &[1.0, 1.0]), 7.0);
        assert_eq!(f.max_norm(), 5.0);
    }
}
