use std::sync::Arc;

use super::FeatureMap;
use crate::error::{validation, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Stationary policy held as a logits table; `pi(a|x)` is the softmax of row `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

/// Logit gap used for deterministic policies; `exp(-800)` underflows to zero.
const DETERMINISTIC_GAP: f64 = 800.0;

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return validation("policy dimensions must be positive");
        }
        if logits.len() != n_states * n_actions {
            return validation(format!(
                "logits table has {} entries, expected {}",
                logits.len(),
                n_states * n_actions
            ));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return validation("logits must be finite");
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    /// Policy with the given (strictly positive) action probabilities.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0)) {
            return validation("probabilities must be strictly positive");
        }
        Self::from_logits(n_states, n_actions, probs.iter().map(|p| p.ln()).collect())
    }

    /// Puts (numerically) all mass on `actions[x]` at each state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut logits = vec![-DETERMINISTIC_GAP; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            logits[x * n_actions + a] = 0.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            logits,
        }
    }

    /// `pi(a|x) ∝ exp(scale * <phi(x,a), theta>)`.
    pub fn linear_softmax(features: &FeatureMap, theta: &[f64], scale: f64) -> Self {
        let logits = features
            .linear_values(theta)
            .into_iter()
            .map(|v| scale * v)
            .collect();
        Self {
            n_states: features.n_states(),
            n_actions: features.n_actions(),
            logits,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }

    pub fn logits_row(&self, x: usize) -> &[f64] {
        &self.logits[x * self.n_actions..(x + 1) * self.n_actions]
    }

    /// Action distribution at state `x`.
    pub fn probs(&self, x: usize) -> Vec<f64> {
        softmax(self.logits_row(x))
    }

    /// All action distributions, row-major.
    pub fn prob_table(&self) -> Vec<f64> {
        let mut t = self.logits.clone();
        for row in t.chunks_mut(self.n_actions) {
            softmax_in_place(row);
        }
        t
    }

    /// Adds `shift[x]` to every logit of state `x`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let mut p = self.clone();
        for (row, s) in p.logits.chunks_mut(self.n_actions).zip(shift) {
            row.iter_mut().for_each(|v| *v += s);
        }
        p
    }

    /// Adds `delta` entrywise to the logits.
    pub fn add_logits(&mut self, delta: &[f64], scale: f64) {
        for (l, d) in self.logits.iter_mut().zip(delta) {
            *l += scale * d;
        }
    }

    /// Largest per-state total variation distance to `other`.
    pub fn max_tv(&self, other: &Policy) -> f64 {
        (0..self.n_states)
            .map(|x| {
                let p = self.probs(x);
                let q = other.probs(x);
                0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Action-value function: a table or a linear form over a feature map.
#[derive(Debug, Clone, PartialEq)]
pub enum QFunction {
    Tabular {
        n_states: usize,
        n_actions: usize,
        values: Vec<f64>,
    },
    Linear {
        theta: Vec<f64>,
        features: Arc<FeatureMap>,
    },
}

impl QFunction {
    pub fn tabular(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return validation("Q table has the wrong length");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return validation("Q table has non-finite entries");
        }
        Ok(QFunction::Tabular {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QFunction::Tabular {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn linear(theta: Vec<f64>, features: Arc<FeatureMap>) -> Result<Self> {
        if theta.len() != features.dim() {
            return validation(format!(
                "theta has dimension {}, features have {}",
                theta.len(),
                features.dim()
            ));
        }
        Ok(QFunction::Linear { theta, features })
    }

    pub fn n_states(&self) -> usize {
        match self {
            QFunction::Tabular { n_states, .. } => *n_states,
            QFunction::Linear { features, .. } => features.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            QFunction::Tabular { n_actions, .. } => *n_actions,
            QFunction::Linear { features, .. } => features.n_actions(),
        }
    }

    pub fn value(&self, x: usize, a: usize) -> f64 {
        match self {
            QFunction::Tabular {
                n_actions, values, ..
            } => values[x * n_actions + a],
            QFunction::Linear { theta, features } => features.dot(x, a, theta),
        }
    }

    /// Values at every pair, row-major.
    pub fn to_table(&self) -> Vec<f64> {
        match self {
            QFunction::Tabular { values, .. } => values.clone(),
            QFunction::Linear { theta, features } => features.linear_values(theta),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.to_table().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn negated(&self) -> Self {
        match self {
            QFunction::Tabular {
                n_states,
                n_actions,
                values,
            } => QFunction::Tabular {
                n_states: *n_states,
                n_actions: *n_actions,
                values: values.iter().map(|v| -v).collect(),
            },
            QFunction::Linear { theta, features } => QFunction::Linear {
                theta: theta.iter().map(|v| -v).collect(),
                features: features.clone(),
            },
        }
    }
}
