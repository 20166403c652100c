//! Behavioral cloning: count-based tabular maximum likelihood and a linear-softmax
//! class fitted by full-batch gradient ascent on the log-likelihood.

use std::io::Write;
use std::str::FromStr;

use crate::dataset::ExpertDataset;
use crate::error::{validation, Error, Result};
use crate::mdp::io::fmt_real;
use crate::mdp::{softmax, FeatureMap, Policy};

/// Logit assigned to actions never observed at a visited state under zero smoothing.
const UNSEEN_LOGIT: f64 = -800.0;
const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcClass {
    Tabular,
    LinearSoftmax,
}

impl FromStr for BcClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(BcClass::Tabular),
            "linear_softmax" => Ok(BcClass::LinearSoftmax),
            _ => validation(format!("unknown BC class '{s}' (tabular | linear_softmax)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcConfig {
    pub class_kind: BcClass,
    pub smoothing: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            class_kind: BcClass::LinearSoftmax,
            smoothing: 0.0,
            steps: 2000,
            step_size: 1.0,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return validation("smoothing must be a finite value >= 0");
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return validation("step_size must be positive");
        }
        Ok(())
    }
}

/// `pi(a|x) = (count(x,a) + s) / (count(x) + A s)`; unvisited states are uniform.
pub fn bc_tabular(data: &ExpertDataset, n_states: usize, n_actions: usize, smoothing: f64) -> Result<Policy> {
    if data.n_states() != n_states || data.n_actions() != n_actions {
        return validation("dataset dimensions do not match");
    }
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return validation("smoothing must be a finite value >= 0");
    }
    let mut counts = vec![0.0f64; n_states * n_actions];
    for &(x, a) in data.pairs() {
        counts[x * n_actions + a] += 1.0;
    }
    let logits = counts
        .chunks(n_actions)
        .flat_map(|row| {
            let total: f64 = row.iter().sum();
            row.iter()
                .map(move |&c| {
                    if total == 0.0 {
                        0.0
                    } else if c + smoothing == 0.0 {
                        UNSEEN_LOGIT
                    } else {
                        ((c + smoothing) / (total + n_actions as f64 * smoothing)).ln()
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Policy::from_logits(n_states, n_actions, logits)
}

/// Average log-likelihood and its gradient for the linear-softmax class.
pub struct LinearSoftmaxLikelihood<'a> {
    features: &'a FeatureMap,
    expert_mean: Vec<f64>,
    state_weights: Vec<(usize, f64)>,
}

impl<'a> LinearSoftmaxLikelihood<'a> {
    pub fn new(data: &ExpertDataset, features: &'a FeatureMap) -> Result<Self> {
        if data.n_states() != features.n_states() || data.n_actions() != features.n_actions() {
            return validation("dataset does not match the feature map");
        }
        let c = data.counts();
        let na = features.n_actions();
        let mut expert_mean = vec![0.0; features.dim()];
        for (sa, &f) in c.pair_freq.iter().enumerate() {
            if f != 0.0 {
                for (m, p) in expert_mean.iter_mut().zip(features.get(sa / na, sa % na)) {
                    *m += f * p;
                }
            }
        }
        Ok(Self {
            features,
            expert_mean,
            state_weights: c.visited.iter().map(|&x| (x, c.state_freq[x])).collect(),
        })
    }

    /// `(1/tau) sum_i ln pi_theta(A_i | X_i)`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        let na = self.features.n_actions();
        let mut ll: f64 = self.expert_mean.iter().zip(theta).map(|(m, t)| m * t).sum();
        for &(x, w) in &self.state_weights {
            let z: Vec<f64> = (0..na).map(|a| self.features.dot(x, a, theta)).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ll -= w * (m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln());
        }
        ll
    }

    /// `mean phi(X_i, A_i) - mean E_{a ~ pi_theta(.|X_i)} phi(X_i, a)`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let na = self.features.n_actions();
        let mut g = self.expert_mean.clone();
        for &(x, w) in &self.state_weights {
            let z: Vec<f64> = (0..na).map(|a| self.features.dot(x, a, theta)).collect();
            for (a, p) in softmax(&z).into_iter().enumerate() {
                for (gj, f) in g.iter_mut().zip(self.features.get(x, a)) {
                    *gj -= w * p * f;
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct BcFit {
    pub policy: Policy,
    pub theta: Vec<f64>,
    /// Log-likelihood at `theta_0 = 0` and after every step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Default)]
struct DivergenceGuard {
    decreases: usize,
}

impl DivergenceGuard {
    fn observe(&mut self, previous: f64, current: f64) -> bool {
        self.decreases = if current < previous { self.decreases + 1 } else { 0 };
        self.decreases >= DIVERGENCE_PATIENCE
    }
}

/// Full-batch gradient ascent from `theta = 0` for `cfg.steps` steps.
pub fn bc_linear_softmax(data: &ExpertDataset, features: &FeatureMap, cfg: &BcConfig) -> Result<BcFit> {
    cfg.validate()?;
    let obj = LinearSoftmaxLikelihood::new(data, features)?;
    let mut theta = vec![0.0; features.dim()];
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(obj.value(&theta));
    let mut guard = DivergenceGuard::default();
    for step in 1..=cfg.steps {
        let g = obj.gradient(&theta);
        for (t, gj) in theta.iter_mut().zip(&g) {
            *t += cfg.step_size * gj;
        }
        let ll = obj.value(&theta);
        if !ll.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let diverged = guard.observe(trace[trace.len() - 1], ll);
        trace.push(ll);
        if diverged {
            return Err(Error::Diverged { step });
        }
    }
    Ok(BcFit {
        policy: Policy::linear_softmax(features, &theta, 1.0),
        theta,
        log_likelihood: trace,
    })
}

/// One line per state with the `A` logits of that state.
pub fn write_logits_table<W: Write>(policy: &Policy, mut w: W) -> Result<()> {
    for x in 0..policy.n_states() {
        let row: Vec<String> = policy.logits_row(x).iter().map(|v| fmt_real(*v)).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}
