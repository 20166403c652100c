//! Primal-dual imitation with a linear critic: closed-form best response on the
//! feature-expectation gap, exponential-weights actor, uniformly drawn output iterate.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::ExpertDataset;
use crate::error::{validation, Error, Result};
use crate::mdp::io::{fmt_real, parse_num};
use crate::mdp::{softmax, FeatureMap, Policy, QFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct SpoilLinearConfig {
    pub k_iters: usize,
    pub eta: f64,
    pub b_theta: f64,
    pub output_seed: u64,
    pub record_diagnostics: bool,
}

impl SpoilLinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_iters == 0 {
            return validation("k_iters must be at least 1");
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return validation("eta must be positive");
        }
        if !(self.b_theta > 0.0) || !self.b_theta.is_finite() {
            return validation("b_theta must be positive");
        }
        Ok(())
    }
}

/// Critic radius that keeps every linear critic within `1 / (1 - gamma)` in sup norm.
pub fn default_b_theta(gamma: f64, b_phi: f64) -> f64 {
    1.0 / ((1.0 - gamma) * b_phi)
}

/// How iterate `k` of the actor is rebuilt from the critic trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorForm {
    /// `pi_k ∝ exp(eta <phi, sum_{j<k} theta_j>)`.
    CumulativeTheta,
    /// `pi_k ∝ exp(eta sum_{j<k} Q_j)`, accumulated table by table.
    CumulativeLogits,
}

/// Sequence of critics `Q_1..Q_K` chosen by a run.
#[derive(Debug, Clone)]
pub enum CriticTrace {
    Linear {
        features: Arc<FeatureMap>,
        thetas: Vec<Vec<f64>>,
    },
    Members {
        members: Arc<Vec<QFunction>>,
        chosen: Vec<usize>,
    },
}

impl CriticTrace {
    pub fn len(&self) -> usize {
        match self {
            CriticTrace::Linear { thetas, .. } => thetas.len(),
            CriticTrace::Members { chosen, .. } => chosen.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Critic of iteration `k` (1-based).
    pub fn critic(&self, k: usize) -> QFunction {
        match self {
            CriticTrace::Linear { features, thetas } => QFunction::Linear {
                theta: thetas[k - 1].clone(),
                features: features.clone(),
            },
            CriticTrace::Members { members, chosen } => members[chosen[k - 1]].clone(),
        }
    }

    fn table(&self, k: usize) -> Vec<f64> {
        match self {
            CriticTrace::Linear { features, thetas } => features.linear_values(&thetas[k - 1]),
            CriticTrace::Members { members, chosen } => members[chosen[k - 1]].to_table(),
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SpoilRunRecord {
    pub n_states: usize,
    pub n_actions: usize,
    pub eta: f64,
    /// Output index `I`, in `1..=K`.
    pub selected: usize,
    pub trace: CriticTrace,
    pub actor: ActorForm,
    /// `||g_hat_k||`; empty for non-linear critic classes.
    pub g_hat_norms: Vec<f64>,
    /// Empirical objective of the chosen critic, `L_hat(pi_k; Q_k)`.
    pub objectives: Vec<f64>,
    pub output: Policy,
}

impl SpoilRunRecord {
    pub fn k_iters(&self) -> usize {
        self.trace.len()
    }

    /// Iterates `pi_1..pi_K` in order, rebuilt from the critic trace.
    pub fn iterates(&self) -> Iterates<'_> {
        Iterates {
            record: self,
            k: 1,
            theta_bar: match &self.trace {
                CriticTrace::Linear { features, .. } => vec![0.0; features.dim()],
                _ => vec![],
            },
            logits: vec![0.0; self.n_states * self.n_actions],
        }
    }

    /// Iterate `pi_k` (1-based).
    pub fn iterate(&self, k: usize) -> Policy {
        self.iterates()
            .nth(k - 1)
            .expect("iterate index within 1..=K")
    }
}

pub struct Iterates<'a> {
    record: &'a SpoilRunRecord,
    k: usize,
    theta_bar: Vec<f64>,
    logits: Vec<f64>,
}

impl Iterator for Iterates<'_> {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        let r = self.record;
        if self.k > r.k_iters() {
            return None;
        }
        if self.k > 1 {
            match (r.actor, &r.trace) {
                (ActorForm::CumulativeTheta, CriticTrace::Linear { thetas, .. }) => {
                    for (b, t) in self.theta_bar.iter_mut().zip(&thetas[self.k - 2]) {
                        *b += t;
                    }
                }
                _ => {
                    for (l, q) in self.logits.iter_mut().zip(r.trace.table(self.k - 1)) {
                        *l += r.eta * q;
                    }
                }
            }
        }
        self.k += 1;
        Some(match (r.actor, &r.trace) {
            (ActorForm::CumulativeTheta, CriticTrace::Linear { features, .. }) => {
                Policy::linear_softmax(features, &self.theta_bar, r.eta)
            }
            _ => Policy::from_logits(r.n_states, r.n_actions, self.logits.clone())
                .expect("finite cumulative logits"),
        })
    }
}

/// Draws the output index `I ~ U({1..K})`.
pub fn draw_output_index(seed: u64, k_iters: usize) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(1..=k_iters)
}

/// Precomputed pieces of `g_hat = mean(phi(X_i, A_i)) - mean(phi(X_i, pi))`,
/// grouped by visited state.
pub(crate) struct GapEstimator {
    pub(crate) expert_mean: Vec<f64>,
    pub(crate) state_weights: Vec<(usize, f64)>,
}

impl GapEstimator {
    pub(crate) fn new(data: &ExpertDataset, features: &FeatureMap) -> Result<Self> {
        if data.n_states() != features.n_states() || data.n_actions() != features.n_actions() {
            return validation("dataset does not match the feature map");
        }
        let counts = data.counts();
        let d = features.dim();
        let na = features.n_actions();
        let mut expert_mean = vec![0.0; d];
        for (sa, &f) in counts.pair_freq.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            for (m, p) in expert_mean.iter_mut().zip(features.get(sa / na, sa % na)) {
                *m += f * p;
            }
        }
        let state_weights = counts
            .visited
            .iter()
            .map(|&x| (x, counts.state_freq[x]))
            .collect();
        Ok(Self {
            expert_mean,
            state_weights,
        })
    }

    /// `g_hat` for a policy given through its per-state action distribution.
    pub(crate) fn estimate(
        &self,
        features: &FeatureMap,
        mut probs_at: impl FnMut(usize) -> Vec<f64>,
    ) -> Vec<f64> {
        let mut g = self.expert_mean.clone();
        for &(x, w) in &self.state_weights {
            let p = probs_at(x);
            for (a, pa) in p.iter().enumerate() {
                let c = w * pa;
                for (gj, f) in g.iter_mut().zip(features.get(x, a)) {
                    *gj -= c * f;
                }
            }
        }
        g
    }
}

/// `g_hat = tau^-1 sum_i (phi(X_i, A_i) - sum_a pi(a|X_i) phi(X_i, a))`.
pub fn feature_gap_estimate(
    data: &ExpertDataset,
    features: &FeatureMap,
    pi: &Policy,
) -> Result<Vec<f64>> {
    let est = GapEstimator::new(data, features)?;
    Ok(est.estimate(features, |x| pi.probs(x)))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// `argmax_{||theta|| <= B} <theta, g_hat> = B g_hat / ||g_hat||`, and zero when `g_hat = 0`.
pub fn critic_best_response_linear(g_hat: &[f64], b_theta: f64) -> Vec<f64> {
    let n = norm(g_hat);
    if n == 0.0 {
        return vec![0.0; g_hat.len()];
    }
    g_hat.iter().map(|g| b_theta * g / n).collect()
}

pub fn run_spoil_linear(
    data: &ExpertDataset,
    features: &Arc<FeatureMap>,
    cfg: &SpoilLinearConfig,
) -> Result<(Policy, SpoilRunRecord)> {
    cfg.validate()?;
    let est = GapEstimator::new(data, features)?;
    let d = features.dim();
    let mut theta_bar = vec![0.0; d];
    let mut theta_prev = vec![0.0; d];
    let mut thetas = Vec::with_capacity(cfg.k_iters);
    let mut g_norms = Vec::with_capacity(cfg.k_iters);
    let mut objectives = Vec::with_capacity(cfg.k_iters);
    let mut logits_buf = Vec::new();

    for _ in 0..cfg.k_iters {
        // Actor: pi_k ∝ pi_{k-1} exp(eta <phi, theta_{k-1}>).
        for (b, t) in theta_bar.iter_mut().zip(&theta_prev) {
            *b += t;
        }
        // Critic on the visited states only.
        let g_hat = est.estimate(features, |x| {
            logits_buf.clear();
            logits_buf.extend((0..features.n_actions()).map(|a| cfg.eta * features.dot(x, a, &theta_bar)));
            softmax(&logits_buf)
        });
        let theta = critic_best_response_linear(&g_hat, cfg.b_theta);
        g_norms.push(norm(&g_hat));
        objectives.push(dot(&theta, &g_hat));
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite critic parameter".into()));
        }
        theta_prev = theta.clone();
        thetas.push(theta);
    }

    let selected = draw_output_index(cfg.output_seed, cfg.k_iters);
    let mut theta_out = vec![0.0; d];
    for t in &thetas[..selected - 1] {
        for (b, v) in theta_out.iter_mut().zip(t) {
            *b += v;
        }
    }
    let output = Policy::linear_softmax(features, &theta_out, cfg.eta);
    let record = SpoilRunRecord {
        n_states: features.n_states(),
        n_actions: features.n_actions(),
        eta: cfg.eta,
        selected,
        trace: CriticTrace::Linear {
            features: features.clone(),
            thetas,
        },
        actor: ActorForm::CumulativeTheta,
        g_hat_norms: g_norms,
        objectives,
        output: output.clone(),
    };
    Ok((output, record))
}

/// Writes `k,g_hat_norm,objective_value,theta_1..theta_d` (linear traces) or
/// `k,objective_value,critic_index` (finite classes).
pub fn write_run_csv<W: Write>(record: &SpoilRunRecord, mut w: W) -> Result<()> {
    match &record.trace {
        CriticTrace::Linear { thetas, features } => {
            write!(w, "k,g_hat_norm,objective_value")?;
            for j in 1..=features.dim() {
                write!(w, ",theta_{j}")?;
            }
            writeln!(w)?;
            for (k, theta) in thetas.iter().enumerate() {
                let g = record.g_hat_norms.get(k).copied().unwrap_or(f64::NAN);
                write!(w, "{},{},{}", k + 1, fmt_real(g), fmt_real(record.objectives[k]))?;
                for t in theta {
                    write!(w, ",{}", fmt_real(*t))?;
                }
                writeln!(w)?;
            }
        }
        CriticTrace::Members { chosen, .. } => {
            writeln!(w, "k,objective_value,critic_index")?;
            for (k, c) in chosen.iter().enumerate() {
                writeln!(w, "{},{},{}", k + 1, fmt_real(record.objectives[k]), c)?;
            }
        }
    }
    Ok(())
}

/// Linear critic trace read back from a run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrace {
    pub g_hat_norms: Vec<f64>,
    pub objectives: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
}

pub fn read_linear_run_csv<R: BufRead>(r: R) -> Result<LinearTrace> {
    let mut lines = r.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty run file".into(),
    })??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[..3] != ["k", "g_hat_norm", "objective_value"] {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header k,g_hat_norm,objective_value,theta_...".into(),
        });
    }
    let d = cols.len() - 3;
    let mut trace = LinearTrace {
        g_hat_norms: vec![],
        objectives: vec![],
        thetas: vec![],
    };
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.trim().split(',');
        let k: usize = parse_num(tok.next(), ln, "k")?;
        if k != trace.thetas.len() + 1 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("iterations out of order (got k={k})"),
            });
        }
        trace.g_hat_norms.push(parse_num(tok.next(), ln, "g_hat_norm")?);
        trace.objectives.push(parse_num(tok.next(), ln, "objective_value")?);
        let theta = tok
            .map(|t| parse_num(Some(t), ln, "theta component"))
            .collect::<Result<Vec<f64>>>()?;
        if theta.len() != d {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {d} theta components"),
            });
        }
        trace.thetas.push(theta);
    }
    if trace.thetas.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "run file has no iterations".into(),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::mdp::policy_update_mw;
    use rand::Rng;

    fn dataset(n: usize, na: usize, pairs: Vec<(usize, usize)>) -> ExpertDataset {
        ExpertDataset::new(n, na, pairs, DatasetMeta::default()).unwrap()
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize, na: usize, d: usize) -> Arc<FeatureMap> {
        let phi: Vec<f64> = (0..n * na * d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b = phi
            .chunks(d)
            .map(norm)
            .fold(0.0, f64::max);
        Arc::new(FeatureMap::new(n, na, d, phi, b).unwrap())
    }

    fn naive_gap(data: &ExpertDataset, features: &FeatureMap, pi: &Policy) -> Vec<f64> {
        let mut g = vec![0.0; features.dim()];
        for &(x, a) in data.pairs() {
            let p = pi.probs(x);
            for j in 0..features.dim() {
                let mut mean = 0.0;
                for b in 0..features.n_actions() {
                    mean += p[b] * features.get(x, b)[j];
                }
                g[j] += (features.get(x, a)[j] - mean) / data.tau_e() as f64;
            }
        }
        g
    }

    #[test]
    fn gap_vanishes_for_matching_deterministic_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let features = random_features(&mut rng, 3, 2, 4);
        let data = dataset(3, 2, vec![(0, 1), (2, 0), (0, 1), (1, 1)]);
        let pi = Policy::deterministic(2, &[1, 1, 0]);
        let g = feature_gap_estimate(&data, &features, &pi).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gap_two_action_example() {
        let features = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let data = dataset(1, 2, vec![(0, 0)]);
        let g = feature_gap_estimate(&data, &features, &Policy::uniform(1, 2)).unwrap();
        assert_eq!(g, vec![0.5, -0.5]);
    }

    #[test]
    fn gap_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features = random_features(&mut rng, 6, 4, 3);
        let pairs = (0..300).map(|_| (rng.random_range(0..6), rng.random_range(0..4))).collect();
        let data = dataset(6, 4, pairs);
        let pi = crate::envgen::random_policy(&mut rng, 6, 4);
        let g = feature_gap_estimate(&data, &features, &pi).unwrap();
        let oracle = naive_gap(&data, &features, &pi);
        for (a, b) in g.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(norm(&g) <= 2.0 * features.b_phi());
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(critic_best_response_linear(&[3.0, 4.0], 1.0), vec![0.6, 0.8]);
        assert_eq!(critic_best_response_linear(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = critic_best_response_linear(&g, 7.0);
        assert!((dot(&theta, &g) - 7.0 * norm(&g)).abs() <= 1e-12);
        for _ in 0..1000 {
            let mut probe: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scale = 7.0 * rng.random::<f64>() / norm(&probe);
            probe.iter_mut().for_each(|p| *p *= scale);
            assert!(dot(&theta, &g) >= dot(&probe, &g));
        }
    }

    fn cfg(k: usize, eta: f64, b: f64) -> SpoilLinearConfig {
        SpoilLinearConfig {
            k_iters: k,
            eta,
            b_theta: b,
            output_seed: 3,
            record_diagnostics: true,
        }
    }

    #[test]
    fn single_iteration_returns_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let features = random_features(&mut rng, 4, 3, 2);
        let data = dataset(4, 3, vec![(0, 2), (3, 1)]);
        let (out, rec) = run_spoil_linear(&data, &features, &cfg(1, 0.5, 1.0)).unwrap();
        assert_eq!(rec.selected, 1);
        assert!(out.max_tv(&Policy::uniform(4, 3)) == 0.0);
    }

    #[test]
    fn zero_iterations_rejected() {
        let features = Arc::new(FeatureMap::one_hot(1, 2));
        let data = dataset(1, 2, vec![(0, 0)]);
        assert!(matches!(
            run_spoil_linear(&data, &features, &cfg(0, 0.5, 1.0)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn separable_toy_converges_to_expert_action() {
        let features = Arc::new(FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], 1.0).unwrap());
        let data = dataset(1, 2, vec![(0, 1); 50]);
        let gamma = 0.9;
        let (k, eta) = crate::schedule::theorem1_schedule(2, gamma, 0.25);
        assert!(k >= 200);
        let b = default_b_theta(gamma, 1.0);
        let c = SpoilLinearConfig { k_iters: 200, eta, ..cfg(200, eta, b) };
        let (_, rec) = run_spoil_linear(&data, &features, &c).unwrap();
        // every iterate after a short burn-in favors the expert action
        let last = rec.iterate(200).probs(0);
        assert!(last[1] >= 0.95, "{last:?}");
        for (k, pi) in rec.iterates().enumerate().skip(100) {
            assert!(pi.probs(0)[1] >= 0.95, "iterate {}", k + 1);
        }
    }

    #[test]
    fn critic_norms_and_objectives() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let features = random_features(&mut rng, 5, 3, 4);
        let pairs = (0..80).map(|_| (rng.random_range(0..5), rng.random_range(0..3))).collect();
        let data = dataset(5, 3, pairs);
        let (_, rec) = run_spoil_linear(&data, &features, &cfg(60, 0.3, 2.5)).unwrap();
        let CriticTrace::Linear { thetas, .. } = &rec.trace else {
            panic!("linear trace expected")
        };
        for (k, theta) in thetas.iter().enumerate() {
            let n = norm(theta);
            assert!(n == 0.0 || (n - 2.5).abs() <= 1e-12);
            assert!((rec.objectives[k] - 2.5 * rec.g_hat_norms[k]).abs() <= 1e-12);
        }
        assert!((1..=60).contains(&rec.selected));
    }

    #[test]
    fn actor_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = random_features(&mut rng, 5, 3, 4);
        let pairs = (0..80).map(|_| (rng.random_range(0..5), rng.random_range(0..3))).collect();
        let data = dataset(5, 3, pairs);
        let (out, rec) = run_spoil_linear(&data, &features, &cfg(40, 0.3, 2.5)).unwrap();
        let mut pi = Policy::uniform(5, 3);
        let mut stepped = vec![pi.clone()];
        for k in 1..40 {
            pi = policy_update_mw(&pi, &rec.trace.critic(k), rec.eta);
            stepped.push(pi.clone());
        }
        for (a, b) in rec.iterates().zip(&stepped) {
            assert!(a.max_tv(b) <= 1e-10);
        }
        assert_eq!(rec.iterate(rec.selected), out);
    }

    #[test]
    fn run_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let features = random_features(&mut rng, 3, 2, 3);
        let data = dataset(3, 2, vec![(0, 1), (1, 0), (2, 1)]);
        let (_, rec) = run_spoil_linear(&data, &features, &cfg(5, 0.3, 1.0)).unwrap();
        let mut buf = vec![];
        write_run_csv(&rec, &mut buf).unwrap();
        let trace = read_linear_run_csv(&buf[..]).unwrap();
        let CriticTrace::Linear { thetas, .. } = &rec.trace else {
            unreachable!()
        };
        assert_eq!(&trace.thetas, thetas);
        assert_eq!(trace.objectives, rec.objectives);
    }
}
