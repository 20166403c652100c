//! The same primal-dual scheme over an arbitrary critic class: a norm ball of
//! linear functions, an explicit finite set, or the action values of given policies.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::dataset::ExpertDataset;
use crate::error::{validation, Error, Result};
use crate::mdp::io::{fmt_real, parse_num};
use crate::mdp::{evaluate_q, softmax, FeatureMap, FiniteMdp, Policy, QFunction};
use crate::spoil_linear::{
    critic_best_response_linear, dot, draw_output_index, norm, ActorForm, CriticTrace, GapEstimator,
    SpoilRunRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiniteOrigin {
    Explicit,
    PolicyInduced,
}

#[derive(Debug, Clone)]
pub enum QClass {
    LinearBall {
        features: Arc<FeatureMap>,
        b_theta: f64,
    },
    Finite {
        members: Arc<Vec<QFunction>>,
        origin: FiniteOrigin,
    },
}

impl QClass {
    pub fn linear_ball(features: Arc<FeatureMap>, b_theta: f64) -> Result<Self> {
        if !(b_theta > 0.0) || !b_theta.is_finite() {
            return validation("b_theta must be positive");
        }
        Ok(QClass::LinearBall { features, b_theta })
    }

    /// Finite class; members are clipped to `[-1/(1-gamma), 1/(1-gamma)]`.
    /// The flag reports whether any value was clipped.
    pub fn finite_set(members: Vec<QFunction>, gamma: f64) -> Result<(Self, bool)> {
        if members.is_empty() {
            return validation("a finite critic class needs at least one member");
        }
        if !(0.0..1.0).contains(&gamma) {
            return validation("gamma must lie in [0, 1)");
        }
        let (n, na) = (members[0].n_states(), members[0].n_actions());
        let bound = 1.0 / (1.0 - gamma);
        let mut clipped = false;
        let mut out = Vec::with_capacity(members.len());
        for (m, q) in members.into_iter().enumerate() {
            if q.n_states() != n || q.n_actions() != na {
                return validation(format!("member {m} has mismatched dimensions"));
            }
            if q.sup_norm() <= bound {
                out.push(q);
                continue;
            }
            clipped = true;
            let values = q.to_table().into_iter().map(|v| v.clamp(-bound, bound)).collect();
            out.push(QFunction::tabular(n, na, values)?);
        }
        Ok((
            QClass::Finite {
                members: Arc::new(out),
                origin: FiniteOrigin::Explicit,
            },
            clipped,
        ))
    }

    /// `{Q^pi : pi in policies}`, evaluated exactly against `mdp`.
    pub fn policy_induced(mdp: &FiniteMdp, policies: &[Policy]) -> Result<Self> {
        if policies.is_empty() {
            return validation("a policy-induced class needs at least one policy");
        }
        let members = policies
            .iter()
            .map(|pi| evaluate_q(mdp, pi, 1e-12))
            .collect::<Result<Vec<_>>>()?;
        Ok(QClass::Finite {
            members: Arc::new(members),
            origin: FiniteOrigin::PolicyInduced,
        })
    }

    pub fn n_states(&self) -> usize {
        match self {
            QClass::LinearBall { features, .. } => features.n_states(),
            QClass::Finite { members, .. } => members[0].n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            QClass::LinearBall { features, .. } => features.n_actions(),
            QClass::Finite { members, .. } => members[0].n_actions(),
        }
    }
}

/// Empirical counts arranged for repeated evaluation of `L_hat(pi; Q)`.
pub(crate) struct ObjectiveEstimator {
    pub(crate) n_actions: usize,
    pub(crate) pair_freq: Vec<f64>,
    pub(crate) state_weights: Vec<(usize, f64)>,
}

impl ObjectiveEstimator {
    pub(crate) fn new(data: &ExpertDataset) -> Self {
        let c = data.counts();
        Self {
            n_actions: c.n_actions,
            state_weights: c.visited.iter().map(|&x| (x, c.state_freq[x])).collect(),
            pair_freq: c.pair_freq,
        }
    }

    pub(crate) fn expert_term(&self, q: &[f64]) -> f64 {
        self.pair_freq
            .iter()
            .zip(q)
            .filter(|(f, _)| **f != 0.0)
            .map(|(f, v)| f * v)
            .sum()
    }

    /// `sum_x f(x) sum_a pi(a|x) Q(x,a)` with probabilities listed per visited state.
    pub(crate) fn policy_term(&self, probs: &[Vec<f64>], q: &[f64]) -> f64 {
        let na = self.n_actions;
        self.state_weights
            .iter()
            .zip(probs)
            .map(|(&(x, w), p)| w * dot(p, &q[x * na..(x + 1) * na]))
            .sum()
    }

    pub(crate) fn visited_probs(&self, pi: &Policy) -> Vec<Vec<f64>> {
        self.state_weights.iter().map(|&(x, _)| pi.probs(x)).collect()
    }

    pub(crate) fn value(&self, pi: &Policy, q: &[f64]) -> f64 {
        self.expert_term(q) - self.policy_term(&self.visited_probs(pi), q)
    }
}

fn check_shapes(data: &ExpertDataset, n: usize, na: usize) -> Result<()> {
    if data.n_states() != n || data.n_actions() != na {
        return validation(format!(
            "dataset is {}x{}, expected {n}x{na}",
            data.n_states(),
            data.n_actions()
        ));
    }
    Ok(())
}

/// `L_hat(pi; Q) = tau^-1 sum_i (Q(X_i, A_i) - sum_a pi(a|X_i) Q(X_i, a))`.
pub fn empirical_objective(data: &ExpertDataset, pi: &Policy, q: &QFunction) -> Result<f64> {
    check_shapes(data, q.n_states(), q.n_actions())?;
    check_shapes(data, pi.n_states(), pi.n_actions())?;
    Ok(ObjectiveEstimator::new(data).value(pi, &q.to_table()))
}

#[derive(Debug, Clone)]
pub struct CriticChoice {
    pub q: QFunction,
    /// Member index for finite classes.
    pub index: Option<usize>,
    pub value: f64,
}

/// Maximizer of `L_hat(pi; .)` over the class; ties go to the lowest member index.
pub fn critic_best_response(data: &ExpertDataset, pi: &Policy, class: &QClass) -> Result<CriticChoice> {
    check_shapes(data, class.n_states(), class.n_actions())?;
    check_shapes(data, pi.n_states(), pi.n_actions())?;
    match class {
        QClass::LinearBall { features, b_theta } => {
            let g = GapEstimator::new(data, features)?.estimate(features, |x| pi.probs(x));
            let theta = critic_best_response_linear(&g, *b_theta);
            let value = dot(&theta, &g);
            Ok(CriticChoice {
                q: QFunction::linear(theta, features.clone())?,
                index: None,
                value,
            })
        }
        QClass::Finite { members, .. } => {
            let est = ObjectiveEstimator::new(data);
            let probs = est.visited_probs(pi);
            let (idx, value) = scan_members(&est, &probs, &member_tables(members));
            Ok(CriticChoice {
                q: members[idx].clone(),
                index: Some(idx),
                value,
            })
        }
    }
}

fn member_tables(members: &[QFunction]) -> Vec<Vec<f64>> {
    members.iter().map(QFunction::to_table).collect()
}

fn scan_members(est: &ObjectiveEstimator, probs: &[Vec<f64>], tables: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (m, t) in tables.iter().enumerate() {
        let v = est.expert_term(t) - est.policy_term(probs, t);
        if v > best.1 {
            best = (m, v);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpoilGeneralConfig {
    pub k_iters: usize,
    pub eta: f64,
    pub output_seed: u64,
}

pub fn run_spoil_general(
    data: &ExpertDataset,
    class: &QClass,
    cfg: &SpoilGeneralConfig,
) -> Result<(Policy, SpoilRunRecord)> {
    if cfg.k_iters == 0 {
        return validation("k_iters must be at least 1");
    }
    if !(cfg.eta > 0.0) || !cfg.eta.is_finite() {
        return validation("eta must be positive");
    }
    let (n, na) = (class.n_states(), class.n_actions());
    check_shapes(data, n, na)?;
    let est = ObjectiveEstimator::new(data);
    let selected = draw_output_index(cfg.output_seed, cfg.k_iters);

    // Critic sums are kept in the class's own form: parameters for the linear ball,
    // a logits table for finite classes.
    let mut logits = vec![0.0; n * na];
    let mut theta_bar = match class {
        QClass::LinearBall { features, .. } => vec![0.0; features.dim()],
        _ => vec![],
    };
    let mut prev_member: Option<usize> = None;
    let mut output = None;
    let mut objectives = Vec::with_capacity(cfg.k_iters);
    let mut g_norms = Vec::new();
    let mut thetas: Vec<Vec<f64>> = Vec::new();
    let mut chosen = Vec::new();

    let gap = match class {
        QClass::LinearBall { features, .. } => Some(GapEstimator::new(data, features)?),
        _ => None,
    };
    let tables = match class {
        QClass::Finite { members, .. } => member_tables(members),
        _ => vec![],
    };

    for k in 1..=cfg.k_iters {
        match class {
            QClass::LinearBall { features, b_theta } => {
                if let Some(t) = thetas.last() {
                    for (b, v) in theta_bar.iter_mut().zip(t) {
                        *b += v;
                    }
                }
                if k == selected {
                    output = Some(Policy::linear_softmax(features, &theta_bar, cfg.eta));
                }
                let mut row = Vec::with_capacity(na);
                let g = gap.as_ref().expect("linear gap estimator").estimate(features, |x| {
                    row.clear();
                    row.extend((0..na).map(|a| cfg.eta * features.dot(x, a, &theta_bar)));
                    softmax(&row)
                });
                let theta = critic_best_response_linear(&g, *b_theta);
                if theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite critic parameter at iteration {k}")));
                }
                g_norms.push(norm(&g));
                objectives.push(dot(&theta, &g));
                thetas.push(theta);
            }
            QClass::Finite { .. } => {
                if let Some(m) = prev_member {
                    for (l, v) in logits.iter_mut().zip(&tables[m]) {
                        *l += cfg.eta * v;
                    }
                }
                if logits.iter().any(|l| !l.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite actor logits at iteration {k}")));
                }
                if k == selected {
                    output = Some(Policy::from_logits(n, na, logits.clone())?);
                }
                let probs: Vec<Vec<f64>> =
                    est.state_weights.iter().map(|&(x, _)| softmax(&logits[x * na..(x + 1) * na])).collect();
                let (idx, value) = scan_members(&est, &probs, &tables);
                objectives.push(value);
                prev_member = Some(idx);
                chosen.push(idx);
            }
        }
    }

    let output = output.expect("selected iterate visited");
    let trace = match class {
        QClass::LinearBall { features, .. } => CriticTrace::Linear {
            features: features.clone(),
            thetas,
        },
        QClass::Finite { members, .. } => CriticTrace::Members {
            members: members.clone(),
            chosen,
        },
    };
    let record = SpoilRunRecord {
        n_states: n,
        n_actions: na,
        eta: cfg.eta,
        selected,
        trace,
        actor: match class {
            QClass::LinearBall { .. } => ActorForm::CumulativeTheta,
            QClass::Finite { .. } => ActorForm::CumulativeLogits,
        },
        g_hat_norms: g_norms,
        objectives,
        output: output.clone(),
    };
    Ok((output, record))
}

/// Finite class file:
/// ```text
/// qclass <n_members> <n_states> <n_actions> <gamma>
/// <Q(0,0)> <Q(0,1)> ... <Q(n-1,na-1)>     (one line per member)
/// ```
pub fn write_qclass<W: Write>(members: &[QFunction], gamma: f64, mut w: W) -> Result<()> {
    let Some(first) = members.first() else {
        return validation("a finite critic class needs at least one member");
    };
    writeln!(
        w,
        "qclass {} {} {} {}",
        members.len(),
        first.n_states(),
        first.n_actions(),
        fmt_real(gamma)
    )?;
    for q in members {
        let row: Vec<String> = q.to_table().into_iter().map(fmt_real).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Reads a finite class file and clips members to the value range.
pub fn read_qclass<R: BufRead>(r: R) -> Result<(QClass, bool)> {
    let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(s) if s.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (ln, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty critic class file".into(),
    })?;
    let header = header?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("qclass") {
        return Err(Error::Parse {
            line: ln,
            msg: "expected 'qclass' header".into(),
        });
    }
    let m: usize = parse_num(tok.next(), ln, "member count")?;
    let n: usize = parse_num(tok.next(), ln, "state count")?;
    let na: usize = parse_num(tok.next(), ln, "action count")?;
    let gamma: f64 = parse_num(tok.next(), ln, "gamma")?;
    let mut members = Vec::with_capacity(m);
    for (ln, line) in lines {
        let line = line?;
        let values = line
            .split_whitespace()
            .map(|t| parse_num(Some(t), ln, "member value"))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != n * na {
            return Err(Error::Parse {
                line: ln,
                msg: format!("expected {} values, found {}", n * na, values.len()),
            });
        }
        members.push(QFunction::tabular(n, na, values)?);
    }
    if members.len() != m {
        return validation(format!("header declares {m} members, file has {}", members.len()));
    }
    QClass::finite_set(members, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::envgen::{random_policy, random_tabular_mdp};
    use crate::spoil_linear::{run_spoil_linear, SpoilLinearConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize, na: usize, pairs: Vec<(usize, usize)>) -> ExpertDataset {
        ExpertDataset::new(n, na, pairs, DatasetMeta::default()).unwrap()
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, na: usize, tau: usize) -> ExpertDataset {
        let pairs = (0..tau).map(|_| (rng.random_range(0..n), rng.random_range(0..na))).collect();
        dataset(n, na, pairs)
    }

    fn random_q(rng: &mut ChaCha8Rng, n: usize, na: usize, scale: f64) -> QFunction {
        QFunction::tabular(n, na, (0..n * na).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    #[test]
    fn objective_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = random_data(&mut rng, 7, 4, 500);
        let pi = random_policy(&mut rng, 7, 4);
        let q = random_q(&mut rng, 7, 4, 5.0);
        let mut naive = 0.0;
        for &(x, a) in data.pairs() {
            let p = pi.probs(x);
            let mean: f64 = (0..4).map(|b| p[b] * q.value(x, b)).sum();
            naive += (q.value(x, a) - mean) / 500.0;
        }
        let v = empirical_objective(&data, &pi, &q).unwrap();
        assert!((v - naive).abs() <= 1e-12);
    }

    #[test]
    fn objective_examples() {
        let data = dataset(1, 2, vec![(0, 0)]);
        let q = QFunction::tabular(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(empirical_objective(&data, &Policy::uniform(1, 2), &q).unwrap(), 0.5);
        let zero = QFunction::zeros(1, 2);
        assert_eq!(empirical_objective(&data, &Policy::uniform(1, 2), &zero).unwrap(), 0.0);
        let matched = Policy::deterministic(2, &[0]);
        assert!(empirical_objective(&data, &matched, &q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn finite_best_response_prefers_lowest_index_on_ties() {
        let data = dataset(1, 2, vec![(0, 0)]);
        let q = QFunction::tabular(1, 2, vec![1.0, 0.0]).unwrap();
        let weaker = QFunction::tabular(1, 2, vec![0.5, 0.0]).unwrap();
        let (class, clipped) = QClass::finite_set(vec![weaker, q.clone(), q.clone()], 0.5).unwrap();
        assert!(!clipped);
        let c = critic_best_response(&data, &Policy::uniform(1, 2), &class).unwrap();
        assert_eq!(c.index, Some(1));
        assert_eq!(c.value, 0.5);
    }

    #[test]
    fn best_response_dominates_every_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_data(&mut rng, 5, 3, 200);
        let members: Vec<_> = (0..30).map(|_| random_q(&mut rng, 5, 3, 2.0)).collect();
        let (class, _) = QClass::finite_set(members.clone(), 0.5).unwrap();
        let pi = random_policy(&mut rng, 5, 3);
        let c = critic_best_response(&data, &pi, &class).unwrap();
        for q in &members {
            assert!(c.value >= empirical_objective(&data, &pi, q).unwrap() - 1e-12);
        }
    }

    #[test]
    fn members_are_clipped() {
        let q = QFunction::tabular(1, 2, vec![5.0, -7.0]).unwrap();
        let (class, clipped) = QClass::finite_set(vec![q], 0.5).unwrap();
        assert!(clipped);
        let QClass::Finite { members, .. } = class else { unreachable!() };
        assert_eq!(members[0].to_table(), vec![2.0, -2.0]);
    }

    #[test]
    fn policy_induced_class_uses_exact_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mdp = random_tabular_mdp(&mut rng, 4, 3, 0.8);
        let pis: Vec<_> = (0..3).map(|_| random_policy(&mut rng, 4, 3)).collect();
        let class = QClass::policy_induced(&mdp, &pis).unwrap();
        let QClass::Finite { members, origin } = &class else { unreachable!() };
        assert_eq!(*origin, FiniteOrigin::PolicyInduced);
        for (q, pi) in members.iter().zip(&pis) {
            let direct = evaluate_q(&mdp, pi, 1e-12).unwrap();
            assert_eq!(q.to_table(), direct.to_table());
            assert!(q.sup_norm() <= 1.0 / 0.2 + 1e-9);
        }
    }

    #[test]
    fn linear_ball_run_matches_linear_algorithm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, na, d) = (8, 4, 3);
        let phi: Vec<f64> = (0..n * na * d).map(|_| rng.random_range(0.0..0.5)).collect();
        let features = Arc::new(FeatureMap::new(n, na, d, phi, 1.0).unwrap());
        let data = random_data(&mut rng, n, na, 150);
        let lin = SpoilLinearConfig {
            k_iters: 120,
            eta: 0.2,
            b_theta: 3.0,
            output_seed: 21,
            record_diagnostics: true,
        };
        let (out_a, rec_a) = run_spoil_linear(&data, &features, &lin).unwrap();
        let class = QClass::linear_ball(features.clone(), 3.0).unwrap();
        let gen = SpoilGeneralConfig {
            k_iters: 120,
            eta: 0.2,
            output_seed: 21,
        };
        let (out_b, rec_b) = run_spoil_general(&data, &class, &gen).unwrap();
        assert_eq!(rec_a.selected, rec_b.selected);
        for (a, b) in rec_a.iterates().zip(rec_b.iterates()) {
            assert!(a.max_tv(&b) <= 1e-10);
        }
        assert!(out_a.max_tv(&out_b) <= 1e-10);
        assert_eq!(rec_b.iterate(rec_b.selected), out_b);
    }

    #[test]
    fn finite_run_iterates_follow_chosen_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = random_data(&mut rng, 5, 3, 100);
        let members: Vec<_> = (0..10).map(|_| random_q(&mut rng, 5, 3, 2.0)).collect();
        let (class, _) = QClass::finite_set(members, 0.5).unwrap();
        let cfg = SpoilGeneralConfig {
            k_iters: 30,
            eta: 0.3,
            output_seed: 4,
        };
        let (out, rec) = run_spoil_general(&data, &class, &cfg).unwrap();
        for (k, pi) in rec.iterates().enumerate() {
            let c = critic_best_response(&data, &pi, &class).unwrap();
            let CriticTrace::Members { chosen, .. } = &rec.trace else { unreachable!() };
            assert_eq!(c.index, Some(chosen[k]));
            assert!((c.value - rec.objectives[k]).abs() <= 1e-12);
        }
        assert_eq!(rec.iterate(rec.selected), out);
        assert!(run_spoil_general(&data, &class, &SpoilGeneralConfig { k_iters: 0, ..cfg }).is_err());
    }

    #[test]
    fn qclass_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let members: Vec<_> = (0..3).map(|_| random_q(&mut rng, 2, 3, 1.0)).collect();
        let mut buf = vec![];
        write_qclass(&members, 0.5, &mut buf).unwrap();
        let (class, clipped) = read_qclass(&buf[..]).unwrap();
        assert!(!clipped);
        let QClass::Finite { members: read, .. } = class else { unreachable!() };
        for (a, b) in read.iter().zip(&members) {
            assert_eq!(a.to_table(), b.to_table());
        }
        let bad = b"qclass 1 1 2 0.5\n1.0 x\n";
        assert!(matches!(read_qclass(&bad[..]), Err(Error::Parse { line: 2, .. })));
    }
}
