//! Exact-side audit of a run: true objective, estimation error of the empirical
//! objective, the regret bound of the actor, and the suboptimality decomposition.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::ExpertDataset;
use crate::envgen::{design_matrix, LeastSquares};
use crate::error::{validation, Error, Result};
use crate::mdp::io::fmt_real;
use crate::mdp::{evaluate_q, occupancy_measures, FeatureMap, FiniteMdp, Occupancy, Policy, QFunction};
use crate::spoil_general::{ObjectiveEstimator, QClass};
use crate::spoil_linear::{dot, norm, GapEstimator, SpoilRunRecord};

/// Slack added to the decomposition inequality to absorb floating-point rounding.
pub const REPORT_TOLERANCE: f64 = 1e-9;
/// Slack of the best-response check.
pub const BEST_RESPONSE_TOLERANCE: f64 = 1e-9;
/// Largest sup-norm fit residual for which `Q^pi` counts as a member of a class.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-6;
const CHUNK: usize = 256;

fn check_policy(mdp: &FiniteMdp, pi: &Policy, what: &str) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return validation(format!("{what} does not match the MDP dimensions"));
    }
    Ok(())
}

/// `sum mu(x,a) Q(x,a) - sum nu(x) sum_a pi(a|x) Q(x,a)` for a given expert occupancy.
pub fn objective_under(occ: &Occupancy, pi: &Policy, q: &[f64]) -> f64 {
    let na = pi.n_actions();
    let expert = dot(&occ.mu, q);
    let learner: f64 = occ
        .nu
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(x, w)| w * dot(&pi.probs(x), &q[x * na..(x + 1) * na]))
        .sum();
    expert - learner
}

/// `L(pi; Q) = E_{mu^E}[Q(X, A) - Q(X, pi)]`.
pub fn true_objective(mdp: &FiniteMdp, expert: &Policy, pi: &Policy, q: &QFunction) -> Result<f64> {
    check_policy(mdp, expert, "expert")?;
    check_policy(mdp, pi, "policy")?;
    let occ = occupancy_measures(mdp, expert)?;
    Ok(objective_under(&occ, pi, &q.to_table()))
}

/// Exact feature gap `g = E_{mu^E} phi(X, A) - E_{nu^E} phi(X, pi)`.
pub fn exact_feature_gap(occ: &Occupancy, features: &FeatureMap, pi: &Policy) -> Vec<f64> {
    let na = features.n_actions();
    let mut g = vec![0.0; features.dim()];
    for (x, &w) in occ.nu.iter().enumerate() {
        if w == 0.0 && occ.mu[x * na..(x + 1) * na].iter().all(|m| *m == 0.0) {
            continue;
        }
        let p = pi.probs(x);
        for a in 0..na {
            let c = occ.mu[x * na + a] - w * p[a];
            for (gj, f) in g.iter_mut().zip(features.get(x, a)) {
                *gj += c * f;
            }
        }
    }
    g
}

/// `Delta(pi) = sup_{||theta|| <= B} |<theta, g - g_hat>| = B ||g - g_hat||`.
pub fn estimation_error_linear(
    mdp: &FiniteMdp,
    expert: &Policy,
    data: &ExpertDataset,
    pi: &Policy,
    features: &FeatureMap,
    b_theta: f64,
) -> Result<f64> {
    check_policy(mdp, pi, "policy")?;
    let occ = occupancy_measures(mdp, expert)?;
    let est = GapEstimator::new(data, features)?;
    Ok(linear_delta(&occ, &est, features, pi, b_theta))
}

fn linear_delta(occ: &Occupancy, est: &GapEstimator, features: &FeatureMap, pi: &Policy, b_theta: f64) -> f64 {
    let g = exact_feature_gap(occ, features, pi);
    let g_hat = est.estimate(features, |x| pi.probs(x));
    let diff: Vec<f64> = g.iter().zip(&g_hat).map(|(a, b)| a - b).collect();
    b_theta * norm(&diff)
}

/// `Delta(pi) = sup_{Q in class} |L_hat(pi; Q) - L(pi; Q)|`.
pub fn estimation_error_general(
    mdp: &FiniteMdp,
    expert: &Policy,
    data: &ExpertDataset,
    pi: &Policy,
    class: &QClass,
) -> Result<f64> {
    check_policy(mdp, pi, "policy")?;
    let ctx = AuditContext::new(mdp, expert, data, class)?;
    Ok(ctx.delta(pi))
}

/// Right-hand side of the actor regret bound: `ln A / eta + eta K / (2 (1 - gamma)^2)`.
pub fn regret_bound(n_actions: usize, gamma: f64, eta: f64, k: usize) -> f64 {
    (n_actions as f64).ln() / eta + eta * k as f64 / (2.0 * (1.0 - gamma).powi(2))
}

/// `(sum_k L(pi_k; Q_k), ln A / eta + eta K / (2 (1 - gamma)^2))`.
pub fn regret_audit(
    mdp: &FiniteMdp,
    expert: &Policy,
    policies: &[Policy],
    qs: &[QFunction],
    eta: f64,
) -> Result<(f64, f64)> {
    if policies.len() != qs.len() || policies.is_empty() {
        return validation("need one critic per iterate and at least one iterate");
    }
    if !(eta > 0.0) {
        return validation("eta must be positive");
    }
    let cap = 1.0 / (1.0 - mdp.gamma());
    for (k, q) in qs.iter().enumerate() {
        let s = q.sup_norm();
        if s > cap + 1e-9 {
            return Err(Error::Precondition(format!(
                "critic at iteration {} has sup norm {s:e} > 1/(1-gamma) = {cap:e}",
                k + 1
            )));
        }
    }
    check_policy(mdp, expert, "expert")?;
    let occ = occupancy_measures(mdp, expert)?;
    let mut lhs = 0.0;
    for (pi, q) in policies.iter().zip(qs) {
        check_policy(mdp, pi, "iterate")?;
        lhs += objective_under(&occ, pi, &q.to_table());
    }
    Ok((lhs, regret_bound(mdp.n_actions(), mdp.gamma(), eta, policies.len())))
}

/// Precomputed exact and empirical quantities shared by every iterate of an audit.
struct AuditContext<'a> {
    mdp: &'a FiniteMdp,
    class: &'a QClass,
    occ: Occupancy,
    rho_expert: f64,
    objective: ObjectiveEstimator,
    gap: Option<GapEstimator>,
    tables: Vec<Vec<f64>>,
    fit: Option<LeastSquares>,
}

impl<'a> AuditContext<'a> {
    fn new(mdp: &'a FiniteMdp, expert: &Policy, data: &ExpertDataset, class: &'a QClass) -> Result<Self> {
        check_policy(mdp, expert, "expert")?;
        if class.n_states() != mdp.n_states() || class.n_actions() != mdp.n_actions() {
            return validation("critic class does not match the MDP dimensions");
        }
        if data.n_states() != mdp.n_states() || data.n_actions() != mdp.n_actions() {
            return validation("dataset does not match the MDP dimensions");
        }
        let occ = occupancy_measures(mdp, expert)?;
        let rho_expert = dot(&occ.mu, mdp.rewards());
        let (gap, tables, fit) = match class {
            QClass::LinearBall { features, .. } => (
                Some(GapEstimator::new(data, features)?),
                vec![],
                Some(LeastSquares::new(design_matrix(features))),
            ),
            QClass::Finite { members, .. } => (None, members.iter().map(QFunction::to_table).collect(), None),
        };
        Ok(Self {
            mdp,
            class,
            occ,
            rho_expert,
            objective: ObjectiveEstimator::new(data),
            gap,
            tables,
            fit,
        })
    }

    fn delta(&self, pi: &Policy) -> f64 {
        match self.class {
            QClass::LinearBall { features, b_theta } => {
                linear_delta(&self.occ, self.gap.as_ref().expect("linear"), features, pi, *b_theta)
            }
            QClass::Finite { .. } => {
                let probs = self.objective.visited_probs(pi);
                self.tables
                    .iter()
                    .map(|t| {
                        let hat = self.objective.expert_term(t) - self.objective.policy_term(&probs, t);
                        (hat - objective_under(&self.occ, pi, t)).abs()
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Largest empirical objective over the class.
    fn class_max(&self, pi: &Policy) -> f64 {
        match self.class {
            QClass::LinearBall { features, b_theta } => {
                let g = self.gap.as_ref().expect("linear").estimate(features, |x| pi.probs(x));
                b_theta * norm(&g)
            }
            QClass::Finite { .. } => {
                let probs = self.objective.visited_probs(pi);
                self.tables
                    .iter()
                    .map(|t| self.objective.expert_term(t) - self.objective.policy_term(&probs, t))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Whether `Q^pi` lies in the class, up to `MEMBERSHIP_TOLERANCE`.
    fn contains_value_of(&self, pi: &Policy) -> Result<bool> {
        let q = evaluate_q(self.mdp, pi, 1e-12)?.to_table();
        let sup = |a: &[f64]| a.iter().zip(&q).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        Ok(match self.class {
            QClass::LinearBall { features, b_theta } => {
                let theta = self.fit.as_ref().expect("linear").solve(&q)?;
                sup(&features.linear_values(&theta)) <= MEMBERSHIP_TOLERANCE && norm(&theta) <= b_theta + 1e-9
            }
            QClass::Finite { .. } => self.tables.iter().any(|t| sup(t) <= MEMBERSHIP_TOLERANCE),
        })
    }
}

/// Audit of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub k: usize,
    /// `L(pi_k; Q_k)`.
    pub objective: f64,
    /// `L_hat(pi_k; Q_k)`.
    pub empirical_objective: f64,
    /// `max_{Q in class} L_hat(pi_k; Q)`.
    pub class_max: f64,
    /// `Delta(pi_k)`.
    pub delta: f64,
    /// `rho^E - rho^{pi_k}`.
    pub suboptimality: f64,
    pub cum_regret: f64,
    /// Actor regret bound after `k` iterations.
    pub bound: f64,
    pub premise_holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// `(1/K) sum_k (rho^E - rho^{pi_k})`.
    pub suboptimality: f64,
    /// `(1/K) sum_k L(pi_k; Q_k)`.
    pub regret_term: f64,
    /// `(2/K) sum_k Delta(pi_k)`.
    pub estimation_term: f64,
    pub tolerance: f64,
    pub bound_satisfied: bool,
    /// `Q^{pi_k}` belongs to the class for every `k`.
    pub premise_holds: bool,
    /// `(sum_k L(pi_k; Q_k), ln A / eta + eta K / (2 (1 - gamma)^2))`, present when every
    /// critic is bounded by `1/(1-gamma)`.
    pub regret_audit: Option<(f64, f64)>,
    pub eta: f64,
    pub selected: usize,
    pub traces: Vec<IterationTrace>,
}

/// Recomputes every term of the suboptimality decomposition for a finished run.
/// Fails with [`Error::NotBestResponse`] when a recorded critic is not a maximizer
/// of the empirical objective over `class`.
pub fn decomposition_report(
    mdp: &FiniteMdp,
    expert: &Policy,
    data: &ExpertDataset,
    record: &SpoilRunRecord,
    class: &QClass,
) -> Result<DecompositionReport> {
    let ctx = AuditContext::new(mdp, expert, data, class)?;
    let k_total = record.k_iters();
    if k_total == 0 {
        return validation("run record has no iterations");
    }
    let (na, gamma, eta) = (mdp.n_actions(), mdp.gamma(), record.eta);

    let mut rows: Vec<(f64, f64, f64, f64, f64, bool, f64)> = Vec::with_capacity(k_total);
    let mut iterates = record.iterates().enumerate();
    loop {
        let chunk: Vec<(usize, Policy)> = iterates.by_ref().take(CHUNK).map(|(i, p)| (i + 1, p)).collect();
        if chunk.is_empty() {
            break;
        }
        let part = chunk
            .par_iter()
            .map(|(k, pi)| {
                let q = record.trace.critic(*k).to_table();
                let l = objective_under(&ctx.occ, pi, &q);
                let l_hat = ctx.objective.value(pi, &q);
                let class_max = ctx.class_max(pi);
                let delta = ctx.delta(pi);
                let occ = occupancy_measures(mdp, pi)?;
                let sub = ctx.rho_expert - dot(&occ.mu, mdp.rewards());
                let premise = ctx.contains_value_of(pi)?;
                let sup = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Ok((l, l_hat, class_max, delta, sub, premise, sup))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(part);
    }

    let mut traces = Vec::with_capacity(k_total);
    let mut cum = 0.0;
    let mut bounded = true;
    for (i, &(l, l_hat, class_max, delta, sub, premise, sup)) in rows.iter().enumerate() {
        let k = i + 1;
        if l_hat < class_max - BEST_RESPONSE_TOLERANCE {
            return Err(Error::NotBestResponse {
                k,
                recorded: l_hat,
                maximum: class_max,
            });
        }
        bounded &= sup <= 1.0 / (1.0 - gamma) + 1e-9;
        cum += l;
        traces.push(IterationTrace {
            k,
            objective: l,
            empirical_objective: l_hat,
            class_max,
            delta,
            suboptimality: sub,
            cum_regret: cum,
            bound: regret_bound(na, gamma, eta, k),
            premise_holds: premise,
        });
    }
    let kf = k_total as f64;
    let suboptimality = traces.iter().map(|t| t.suboptimality).sum::<f64>() / kf;
    let regret_term = cum / kf;
    let estimation_term = 2.0 * traces.iter().map(|t| t.delta).sum::<f64>() / kf;
    Ok(DecompositionReport {
        suboptimality,
        regret_term,
        estimation_term,
        tolerance: REPORT_TOLERANCE,
        bound_satisfied: suboptimality <= regret_term + estimation_term + REPORT_TOLERANCE,
        premise_holds: traces.iter().all(|t| t.premise_holds),
        regret_audit: bounded.then(|| (cum, regret_bound(na, gamma, eta, k_total))),
        eta,
        selected: record.selected,
        traces,
    })
}

/// `k,L_k,Delta_k,cum_regret,bound`.
pub fn write_report_csv<W: Write>(report: &DecompositionReport, mut w: W) -> Result<()> {
    writeln!(w, "k,L_k,Delta_k,cum_regret,bound")?;
    for t in &report.traces {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.k,
            fmt_real(t.objective),
            fmt_real(t.delta),
            fmt_real(t.cum_regret),
            fmt_real(t.bound)
        )?;
    }
    Ok(())
}

/// `suboptimality,regret_term,estimation_term,holds`.
pub fn write_report_summary<W: Write>(report: &DecompositionReport, mut w: W) -> Result<()> {
    writeln!(w, "suboptimality,regret_term,estimation_term,holds")?;
    writeln!(
        w,
        "{},{},{},{}",
        fmt_real(report.suboptimality),
        fmt_real(report.regret_term),
        fmt_real(report.estimation_term),
        report.bound_satisfied
    )?;
    Ok(())
}
