use nalgebra::{DMatrix, DVector};

use super::{FiniteMdp, Policy, QFunction};
use crate::error::{Error, Result};

/// Largest `|X| * A` evaluated by dense direct solves; above it value iteration is used.
pub const DENSE_EVAL_THRESHOLD: usize = 20_000;

const FLOW_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000_000;

/// Discounted state and state-action occupancy measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
}

fn check_dims(mdp: &FiniteMdp, pi: &Policy) -> Result<()> {
    if mdp.n_states() != pi.n_states() || mdp.n_actions() != pi.n_actions() {
        return Err(Error::Validation(format!(
            "policy is {}x{}, MDP is {}x{}",
            pi.n_states(),
            pi.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite values in {what}")))
    }
}

/// `sum_a pi(a|x) t(x,a)` for every state.
fn average_over_actions(table: &[f64], probs: &[f64], n_actions: usize) -> Vec<f64> {
    table
        .chunks(n_actions)
        .zip(probs.chunks(n_actions))
        .map(|(t, p)| t.iter().zip(p).map(|(t, p)| t * p).sum())
        .collect()
}

/// State-to-state kernel under `pi`.
fn policy_kernel(mdp: &FiniteMdp, probs: &[f64]) -> DMatrix<f64> {
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        for a in 0..na {
            let p = probs[x * na + a];
            if p == 0.0 {
                continue;
            }
            let row = mdp.transition_row(x, a);
            for (y, &pxy) in row.iter().enumerate() {
                m[(x, y)] += p * pxy;
            }
        }
    }
    m
}

/// One application of the policy Bellman operator to a Q table.
fn bellman_apply(mdp: &FiniteMdp, probs: &[f64], q: &[f64]) -> Vec<f64> {
    let v = average_over_actions(q, probs, mdp.n_actions());
    let pv = mdp.expect_next(&v);
    mdp.rewards()
        .iter()
        .zip(&pv)
        .map(|(r, pv)| r + mdp.gamma() * pv)
        .collect()
}

/// Sup-norm Bellman residual of a Q table for policy `pi`.
pub fn bellman_residual(mdp: &FiniteMdp, pi: &Policy, q: &[f64]) -> f64 {
    let tq = bellman_apply(mdp, &pi.prob_table(), q);
    q.iter()
        .zip(&tq)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Exact `Q^pi` with sup-norm Bellman residual at most `tol`.
pub fn evaluate_q(mdp: &FiniteMdp, pi: &Policy, tol: f64) -> Result<QFunction> {
    evaluate_q_with(mdp, pi, tol, DENSE_EVAL_THRESHOLD)
}

pub fn evaluate_q_with(
    mdp: &FiniteMdp,
    pi: &Policy,
    tol: f64,
    dense_threshold: usize,
) -> Result<QFunction> {
    check_dims(mdp, pi)?;
    let probs = pi.prob_table();
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();

    let mut q = if mdp.n_pairs() <= dense_threshold {
        // Solve (I - gamma P_pi) V = r_pi, then Q = r + gamma P V.
        let r_pi = average_over_actions(mdp.rewards(), &probs, na);
        let system = DMatrix::identity(n, n) - policy_kernel(mdp, &probs) * gamma;
        let v = system
            .lu()
            .solve(&DVector::from_vec(r_pi))
            .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?;
        let pv = mdp.expect_next(v.as_slice());
        mdp.rewards()
            .iter()
            .zip(&pv)
            .map(|(r, pv)| r + gamma * pv)
            .collect()
    } else {
        vec![0.0; n * na]
    };
    check_finite(&q, "Q")?;

    // Fixed-point sweeps: polish a direct solve, or run value iteration from zero.
    let mut sweeps = 0;
    loop {
        let next = bellman_apply(mdp, &probs, &q);
        check_finite(&next, "Q")?;
        let change = q
            .iter()
            .zip(&next)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        if change <= tol {
            break;
        }
        q = next;
        sweeps += 1;
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NoConvergence {
                iters: sweeps,
                residual: change,
            });
        }
    }
    QFunction::tabular(n, na, q)
}

/// `V(x) = sum_a pi(a|x) Q(x,a)`.
pub fn state_value(q: &QFunction, pi: &Policy) -> Vec<f64> {
    average_over_actions(&q.to_table(), &pi.prob_table(), pi.n_actions())
}

/// Normalized discounted occupancy measures via the flow equations.
pub fn occupancy_measures(mdp: &FiniteMdp, pi: &Policy) -> Result<Occupancy> {
    check_dims(mdp, pi)?;
    let probs = pi.prob_table();
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let source: Vec<f64> = mdp.nu0().iter().map(|v| (1.0 - gamma) * v).collect();

    let nu = if mdp.n_pairs() <= DENSE_EVAL_THRESHOLD {
        let system = DMatrix::identity(n, n) - policy_kernel(mdp, &probs).transpose() * gamma;
        let nu = system
            .lu()
            .solve(&DVector::from_vec(source))
            .ok_or_else(|| Error::Numerical("singular flow system".into()))?;
        nu.as_slice().to_vec()
    } else {
        let mut nu = source.clone();
        let mut sweeps = 0;
        loop {
            let mu = joint(&nu, &probs, na);
            let next: Vec<f64> = mdp
                .push_forward(&mu)
                .iter()
                .zip(&source)
                .map(|(p, s)| s + gamma * p)
                .collect();
            let change = nu
                .iter()
                .zip(&next)
                .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
            nu = next;
            sweeps += 1;
            if change <= 1e-14 {
                break;
            }
            if sweeps >= MAX_SWEEPS {
                return Err(Error::NoConvergence {
                    iters: sweeps,
                    residual: change,
                });
            }
        }
        nu
    };
    check_finite(&nu, "state occupancy")?;
    let occ = Occupancy {
        mu: joint(&nu, &probs, na),
        nu,
    };
    let residual = flow_residual(mdp, &occ);
    let total: f64 = occ.mu.iter().sum();
    if residual > FLOW_TOL || (total - 1.0).abs() > FLOW_TOL {
        return Err(Error::Numerical(format!(
            "occupancy fails flow conditions (residual {residual:e}, mass {total})"
        )));
    }
    Ok(occ)
}

fn joint(nu: &[f64], probs: &[f64], n_actions: usize) -> Vec<f64> {
    probs
        .chunks(n_actions)
        .zip(nu)
        .flat_map(|(p, &n)| p.iter().map(move |p| n * p))
        .collect()
}

/// Largest per-state violation of
/// `nu(x) = gamma * sum P(x|x',a') mu(x',a') + (1 - gamma) nu0(x)` and of `nu = sum_a mu`.
pub fn flow_residual(mdp: &FiniteMdp, occ: &Occupancy) -> f64 {
    let gamma = mdp.gamma();
    let pushed = mdp.push_forward(&occ.mu);
    let mut worst: f64 = 0.0;
    for x in 0..mdp.n_states() {
        let rhs = gamma * pushed[x] + (1.0 - gamma) * mdp.nu0()[x];
        worst = worst.max((occ.nu[x] - rhs).abs());
        let marginal: f64 = occ.mu[x * mdp.n_actions()..(x + 1) * mdp.n_actions()]
            .iter()
            .sum();
        worst = worst.max((occ.nu[x] - marginal).abs());
    }
    worst
}

/// Normalized expected return `rho = sum mu(x,a) r(x,a)`.
pub fn expected_return(mdp: &FiniteMdp, pi: &Policy) -> Result<f64> {
    let occ = occupancy_measures(mdp, pi)?;
    Ok(occ.mu.iter().zip(mdp.rewards()).map(|(m, r)| m * r).sum())
}

/// Both sides of the performance-difference identity:
/// `rho(pi') - rho(pi)` and `sum mu^{pi'}(x,a) (Q^pi(x,a) - V^pi(x))`.
pub fn pdl_gap(mdp: &FiniteMdp, pi: &Policy, pi_prime: &Policy) -> Result<(f64, f64)> {
    let lhs = expected_return(mdp, pi_prime)? - expected_return(mdp, pi)?;
    let q = evaluate_q(mdp, pi, 1e-13)?;
    let v = state_value(&q, pi);
    let q = q.to_table();
    let occ = occupancy_measures(mdp, pi_prime)?;
    let na = mdp.n_actions();
    let rhs = occ
        .mu
        .iter()
        .enumerate()
        .map(|(i, m)| m * (q[i] - v[i / na]))
        .sum();
    Ok((lhs, rhs))
}

/// Exponential-weights actor step: `pi'(a|x) ∝ pi(a|x) exp(eta Q(x,a))`.
pub fn policy_update_mw(pi: &Policy, q: &QFunction, eta: f64) -> Policy {
    let mut next = pi.clone();
    next.add_logits(&q.to_table(), eta);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FeatureMap;
    use crate::envgen::{random_policy, random_tabular_mdp as random_mdp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn single_state(rewards: Vec<f64>, gamma: f64) -> FiniteMdp {
        let na = rewards.len();
        FiniteMdp::new(1, na, vec![1.0; na], rewards, gamma, vec![1.0]).unwrap()
    }

    #[test]
    fn geometric_series() {
        let mdp = single_state(vec![1.0], 0.5);
        let q = evaluate_q(&mdp, &Policy::uniform(1, 1), 1e-14).unwrap();
        assert_eq!(q.value(0, 0), 2.0);
    }

    #[test]
    fn zero_reward_gives_zero_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 4, 3, 0.9).with_rewards(vec![0.0; 12]).unwrap();
        let q = evaluate_q(&mdp, &random_policy(&mut rng, 4, 3), 1e-12).unwrap();
        assert!(q.to_table().iter().all(|&v| v.abs() < 1e-15));
    }

    /// Q = sum_h gamma^h P_pi^h r, accumulated by repeated matrix application.
    fn rollout_q(mdp: &FiniteMdp, pi: &Policy, horizon: usize) -> Vec<f64> {
        let probs = pi.prob_table();
        let (n, na) = (mdp.n_states(), mdp.n_actions());
        let mut q = vec![0.0; n * na];
        // term_h(x,a) = E[r(X_h, A_h) | X_0 = x, A_0 = a]
        let mut term = mdp.rewards().to_vec();
        let mut discount = 1.0;
        for _ in 0..=horizon {
            for (acc, t) in q.iter_mut().zip(&term) {
                *acc += discount * t;
            }
            let v: Vec<f64> = (0..n)
                .map(|x| (0..na).map(|a| probs[x * na + a] * term[x * na + a]).sum())
                .collect();
            term = (0..n * na)
                .map(|sa| {
                    let row = mdp.transition_row(sa / na, sa % na);
                    row.iter().zip(&v).map(|(p, v)| p * v).sum()
                })
                .collect();
            discount *= mdp.gamma();
        }
        q
    }

    #[test]
    fn matches_truncated_rollout() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = random_mdp(&mut rng, 3, 2, 0.9);
        let pi = random_policy(&mut rng, 3, 2);
        let q = evaluate_q(&mdp, &pi, 1e-12).unwrap().to_table();
        let oracle = rollout_q(&mdp, &pi, 500);
        for (a, b) in q.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(bellman_residual(&mdp, &pi, &q) <= 1e-12);
    }

    #[test]
    fn value_iteration_fallback_agrees_with_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mdp = random_mdp(&mut rng, 6, 3, 0.95);
        let pi = random_policy(&mut rng, 6, 3);
        let direct = evaluate_q(&mdp, &pi, 1e-12).unwrap().to_table();
        let iterated = evaluate_q_with(&mdp, &pi, 1e-12, 0).unwrap().to_table();
        for (a, b) in direct.iter().zip(&iterated) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(bellman_residual(&mdp, &pi, &iterated) <= 1e-12);
    }

    #[test]
    fn state_value_examples() {
        let q = QFunction::tabular(1, 2, vec![0.0, 4.0]).unwrap();
        assert_eq!(state_value(&q, &Policy::uniform(1, 2)), vec![2.0]);
        assert_eq!(state_value(&q, &Policy::deterministic(2, &[1])), vec![4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..15).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q = QFunction::tabular(5, 3, values.clone()).unwrap();
        let pi = random_policy(&mut rng, 5, 3);
        let v = state_value(&q, &pi);
        for x in 0..5 {
            let p = pi.probs(x);
            let mut direct = 0.0;
            for a in 0..3 {
                direct += p[a] * values[x * 3 + a];
            }
            assert_eq!(v[x], direct);
        }
    }

    #[test]
    fn occupancy_single_state_and_absorbing() {
        let mdp = single_state(vec![0.2, 0.4], 0.7);
        let occ = occupancy_measures(&mdp, &Policy::uniform(1, 2)).unwrap();
        assert!((occ.nu[0] - 1.0).abs() < 1e-15);

        let stay = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let mdp = FiniteMdp::new(2, 2, stay, vec![0.0; 4], 0.6, vec![0.3, 0.7]).unwrap();
        let occ = occupancy_measures(&mdp, &Policy::uniform(2, 2)).unwrap();
        assert!((occ.nu[0] - 0.3).abs() < 1e-14 && (occ.nu[1] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn occupancy_matches_forward_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mdp = random_mdp(&mut rng, 4, 3, 0.9);
        let pi = random_policy(&mut rng, 4, 3);
        let probs = pi.prob_table();
        let mut dist = mdp.nu0().to_vec();
        let mut oracle = vec![0.0; 4];
        let mut discount = 1.0;
        for _ in 0..=600 {
            for (o, d) in oracle.iter_mut().zip(&dist) {
                *o += (1.0 - mdp.gamma()) * discount * d;
            }
            let mut next = vec![0.0; 4];
            for x in 0..4 {
                for a in 0..3 {
                    for (y, p) in mdp.transition_row(x, a).iter().enumerate() {
                        next[y] += dist[x] * probs[x * 3 + a] * p;
                    }
                }
            }
            dist = next;
            discount *= mdp.gamma();
        }
        let occ = occupancy_measures(&mdp, &pi).unwrap();
        for (a, b) in occ.nu.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn return_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mdp = random_mdp(&mut rng, 5, 2, 0.8);
        let pi = random_policy(&mut rng, 5, 2);
        let ones = mdp.clone().with_rewards(vec![1.0; 10]).unwrap();
        assert!((expected_return(&ones, &pi).unwrap() - 1.0).abs() < 1e-12);
        let zeros = mdp.clone().with_rewards(vec![0.0; 10]).unwrap();
        assert_eq!(expected_return(&zeros, &pi).unwrap(), 0.0);

        let rho = expected_return(&mdp, &pi).unwrap();
        let v = state_value(&evaluate_q(&mdp, &pi, 1e-13).unwrap(), &pi);
        let via_v: f64 = (1.0 - mdp.gamma())
            * v.iter().zip(mdp.nu0()).map(|(v, p)| v * p).sum::<f64>();
        assert!((rho - via_v).abs() < 1e-8);
    }

    #[test]
    fn pdl_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = random_mdp(&mut rng, 3, 2, 0.9);
        let pi = random_policy(&mut rng, 3, 2);
        let (l, r) = pdl_gap(&mdp, &pi, &pi).unwrap();
        assert!(l.abs() < 1e-12 && r.abs() < 1e-12);

        let uniform = Policy::uniform(3, 2);
        let q = evaluate_q(&mdp, &uniform, 1e-13).unwrap();
        let greedy: Vec<usize> = (0..3)
            .map(|x| if q.value(x, 0) >= q.value(x, 1) { 0 } else { 1 })
            .collect();
        let (l, r) = pdl_gap(&mdp, &uniform, &Policy::deterministic(2, &greedy)).unwrap();
        assert!((l - r).abs() <= 1e-8);

        let mdp = single_state(vec![0.0, 1.0], 0.5);
        let (l, r) = pdl_gap(&mdp, &Policy::uniform(1, 2), &Policy::deterministic(2, &[1])).unwrap();
        assert!((l - 0.5).abs() < 1e-12);
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mw_update_examples() {
        let pi = Policy::uniform(1, 2);
        let q = QFunction::tabular(1, 2, vec![2f64.ln(), 0.0]).unwrap();
        let next = policy_update_mw(&pi, &q, 1.0).probs(0);
        assert!((next[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((next[1] - 1.0 / 3.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pi = random_policy(&mut rng, 3, 4);
        let constant = QFunction::tabular(3, 4, [1.5; 4].into_iter().chain([-2.0; 4]).chain([7.0; 4]).collect()).unwrap();
        let next = policy_update_mw(&pi, &constant, 0.3);
        for (a, b) in pi.prob_table().iter().zip(next.prob_table()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_linear_updates_equal_cumulative_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, na, d) = (4, 3, 5);
        let phi: Vec<f64> = (0..n * na * d).map(|_| rng.random_range(-0.4..0.4)).collect();
        let features = Arc::new(FeatureMap::new(n, na, d, phi, 1.0).unwrap());
        let eta = 0.37;
        let mut iterated = Policy::uniform(n, na);
        let mut theta_bar = vec![0.0; d];
        for _ in 0..40 {
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q = QFunction::linear(theta.clone(), features.clone()).unwrap();
            iterated = policy_update_mw(&iterated, &q, eta);
            for (b, t) in theta_bar.iter_mut().zip(&theta) {
                *b += t;
            }
        }
        let once = Policy::linear_softmax(&features, &theta_bar, eta);
        for (a, b) in iterated.prob_table().iter().zip(once.prob_table()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
