//! Seeded generation of linear MDPs and expert policies, and a numerical
//! certifier for linear action-value realizability.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{validation, Error, Result};
use crate::mdp::{evaluate_q, FeatureMap, FiniteMdp, Policy};

/// Above this many `|X|^2 * A` entries the kernel is kept in factored form.
pub const DENSE_TRANSITION_LIMIT: usize = 50_000_000;

/// Parameters of a random linear MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Fraction of reward-parameter coordinates set to zero.
    pub reward_sparsity: f64,
    /// Use indicator features (`dim` must equal `n_states * n_actions`).
    pub one_hot: bool,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            n_states: 50,
            n_actions: 20,
            dim: 7,
            gamma: 0.9,
            seed: 0,
            reward_sparsity: 0.0,
            one_hot: false,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.dim == 0 {
            return validation("n_states, n_actions and dim must be positive");
        }
        if self.dim > self.n_states * self.n_actions {
            return validation(format!(
                "dim {} exceeds n_states * n_actions = {}",
                self.dim,
                self.n_states * self.n_actions
            ));
        }
        if self.one_hot && self.dim != self.n_states * self.n_actions {
            return validation("one-hot features need dim = n_states * n_actions");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return validation(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.reward_sparsity) {
            return validation("reward_sparsity outside [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertKind {
    SoftOptimal,
    PerturbedTable,
    QuadraticSoftmaxSingleState,
}

impl std::str::FromStr for ExpertKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_optimal" => Ok(ExpertKind::SoftOptimal),
            "perturbed_table" => Ok(ExpertKind::PerturbedTable),
            "quadratic_softmax_single_state" => Ok(ExpertKind::QuadraticSoftmaxSingleState),
            other => validation(format!("unknown expert kind '{other}'")),
        }
    }
}

impl std::fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExpertKind::SoftOptimal => "soft_optimal",
            ExpertKind::PerturbedTable => "perturbed_table",
            ExpertKind::QuadraticSoftmaxSingleState => "quadratic_softmax_single_state",
        })
    }
}

/// How the expert policy is built.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSpec {
    pub kind: ExpertKind,
    pub temperature: f64,
    pub perturb_strength: f64,
    pub perturb_seed: u64,
}

impl Default for ExpertSpec {
    fn default() -> Self {
        Self {
            kind: ExpertKind::SoftOptimal,
            temperature: SOFT_TEMPERATURE,
            perturb_strength: 5.0,
            perturb_seed: 1,
        }
    }
}

impl ExpertSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return validation("expert temperature must be positive");
        }
        if !(self.perturb_strength >= 0.0) {
            return validation("perturbation strength must be non-negative");
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        match self.kind {
            ExpertKind::PerturbedTable => format!(
                "{}(tau={},sigma={},seed={})",
                self.kind, self.temperature, self.perturb_strength, self.perturb_seed
            ),
            _ => format!("{}(tau={})", self.kind, self.temperature),
        }
    }

    /// Builds the expert for `mdp`. Perturbed experts perturb the soft-optimal policy.
    pub fn build(&self, mdp: &FiniteMdp) -> Result<Policy> {
        self.validate()?;
        match self.kind {
            ExpertKind::SoftOptimal => {
                soft_optimal_policy(mdp, self.temperature, SOFT_TOL, SOFT_MAX_ITERS)
            }
            ExpertKind::PerturbedTable => {
                let base = soft_optimal_policy(mdp, self.temperature, SOFT_TOL, SOFT_MAX_ITERS)?;
                Ok(perturbed_expert(&base, self.perturb_strength, self.perturb_seed))
            }
            ExpertKind::QuadraticSoftmaxSingleState => {
                if mdp.n_states() != 1 {
                    return validation("the quadratic softmax expert needs a single-state MDP");
                }
                Ok(quadratic_softmax_expert(mdp.n_actions())?.2)
            }
        }
    }
}

pub const SOFT_TEMPERATURE: f64 = 0.05;
pub const SOFT_TOL: f64 = 1e-10;
pub const SOFT_MAX_ITERS: usize = 100_000;

/// Dirichlet(1, ..., 1) draw via normalized exponentials.
fn flat_dirichlet<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random linear MDP: `P(.|x,a) = sum_j phi_j(x,a) m_j`, `r(x,a) = <phi(x,a), theta_r>`.
pub fn gen_linear_mdp(spec: &EnvSpec) -> Result<(FiniteMdp, FeatureMap)> {
    spec.validate()?;
    let (n, na, d) = (spec.n_states, spec.n_actions, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let anchors: Vec<f64> = (0..d).flat_map(|_| flat_dirichlet(&mut rng, n)).collect();
    let phi: Vec<f64> = if spec.one_hot {
        let mut phi = vec![0.0; n * na * d];
        for i in 0..n * na {
            phi[i * d + i] = 1.0;
        }
        phi
    } else {
        (0..n * na).flat_map(|_| flat_dirichlet(&mut rng, d)).collect()
    };
    let mut theta_r: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let n_zero = (spec.reward_sparsity * d as f64).round() as usize;
    for j in index::sample(&mut rng, d, n_zero.min(d)) {
        theta_r[j] = 0.0;
    }
    let reward: Vec<f64> = phi
        .chunks(d)
        .map(|f| {
            f.iter()
                .zip(&theta_r)
                .map(|(f, t)| f * t)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    let nu0 = vec![1.0 / n as f64; n];
    let features = FeatureMap::new(n, na, d, phi.clone(), 1.0)?;

    let mdp = if n * n * na > DENSE_TRANSITION_LIMIT {
        FiniteMdp::factored(n, na, d, phi, anchors, reward, spec.gamma, nu0)?
    } else {
        let factored =
            FiniteMdp::factored(n, na, d, phi, anchors, reward.clone(), spec.gamma, nu0.clone())?;
        let mut dense = Vec::with_capacity(n * na * n);
        for x in 0..n {
            for a in 0..na {
                dense.extend_from_slice(&factored.transition_row(x, a));
            }
        }
        FiniteMdp::new(n, na, dense, reward, spec.gamma, nu0)?
    };
    Ok((mdp, features))
}

/// Random tabular MDP with flat-Dirichlet rows, uniform rewards and initial distribution.
pub fn random_tabular_mdp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> FiniteMdp {
    let transition: Vec<f64> = (0..n_states * n_actions)
        .flat_map(|_| flat_dirichlet(rng, n_states))
        .collect();
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let nu0 = flat_dirichlet(rng, n_states);
    FiniteMdp::new(n_states, n_actions, transition, reward, gamma, nu0)
        .expect("flat Dirichlet rows are distributions")
}

/// Random softmax policy with logits uniform on `[-2, 2]`.
pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> Policy {
    let logits = (0..n_states * n_actions)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    Policy::from_logits(n_states, n_actions, logits).expect("finite logits")
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Soft value iteration; returns `pi(a|x) ∝ exp(Q_soft(x,a) / temperature)`.
pub fn soft_optimal_policy(
    mdp: &FiniteMdp,
    temperature: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Policy> {
    if !(temperature > 0.0) {
        return validation("temperature must be positive");
    }
    let (n, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let soft_q = |v: &[f64]| -> Vec<f64> {
        mdp.rewards()
            .iter()
            .zip(mdp.expect_next(v))
            .map(|(r, pv)| r + gamma * pv)
            .collect()
    };
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let q = soft_q(&v);
        let next: Vec<f64> = q
            .chunks(na)
            .map(|row| {
                let scaled: Vec<f64> = row.iter().map(|q| q / temperature).collect();
                temperature * log_sum_exp(&scaled)
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("soft value iteration diverged".into()));
        }
        residual = v
            .iter()
            .zip(&next)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        v = next;
        if residual <= tol {
            let logits = soft_q(&v).into_iter().map(|q| q / temperature).collect();
            return Policy::from_logits(n, na, logits);
        }
    }
    Err(Error::NoConvergence {
        iters: max_iters,
        residual,
    })
}

/// Adds i.i.d. `N(0, strength^2)` noise to every logit.
pub fn perturbed_expert(base: &Policy, strength: f64, seed: u64) -> Policy {
    if strength == 0.0 {
        return base.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..base.logits().len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            strength * z
        })
        .collect();
    let mut out = base.clone();
    out.add_logits(&noise, 1.0);
    out
}

/// Scalar action feature of the single-state quadratic-expert instance, centered so
/// that `A = 5` gives `a - 3` for 1-indexed `a`.
pub fn centered_action_feature(a: usize, n_actions: usize) -> f64 {
    (a + 1) as f64 - (n_actions as f64 + 1.0) / 2.0
}

/// Single-state instance with scalar features and the expert `pi_E(a) ∝ exp(phi(a)^2)`.
/// Rewards are left at zero; the learner never sees them.
pub fn quadratic_softmax_expert(n_actions: usize) -> Result<(FiniteMdp, FeatureMap, Policy)> {
    if n_actions < 2 {
        return validation("need at least two actions");
    }
    let phi: Vec<f64> = (0..n_actions)
        .map(|a| centered_action_feature(a, n_actions))
        .collect();
    let b_phi = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let features = FeatureMap::new(1, n_actions, 1, phi.clone(), b_phi)?;
    let mdp = FiniteMdp::new(
        1,
        n_actions,
        vec![1.0; n_actions],
        vec![0.0; n_actions],
        0.0,
        vec![1.0],
    )?;
    let expert = Policy::from_logits(1, n_actions, phi.iter().map(|v| v * v).collect())?;
    Ok((mdp, features, expert))
}

/// Outcome of the linear realizability certifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Realizability {
    /// Largest sup-norm residual of the least-squares fit `phi . theta ≈ Q^pi` over probes.
    pub residual: f64,
    /// Largest norm of the fitted `theta` over probes.
    pub max_theta_norm: f64,
}

/// Minimum-norm least-squares solver for a fixed design matrix.
pub(crate) struct LeastSquares {
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    eps: f64,
}

impl LeastSquares {
    pub(crate) fn new(design: DMatrix<f64>) -> Self {
        let max_sv_scale = design.nrows().max(design.ncols()) as f64;
        let svd = design.svd(true, true);
        let top = svd.singular_values.max();
        Self {
            eps: top * max_sv_scale * f64::EPSILON,
            svd,
        }
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        self.svd
            .solve(&b, self.eps)
            .map(|t| t.as_slice().to_vec())
            .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
    }
}

pub(crate) fn design_matrix(features: &FeatureMap) -> DMatrix<f64> {
    let rows = features.n_states() * features.n_actions();
    DMatrix::from_row_slice(rows, features.dim(), features.table())
}

/// Fits `theta` to `Q^pi` for random probe policies and reports the worst fit residual.
pub fn realizability_residual(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    n_probe_policies: usize,
    seed: u64,
) -> Result<Realizability> {
    if features.n_states() != mdp.n_states() || features.n_actions() != mdp.n_actions() {
        return validation("feature map does not match the MDP");
    }
    let ls = LeastSquares::new(design_matrix(features));
    let probes: Vec<(f64, f64)> = (0..n_probe_policies)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let q = evaluate_q(mdp, &pi, 1e-12)?.to_table();
            let theta = ls.solve(&q)?;
            let fit = features.linear_values(&theta);
            let residual = fit
                .iter()
                .zip(&q)
                .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
            let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
            Ok((residual, norm))
        })
        .collect::<Result<_>>()?;
    Ok(probes.into_iter().fold(
        Realizability {
            residual: 0.0,
            max_theta_norm: 0.0,
        },
        |acc, (r, n)| Realizability {
            residual: acc.residual.max(r),
            max_theta_norm: acc.max_theta_norm.max(n),
        },
    ))
}

/// Root-mean-square residual of the best fit `logits(x,a) ≈ <phi(x,a), theta> + c(x)`.
/// Zero (up to rounding) exactly when the policy is a linear softmax policy.
pub fn logit_fit_residual(policy: &Policy, features: &FeatureMap) -> Result<f64> {
    let (n, na, d) = (features.n_states(), features.n_actions(), features.dim());
    if policy.n_states() != n || policy.n_actions() != na {
        return validation("policy does not match the feature map");
    }
    let mut design = DMatrix::zeros(n * na, d + n);
    for x in 0..n {
        for a in 0..na {
            let row = x * na + a;
            for (j, f) in features.get(x, a).iter().enumerate() {
                design[(row, j)] = *f;
            }
            design[(row, d + x)] = 1.0;
        }
    }
    let ls = LeastSquares::new(design.clone());
    let coef = ls.solve(policy.logits())?;
    let fit = &design * DVector::from_vec(coef);
    let sse: f64 = fit
        .iter()
        .zip(policy.logits())
        .map(|(f, l)| (f - l) * (f - l))
        .sum();
    Ok((sse / (n * na) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{expected_return, write_mdp};

    fn small_spec(seed: u64) -> EnvSpec {
        EnvSpec {
            n_states: 12,
            n_actions: 4,
            dim: 5,
            gamma: 0.9,
            seed,
            ..EnvSpec::default()
        }
    }

    fn serialize(mdp: &FiniteMdp) -> Vec<u8> {
        let mut buf = vec![];
        write_mdp(mdp, &mut buf).unwrap();
        buf
    }

    #[test]
    fn one_hot_degenerates_to_tabular() {
        let spec = EnvSpec {
            n_states: 3,
            n_actions: 2,
            dim: 6,
            one_hot: true,
            ..EnvSpec::default()
        };
        let (mdp, features) = gen_linear_mdp(&spec).unwrap();
        for x in 0..3 {
            for a in 0..2 {
                let s: f64 = mdp.transition_row(x, a).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
        assert_eq!(features.max_norm(), 1.0);
        let cert = realizability_residual(&mdp, &features, 5, 0).unwrap();
        assert!(cert.residual <= 1e-10);
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, fa) = gen_linear_mdp(&small_spec(7)).unwrap();
        let (b, fb) = gen_linear_mdp(&small_spec(7)).unwrap();
        assert_eq!(serialize(&a), serialize(&b));
        assert_eq!(fa, fb);
        let (c, _) = gen_linear_mdp(&small_spec(8)).unwrap();
        assert_ne!(serialize(&a), serialize(&c));
    }

    #[test]
    fn rejects_oversized_dim() {
        let spec = EnvSpec {
            n_states: 2,
            n_actions: 2,
            dim: 5,
            ..EnvSpec::default()
        };
        assert!(matches!(gen_linear_mdp(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn sparsity_zeroes_reward_coordinates() {
        let spec = EnvSpec {
            reward_sparsity: 1.0,
            ..small_spec(3)
        };
        let (mdp, _) = gen_linear_mdp(&spec).unwrap();
        assert!(mdp.rewards().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn large_instance_uses_factored_kernel() {
        let spec = EnvSpec {
            n_states: 500,
            n_actions: 1000,
            dim: 7,
            gamma: 0.9,
            seed: 1,
            ..EnvSpec::default()
        };
        let (mdp, features) = gen_linear_mdp(&spec).unwrap();
        assert!(!mdp.is_dense());
        assert_eq!(features.dim(), 7);
        let row = mdp.transition_row(499, 999);
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn generated_mdps_are_realizable() {
        let (mdp, features) = gen_linear_mdp(&small_spec(5)).unwrap();
        let cert = realizability_residual(&mdp, &features, 20, 9).unwrap();
        assert!(cert.residual <= 1e-6, "residual {}", cert.residual);
        assert!(cert.max_theta_norm > 0.0);
    }

    #[test]
    fn certifier_detects_unrelated_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = random_tabular_mdp(&mut rng, 2, 2, 0.9);
        let phi: Vec<f64> = (0..8).map(|_| rng.random_range(-0.7..0.7)).collect();
        let features = FeatureMap::new(2, 2, 2, phi, 1.0).unwrap();
        let cert = realizability_residual(&mdp, &features, 5, 0).unwrap();
        assert!(cert.residual > 0.01, "residual {}", cert.residual);
    }

    #[test]
    fn soft_optimal_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = random_tabular_mdp(&mut rng, 4, 3, 0.9);
        let hot = soft_optimal_policy(&mdp, 1e6, 1e-10, 100_000).unwrap();
        assert!(hot.max_tv(&Policy::uniform(4, 3)) <= 1e-6);

        let bandit = FiniteMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 1.0], 0.0, vec![1.0]).unwrap();
        let pi = soft_optimal_policy(&bandit, 1.0, 1e-12, 100).unwrap().probs(0);
        assert!((pi[0] - 0.2689).abs() < 1e-4 && (pi[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn soft_optimal_non_convergence_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = random_tabular_mdp(&mut rng, 4, 3, 0.99);
        match soft_optimal_policy(&mdp, 0.05, 1e-12, 3) {
            Err(Error::NoConvergence { iters, residual }) => {
                assert_eq!(iters, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn near_greedy_dominates_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = random_tabular_mdp(&mut rng, 5, 3, 0.9);
        let best = soft_optimal_policy(&mdp, 0.01, 1e-10, 100_000).unwrap();
        let rho = expected_return(&mdp, &best).unwrap();
        for _ in 0..50 {
            let pi = random_policy(&mut rng, 5, 3);
            assert!(rho >= expected_return(&mdp, &pi).unwrap());
        }
    }

    #[test]
    fn soft_optimal_respects_action_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mdp = random_tabular_mdp(&mut rng, 4, 3, 0.9);
        let perm = [2usize, 0, 1];
        let (n, na) = (4, 3);
        let mut transition = vec![0.0; n * na * n];
        let mut reward = vec![0.0; n * na];
        for x in 0..n {
            for a in 0..na {
                let src = x * na + perm[a];
                reward[x * na + a] = mdp.rewards()[src];
                transition[(x * na + a) * n..(x * na + a + 1) * n]
                    .copy_from_slice(&mdp.transition_row(x, perm[a]));
            }
        }
        let permuted = FiniteMdp::new(n, na, transition, reward, 0.9, mdp.nu0().to_vec()).unwrap();
        let p = soft_optimal_policy(&mdp, 0.05, 1e-10, 100_000).unwrap();
        let q = soft_optimal_policy(&permuted, 0.05, 1e-10, 100_000).unwrap();
        for x in 0..n {
            let (px, qx) = (p.probs(x), q.probs(x));
            let tv: f64 = (0..na).map(|a| (qx[a] - px[perm[a]]).abs()).sum::<f64>() * 0.5;
            assert!(tv <= 1e-8);
        }
    }

    #[test]
    fn perturbation_examples() {
        let (mdp, features) = gen_linear_mdp(&EnvSpec {
            seed: 3,
            ..EnvSpec::default()
        })
        .unwrap();
        let base = soft_optimal_policy(&mdp, SOFT_TEMPERATURE, SOFT_TOL, SOFT_MAX_ITERS).unwrap();
        assert_eq!(perturbed_expert(&base, 0.0, 1), base);
        assert!(logit_fit_residual(&base, &features).unwrap() < 1e-6);

        let noisy = perturbed_expert(&base, 5.0, 1);
        assert!(logit_fit_residual(&noisy, &features).unwrap() > 0.1);
        let other = perturbed_expert(&base, 5.0, 2);
        assert!(noisy.max_tv(&other) > 0.0);
    }

    #[test]
    fn quadratic_expert_figure_values() {
        let (_, features, expert) = quadratic_softmax_expert(5).unwrap();
        let expected = [0.4721, 0.0235, 0.0086, 0.0235, 0.4721];
        for (p, e) in expert.probs(0).iter().zip(expected) {
            assert!((p - e).abs() < 5e-4, "{p} vs {e}");
        }
        let lin = Policy::linear_softmax(&features, &[1.0], 1.0).probs(0);
        let expected = [0.0117, 0.0317, 0.0861, 0.2341, 0.6364];
        for (p, e) in lin.iter().zip(expected) {
            assert!((p - e).abs() < 5e-4, "{p} vs {e}");
        }
        let (_, _, two) = quadratic_softmax_expert(2).unwrap();
        assert_eq!(two.probs(0), vec![0.5, 0.5]);
        assert!(quadratic_softmax_expert(1).is_err());
    }
}
