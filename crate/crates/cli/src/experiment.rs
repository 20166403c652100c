//! Sweeps over (algorithm, dataset size, seed) with exact evaluation of every output.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use spoil_core::baselines::{bc_linear_softmax, bc_tabular};
use spoil_core::dataset::{sample_dataset, ExpertDataset};
use spoil_core::envgen::{gen_linear_mdp, random_policy};
use spoil_core::mdp::{expected_return, FeatureMap, FiniteMdp, Policy};
use spoil_core::spoil_general::{run_spoil_general, QClass, SpoilGeneralConfig};
use spoil_core::spoil_linear::{default_b_theta, run_spoil_linear, SpoilLinearConfig, SpoilRunRecord};

use crate::config::{Algo, ExperimentConfig, GeneralClassKind};
use crate::files::fmt_real;

/// Environment, features and expert shared by every cell of a sweep.
pub struct Setup {
    pub mdp: FiniteMdp,
    pub features: Arc<FeatureMap>,
    pub expert: Policy,
    pub rho_expert: f64,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let (mdp, features) = gen_linear_mdp(&cfg.env)?;
        if !mdp.is_dense() {
            bail!(spoil_core::Error::TooLarge(format!(
                "{} state-action pairs with factored transitions; experiments need exact evaluation",
                mdp.n_pairs()
            )));
        }
        let expert = cfg.expert.build(&mdp)?;
        let rho_expert = expected_return(&mdp, &expert)?;
        Ok(Self {
            mdp,
            features: Arc::new(features),
            expert,
            rho_expert,
        })
    }
}

pub fn b_theta(cfg: &ExperimentConfig, features: &FeatureMap) -> f64 {
    cfg.spoil
        .b_theta
        .unwrap_or_else(|| default_b_theta(cfg.env.gamma, features.b_phi()))
}

/// Critic class used by `spoil_general`.
pub fn general_class(cfg: &ExperimentConfig, mdp: &FiniteMdp, features: &Arc<FeatureMap>) -> Result<QClass> {
    Ok(match cfg.spoil.general_class {
        GeneralClassKind::LinearBall => QClass::linear_ball(features.clone(), b_theta(cfg, features))?,
        GeneralClassKind::PolicyInduced => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.spoil.general_seed);
            let (n, na) = (mdp.n_states(), mdp.n_actions());
            let policies: Vec<Policy> = (0..cfg.spoil.general_members)
                .map(|_| random_policy(&mut rng, n, na))
                .collect();
            QClass::policy_induced(mdp, &policies)?
        }
    })
}

/// Output of one training run.
pub struct Trained {
    pub policy: Policy,
    pub record: Option<SpoilRunRecord>,
    pub k_iters: usize,
    pub eta: f64,
}

/// Trains `algo` on `data`. `class` is required for `spoil_general`.
pub fn train(
    algo: Algo,
    cfg: &ExperimentConfig,
    features: &Arc<FeatureMap>,
    class: Option<&QClass>,
    data: &ExpertDataset,
    output_seed: u64,
) -> Result<Trained> {
    let (n, na) = (data.n_states(), data.n_actions());
    let (k_iters, eta) = cfg.spoil_schedule();
    Ok(match algo {
        Algo::SpoilLinear => {
            let lc = SpoilLinearConfig {
                k_iters,
                eta,
                b_theta: b_theta(cfg, features),
                output_seed,
                record_diagnostics: true,
            };
            let (policy, record) = run_spoil_linear(data, features, &lc)?;
            Trained { policy, record: Some(record), k_iters, eta }
        }
        Algo::SpoilGeneral => {
            let Some(class) = class else {
                bail!("spoil_general needs a critic class");
            };
            let gc = SpoilGeneralConfig { k_iters, eta, output_seed };
            let (policy, record) = run_spoil_general(data, class, &gc)?;
            Trained { policy, record: Some(record), k_iters, eta }
        }
        Algo::BcTabular => Trained {
            policy: bc_tabular(data, n, na, cfg.bc.smoothing)?,
            record: None,
            k_iters: 0,
            eta: 0.0,
        },
        Algo::BcLinearSoftmax => Trained {
            policy: bc_linear_softmax(data, features, &cfg.bc)?.policy,
            record: None,
            k_iters: cfg.bc.steps,
            eta: cfg.bc.step_size,
        },
        Algo::Uniform => Trained {
            policy: Policy::uniform(n, na),
            record: None,
            k_iters: 0,
            eta: 0.0,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algo: Algo,
    pub tau_e: usize,
    pub seed: u64,
    pub suboptimality: f64,
    pub suboptimality_unnormalized: f64,
    pub k_iters: usize,
    pub eta: f64,
    pub error: String,
    pub runtime_ms: u128,
}

/// Seed of the dataset drawn for seed index `s`; datasets for smaller sizes are prefixes.
pub fn data_seed(cfg: &ExperimentConfig, s: usize) -> u64 {
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(s as u64)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let setup = Setup::build(cfg)?;
    let class = if cfg.algorithms.contains(&Algo::SpoilGeneral) {
        Some(general_class(cfg, &setup.mdp, &setup.features)?)
    } else {
        None
    };
    let max_tau = *cfg.tau_e_grid.iter().max().expect("nonempty grid");
    let datasets: Vec<ExpertDataset> = (0..cfg.n_seeds)
        .map(|s| sample_dataset(&setup.mdp, &setup.expert, max_tau, data_seed(cfg, s)))
        .collect::<spoil_core::Result<_>>()?;

    let mut cells = Vec::new();
    for (ai, &algo) in cfg.algorithms.iter().enumerate() {
        for (ti, &tau) in cfg.tau_e_grid.iter().enumerate() {
            for s in 0..cfg.n_seeds {
                cells.push((ai, ti, s, algo, tau));
            }
        }
    }
    let gamma = cfg.env.gamma;
    let mut rows: Vec<((usize, usize, usize), ResultRow)> = cells
        .par_iter()
        .map(|&(ai, ti, s, algo, tau)| {
            let start = Instant::now();
            let outcome = datasets[s]
                .prefix(tau)
                .map_err(anyhow::Error::from)
                .and_then(|data| train(algo, cfg, &setup.features, class.as_ref(), &data, s as u64))
                .and_then(|t| Ok((setup.rho_expert - expected_return(&setup.mdp, &t.policy)?, t)));
            let (sub, k_iters, eta, error) = match outcome {
                Ok((sub, t)) => (sub, t.k_iters, t.eta, String::new()),
                Err(e) => (f64::NAN, 0, 0.0, format!("{e:#}").replace([',', '\n'], ";")),
            };
            let row = ResultRow {
                algo,
                tau_e: tau,
                seed: s as u64,
                suboptimality: sub,
                suboptimality_unnormalized: sub / (1.0 - gamma),
                k_iters,
                eta,
                error,
                runtime_ms: start.elapsed().as_millis(),
            };
            ((ai, ti, s), row)
        })
        .collect();
    rows.sort_by_key(|(key, _)| *key);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub const RESULTS_HEADER: &str =
    "algo,tau_e,seed,suboptimality,suboptimality_unnormalized,k_iters,eta,error,runtime_ms";

pub fn write_results<W: Write>(rows: &[ResultRow], mut w: W) -> Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.algo.name(),
            r.tau_e,
            r.seed,
            fmt_real(r.suboptimality),
            fmt_real(r.suboptimality_unnormalized),
            r.k_iters,
            fmt_real(r.eta),
            r.error,
            r.runtime_ms
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: Algo,
    pub tau_e: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Mean and standard error per (algorithm, dataset size), in row order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut groups: Vec<((Algo, usize), Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(k, _)| *k == (r.algo, r.tau_e)) {
            Some((_, g)) => g.push(r),
            None => groups.push(((r.algo, r.tau_e), vec![r])),
        }
    }
    for ((algo, tau_e), g) in groups {
        let ok: Vec<f64> = g.iter().filter(|r| r.error.is_empty()).map(|r| r.suboptimality).collect();
        let n = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / n;
        let var = if ok.len() > 1 {
            ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        out.push(SummaryRow {
            algo,
            tau_e,
            n_ok: ok.len(),
            n_failed: g.len() - ok.len(),
            mean,
            std_error: (var / n).sqrt(),
        });
    }
    out
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut w: W) -> Result<()> {
    writeln!(w, "algo,tau_e,n_runs,n_failed,mean_suboptimality,std_error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.algo.name(),
            r.tau_e,
            r.n_ok,
            r.n_failed,
            fmt_real(r.mean),
            fmt_real(r.std_error)
        )?;
    }
    Ok(())
}
