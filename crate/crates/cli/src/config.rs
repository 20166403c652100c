//! Flat `key = value` configuration with dotted sections, e.g. `env.n_states = 50`.
//! `#` starts a comment; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use spoil_core::baselines::BcConfig;
use spoil_core::envgen::{EnvSpec, ExpertKind, ExpertSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algo {
    SpoilLinear,
    SpoilGeneral,
    BcTabular,
    BcLinearSoftmax,
    Uniform,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::SpoilLinear => "spoil_linear",
            Algo::SpoilGeneral => "spoil_general",
            Algo::BcTabular => "bc_tabular",
            Algo::BcLinearSoftmax => "bc_linear_softmax",
            Algo::Uniform => "uniform",
        }
    }
}

impl FromStr for Algo {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spoil_linear" => Algo::SpoilLinear,
            "spoil_general" => Algo::SpoilGeneral,
            "bc_tabular" => Algo::BcTabular,
            "bc_linear_softmax" => Algo::BcLinearSoftmax,
            "uniform" => Algo::Uniform,
            _ => bail!(
                "unknown algorithm '{s}' (spoil_linear | spoil_general | bc_tabular | bc_linear_softmax | uniform)"
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneralClassKind {
    LinearBall,
    PolicyInduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpoilSettings {
    /// Drives `K` and `eta` through the regret schedule when set.
    pub epsilon: Option<f64>,
    pub k_iters: usize,
    pub eta: f64,
    /// Defaults to `1 / ((1 - gamma) B_phi)`.
    pub b_theta: Option<f64>,
    pub general_class: GeneralClassKind,
    pub general_members: usize,
    pub general_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub expert: ExpertSpec,
    pub algorithms: Vec<Algo>,
    pub tau_e_grid: Vec<usize>,
    pub n_seeds: usize,
    pub seed: u64,
    pub spoil: SpoilSettings,
    pub bc: BcConfig,
    /// Dataset size for `sample-data`.
    pub data_tau_e: usize,
    /// Algorithm for `train`.
    pub train_algo: Algo,
    pub probe_policies: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            expert: ExpertSpec::default(),
            algorithms: vec![Algo::SpoilLinear, Algo::BcLinearSoftmax, Algo::BcTabular, Algo::Uniform],
            tau_e_grid: vec![125, 500, 2000, 8000],
            n_seeds: 10,
            seed: 0,
            spoil: SpoilSettings {
                epsilon: Some(1.0),
                k_iters: 600,
                eta: 0.01,
                b_theta: None,
                general_class: GeneralClassKind::LinearBall,
                general_members: 20,
                general_seed: 0,
            },
            bc: BcConfig {
                steps: 5000,
                step_size: 1.0,
                ..BcConfig::default()
            },
            data_tau_e: 1000,
            train_algo: Algo::SpoilLinear,
            probe_policies: 20,
            output_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value '{value}' for {key}: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("invalid value '{value}' for {key}: expected true or false"),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected 'key = value'", i + 1);
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                bail!("line {}: duplicate key '{k}'", i + 1);
            }
        }
        let mut cfg = Self::default();
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "env.n_states" => self.env.n_states = parse(key, v)?,
            "env.n_actions" => self.env.n_actions = parse(key, v)?,
            "env.dim" => self.env.dim = parse(key, v)?,
            "env.gamma" => self.env.gamma = parse(key, v)?,
            "env.seed" => self.env.seed = parse(key, v)?,
            "env.reward_sparsity" => self.env.reward_sparsity = parse(key, v)?,
            "env.one_hot" => self.env.one_hot = parse_bool(key, v)?,
            "expert.kind" => self.expert.kind = v.parse::<ExpertKind>().map_err(|e| anyhow::anyhow!("{e}"))?,
            "expert.temperature" => self.expert.temperature = parse(key, v)?,
            "expert.perturb_strength" => self.expert.perturb_strength = parse(key, v)?,
            "expert.perturb_seed" => self.expert.perturb_seed = parse(key, v)?,
            "algorithms" => self.algorithms = parse_list(key, v)?,
            "tau_e_grid" => self.tau_e_grid = parse_list(key, v)?,
            "n_seeds" => self.n_seeds = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            "epsilon" | "spoil.epsilon" => {
                self.spoil.epsilon = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "spoil.k_iters" => self.spoil.k_iters = parse(key, v)?,
            "spoil.eta" => self.spoil.eta = parse(key, v)?,
            "spoil.b_theta" => self.spoil.b_theta = if v == "auto" { None } else { Some(parse(key, v)?) },
            "spoil_general.class" => {
                self.spoil.general_class = match v {
                    "linear_ball" => GeneralClassKind::LinearBall,
                    "policy_induced" => GeneralClassKind::PolicyInduced,
                    _ => bail!("invalid value '{v}' for {key}: expected linear_ball or policy_induced"),
                }
            }
            "spoil_general.members" => self.spoil.general_members = parse(key, v)?,
            "spoil_general.seed" => self.spoil.general_seed = parse(key, v)?,
            "bc.smoothing" => self.bc.smoothing = parse(key, v)?,
            "bc.steps" => self.bc.steps = parse(key, v)?,
            "bc.step_size" => self.bc.step_size = parse(key, v)?,
            "bc.seed" => self.bc.seed = parse(key, v)?,
            "data.tau_e" => self.data_tau_e = parse(key, v)?,
            "train.algo" => self.train_algo = v.parse()?,
            "probe_policies" => self.probe_policies = parse(key, v)?,
            _ => bail!("unknown configuration key '{key}'"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.expert.validate()?;
        self.bc.validate()?;
        if self.algorithms.is_empty() {
            bail!("algorithms must not be empty");
        }
        if self.tau_e_grid.is_empty() || self.tau_e_grid.contains(&0) {
            bail!("tau_e_grid must be a nonempty list of positive counts");
        }
        if self.n_seeds == 0 {
            bail!("n_seeds must be at least 1");
        }
        if self.data_tau_e == 0 {
            bail!("data.tau_e must be positive");
        }
        match self.spoil.epsilon {
            Some(e) if !(e > 0.0 && e.is_finite()) => bail!("epsilon must be positive"),
            None if self.spoil.k_iters == 0 || !(self.spoil.eta > 0.0) => {
                bail!("spoil.k_iters and spoil.eta must be positive")
            }
            _ => {}
        }
        if let Some(b) = self.spoil.b_theta {
            if !(b > 0.0 && b.is_finite()) {
                bail!("spoil.b_theta must be positive");
            }
        }
        if self.spoil.general_members == 0 {
            bail!("spoil_general.members must be positive");
        }
        Ok(())
    }

    /// `(K, eta)` from epsilon when set, otherwise the explicit values.
    pub fn spoil_schedule(&self) -> (usize, f64) {
        match self.spoil.epsilon {
            Some(eps) => spoil_core::schedule::theorem_schedule(self.env.n_actions, self.env.gamma, eps),
            None => (self.spoil.k_iters, self.spoil.eta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_lists() {
        let cfg = ExperimentConfig::parse_str(
            "# demo\nenv.n_states = 12\nenv.n_actions=4\nenv.dim = 3\nalgorithms = spoil_linear, bc_tabular\n\
             tau_e_grid = 10, 20\nn_seeds = 2\nexpert.kind = perturbed_table # noisy\nepsilon = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.env.n_states, 12);
        assert_eq!(cfg.algorithms, vec![Algo::SpoilLinear, Algo::BcTabular]);
        assert_eq!(cfg.tau_e_grid, vec![10, 20]);
        assert_eq!(cfg.expert.kind, ExpertKind::PerturbedTable);
        assert_eq!(
            cfg.spoil_schedule(),
            spoil_core::schedule::theorem1_schedule(4, 0.9, 0.5)
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse_str("env.nstates = 3").is_err());
        assert!(ExperimentConfig::parse_str("n_seeds = 0").is_err());
        assert!(ExperimentConfig::parse_str("tau_e_grid =").is_err());
        assert!(ExperimentConfig::parse_str("n_seeds = 1\nn_seeds = 2").is_err());
        assert!(ExperimentConfig::parse_str("env.dim = 5000").is_err());
        assert!(ExperimentConfig::parse_str("garbage").is_err());
    }

    #[test]
    fn explicit_schedule_without_epsilon() {
        let cfg = ExperimentConfig::parse_str("epsilon = none\nspoil.k_iters = 7\nspoil.eta = 0.2").unwrap();
        assert_eq!(cfg.spoil_schedule(), (7, 0.2));
    }
}
