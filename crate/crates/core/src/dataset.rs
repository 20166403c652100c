//! Expert datasets: i.i.d. state-action pairs drawn from an occupancy measure.
//!
//! File format:
//! ```text
//! dataset <tau_e> <n_states> <n_actions> <env_hash> <seed>
//! <x> <a>            (tau_e lines)
//! ```

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{validation, Error, Result};
use crate::mdp::{write_mdp, FiniteMdp, Policy};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetMeta {
    pub env_hash: String,
    pub expert: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertDataset {
    n_states: usize,
    n_actions: usize,
    pairs: Vec<(usize, usize)>,
    pub meta: DatasetMeta,
}

impl ExpertDataset {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        pairs: Vec<(usize, usize)>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return validation("a dataset needs at least one pair");
        }
        if let Some((i, &(x, a))) = pairs
            .iter()
            .enumerate()
            .find(|(_, &(x, a))| x >= n_states || a >= n_actions)
        {
            return validation(format!("pair {i} = ({x}, {a}) out of range"));
        }
        Ok(Self {
            n_states,
            n_actions,
            pairs,
            meta,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn tau_e(&self) -> usize {
        self.pairs.len()
    }

    /// The first `n` pairs, e.g. to build nested datasets from one long draw.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.pairs[..n.min(self.pairs.len())].to_vec(),
            self.meta.clone(),
        )
    }

    pub fn counts(&self) -> EmpiricalCounts {
        EmpiricalCounts::new(self)
    }
}

/// Visit counts of a dataset, normalized by its size.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCounts {
    pub n_states: usize,
    pub n_actions: usize,
    pub tau_e: usize,
    /// `count(x, a) / tau_e`, row-major.
    pub pair_freq: Vec<f64>,
    /// `count(x) / tau_e`.
    pub state_freq: Vec<f64>,
    /// States with at least one visit, ascending.
    pub visited: Vec<usize>,
}

impl EmpiricalCounts {
    fn new(data: &ExpertDataset) -> Self {
        let (n, na) = (data.n_states, data.n_actions);
        let mut pair = vec![0usize; n * na];
        let mut state = vec![0usize; n];
        for &(x, a) in &data.pairs {
            pair[x * na + a] += 1;
            state[x] += 1;
        }
        let tau = data.tau_e() as f64;
        Self {
            n_states: n,
            n_actions: na,
            tau_e: data.tau_e(),
            pair_freq: pair.iter().map(|&c| c as f64 / tau).collect(),
            visited: (0..n).filter(|&x| state[x] > 0).collect(),
            state_freq: state.iter().map(|&c| c as f64 / tau).collect(),
        }
    }
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Draws `(X_H, A_H)` with `H ~ Geometric(1 - gamma)` from a rollout of `pi`.
struct OccupancySampler<'a> {
    mdp: &'a FiniteMdp,
    probs: Vec<f64>,
    horizon: Geometric,
}

impl<'a> OccupancySampler<'a> {
    fn new(mdp: &'a FiniteMdp, pi: &Policy) -> Result<Self> {
        if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
            return validation("policy does not match the MDP");
        }
        let horizon = Geometric::new(1.0 - mdp.gamma())
            .map_err(|e| Error::Validation(format!("bad discount: {e}")))?;
        Ok(Self {
            mdp,
            probs: pi.prob_table(),
            horizon,
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let na = self.mdp.n_actions();
        let h = self.horizon.sample(rng);
        let mut x = sample_index(rng, self.mdp.nu0());
        for _ in 0..h {
            let a = sample_index(rng, &self.probs[x * na..(x + 1) * na]);
            x = sample_index(rng, &self.mdp.transition_row(x, a));
        }
        let a = sample_index(rng, &self.probs[x * na..(x + 1) * na]);
        (x, a)
    }
}

/// One draw from the occupancy measure of `pi`.
pub fn sample_occupancy_pair<R: Rng>(
    mdp: &FiniteMdp,
    pi: &Policy,
    rng: &mut R,
) -> Result<(usize, usize)> {
    Ok(OccupancySampler::new(mdp, pi)?.draw(rng))
}

/// `tau_e` independent occupancy draws. Pair `i` uses stream `i` of the seeded
/// generator, so the result does not depend on the thread count.
pub fn sample_dataset(
    mdp: &FiniteMdp,
    pi: &Policy,
    tau_e: usize,
    seed: u64,
) -> Result<ExpertDataset> {
    if tau_e == 0 {
        return validation("tau_e must be at least 1");
    }
    let sampler = OccupancySampler::new(mdp, pi)?;
    let pairs: Vec<(usize, usize)> = (0..tau_e)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sampler.draw(&mut rng)
        })
        .collect();
    ExpertDataset::new(
        mdp.n_states(),
        mdp.n_actions(),
        pairs,
        DatasetMeta {
            env_hash: env_hash(mdp)?,
            expert: String::new(),
            seed,
        },
    )
}

/// First 16 hex digits of the SHA-256 of the serialized MDP.
pub fn env_hash(mdp: &FiniteMdp) -> Result<String> {
    struct HashWriter(Sha256);
    impl Write for HashWriter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.update(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let mut hasher = HashWriter(Sha256::new());
    write_mdp(mdp, std::io::BufWriter::new(&mut hasher))?;
    let digest = hasher.0.finalize();
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

pub fn save_dataset<W: Write>(data: &ExpertDataset, mut w: W) -> Result<()> {
    let hash = if data.meta.env_hash.is_empty() {
        "-"
    } else {
        &data.meta.env_hash
    };
    writeln!(
        w,
        "dataset {} {} {} {} {}",
        data.tau_e(),
        data.n_states,
        data.n_actions,
        hash,
        data.meta.seed
    )?;
    for &(x, a) in &data.pairs {
        writeln!(w, "{x} {a}")?;
    }
    Ok(())
}

pub fn load_dataset<R: BufRead>(r: R) -> Result<ExpertDataset> {
    use crate::mdp::io::parse_num;
    let mut lines = r.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, l)) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break (i + 1, l);
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty dataset file".into(),
                })
            }
        }
    };
    let (ln, header) = header;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("dataset") {
        return Err(Error::Parse {
            line: ln,
            msg: "expected 'dataset' header".into(),
        });
    }
    let tau_e: usize = parse_num(tok.next(), ln, "tau_e")?;
    let n: usize = parse_num(tok.next(), ln, "n_states")?;
    let na: usize = parse_num(tok.next(), ln, "n_actions")?;
    let hash = tok
        .next()
        .ok_or_else(|| Error::Parse {
            line: ln,
            msg: "missing env_hash".into(),
        })?
        .to_string();
    let seed: u64 = parse_num(tok.next(), ln, "seed")?;
    if tau_e == 0 {
        return validation(format!("line {ln}: tau_e must be at least 1"));
    }
    let mut pairs = Vec::with_capacity(tau_e);
    for (i, line) in lines {
        let ln = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let x: usize = parse_num(tok.next(), ln, "state index")?;
        let a: usize = parse_num(tok.next(), ln, "action index")?;
        if tok.next().is_some() {
            return Err(Error::Parse {
                line: ln,
                msg: "trailing tokens".into(),
            });
        }
        if x >= n {
            return validation(format!("line {ln}: state index {x} >= n_states {n}"));
        }
        if a >= na {
            return validation(format!("line {ln}: action index {a} >= n_actions {na}"));
        }
        pairs.push((x, a));
    }
    if pairs.len() != tau_e {
        return validation(format!(
            "header declares {tau_e} pairs, file has {}",
            pairs.len()
        ));
    }
    ExpertDataset::new(
        n,
        na,
        pairs,
        DatasetMeta {
            env_hash: if hash == "-" { String::new() } else { hash },
            expert: String::new(),
            seed,
        },
    )
}
