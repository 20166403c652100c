//! On-disk artifacts of the command-line workflow. Every command reads and writes
//! fixed file names inside one working directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use spoil_core::baselines::write_logits_table;
use spoil_core::dataset::{load_dataset, save_dataset, ExpertDataset};
use spoil_core::mdp::{read_features, read_mdp, write_features, write_mdp, FeatureMap, FiniteMdp, Policy};

pub const ENV_FILE: &str = "env.txt";
pub const FEATURES_FILE: &str = "features.txt";
pub const EXPERT_FILE: &str = "expert.txt";
pub const DATA_FILE: &str = "data.txt";
pub const POLICY_FILE: &str = "policy.txt";
pub const RUN_FILE: &str = "run.csv";
pub const RUN_META_FILE: &str = "run_meta.txt";

/// Reals are written with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write_env(&self, mdp: &FiniteMdp, features: &FeatureMap) -> Result<()> {
        let mut w = create(&self.path(ENV_FILE))?;
        write_mdp(mdp, &mut w)?;
        w.flush()?;
        let mut w = create(&self.path(FEATURES_FILE))?;
        write_features(features, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_env(&self) -> Result<FiniteMdp> {
        let p = self.path(ENV_FILE);
        if !p.exists() {
            bail!(spoil_core::Error::Validation(format!(
                "environment file {} is missing; run gen-env first (exact quantities need the environment)",
                p.display()
            )));
        }
        read_mdp(open(&p)?).with_context(|| format!("reading {}", p.display()))
    }

    pub fn read_features(&self, mdp: &FiniteMdp) -> Result<FeatureMap> {
        let p = self.path(FEATURES_FILE);
        read_features(open(&p)?, mdp.n_states(), mdp.n_actions(), 1.0)
            .with_context(|| format!("reading {}", p.display()))
    }

    pub fn write_policy(&self, name: &str, pi: &Policy) -> Result<()> {
        let mut w = create(&self.path(name))?;
        write_policy(pi, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_policy(&self, name: &str) -> Result<Policy> {
        let p = self.path(name);
        read_policy(open(&p)?).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write_data(&self, data: &ExpertDataset) -> Result<()> {
        let mut w = create(&self.path(DATA_FILE))?;
        save_dataset(data, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_data(&self) -> Result<ExpertDataset> {
        let p = self.path(DATA_FILE);
        load_dataset(open(&p)?).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write_meta(&self, meta: &BTreeMap<String, String>) -> Result<()> {
        let mut w = create(&self.path(RUN_META_FILE))?;
        for (k, v) in meta {
            writeln!(w, "{k} = {v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_meta(&self) -> Result<BTreeMap<String, String>> {
        let p = self.path(RUN_META_FILE);
        let mut meta = BTreeMap::new();
        for (i, line) in open(&p)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(spoil_core::Error::Parse {
                    line: i + 1,
                    msg: format!("expected 'key = value' in {}", p.display()),
                });
            };
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(meta)
    }
}

/// `policy <n_states> <n_actions>` followed by one line of logits per state.
pub fn write_policy<W: Write>(pi: &Policy, mut w: W) -> Result<()> {
    writeln!(w, "policy {} {}", pi.n_states(), pi.n_actions())?;
    write_logits_table(pi, &mut w)?;
    Ok(())
}

pub fn read_policy<R: BufRead>(r: R) -> Result<Policy> {
    let parse_err = |line: usize, msg: String| spoil_core::Error::Parse { line, msg };
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty policy file".into()))??;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 3 || tok[0] != "policy" {
        bail!(parse_err(1, "expected 'policy <n_states> <n_actions>'".into()));
    }
    let n: usize = tok[1].parse().map_err(|_| parse_err(1, "bad state count".into()))?;
    let na: usize = tok[2].parse().map_err(|_| parse_err(1, "bad action count".into()))?;
    let mut logits = Vec::with_capacity(n * na);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(i + 2, format!("bad logit '{t}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != na {
            bail!(parse_err(i + 2, format!("expected {na} logits, found {}", row.len())));
        }
        logits.extend(row);
    }
    if logits.len() != n * na {
        bail!(spoil_core::Error::Validation(format!(
            "policy file declares {n} states but has {}",
            logits.len() / na.max(1)
        )));
    }
    Ok(Policy::from_logits(n, na, logits)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_round_trip() {
        let pi = Policy::from_logits(2, 3, vec![0.1, -0.2, 3.0, 1e-9, 5.5, -800.0]).unwrap();
        let mut buf = vec![];
        write_policy(&pi, &mut buf).unwrap();
        assert_eq!(read_policy(&buf[..]).unwrap(), pi);
        assert!(read_policy(&b"policy 1 2\n0.0\n"[..]).is_err());
    }
}
