//! Plain-text MDP and feature files.
//!
//! MDP file:
//! ```text
//! mdp <n_states> <n_actions> <gamma>
//! <nu0(0)> ... <nu0(|X|-1)>
//! <x> <a> <r(x,a)> <p(0|x,a)> ... <p(|X|-1|x,a)>     (one line per pair)
//! ```
//! Feature file: one `<x> <a> <phi_1> ... <phi_d>` line per pair.
//! Reals are written with 17 significant digits.

use std::io::{BufRead, Write};

use super::{FeatureMap, FiniteMdp};
use crate::error::{Error, Result};

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{tok}'")))
}

pub fn write_mdp<W: Write>(mdp: &FiniteMdp, mut w: W) -> Result<()> {
    writeln!(
        w,
        "mdp {} {} {}",
        mdp.n_states(),
        mdp.n_actions(),
        fmt_real(mdp.gamma())
    )?;
    let nu0: Vec<String> = mdp.nu0().iter().map(|&v| fmt_real(v)).collect();
    writeln!(w, "{}", nu0.join(" "))?;
    for x in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            write!(w, "{x} {a} {}", fmt_real(mdp.reward(x, a)))?;
            for p in mdp.transition_row(x, a).iter() {
                write!(w, " {}", fmt_real(*p))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_mdp<R: BufRead>(r: R) -> Result<FiniteMdp> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|l| !matches!(l, Ok((_, s)) if s.trim().is_empty()));

    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("mdp") {
        return Err(parse_err(ln, "expected 'mdp' header"));
    }
    let n: usize = parse_num(tok.next(), ln, "n_states")?;
    let na: usize = parse_num(tok.next(), ln, "n_actions")?;
    let gamma: f64 = parse_num(tok.next(), ln, "gamma")?;
    if n == 0 || na == 0 {
        return Err(parse_err(ln, "state and action counts must be positive"));
    }

    let (ln, nu_line) = lines
        .next()
        .ok_or_else(|| parse_err(ln + 1, "missing initial distribution"))??;
    let mut tok = nu_line.split_whitespace().peekable();
    if tok.peek() == Some(&"nu0") {
        tok.next();
    }
    let nu0 = tok
        .map(|t| parse_num(Some(t), ln, "nu0 entry"))
        .collect::<Result<Vec<f64>>>()?;
    if nu0.len() != n {
        return Err(parse_err(ln, format!("expected {n} nu0 entries, got {}", nu0.len())));
    }

    let mut reward = vec![0.0; n * na];
    let mut transition = vec![0.0; n * na * n];
    let mut seen = vec![false; n * na];
    for item in lines {
        let (ln, line) = item?;
        let mut tok = line.split_whitespace();
        let x: usize = parse_num(tok.next(), ln, "state index")?;
        let a: usize = parse_num(tok.next(), ln, "action index")?;
        if x >= n || a >= na {
            return Err(parse_err(ln, format!("pair ({x}, {a}) out of range")));
        }
        let sa = x * na + a;
        if seen[sa] {
            return Err(parse_err(ln, format!("duplicate pair ({x}, {a})")));
        }
        seen[sa] = true;
        reward[sa] = parse_num(tok.next(), ln, "reward")?;
        let row = tok
            .map(|t| parse_num(Some(t), ln, "transition probability"))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != n {
            return Err(parse_err(ln, format!("expected {n} probabilities, got {}", row.len())));
        }
        transition[sa * n..(sa + 1) * n].copy_from_slice(&row);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(parse_err(
            0,
            format!("missing pair ({}, {})", missing / na, missing % na),
        ));
    }
    FiniteMdp::new(n, na, transition, reward, gamma, nu0)
}

pub fn write_features<W: Write>(features: &FeatureMap, mut w: W) -> Result<()> {
    for x in 0..features.n_states() {
        for a in 0..features.n_actions() {
            write!(w, "{x} {a}")?;
            for v in features.get(x, a) {
                write!(w, " {}", fmt_real(*v))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Reads a feature file for an environment with the given shape. The norm bound is
/// the largest feature norm in the file (at least `min_b_phi`).
pub fn read_features<R: BufRead>(
    r: R,
    n_states: usize,
    n_actions: usize,
    min_b_phi: f64,
) -> Result<FeatureMap> {
    let mut dim = None;
    let mut phi = vec![];
    let mut seen = vec![false; n_states * n_actions];
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_states * n_actions];
    for (i, line) in r.lines().enumerate() {
        let ln = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let x: usize = parse_num(tok.next(), ln, "state index")?;
        let a: usize = parse_num(tok.next(), ln, "action index")?;
        if x >= n_states || a >= n_actions {
            return Err(parse_err(ln, format!("pair ({x}, {a}) out of range")));
        }
        let v = tok
            .map(|t| parse_num(Some(t), ln, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(parse_err(ln, format!("expected {d} features, got {}", v.len())))
            }
            _ => {}
        }
        let sa = x * n_actions + a;
        if seen[sa] {
            return Err(parse_err(ln, format!("duplicate pair ({x}, {a})")));
        }
        seen[sa] = true;
        rows[sa] = Some(v);
    }
    let dim = dim.ok_or_else(|| parse_err(1, "empty feature file"))?;
    for (sa, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            parse_err(0, format!("missing pair ({}, {})", sa / n_actions, sa % n_actions))
        })?;
        phi.extend(row);
    }
    let max_norm = phi
        .chunks(dim)
        .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    FeatureMap::new(n_states, n_actions, dim, phi, max_norm.max(min_b_phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::random_tabular_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mdp_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = random_tabular_mdp(&mut rng, 4, 3, 0.9);
        let mut buf = vec![];
        write_mdp(&mdp, &mut buf).unwrap();
        let back = read_mdp(&buf[..]).unwrap();
        assert_eq!(back, mdp);
        let mut again = vec![];
        write_mdp(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_row_reports_line() {
        let text = "mdp 1 1 0.5\n1.0\n0 3 0.5 1.0\n";
        match read_mdp(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn features_round_trip() {
        let f = FeatureMap::new(2, 2, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.1], 1.0).unwrap();
        let mut buf = vec![];
        write_features(&f, &mut buf).unwrap();
        let back = read_features(&buf[..], 2, 2, 1.0).unwrap();
        assert_eq!(back, f);
    }
}
