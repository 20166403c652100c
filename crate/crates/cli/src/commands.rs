use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use spoil_core::dataset::{sample_dataset, DatasetMeta};
use spoil_core::diagnostics::{decomposition_report, write_report_csv, write_report_summary};
use spoil_core::envgen::{centered_action_feature, gen_linear_mdp, quadratic_softmax_expert, realizability_residual};
use spoil_core::mdp::{expected_return, FeatureMap, FiniteMdp, Policy};
use spoil_core::spoil_general::QClass;
use spoil_core::spoil_linear::{read_linear_run_csv, write_run_csv, ActorForm, CriticTrace, SpoilRunRecord};

use crate::config::{Algo, ExperimentConfig, GeneralClassKind};
use crate::experiment::{
    b_theta, general_class, run_experiment, summarize, train, write_results, write_summary,
};
use crate::files::{
    create, fmt_real, open, Workdir, EXPERT_FILE, POLICY_FILE, RUN_FILE,
};

/// Largest accepted realizability residual of a generated environment.
pub const REALIZABILITY_LIMIT: f64 = 1e-6;

pub struct Session {
    pub cfg: ExperimentConfig,
    pub seed: Option<u64>,
    pub dir: Workdir,
}

fn require_dense(mdp: &FiniteMdp) -> Result<()> {
    if !mdp.is_dense() {
        bail!(spoil_core::Error::TooLarge(format!(
            "{} state-action pairs with factored transitions; exact evaluation is limited to dense environments",
            mdp.n_pairs()
        )));
    }
    Ok(())
}

/// Configuration adjusted to the environment stored in the working directory.
fn aligned(cfg: &ExperimentConfig, mdp: &FiniteMdp) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    cfg.env.n_states = mdp.n_states();
    cfg.env.n_actions = mdp.n_actions();
    cfg.env.gamma = mdp.gamma();
    cfg
}

pub fn gen_env(ctx: &Session) -> Result<()> {
    let mut spec = ctx.cfg.env.clone();
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    let (mdp, features) = gen_linear_mdp(&spec)?;
    if mdp.is_dense() {
        let cert = realizability_residual(&mdp, &features, ctx.cfg.probe_policies, spec.seed)?;
        println!(
            "realizability_residual = {}  max_theta_norm = {}",
            fmt_real(cert.residual),
            fmt_real(cert.max_theta_norm)
        );
        if cert.residual > REALIZABILITY_LIMIT {
            bail!(spoil_core::Error::Validation(format!(
                "environment rejected: realizability residual {:e} exceeds {REALIZABILITY_LIMIT:e}",
                cert.residual
            )));
        }
    } else {
        println!("factored environment: realizability check skipped (no exact evaluation)");
    }
    ctx.dir.write_env(&mdp, &features)?;
    println!("wrote {} and features to {}", crate::files::ENV_FILE, ctx.dir.0.display());
    Ok(())
}

pub fn gen_expert(ctx: &Session) -> Result<()> {
    let mdp = ctx.dir.read_env()?;
    let mut spec = ctx.cfg.expert.clone();
    if let Some(s) = ctx.seed {
        spec.perturb_seed = s;
    }
    let expert = spec.build(&mdp)?;
    ctx.dir.write_policy(EXPERT_FILE, &expert)?;
    println!("expert = {}", spec.descriptor());
    if mdp.is_dense() {
        println!("rho_expert = {}", fmt_real(expected_return(&mdp, &expert)?));
    }
    Ok(())
}

pub fn sample_data(ctx: &Session) -> Result<()> {
    let mdp = ctx.dir.read_env()?;
    let expert = ctx.dir.read_policy(EXPERT_FILE)?;
    let seed = ctx.seed.unwrap_or(ctx.cfg.seed);
    let mut data = sample_dataset(&mdp, &expert, ctx.cfg.data_tau_e, seed)?;
    data.meta = DatasetMeta {
        expert: ctx.cfg.expert.descriptor(),
        ..data.meta
    };
    ctx.dir.write_data(&data)?;
    println!("sampled {} pairs (seed {seed})", data.tau_e());
    Ok(())
}

fn load_features(dir: &Workdir, mdp: &FiniteMdp) -> Result<Arc<FeatureMap>> {
    Ok(Arc::new(dir.read_features(mdp)?))
}

pub fn train_cmd(ctx: &Session) -> Result<()> {
    let mdp = ctx.dir.read_env()?;
    let cfg = aligned(&ctx.cfg, &mdp);
    let features = load_features(&ctx.dir, &mdp)?;
    let data = ctx.dir.read_data()?;
    let algo = cfg.train_algo;
    let class = match algo {
        Algo::SpoilGeneral => Some(general_class(&cfg, &mdp, &features)?),
        _ => None,
    };
    let output_seed = ctx.seed.unwrap_or(cfg.seed);
    let trained = train(algo, &cfg, &features, class.as_ref(), &data, output_seed)?;
    ctx.dir.write_policy(POLICY_FILE, &trained.policy)?;

    let mut meta = BTreeMap::new();
    meta.insert("algo".to_string(), algo.name().to_string());
    meta.insert("tau_e".to_string(), data.tau_e().to_string());
    if let Some(rec) = &trained.record {
        let mut w = create(&ctx.dir.path(RUN_FILE))?;
        write_run_csv(rec, &mut w)?;
        w.flush()?;
        meta.insert("k_iters".into(), rec.k_iters().to_string());
        meta.insert("eta".into(), fmt_real(rec.eta));
        meta.insert("selected".into(), rec.selected.to_string());
        meta.insert("output_seed".into(), output_seed.to_string());
        let class_name = match (algo, cfg.spoil.general_class) {
            (Algo::SpoilGeneral, GeneralClassKind::PolicyInduced) => {
                meta.insert("members".into(), cfg.spoil.general_members.to_string());
                meta.insert("class_seed".into(), cfg.spoil.general_seed.to_string());
                "policy_induced"
            }
            _ => {
                meta.insert("b_theta".into(), fmt_real(b_theta(&cfg, &features)));
                "linear_ball"
            }
        };
        meta.insert("class".into(), class_name.into());
        println!(
            "{}: K = {}, eta = {}, selected iterate {}",
            algo.name(),
            rec.k_iters(),
            fmt_real(rec.eta),
            rec.selected
        );
    }
    ctx.dir.write_meta(&meta)?;
    println!("wrote {}", ctx.dir.path(POLICY_FILE).display());
    Ok(())
}

pub fn evaluate(ctx: &Session) -> Result<()> {
    let mdp = ctx.dir.read_env()?;
    require_dense(&mdp)?;
    let expert = ctx.dir.read_policy(EXPERT_FILE)?;
    let pi = ctx.dir.read_policy(POLICY_FILE)?;
    let rho_e = expected_return(&mdp, &expert)?;
    let rho = expected_return(&mdp, &pi)?;
    let sub = rho_e - rho;
    let mut w = create(&ctx.dir.path("eval.csv"))?;
    writeln!(w, "rho_expert,rho_policy,suboptimality,suboptimality_unnormalized")?;
    let line = format!(
        "{},{},{},{}",
        fmt_real(rho_e),
        fmt_real(rho),
        fmt_real(sub),
        fmt_real(sub / (1.0 - mdp.gamma()))
    );
    writeln!(w, "{line}")?;
    w.flush()?;
    println!("rho_expert,rho_policy,suboptimality,suboptimality_unnormalized\n{line}");
    Ok(())
}

pub fn experiment(ctx: &Session) -> Result<PathBuf> {
    let mut cfg = ctx.cfg.clone();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let rows = run_experiment(&cfg)?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| ctx.dir.0.clone());
    let mut w = create(&out.join("results.csv"))?;
    write_results(&rows, &mut w)?;
    w.flush()?;
    let summary = summarize(&rows);
    let mut w = create(&out.join("summary.csv"))?;
    write_summary(&summary, &mut w)?;
    w.flush()?;
    println!("{:<18} {:>7} {:>22} {:>22}", "algo", "tau_e", "mean_suboptimality", "std_error");
    for r in &summary {
        println!(
            "{:<18} {:>7} {:>22.6e} {:>22.6e}{}",
            r.algo.name(),
            r.tau_e,
            r.mean,
            r.std_error,
            if r.n_failed > 0 { format!("  ({} failed)", r.n_failed) } else { String::new() }
        );
    }
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        eprintln!("{failed} runs failed; see the error column of results.csv");
    }
    println!("wrote {}", out.join("results.csv").display());
    Ok(out)
}

fn meta_get<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| anyhow!(spoil_core::Error::Validation(format!("run metadata lacks '{key}'"))))
}

fn meta_parse<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = meta_get(meta, key)?;
    v.parse()
        .map_err(|_| anyhow!(spoil_core::Error::Validation(format!("bad value '{v}' for '{key}' in run metadata"))))
}

/// Reads `k,objective_value,critic_index`.
fn read_member_run<R: BufRead>(r: R) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut objectives = vec![];
    let mut chosen = vec![];
    for (i, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.trim().split(',').collect();
        let bad = || spoil_core::Error::Parse { line: i + 1, msg: "expected k,objective_value,critic_index".into() };
        if tok.len() != 3 {
            bail!(bad());
        }
        objectives.push(tok[1].parse().map_err(|_| bad())?);
        chosen.push(tok[2].parse().map_err(|_| bad())?);
    }
    Ok((objectives, chosen))
}

/// Rebuilds the run record of the last `train` call together with its critic class.
pub fn load_run(ctx: &Session, mdp: &FiniteMdp, features: &Arc<FeatureMap>) -> Result<(SpoilRunRecord, QClass)> {
    let meta = ctx.dir.read_meta()?;
    let algo: Algo = meta_get(&meta, "algo")?.parse()?;
    if !matches!(algo, Algo::SpoilLinear | Algo::SpoilGeneral) {
        bail!(spoil_core::Error::Validation(format!(
            "diagnostics apply to primal-dual runs, the stored run is {}",
            algo.name()
        )));
    }
    let eta: f64 = meta_parse(&meta, "eta")?;
    let selected: usize = meta_parse(&meta, "selected")?;
    let run_path = ctx.dir.path(RUN_FILE);
    let (trace, class, g_hat_norms, objectives, actor) = match meta_get(&meta, "class")? {
        "linear_ball" => {
            let t = read_linear_run_csv(open(&run_path)?).with_context(|| format!("reading {}", run_path.display()))?;
            let b: f64 = meta_parse(&meta, "b_theta")?;
            if t.thetas.iter().any(|th| th.len() != features.dim()) {
                bail!(spoil_core::Error::Validation("run file does not match the feature dimension".into()));
            }
            (
                CriticTrace::Linear { features: features.clone(), thetas: t.thetas },
                QClass::linear_ball(features.clone(), b)?,
                t.g_hat_norms,
                t.objectives,
                ActorForm::CumulativeTheta,
            )
        }
        "policy_induced" => {
            let mut cfg = aligned(&ctx.cfg, mdp);
            cfg.spoil.general_class = GeneralClassKind::PolicyInduced;
            cfg.spoil.general_members = meta_parse(&meta, "members")?;
            cfg.spoil.general_seed = meta_parse(&meta, "class_seed")?;
            let class = general_class(&cfg, mdp, features)?;
            let (objectives, chosen) = read_member_run(open(&run_path)?)?;
            let QClass::Finite { members, .. } = &class else { unreachable!() };
            if chosen.iter().any(|&c| c >= members.len()) {
                bail!(spoil_core::Error::Validation("critic index outside the class".into()));
            }
            (
                CriticTrace::Members { members: members.clone(), chosen },
                class,
                vec![],
                objectives,
                ActorForm::CumulativeLogits,
            )
        }
        other => bail!(spoil_core::Error::Validation(format!("unknown critic class '{other}'"))),
    };
    if selected == 0 || selected > trace.len() {
        bail!(spoil_core::Error::Validation(format!("selected iterate {selected} outside 1..={}", trace.len())));
    }
    let mut record = SpoilRunRecord {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        eta,
        selected,
        trace,
        actor,
        g_hat_norms,
        objectives,
        output: Policy::uniform(mdp.n_states(), mdp.n_actions()),
    };
    record.output = record.iterate(selected);
    Ok((record, class))
}

pub fn diagnose(ctx: &Session) -> Result<()> {
    let mdp = ctx.dir.read_env()?;
    require_dense(&mdp)?;
    let features = load_features(&ctx.dir, &mdp)?;
    let expert = ctx.dir.read_policy(EXPERT_FILE)?;
    let data = ctx.dir.read_data()?;
    let (record, class) = load_run(ctx, &mdp, &features)?;
    let report = decomposition_report(&mdp, &expert, &data, &record, &class)?;

    let mut w = create(&ctx.dir.path("report.csv"))?;
    write_report_csv(&report, &mut w)?;
    w.flush()?;
    let mut w = create(&ctx.dir.path("report_summary.csv"))?;
    write_report_summary(&report, &mut w)?;
    w.flush()?;
    let mut w = create(&ctx.dir.path("regret.csv"))?;
    writeln!(w, "lhs,bound,applicable")?;
    match report.regret_audit {
        Some((lhs, bound)) => writeln!(w, "{},{},true", fmt_real(lhs), fmt_real(bound))?,
        None => writeln!(w, "nan,nan,false")?,
    }
    w.flush()?;

    println!("suboptimality   = {}", fmt_real(report.suboptimality));
    println!("regret_term     = {}", fmt_real(report.regret_term));
    println!("estimation_term = {}", fmt_real(report.estimation_term));
    println!("holds           = {}", report.bound_satisfied);
    println!("class_contains_q_pi = {}", report.premise_holds);
    match report.regret_audit {
        Some((lhs, bound)) => println!("regret audit: {} <= {}", fmt_real(lhs), fmt_real(bound)),
        None => println!("regret audit: not applicable (critics exceed 1/(1-gamma) in sup norm)"),
    }
    Ok(())
}

/// Rows `(action, phi, pi_E, pi_lin(+1), pi_lin(-1))` of the single-state quadratic example.
pub fn appendix_c_table(n_actions: usize) -> Result<Vec<(usize, f64, f64, f64, f64)>> {
    let (_, features, expert) = quadratic_softmax_expert(n_actions)?;
    let plus = Policy::linear_softmax(&features, &[1.0], 1.0).probs(0);
    let minus = Policy::linear_softmax(&features, &[-1.0], 1.0).probs(0);
    let pe = expert.probs(0);
    Ok((0..n_actions)
        .map(|a| (a + 1, centered_action_feature(a, n_actions), pe[a], plus[a], minus[a]))
        .collect())
}

pub fn appendix_c(ctx: &Session) -> Result<()> {
    let rows = appendix_c_table(5)?;
    let mut w = create(&ctx.dir.path("appendix_c.csv"))?;
    writeln!(w, "action,phi,pi_expert,pi_lin_plus,pi_lin_minus")?;
    println!("{:>6} {:>6} {:>8} {:>8} {:>8}", "action", "phi", "pi_E", "pi_+1", "pi_-1");
    for (a, phi, e, p, m) in &rows {
        writeln!(w, "{a},{},{},{},{}", fmt_real(*phi), fmt_real(*e), fmt_real(*p), fmt_real(*m))?;
        println!("{a:>6} {phi:>6.1} {e:>8.4} {p:>8.4} {m:>8.4}");
    }
    w.flush()?;
    Ok(())
}
