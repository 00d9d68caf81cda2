use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{AgentKind, PolicySource, RunConfig, MANIFEST};
use super::csv::{self, Table};
use super::par_map;
use crate::agent::{random_returns, train_agent, CurveRow, LearningCurve, Sac, TrainAgentConfig};
use crate::belief::{
    evaluate_belief, one_step_errors, train_dfbt, train_recursive, Belief, BeliefErrorCurve, BeliefKind, Dfbt,
    Normalizer, OracleDynamics, RecursiveModel,
};
use crate::delay::DelaySpec;
use crate::envs::controllers::{random_policy, BoxedPolicy};
use crate::envs::{collect_dataset, Dataset, Env, PolicyMix};
use crate::error::{Error, Result};
use crate::numcore::checkpoint;
use crate::numcore::rng::RngStreams;
use crate::theory::{
    comparison_verdict, direct_report, measure_rollout_errors, BoundReport, LipschitzSystem,
};

pub const BELIEF_HEADER: &str = "horizon,method,mean_L1,std_L1,n";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn n_dir(out: &Path, n: usize) -> PathBuf {
    out.join(format!("N{n}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn for_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> RunConfig {
    RunConfig { seeds: vec![seed], out: dir.to_path_buf(), ..cfg.clone() }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn load_agent(cfg: &RunConfig, env: &Env, path: &Path) -> Result<Sac> {
    let saved = checkpoint::load(path)
        .map_err(|e| Error::invalid(format!("cannot load agent checkpoint {}: {e}", path.display())))?;
    let mut agent = Sac::new(cfg.sac_config(), env.spec(), 0)?;
    agent.restore(&saved)?;
    Ok(agent)
}

fn agent_policy(agent: &Sac, deterministic: bool, seed: u64) -> BoxedPolicy {
    let agent = agent.clone();
    let mut rng = RngStreams::new(seed).stream("policy");
    Box::new(move |s| agent.act(s, deterministic, &mut rng).expect("actor accepts environment states"))
}

pub fn collect(cfg: &RunConfig) -> Result<()> {
    let [seed] = cfg.seeds[..] else {
        return Err(Error::invalid("collect takes exactly one seed"));
    };
    let env = Env::new(cfg.env_config())?;
    let weights: Vec<(&str, f64)> = cfg.mix.iter().map(|(l, w)| (l.as_str(), *w)).collect();
    let mix = match cfg.policy_source {
        PolicySource::Scripted => PolicyMix::scripted(&env, &weights)?,
        PolicySource::Agent => {
            let needs_agent = weights.iter().any(|&(l, w)| l != "random" && w > 0.0);
            let agent = match (&cfg.policy_checkpoint, needs_agent) {
                (Some(p), _) => Some(load_agent(cfg, &env, p)?),
                (None, true) => {
                    return Err(Error::invalid("medium and expert entries need policy_checkpoint"));
                }
                (None, false) => None,
            };
            let mut mix = PolicyMix::new();
            for &(label, w) in &weights {
                let e = env.clone();
                mix = match (label, &agent) {
                    ("random", _) => mix.with(label, w, move |s| random_policy(&e, RngStreams::new(s).stream("policy"))),
                    ("medium", Some(a)) => {
                        let a = a.clone();
                        mix.with(label, w, move |s| agent_policy(&a, false, s))
                    }
                    ("expert", Some(a)) => {
                        let a = a.clone();
                        mix.with(label, w, move |s| agent_policy(&a, true, s))
                    }
                    _ => mix,
                };
            }
            mix
        }
    };
    let data = collect_dataset(&env, &mix, cfg.dataset_size, seed)?;
    fs::create_dir_all(&cfg.out)?;
    data.save(cfg.out.join("dataset.bin"))?;
    let mut s = String::from("label,n_transitions\n");
    for (label, n) in data.label_counts() {
        let _ = writeln!(s, "{label},{n}");
    }
    write(&cfg.out.join("dataset.csv"), &s)?;
    cfg.write_manifest(&cfg.out, "collect")
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.dataset.as_ref().ok_or_else(|| Error::invalid("`dataset` is not set"))?;
    let data = Dataset::load(path).map_err(|e| Error::invalid(format!("cannot load dataset {}: {e}", path.display())))?;
    let want = cfg.env_config();
    if data.env != want {
        return Err(Error::invalid(format!(
            "dataset {} was collected on {:?}, the config asks for {:?}",
            path.display(),
            data.env,
            want
        )));
    }
    Ok(data)
}

fn belief_path(cfg: &RunConfig, seed: u64, kind: BeliefKind) -> Result<PathBuf> {
    let dir = cfg.belief_dir.as_ref().ok_or_else(|| Error::invalid(format!("`belief_dir` is needed for {kind}")))?;
    Ok(seed_dir(dir, seed).join(format!("{kind}.bin")))
}

/// The oracle, or the checkpoint trained for `seed`.
pub fn load_belief(cfg: &RunConfig, env: &Env, seed: u64, kind: BeliefKind) -> Result<Belief> {
    let belief = match kind {
        BeliefKind::Oracle => return Ok(Belief::Oracle(OracleDynamics { env: env.clone() })),
        _ => {
            let path = belief_path(cfg, seed, kind)?;
            if !path.exists() {
                return Err(Error::invalid(format!("missing belief checkpoint {}", path.display())));
            }
            Belief::load(&path)?
        }
    };
    if belief.kind() != kind {
        return Err(Error::invalid(format!("checkpoint holds a {} belief, expected {kind}", belief.kind())));
    }
    if belief.state_dim() != env.state_dim() || belief.action_dim() != env.action_dim() {
        return Err(Error::invalid(format!("belief dimensions do not match {}", env.id())));
    }
    Ok(belief)
}

fn loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l:.10e}", i + 1);
    }
    s
}

pub fn train_belief(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let (train, _) = data.split_every(cfg.holdout_every);
    let env = data.build_env()?;
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let norm = Normalizer::fit(&train, cfg.delta_max)?;
    let delay = DelaySpec::new(cfg.dfbt_train_delay, cfg.delta_max)?;
    par_map(&cfg.seeds, |&seed| {
        let dir = seed_dir(&cfg.out, seed);
        fs::create_dir_all(&dir)?;
        for kind in &cfg.beliefs {
            match kind {
                BeliefKind::Dfbt => {
                    let mut m = Dfbt::new(cfg.dfbt_config(sd, ad), norm.clone(), seed)?;
                    let curve = train_dfbt(&mut m, &train, &delay, &cfg.dfbt_train(seed))?;
                    Belief::Dfbt(Box::new(m)).save(dir.join("dfbt.bin"))?;
                    write(&dir.join("dfbt_loss.csv"), &loss_csv(&curve))?;
                }
                BeliefKind::Recursive => {
                    let mut m = RecursiveModel::new(cfg.recursive_config(sd, ad), norm.clone(), seed)?;
                    let curve = train_recursive(&mut m, &train, &cfg.recursive_train(seed))?;
                    Belief::Recursive(Box::new(m)).save(dir.join("recursive.bin"))?;
                    write(&dir.join("recursive_loss.csv"), &loss_csv(&curve))?;
                }
                BeliefKind::Oracle => {}
            }
        }
        for_seed(cfg, seed, &dir).write_manifest(&dir, "train-belief")
    })?;
    cfg.write_manifest(&cfg.out, "train-belief")
}

pub fn belief_csv(curves: &[(BeliefKind, BeliefErrorCurve)]) -> String {
    let mut s = format!("{BELIEF_HEADER}\n");
    for (kind, c) in curves {
        for r in &c.rows {
            let _ = writeln!(s, "{},{kind},{:.10e},{:.10e},{}", r.horizon, r.mean_l1, r.std_l1, r.n);
        }
    }
    s
}

/// Seed means of per-seed curves; `std_L1` is the spread across seeds and
/// `n` the seed count.
fn seed_mean_curves(per_seed: &[Vec<(BeliefKind, BeliefErrorCurve)>]) -> Vec<(BeliefKind, BeliefErrorCurve)> {
    let first = &per_seed[0];
    first
        .iter()
        .enumerate()
        .map(|(k, (kind, c))| {
            let rows = c
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let xs: Vec<f64> = per_seed.iter().map(|s| s[k].1.rows[i].mean_l1).collect();
                    let (m, sd) = mean_std(&xs);
                    crate::belief::HorizonError { horizon: r.horizon, mean_l1: m, std_l1: sd, n: xs.len() }
                })
                .collect();
            (*kind, BeliefErrorCurve { rows })
        })
        .collect()
}

pub fn eval_belief(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let (_, held) = data.split_every(cfg.holdout_every);
    let env = data.build_env()?;
    if cfg.beliefs.is_empty() {
        return Err(Error::invalid("`beliefs` is empty"));
    }
    let per_seed = par_map(&cfg.seeds, |&seed| {
        let dir = seed_dir(&cfg.out, seed);
        let mut curves = Vec::new();
        let mut eps_p = None;
        for &kind in &cfg.beliefs {
            let belief = load_belief(cfg, &env, seed, kind)?;
            curves.push((kind, evaluate_belief(&belief, &held, cfg.delta_max, cfg.eval_stride)?));
            if let Belief::Recursive(m) = &belief {
                let errs = one_step_errors(m.as_ref(), &held)?;
                let max = errs.iter().copied().fold(0.0, f64::max);
                let (mean, _) = mean_std(&errs);
                write(
                    &dir.join("one_step_error.csv"),
                    &format!("max_L1,mean_L1,n\n{max:.10e},{mean:.10e},{}\n", errs.len()),
                )?;
                eps_p = Some(max);
            }
        }
        write(&dir.join("belief_error.csv"), &belief_csv(&curves))?;
        for_seed(cfg, seed, &dir).write_manifest(&dir, "eval-belief")?;
        Ok((curves, eps_p))
    })?;
    let curves: Vec<_> = per_seed.iter().map(|(c, _)| c.clone()).collect();
    let mean = seed_mean_curves(&curves);
    write(&cfg.out.join("belief_error.csv"), &belief_csv(&mean))?;
    let find = |k: BeliefKind| mean.iter().find(|(kind, _)| *kind == k).map(|(_, c)| c);
    if let (Some(direct), Some(rec), true) =
        (find(BeliefKind::Dfbt), find(BeliefKind::Recursive), env.oscillator().is_some())
    {
        let l_p = LipschitzSystem::mass_spring_damper(&env, &[0.0, 0.0])?.l_p;
        let eps: Vec<f64> = per_seed.iter().filter_map(|(_, e)| *e).collect();
        let (eps_p, _) = mean_std(&eps);
        let deltas: Vec<usize> = (1..=cfg.delta_max).collect();
        let mut report = direct_report(l_p, eps_p, direct.max_mean(), &deltas);
        for row in &mut report.rows {
            row.measured_recursive = rec.at(row.delta).map(|h| h.mean_l1);
        }
        comparison_verdict(&mut report)?;
        write(&cfg.out.join("bound.csv"), &report.to_csv())?;
    }
    cfg.write_manifest(&cfg.out, "eval-belief")
}

fn curve_from_returns(returns: &[f64]) -> LearningCurve {
    let (mean_return, std_return) = mean_std(returns);
    LearningCurve {
        rows: vec![CurveRow {
            env_step: 0,
            mean_return,
            std_return,
            n_episodes: returns.len(),
            alpha: 0.0,
            critic_loss: None,
            actor_loss: None,
        }],
    }
}

pub const SUMMARY_HEADER: &str = "n_step,mean_return,std_return,n_seeds";

pub fn train_agent_cmd(cfg: &RunConfig) -> Result<()> {
    let env = Env::new(cfg.env_config())?;
    let delay = cfg.delay_spec()?;
    if cfg.agent == AgentKind::Sac && delay.is_some() && cfg.belief != BeliefKind::Oracle {
        for &seed in &cfg.seeds {
            let p = belief_path(cfg, seed, cfg.belief)?;
            if !p.exists() {
                return Err(Error::invalid(format!("missing belief checkpoint {}", p.display())));
            }
        }
    }
    let jobs: Vec<(usize, u64)> = cfg.n_steps.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let curves = par_map(&jobs, |&(n, seed)| {
        let dir = seed_dir(&n_dir(&cfg.out, n), seed);
        fs::create_dir_all(&dir)?;
        let curve = match cfg.agent {
            AgentKind::Random => curve_from_returns(&random_returns(&env, cfg.eval_episodes, seed, cfg.horizon)?),
            AgentKind::Sac => {
                let belief = match delay {
                    Some(_) => Some(load_belief(cfg, &env, seed, cfg.belief)?),
                    None => None,
                };
                let tcfg = TrainAgentConfig {
                    learning_starts: cfg.learning_starts,
                    buffer_capacity: cfg.buffer_capacity,
                    eval_every: cfg.eval_every,
                    eval_episodes: cfg.eval_episodes,
                    horizon: cfg.horizon,
                    ..TrainAgentConfig::new(cfg.sac_config(), delay, n, cfg.agent_steps, seed)
                };
                let run = train_agent(&env, belief.as_ref(), &tcfg)?;
                checkpoint::save(&run.agent.checkpoint()?, dir.join("agent.bin"))?;
                run.curve
            }
        };
        write(&dir.join("curve.csv"), &curve.to_csv())?;
        let mut seed_cfg = for_seed(cfg, seed, &dir);
        seed_cfg.n_steps = vec![n];
        seed_cfg.write_manifest(&dir, "train-agent")?;
        Ok(curve.final_return())
    })?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut table = String::from("N\treturn\n");
    for (k, &n) in cfg.n_steps.iter().enumerate() {
        let finals: Option<Vec<f64>> = curves[k * cfg.seeds.len()..(k + 1) * cfg.seeds.len()].iter().copied().collect();
        match finals {
            Some(xs) => {
                let (m, s) = mean_std(&xs);
                let _ = writeln!(summary, "{n},{m:.10e},{s:.10e},{}", xs.len());
                let _ = writeln!(table, "{n}\t{m:.2} ± {s:.2}");
            }
            None => {
                let _ = writeln!(summary, "{n},,,{}", cfg.seeds.len());
                let _ = writeln!(table, "{n}\t-");
            }
        }
    }
    write(&cfg.out.join("summary.csv"), &summary)?;
    write(&cfg.out.join("table.txt"), &table)?;
    cfg.write_manifest(&cfg.out, "train-agent")
}

/// Manifest pairs of a run directory.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::invalid(format!("no manifest in {}: {e}", dir.display())))?;
    let pairs = super::config::parse_pairs(&text)?;
    let schema = pairs.iter().find(|(k, _)| k == "schema").map(|(_, v)| v.as_str());
    if schema != Some(&super::config::SCHEMA.to_string()) {
        return Err(Error::invalid(format!("{} has manifest schema {schema:?}", path.display())));
    }
    Ok(pairs)
}

pub fn manifest_value<'a>(pairs: &'a [(String, String)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::invalid(format!("manifest lacks `{key}`")))
}

/// Resolved config of a finished `train-agent` run.
fn run_config(dir: &Path) -> Result<RunConfig> {
    let pairs = read_manifest(dir)?;
    if manifest_value(&pairs, "command")? != "train-agent" {
        return Err(Error::invalid(format!("{} is not a train-agent run", dir.display())));
    }
    let pairs: Vec<_> =
        pairs.into_iter().filter(|(k, _)| !["schema", "command", "version"].contains(&k.as_str())).collect();
    RunConfig::resolve(&pairs)
}

fn final_return(curve_path: &Path) -> Result<f64> {
    let t = Table::read(curve_path)?;
    let col = t.column("mean_return")?;
    let last = t.rows.last().ok_or_else(|| Error::invalid(format!("{} is empty", curve_path.display())))?;
    csv::number(&last[col])
}

/// Mean final return over every seed of a single-N run.
fn anchor(dir: &Path) -> Result<(f64, RunConfig)> {
    let cfg = run_config(dir)?;
    let [n] = cfg.n_steps[..] else {
        return Err(Error::invalid(format!("anchor run {} has several N values", dir.display())));
    };
    let finals: Vec<f64> = cfg
        .seeds
        .iter()
        .map(|&s| final_return(&seed_dir(&n_dir(dir, n), s).join("curve.csv")))
        .collect::<Result<_>>()?;
    Ok((mean_std(&finals).0, cfg))
}

pub const NORMALIZED_HEADER: &str = "n_step,seed,final_return,normalized";
pub const NORMALIZED_SUMMARY_HEADER: &str = "n_step,mean_return,std_return,mean_normalized,std_normalized,n_seeds";

pub fn eval_agent(cfg: &RunConfig) -> Result<()> {
    let need = |p: &Option<PathBuf>, key: &str| p.clone().ok_or_else(|| Error::invalid(format!("`{key}` is not set")));
    let run_dir = need(&cfg.run_dir, "run_dir")?;
    let (r_random, rand_cfg) = anchor(&need(&cfg.anchor_random, "anchor_random")?)?;
    let (r_sac, sac_cfg) = anchor(&need(&cfg.anchor_sac, "anchor_sac")?)?;
    let run = run_config(&run_dir)?;
    for other in [&rand_cfg, &sac_cfg] {
        if other.env_config() != run.env_config() {
            return Err(Error::invalid(format!("anchor env {} does not match run env {}", other.env, run.env)));
        }
    }
    let mut per_seed = format!("{NORMALIZED_HEADER}\n");
    let mut summary = format!("{NORMALIZED_SUMMARY_HEADER}\n");
    let mut table = format!("R_random = {r_random:.2}, R_sac = {r_sac:.2}\nN\treturn\tnormalized\n");
    for &n in &run.n_steps {
        let (mut rets, mut norms) = (Vec::new(), Vec::new());
        for &s in &run.seeds {
            let r = final_return(&seed_dir(&n_dir(&run_dir, n), s).join("curve.csv"))?;
            let z = crate::agent::normalized_return(r, r_sac, r_random)?;
            let _ = writeln!(per_seed, "{n},{s},{r:.10e},{z:.10e}");
            rets.push(r);
            norms.push(z);
        }
        let (rm, rs) = mean_std(&rets);
        let (zm, zs) = mean_std(&norms);
        let _ = writeln!(summary, "{n},{rm:.10e},{rs:.10e},{zm:.10e},{zs:.10e},{}", rets.len());
        let _ = writeln!(table, "{n}\t{rm:.2} ± {rs:.2}\t{zm:.3} ± {zs:.3}");
    }
    write(&cfg.out.join("normalized.csv"), &per_seed)?;
    write(&cfg.out.join("normalized_summary.csv"), &summary)?;
    write(&cfg.out.join("table.txt"), &table)?;
    cfg.write_manifest(&cfg.out, "eval-agent")
}

fn theory_system(cfg: &RunConfig) -> Result<(LipschitzSystem, Vec<usize>)> {
    let (sys, deltas) = match cfg.system.as_str() {
        "expansive" => (LipschitzSystem::scalar(1.2, cfg.bias), (1..=20).collect()),
        "contraction" => (LipschitzSystem::scalar(0.5, cfg.bias), (1..=128).collect()),
        "exact" => (LipschitzSystem::scalar(1.2, 0.0), (1..=20).collect()),
        "mass_spring_damper" => {
            let env = Env::new(crate::envs::EnvConfig::new(crate::envs::EnvId::MassSpringDamper).with_stiffness(cfg.stiffness))?;
            (LipschitzSystem::mass_spring_damper(&env, &[cfg.bias, cfg.bias])?, (1..=32).collect())
        }
        other => {
            return Err(Error::invalid(format!(
                "system `{other}` (expected expansive, contraction, exact or mass_spring_damper)"
            )))
        }
    };
    Ok((sys, cfg.deltas.clone().unwrap_or(deltas)))
}

pub fn theory(cfg: &RunConfig) -> Result<()> {
    let (sys, deltas) = theory_system(cfg)?;
    if cfg.n_rollouts == 0 || deltas.is_empty() {
        return Err(Error::invalid("theory needs rollouts and delays"));
    }
    let reports = par_map(&cfg.seeds, |&seed| {
        let dir = seed_dir(&cfg.out, seed);
        let rep = measure_rollout_errors(&sys, &deltas, cfg.n_rollouts, seed, cfg.bound_scale)?;
        write(&dir.join("bound.csv"), &rep.to_csv())?;
        for_seed(cfg, seed, &dir).write_manifest(&dir, "theory")?;
        Ok(rep)
    })?;
    let rows = (0..deltas.len())
        .map(|i| {
            let worst = reports
                .iter()
                .map(|r| &r.rows[i])
                .max_by(|a, b| a.measured_recursive.partial_cmp(&b.measured_recursive).expect("finite errors"))
                .expect("at least one seed");
            worst.clone()
        })
        .collect();
    let merged = BoundReport { rows };
    write(&cfg.out.join("bound.csv"), &merged.to_csv())?;
    cfg.write_manifest(&cfg.out, "theory")?;
    let bad = merged.violations();
    if !bad.is_empty() {
        return Err(Error::BoundViolation(format!("{}: measured error exceeds the bound at delta {bad:?}", sys.name)));
    }
    Ok(())
}
