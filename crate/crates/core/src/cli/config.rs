//! Run configuration: presets, a plain `key = value` file format and the
//! manifest echo.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::SacConfig;
use crate::belief::{BeliefKind, DfbtConfig, LossKind, RecursiveConfig, TrainConfig};
use crate::delay::{DelayKind, DelaySpec};
use crate::envs::{EnvConfig, EnvId, DEFAULT_STIFFNESS};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::invalid(format!("preset `{s}` (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

/// Behaviour policies for `medium`/`expert` dataset entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicySource {
    Scripted,
    Agent,
}

impl FromStr for PolicySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scripted" => Ok(PolicySource::Scripted),
            "agent" => Ok(PolicySource::Agent),
            _ => Err(Error::invalid(format!("policy_source `{s}`"))),
        }
    }
}

impl fmt::Display for PolicySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicySource::Scripted => "scripted",
            PolicySource::Agent => "agent",
        })
    }
}

/// What `train-agent` trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Sac,
    Random,
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(AgentKind::Sac),
            "random" => Ok(AgentKind::Random),
            _ => Err(Error::invalid(format!("agent `{s}`"))),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Sac => "sac",
            AgentKind::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub env: EnvId,
    pub stiffness: f64,
    pub noise_prob: f64,
    pub noise_scale: f64,
    /// `None` is the delay-free setting.
    pub delay: Option<DelayKind>,
    pub delta_max: usize,
    pub belief: BeliefKind,
    pub beliefs: Vec<BeliefKind>,
    pub loss: LossKind,
    pub n_steps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,

    pub dataset: Option<PathBuf>,
    pub dataset_size: usize,
    pub mix: Vec<(String, f64)>,
    pub policy_source: PolicySource,
    pub policy_checkpoint: Option<PathBuf>,
    pub holdout_every: usize,

    pub dfbt_hidden: usize,
    pub dfbt_layers: usize,
    pub dfbt_heads: usize,
    pub dfbt_ff_mult: usize,
    pub dfbt_dropout: f64,
    /// Delay distribution of the training windows.
    pub dfbt_train_delay: DelayKind,
    pub dfbt_epochs: usize,
    pub dfbt_steps_per_epoch: Option<usize>,
    pub dfbt_batch: usize,
    pub dfbt_lr: f64,
    pub dfbt_weight_decay: f64,
    pub dfbt_betas: (f64, f64),

    pub recursive_hidden: Vec<usize>,
    pub recursive_epochs: usize,
    pub recursive_steps_per_epoch: Option<usize>,
    pub recursive_batch: usize,
    pub recursive_lr: f64,
    pub recursive_weight_decay: f64,

    pub belief_dir: Option<PathBuf>,
    pub eval_stride: usize,

    pub agent: AgentKind,
    pub sac_hidden: Vec<usize>,
    pub sac_batch: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub actor_every: usize,
    pub autotune: bool,
    pub alpha_init: f64,
    pub twin: bool,
    pub strict_paper_sign: bool,
    pub agent_steps: usize,
    pub learning_starts: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub horizon: Option<usize>,

    pub run_dir: Option<PathBuf>,
    pub anchor_random: Option<PathBuf>,
    pub anchor_sac: Option<PathBuf>,

    pub system: String,
    pub deltas: Option<Vec<usize>>,
    pub n_rollouts: usize,
    pub bias: f64,
    /// Multiplies every bound in `theory`; anything but 1 is fault injection.
    pub bound_scale: f64,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let sac = match p {
            Preset::Desk => SacConfig::desk(),
            Preset::Paper => SacConfig::paper(),
        };
        let base = Self {
            preset: p,
            env: EnvId::Pendulum,
            stiffness: DEFAULT_STIFFNESS,
            noise_prob: 0.0,
            noise_scale: 0.1,
            delay: Some(DelayKind::Constant),
            delta_max: 8,
            belief: BeliefKind::Dfbt,
            beliefs: vec![BeliefKind::Dfbt, BeliefKind::Recursive],
            loss: LossKind::Mse,
            n_steps: vec![8],
            seeds: vec![0],
            out: PathBuf::from("out"),
            dataset: None,
            dataset_size: 50_000,
            mix: vec![("random".into(), 1.0), ("medium".into(), 1.0), ("expert".into(), 1.0)],
            policy_source: PolicySource::Scripted,
            policy_checkpoint: None,
            holdout_every: 10,
            dfbt_hidden: 256,
            dfbt_layers: 10,
            dfbt_heads: 4,
            dfbt_ff_mult: 4,
            dfbt_dropout: 0.1,
            dfbt_train_delay: DelayKind::Constant,
            dfbt_epochs: 1000,
            dfbt_steps_per_epoch: None,
            dfbt_batch: 256,
            dfbt_lr: 1e-4,
            dfbt_weight_decay: 1e-4,
            dfbt_betas: (0.9, 0.999),
            recursive_hidden: vec![256, 256],
            recursive_epochs: 1000,
            recursive_steps_per_epoch: None,
            recursive_batch: 256,
            recursive_lr: 1e-4,
            recursive_weight_decay: 1e-4,
            belief_dir: None,
            eval_stride: 1,
            agent: AgentKind::Sac,
            sac_hidden: sac.hidden,
            sac_batch: sac.batch_size,
            tau: sac.tau,
            actor_lr: sac.actor_lr,
            critic_lr: sac.critic_lr,
            alpha_lr: sac.alpha_lr,
            actor_every: sac.actor_every,
            autotune: sac.autotune,
            alpha_init: sac.alpha_init,
            twin: sac.twin,
            strict_paper_sign: sac.strict_paper_sign,
            agent_steps: 1_000_000,
            learning_starts: 5_000,
            buffer_capacity: 1_000_000,
            eval_every: 5_000,
            eval_episodes: 5,
            horizon: None,
            run_dir: None,
            anchor_random: None,
            anchor_sac: None,
            system: "expansive".into(),
            deltas: None,
            n_rollouts: 64,
            bias: 0.01,
            bound_scale: 1.0,
        };
        match p {
            Preset::Paper => Self { dataset_size: 1_000_000, ..base },
            Preset::Desk => Self {
                dfbt_hidden: 64,
                dfbt_layers: 2,
                dfbt_epochs: 10,
                dfbt_steps_per_epoch: Some(500),
                dfbt_batch: 32,
                dfbt_lr: 1e-3,
                recursive_epochs: 10,
                recursive_steps_per_epoch: Some(200),
                recursive_lr: 1e-3,
                recursive_weight_decay: 0.0,
                agent_steps: 100_000,
                ..base
            },
        }
    }

    /// Preset defaults, then `pairs` in order (later pairs win). The preset
    /// itself is the last `preset` pair, if any.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self> {
        let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((_, v)) => v.parse()?,
            None => Preset::Desk,
        };
        let mut cfg = Self::preset(preset);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.preset = v.parse()?,
            "env" => self.env = v.parse()?,
            "stiffness" => self.stiffness = num(key, v)?,
            "noise_prob" => self.noise_prob = num(key, v)?,
            "noise_scale" => self.noise_scale = num(key, v)?,
            "delay" => self.delay = if v == "none" { None } else { Some(v.parse()?) },
            "delta_max" => self.delta_max = num(key, v)?,
            "belief" => self.belief = v.parse()?,
            "beliefs" => self.beliefs = list(key, v)?,
            "loss" => self.loss = v.parse()?,
            "n_steps" => self.n_steps = list(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "dataset" => self.dataset = path(v),
            "dataset_size" => self.dataset_size = num(key, v)?,
            "mix" => self.mix = parse_mix(v)?,
            "policy_source" => self.policy_source = v.parse()?,
            "policy_checkpoint" => self.policy_checkpoint = path(v),
            "holdout_every" => self.holdout_every = num(key, v)?,
            "dfbt_hidden" => self.dfbt_hidden = num(key, v)?,
            "dfbt_layers" => self.dfbt_layers = num(key, v)?,
            "dfbt_heads" => self.dfbt_heads = num(key, v)?,
            "dfbt_ff_mult" => self.dfbt_ff_mult = num(key, v)?,
            "dfbt_dropout" => self.dfbt_dropout = num(key, v)?,
            "dfbt_train_delay" => self.dfbt_train_delay = v.parse()?,
            "dfbt_epochs" => self.dfbt_epochs = num(key, v)?,
            "dfbt_steps_per_epoch" => self.dfbt_steps_per_epoch = opt_num(key, v)?,
            "dfbt_batch" => self.dfbt_batch = num(key, v)?,
            "dfbt_lr" => self.dfbt_lr = num(key, v)?,
            "dfbt_weight_decay" => self.dfbt_weight_decay = num(key, v)?,
            "dfbt_betas" => {
                let b: Vec<f64> = list(key, v)?;
                if b.len() != 2 {
                    return Err(Error::invalid("dfbt_betas needs two values"));
                }
                self.dfbt_betas = (b[0], b[1]);
            }
            "recursive_hidden" => self.recursive_hidden = list(key, v)?,
            "recursive_epochs" => self.recursive_epochs = num(key, v)?,
            "recursive_steps_per_epoch" => self.recursive_steps_per_epoch = opt_num(key, v)?,
            "recursive_batch" => self.recursive_batch = num(key, v)?,
            "recursive_lr" => self.recursive_lr = num(key, v)?,
            "recursive_weight_decay" => self.recursive_weight_decay = num(key, v)?,
            "belief_dir" => self.belief_dir = path(v),
            "eval_stride" => self.eval_stride = num(key, v)?,
            "agent" => self.agent = v.parse()?,
            "sac_hidden" => self.sac_hidden = list(key, v)?,
            "sac_batch" => self.sac_batch = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "actor_lr" => self.actor_lr = num(key, v)?,
            "critic_lr" => self.critic_lr = num(key, v)?,
            "alpha_lr" => self.alpha_lr = num(key, v)?,
            "actor_every" => self.actor_every = num(key, v)?,
            "autotune" => self.autotune = num(key, v)?,
            "alpha_init" => self.alpha_init = num(key, v)?,
            "twin" => self.twin = num(key, v)?,
            "strict_paper_sign" => self.strict_paper_sign = num(key, v)?,
            "agent_steps" => self.agent_steps = num(key, v)?,
            "learning_starts" => self.learning_starts = num(key, v)?,
            "buffer_capacity" => self.buffer_capacity = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "horizon" => self.horizon = opt_num(key, v)?,
            "run_dir" => self.run_dir = path(v),
            "anchor_random" => self.anchor_random = path(v),
            "anchor_sac" => self.anchor_sac = path(v),
            "system" => self.system = v.to_string(),
            "deltas" => self.deltas = if v.is_empty() { None } else { Some(parse_deltas(v)?) },
            "n_rollouts" => self.n_rollouts = num(key, v)?,
            "bias" => self.bias = num(key, v)?,
            "bound_scale" => self.bound_scale = num(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in a fixed order; [`RunConfig::set`]
    /// accepts each pair back.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let o = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            ("preset", self.preset.to_string()),
            ("env", self.env.to_string()),
            ("stiffness", self.stiffness.to_string()),
            ("noise_prob", self.noise_prob.to_string()),
            ("noise_scale", self.noise_scale.to_string()),
            ("delay", self.delay.map(|d| d.to_string()).unwrap_or_else(|| "none".into())),
            ("delta_max", self.delta_max.to_string()),
            ("belief", self.belief.to_string()),
            ("beliefs", join(&self.beliefs)),
            ("loss", self.loss.to_string()),
            ("n_steps", join(&self.n_steps)),
            ("seeds", join(&self.seeds)),
            ("out", self.out.display().to_string()),
            ("dataset", p(&self.dataset)),
            ("dataset_size", self.dataset_size.to_string()),
            ("mix", self.mix.iter().map(|(l, w)| format!("{l}:{w}")).collect::<Vec<_>>().join(",")),
            ("policy_source", self.policy_source.to_string()),
            ("policy_checkpoint", p(&self.policy_checkpoint)),
            ("holdout_every", self.holdout_every.to_string()),
            ("dfbt_hidden", self.dfbt_hidden.to_string()),
            ("dfbt_layers", self.dfbt_layers.to_string()),
            ("dfbt_heads", self.dfbt_heads.to_string()),
            ("dfbt_ff_mult", self.dfbt_ff_mult.to_string()),
            ("dfbt_dropout", self.dfbt_dropout.to_string()),
            ("dfbt_train_delay", self.dfbt_train_delay.to_string()),
            ("dfbt_epochs", self.dfbt_epochs.to_string()),
            ("dfbt_steps_per_epoch", o(self.dfbt_steps_per_epoch)),
            ("dfbt_batch", self.dfbt_batch.to_string()),
            ("dfbt_lr", self.dfbt_lr.to_string()),
            ("dfbt_weight_decay", self.dfbt_weight_decay.to_string()),
            ("dfbt_betas", format!("{},{}", self.dfbt_betas.0, self.dfbt_betas.1)),
            ("recursive_hidden", join(&self.recursive_hidden)),
            ("recursive_epochs", self.recursive_epochs.to_string()),
            ("recursive_steps_per_epoch", o(self.recursive_steps_per_epoch)),
            ("recursive_batch", self.recursive_batch.to_string()),
            ("recursive_lr", self.recursive_lr.to_string()),
            ("recursive_weight_decay", self.recursive_weight_decay.to_string()),
            ("belief_dir", p(&self.belief_dir)),
            ("eval_stride", self.eval_stride.to_string()),
            ("agent", self.agent.to_string()),
            ("sac_hidden", join(&self.sac_hidden)),
            ("sac_batch", self.sac_batch.to_string()),
            ("tau", self.tau.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("alpha_lr", self.alpha_lr.to_string()),
            ("actor_every", self.actor_every.to_string()),
            ("autotune", self.autotune.to_string()),
            ("alpha_init", self.alpha_init.to_string()),
            ("twin", self.twin.to_string()),
            ("strict_paper_sign", self.strict_paper_sign.to_string()),
            ("agent_steps", self.agent_steps.to_string()),
            ("learning_starts", self.learning_starts.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("horizon", o(self.horizon)),
            ("run_dir", p(&self.run_dir)),
            ("anchor_random", p(&self.anchor_random)),
            ("anchor_sac", p(&self.anchor_sac)),
            ("system", self.system.clone()),
            ("deltas", self.deltas.as_ref().map(|d| join(d)).unwrap_or_default()),
            ("n_rollouts", self.n_rollouts.to_string()),
            ("bias", self.bias.to_string()),
            ("bound_scale", self.bound_scale.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_max == 0 {
            return Err(Error::invalid("delta_max must be positive"));
        }
        if self.n_steps.is_empty() || self.n_steps.iter().any(|&n| n == 0 || n > self.delta_max) {
            return Err(Error::invalid(format!("every N in {:?} must lie in 1..={}", self.n_steps, self.delta_max)));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.holdout_every < 2 || self.eval_stride == 0 || self.eval_every == 0 {
            return Err(Error::invalid("holdout_every ≥ 2, eval_stride ≥ 1 and eval_every ≥ 1 are required"));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) || !(self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_prob must lie in [0, 1] and noise_scale be nonnegative"));
        }
        if !(self.bound_scale > 0.0) {
            return Err(Error::invalid("bound_scale must be positive"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig::new(self.env).with_noise(self.noise_prob, self.noise_scale).with_stiffness(self.stiffness)
    }

    pub fn delay_spec(&self) -> Result<Option<DelaySpec>> {
        self.delay.map(|k| DelaySpec::new(k, self.delta_max)).transpose()
    }

    pub fn dfbt_config(&self, state_dim: usize, action_dim: usize) -> DfbtConfig {
        DfbtConfig {
            hidden: self.dfbt_hidden,
            layers: self.dfbt_layers,
            heads: self.dfbt_heads,
            ff_mult: self.dfbt_ff_mult,
            dropout: self.dfbt_dropout,
            loss: self.loss,
            ..DfbtConfig::paper(state_dim, action_dim, self.delta_max)
        }
    }

    pub fn dfbt_train(&self, seed: u64) -> TrainConfig {
        let mut t = TrainConfig::new(self.dfbt_epochs, self.dfbt_batch, self.dfbt_lr, seed)
            .with_weight_decay(self.dfbt_weight_decay);
        t.steps_per_epoch = self.dfbt_steps_per_epoch;
        t.betas = self.dfbt_betas;
        t
    }

    pub fn recursive_config(&self, state_dim: usize, action_dim: usize) -> RecursiveConfig {
        RecursiveConfig { hidden: self.recursive_hidden.clone(), loss: self.loss, ..RecursiveConfig::new(state_dim, action_dim) }
    }

    pub fn recursive_train(&self, seed: u64) -> TrainConfig {
        let mut t = TrainConfig::new(self.recursive_epochs, self.recursive_batch, self.recursive_lr, seed)
            .with_weight_decay(self.recursive_weight_decay);
        t.steps_per_epoch = self.recursive_steps_per_epoch;
        t
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden.clone(),
            batch_size: self.sac_batch,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            actor_every: self.actor_every,
            autotune: self.autotune,
            alpha_init: self.alpha_init,
            twin: self.twin,
            strict_paper_sign: self.strict_paper_sign,
        }
    }

    /// The manifest text: schema, command, then every resolved field.
    pub fn manifest(&self, command: &str) -> String {
        let mut s = format!("schema = {SCHEMA}\ncommand = {command}\nversion = {}\n", env!("CARGO_PKG_VERSION"));
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn write_manifest(&self, dir: &Path, command: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST), self.manifest(command))?;
        Ok(())
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    parse_pairs(&text)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn opt_num<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn parse_mix(v: &str) -> Result<Vec<(String, f64)>> {
    let mix: Vec<(String, f64)> = v
        .split(',')
        .map(|e| {
            let (l, w) = e.split_once(':').unwrap_or((e, "1"));
            Ok((l.trim().to_string(), num("mix", w.trim())?))
        })
        .collect::<Result<_>>()?;
    if mix.is_empty() || mix.iter().any(|(l, _)| !["random", "medium", "expert"].contains(&l.as_str())) {
        return Err(Error::invalid(format!("mix `{v}`: labels are random, medium and expert")));
    }
    Ok(mix)
}

/// `1,2,8` or an inclusive range `1..20`.
fn parse_deltas(v: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (usize, usize) = (num("deltas", a.trim())?, num("deltas", b.trim())?);
        if a == 0 || b < a {
            return Err(Error::invalid(format!("deltas range `{v}`")));
        }
        return Ok((a..=b).collect());
    }
    list("deltas", v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_through_set() {
        for p in [Preset::Desk, Preset::Paper] {
            let mut cfg = RunConfig::preset(p);
            cfg.deltas = Some(vec![1, 2, 3]);
            cfg.horizon = Some(50);
            cfg.dataset = Some("d.bin".into());
            cfg.delay = None;
            let pairs: Vec<_> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            assert_eq!(RunConfig::resolve(&pairs).unwrap(), cfg);
        }
    }

    #[test]
    fn later_pairs_win_and_preset_applies_first() {
        let pairs = parse_pairs("dfbt_lr = 0.5\n# comment\npreset = paper\n\ndfbt_lr = 0.25 # trailing\n").unwrap();
        let cfg = RunConfig::resolve(&pairs).unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.dfbt_lr, 0.25);
        assert_eq!(cfg.dfbt_layers, 10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_pairs("no equals sign").is_err());
        let bad = |k: &str, v: &str| RunConfig::resolve(&[(k.to_string(), v.to_string())]).is_err();
        assert!(bad("unknown_key", "1"));
        assert!(bad("n_steps", "9"));
        assert!(bad("delta_max", "x"));
        assert!(bad("mix", "random:1,bogus:2"));
        assert!(bad("seeds", "1,1"));
        assert!(bad("deltas", "5..2"));
    }

    #[test]
    fn deltas_accept_ranges() {
        assert_eq!(parse_deltas("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_deltas("2, 8").unwrap(), vec![2, 8]);
    }
}
