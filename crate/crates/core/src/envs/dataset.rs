//! Offline trajectory datasets and their binary container.
//!
//! Layout (little endian): `b"DBTJ"`, `u32` version, the environment config
//! (`u32`-prefixed id string, `f64` noise_prob, noise_scale, stiffness, `u8`
//! degenerate_init), spec snapshot (`u32` state_dim, action_dim, horizon,
//! `f64` gamma), `u64` trajectory count, then per trajectory: `u64` seed,
//! `u32`-prefixed label, `u64` record count and packed records
//! (state, action, reward, next_state as `f64`, `u8` done, `u8` truncated,
//! `u64` step).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use super::controllers::{expert_policy, medium_policy, random_policy, BoxedPolicy};
use super::{rollout, Env, EnvConfig, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::numcore::rng::RngStreams;

pub const MAGIC: &[u8; 4] = b"DBTJ";
pub const VERSION: u32 = 1;

type PolicyFactory = Box<dyn Fn(u64) -> BoxedPolicy>;

/// Weighted, labelled policies. Each trajectory picks one entry with
/// probability proportional to its weight; the factory receives the
/// trajectory seed.
#[derive(Default)]
pub struct PolicyMix {
    entries: Vec<(String, f64, PolicyFactory)>,
}

impl PolicyMix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, label: &str, weight: f64, make: impl Fn(u64) -> BoxedPolicy + 'static) -> Self {
        self.entries.push((label.to_string(), weight, Box::new(make)));
        self
    }

    /// `random`, `medium` and `expert` built from the scripted controllers.
    pub fn scripted(env: &Env, weights: &[(&str, f64)]) -> Result<Self> {
        let mut mix = Self::new();
        for &(label, w) in weights {
            let e = env.clone();
            mix = match label {
                "random" => mix.with(label, w, move |s| random_policy(&e, RngStreams::new(s).stream("policy"))),
                "medium" => mix.with(label, w, move |s| medium_policy(&e, RngStreams::new(s).stream("policy"))),
                "expert" => mix.with(label, w, move |_| expert_policy(&e)),
                other => return Err(Error::invalid(format!("unknown policy label `{other}`"))),
            };
        }
        Ok(mix)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.0.as_str()).collect()
    }

    fn validate(&self) -> Result<f64> {
        let total: f64 = self.entries.iter().map(|e| e.1).sum();
        if self.entries.is_empty() || self.entries.iter().any(|e| !(e.1 >= 0.0)) || !(total > 0.0) {
            return Err(Error::invalid("policy mix needs nonnegative weights with a positive sum"));
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env: EnvConfig,
    pub trajectories: Vec<Trajectory>,
}

/// Collects exactly `n_transitions` transitions. The last trajectory is cut
/// short (and marked truncated) when the budget runs out mid-episode.
pub fn collect_dataset(env: &Env, mix: &PolicyMix, n_transitions: usize, seed: u64) -> Result<Dataset> {
    if n_transitions == 0 {
        return Err(Error::invalid("n_transitions must be positive"));
    }
    let total = mix.validate()?;
    let streams = RngStreams::new(seed);
    let mut seeds = streams.stream("dataset.seeds");
    let mut picks = streams.stream("dataset.labels");
    let mut trajectories = Vec::new();
    let mut remaining = n_transitions;
    while remaining > 0 {
        let mut x = picks.random::<f64>() * total;
        let entry = mix
            .entries
            .iter()
            .find(|e| {
                x -= e.1;
                x < 0.0 && e.1 > 0.0
            })
            .unwrap_or_else(|| mix.entries.iter().rev().find(|e| e.1 > 0.0).expect("positive weight"));
        let traj_seed: u64 = seeds.random();
        let mut policy = (entry.2)(traj_seed);
        let horizon = remaining.min(env.spec().horizon);
        let mut traj = rollout(env, &mut *policy, horizon, traj_seed)?;
        traj.label = entry.0.clone();
        remaining -= traj.len();
        trajectories.push(traj);
    }
    Ok(Dataset { env: env.config().clone(), trajectories })
}

impl Dataset {
    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for t in &self.trajectories {
            *out.entry(t.label.clone()).or_default() += t.len();
        }
        out
    }

    pub fn build_env(&self) -> Result<Env> {
        Env::new(self.env.clone())
    }

    /// Splits off every `k`-th trajectory (k ≥ 2) as a held-out set.
    pub fn split_every(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.max(2);
        let (mut train, mut held) = (Vec::new(), Vec::new());
        for (i, t) in self.trajectories.iter().enumerate() {
            if i % k == k - 1 {
                held.push(t.clone());
            } else {
                train.push(t.clone());
            }
        }
        (Dataset { env: self.env.clone(), trajectories: train }, Dataset { env: self.env.clone(), trajectories: held })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let env = self.build_env()?;
        let spec = env.spec();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, self.env.id.name())?;
        for v in [self.env.noise_prob, self.env.noise_scale, self.env.stiffness] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[u8::from(self.env.degenerate_init)])?;
        for v in [spec.state_dim, spec.action_dim, spec.horizon] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&spec.gamma.to_le_bytes())?;
        w.write_all(&(self.trajectories.len() as u64).to_le_bytes())?;
        for traj in &self.trajectories {
            w.write_all(&traj.seed.to_le_bytes())?;
            write_str(w, &traj.label)?;
            w.write_all(&(traj.len() as u64).to_le_bytes())?;
            for t in &traj.transitions {
                for v in t.state.iter().chain(&t.action).chain([&t.reward]).chain(&t.next_state) {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&[u8::from(t.done), u8::from(t.truncated)])?;
                w.write_all(&(t.step as u64).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if &take::<4, _>(r)? != MAGIC {
            return Err(Error::Format("not a DBTJ dataset".into()));
        }
        let version = u32::from_le_bytes(take(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let id = read_str(r)?.parse()?;
        let noise_prob = f64::from_le_bytes(take(r)?);
        let noise_scale = f64::from_le_bytes(take(r)?);
        let stiffness = f64::from_le_bytes(take(r)?);
        let degenerate_init = take::<1, _>(r)?[0] != 0;
        let env = EnvConfig { id, noise_prob, noise_scale, stiffness, degenerate_init };
        let sd = u32::from_le_bytes(take(r)?) as usize;
        let ad = u32::from_le_bytes(take(r)?) as usize;
        let _horizon = u32::from_le_bytes(take(r)?);
        let _gamma = f64::from_le_bytes(take(r)?);
        let built = Env::new(env.clone())?;
        if built.state_dim() != sd || built.action_dim() != ad {
            return Err(Error::Format(format!("spec snapshot ({sd}, {ad}) does not match {id}")));
        }
        let n_traj = u64::from_le_bytes(take(r)?) as usize;
        let mut trajectories = Vec::with_capacity(n_traj.min(1 << 20));
        for _ in 0..n_traj {
            let seed = u64::from_le_bytes(take(r)?);
            let label = read_str(r)?;
            let n = u64::from_le_bytes(take(r)?) as usize;
            let mut transitions = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let mut f = |k: usize| (0..k).map(|_| Ok(f64::from_le_bytes(take(r)?))).collect::<Result<Vec<_>>>();
                let state = f(sd)?;
                let action = f(ad)?;
                let reward = f(1)?[0];
                let next_state = f(sd)?;
                let flags = take::<2, _>(r)?;
                let step = u64::from_le_bytes(take(r)?) as usize;
                transitions.push(Transition {
                    state,
                    action,
                    reward,
                    next_state,
                    done: flags[0] != 0,
                    truncated: flags[1] != 0,
                    step,
                });
            }
            trajectories.push(Trajectory { seed, label, transitions });
        }
        Ok(Self { env, trajectories })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// One JSON object per transition, tagged with trajectory index and label.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for (i, traj) in self.trajectories.iter().enumerate() {
            for t in &traj.transitions {
                let line = serde_json::json!({
                    "trajectory": i,
                    "seed": traj.seed,
                    "label": traj.label,
                    "transition": t,
                });
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated dataset: {e}")))?;
    Ok(buf)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = u32::from_le_bytes(take(r)?) as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated string: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;

    #[test]
    fn exact_count_and_roundtrip() {
        let env = Env::new(EnvConfig::new(EnvId::MassSpringDamper)).unwrap();
        let mix = PolicyMix::scripted(&env, &[("random", 1.0), ("expert", 1.0)]).unwrap();
        let ds = collect_dataset(&env, &mix, 450, 5).unwrap();
        assert_eq!(ds.n_transitions(), 450);
        assert!(ds.trajectories.iter().all(|t| t.validate().is_ok()));
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(Dataset::read_from(&mut buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn bad_mix_rejected() {
        let env = Env::by_name("pendulum").unwrap();
        assert!(PolicyMix::scripted(&env, &[("oracle", 1.0)]).is_err());
        let mix = PolicyMix::scripted(&env, &[("random", 0.0)]).unwrap();
        assert!(collect_dataset(&env, &mix, 10, 0).is_err());
    }
}
