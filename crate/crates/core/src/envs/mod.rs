//! Self-contained continuous-control environments and trajectory collection.

pub mod controllers;
pub mod dataset;
pub mod systems;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::{normal_vec, uniform, RngStreams, StreamRng};
use systems::LinearOscillator;

pub use dataset::{collect_dataset, Dataset, PolicyMix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Pendulum,
    MassSpringDamper,
    PointMassReach,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::Pendulum, EnvId::MassSpringDamper, EnvId::PointMassReach];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::MassSpringDamper => "mass_spring_damper",
            EnvId::PointMassReach => "point_mass_reach",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

/// Everything needed to rebuild an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub id: EnvId,
    pub noise_prob: f64,
    pub noise_scale: f64,
    /// Spring constant of `mass_spring_damper`; ignored elsewhere.
    pub stiffness: f64,
    /// Start `mass_spring_damper` at exactly `[1, 0]`.
    pub degenerate_init: bool,
}

pub const DEFAULT_STIFFNESS: f64 = 2.0;

impl EnvConfig {
    pub fn new(id: EnvId) -> Self {
        Self { id, noise_prob: 0.0, noise_scale: 0.1, stiffness: DEFAULT_STIFFNESS, degenerate_init: false }
    }

    pub fn with_noise(mut self, prob: f64, scale: f64) -> Self {
        self.noise_prob = prob;
        self.noise_scale = scale;
        self
    }

    pub fn with_stiffness(mut self, k: f64) -> Self {
        self.stiffness = k;
        self
    }

    pub fn with_degenerate_init(mut self, on: bool) -> Self {
        self.degenerate_init = on;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
    pub noise_prob: f64,
    pub noise_scale: f64,
    pub reward_low: f64,
    pub reward_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True termination (not horizon truncation).
    pub terminal: bool,
    /// Whether Gaussian noise was added to `next_state`.
    pub noised: bool,
}

#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    spec: EnvSpec,
    oscillator: Option<LinearOscillator>,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.noise_prob) || config.noise_scale < 0.0 {
            return Err(Error::invalid(format!(
                "noise_prob {} / noise_scale {}",
                config.noise_prob, config.noise_scale
            )));
        }
        let (state_dim, action_dim, bound, (reward_low, reward_high)) = match config.id {
            EnvId::Pendulum => (3, 1, systems::PENDULUM_MAX_TORQUE, systems::pendulum_reward_bounds()),
            EnvId::MassSpringDamper => (2, 1, 1.0, (systems::MSD_REWARD_FLOOR, 0.0)),
            EnvId::PointMassReach => (4, 2, 1.0, systems::point_mass_reward_bounds()),
        };
        let oscillator = match config.id {
            EnvId::MassSpringDamper => {
                if !(config.stiffness > 0.0) {
                    return Err(Error::invalid(format!("stiffness {}", config.stiffness)));
                }
                Some(LinearOscillator::new(config.stiffness))
            }
            _ => None,
        };
        let spec = EnvSpec {
            state_dim,
            action_dim,
            action_low: vec![-bound; action_dim],
            action_high: vec![bound; action_dim],
            gamma: 0.99,
            horizon: 200,
            noise_prob: config.noise_prob,
            noise_scale: config.noise_scale,
            reward_low,
            reward_high,
        };
        Ok(Self { config, spec, oscillator })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::new(EnvConfig::new(name.parse()?))
    }

    pub fn id(&self) -> EnvId {
        self.config.id
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    /// The linear map of `mass_spring_damper`.
    pub fn oscillator(&self) -> Option<&LinearOscillator> {
        self.oscillator.as_ref()
    }

    /// Initial state, deterministic per seed.
    pub fn reset(&self, seed: u64) -> Vec<f64> {
        let mut rng = RngStreams::new(seed).stream("env.reset");
        match self.config.id {
            EnvId::Pendulum => {
                let th = uniform(&mut rng, -PI, PI);
                let thdot = uniform(&mut rng, -1.0, 1.0);
                vec![th.cos(), th.sin(), thdot]
            }
            EnvId::MassSpringDamper if self.config.degenerate_init => vec![1.0, 0.0],
            EnvId::MassSpringDamper => vec![uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)],
            EnvId::PointMassReach => {
                vec![uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0), 0.0, 0.0]
            }
        }
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.spec.action_low.iter().zip(&self.spec.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    fn check(&self, state: &[f64], action: &[f64]) -> Result<()> {
        if state.len() != self.spec.state_dim || action.len() != self.spec.action_dim {
            return Err(Error::shape(
                "env_step",
                format!("state {} / action {} for {}", state.len(), action.len(), self.config.id),
            ));
        }
        if state.iter().chain(action).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("env_step input".into()));
        }
        Ok(())
    }

    /// Noise-free transition: `(next_state, reward, terminal)`. The action
    /// is clipped to bounds first.
    pub fn dynamics(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        self.check(state, action)?;
        let u = self.clip_action(action);
        Ok(match self.config.id {
            EnvId::Pendulum => {
                let (s, r) = systems::pendulum(state, u[0]);
                (s, r, false)
            }
            EnvId::MassSpringDamper => {
                let osc = self.oscillator.as_ref().expect("built in new");
                let r = systems::msd_reward(state, u[0]);
                (osc.apply(state, u[0]), r, false)
            }
            EnvId::PointMassReach => systems::point_mass(state, &u),
        })
    }

    /// One environment step. With probability `noise_prob` the next state is
    /// perturbed by `N(0, noise_scale²)` in every coordinate.
    pub fn step(&self, state: &[f64], action: &[f64], rng: &mut StreamRng) -> Result<StepOutcome> {
        let (mut next_state, reward, terminal) = self.dynamics(state, action)?;
        let noised = self.spec.noise_prob > 0.0 && uniform(rng, 0.0, 1.0) < self.spec.noise_prob;
        if noised {
            let z = normal_vec(rng, next_state.len());
            for (s, z) in next_state.iter_mut().zip(z) {
                *s += self.spec.noise_scale * z;
            }
        }
        Ok(StepOutcome { next_state, reward, terminal, noised })
    }

    /// Starts an episode whose reset and step noise derive from `seed`.
    pub fn episode(&self, seed: u64) -> Episode {
        Episode {
            env: self.clone(),
            state: self.reset(seed),
            t: 0,
            rng: RngStreams::new(seed).stream("env.step"),
            done: false,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal or truncated.
    pub done: bool,
    /// Ended by the horizon rather than by the task.
    pub truncated: bool,
    pub step: usize,
}

impl Transition {
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

/// A running episode with horizon bookkeeping.
#[derive(Clone, Debug)]
pub struct Episode {
    env: Env,
    state: Vec<f64>,
    t: usize,
    rng: StreamRng,
    done: bool,
    seed: u64,
}

impl Episode {
    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Applies `action` (stored clipped) and returns the transition.
    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        let action = self.env.clip_action(action);
        let out = self.env.step(&self.state, &action, &mut self.rng)?;
        let truncated = !out.terminal && self.t + 1 >= self.env.spec.horizon;
        let tr = Transition {
            state: std::mem::replace(&mut self.state, out.next_state.clone()),
            action,
            reward: out.reward,
            next_state: out.next_state,
            done: out.terminal || truncated,
            truncated,
            step: self.t,
        };
        self.t += 1;
        self.done = tr.done;
        Ok(tr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub label: String,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// `len + 1` states: every `state` followed by the last `next_state`.
    pub fn states(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.transitions.iter().map(|t| t.state.as_slice()).collect();
        if let Some(last) = self.transitions.last() {
            out.push(&last.next_state);
        }
        out
    }

    pub fn state(&self, i: usize) -> &[f64] {
        if i < self.transitions.len() {
            &self.transitions[i].state
        } else {
            &self.transitions[i - 1].next_state
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// Chaining and termination invariants.
    pub fn validate(&self) -> Result<()> {
        for w in self.transitions.windows(2) {
            if w[0].next_state != w[1].state {
                return Err(Error::Format(format!("broken chain at step {}", w[0].step)));
            }
            if w[0].done {
                return Err(Error::Format(format!("done flag before the end at step {}", w[0].step)));
            }
        }
        Ok(())
    }
}

/// Runs `policy` for at most `horizon` steps (and never past the
/// environment's own horizon).
pub fn rollout<P>(env: &Env, policy: &mut P, horizon: usize, seed: u64) -> Result<Trajectory>
where
    P: FnMut(&[f64]) -> Vec<f64> + ?Sized,
{
    let mut ep = env.episode(seed);
    let mut transitions = Vec::new();
    while !ep.is_done() && transitions.len() < horizon {
        let a = policy(ep.state());
        if a.len() != env.action_dim() {
            return Err(Error::shape("rollout", format!("policy returned {} action values", a.len())));
        }
        let mut tr = ep.step(&a)?;
        if transitions.len() + 1 == horizon && !tr.done {
            tr.done = true;
            tr.truncated = true;
        }
        transitions.push(tr);
    }
    Ok(Trajectory { seed, label: String::new(), transitions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for id in EnvId::ALL {
            assert_eq!(id.name().parse::<EnvId>().unwrap(), id);
        }
        assert!(matches!("cartpole".parse::<EnvId>(), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn point_mass_rest_is_fixed_point() {
        let env = Env::by_name("point_mass_reach").unwrap();
        let (s, r, _) = env.dynamics(&[0.0; 4], &[0.0, 0.0]).unwrap();
        assert_eq!(s, vec![0.0; 4]);
        assert_eq!(r, -(2f64).sqrt());
    }

    #[test]
    fn rewards_stay_in_bounds() {
        for id in EnvId::ALL {
            let env = Env::new(EnvConfig::new(id)).unwrap();
            let mut rng = RngStreams::new(3).stream("policy");
            let mut pol = |_: &[f64]| (0..env.action_dim()).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
            let tr = rollout(&env, &mut pol, 200, 1).unwrap();
            let s = env.spec();
            assert!(tr.transitions.iter().all(|t| t.reward >= s.reward_low && t.reward <= s.reward_high));
        }
    }

    #[test]
    fn step_after_done_fails() {
        let env = Env::by_name("pendulum").unwrap();
        let mut ep = env.episode(0);
        for _ in 0..200 {
            ep.step(&[0.0]).unwrap();
        }
        assert!(matches!(ep.step(&[0.0]), Err(Error::EpisodeOver)));
    }
}
