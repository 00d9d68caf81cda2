//! Observation delays: the delayed-environment wrapper, augmented states and
//! their token encoding.
//!
//! Time is tracked on an absolute index `k` over the true state sequence.
//! Reset executes `delta_max` zero padding actions from the initial state, so
//! the agent's `t`-th action is applied at `k = t + delta_max` and the true
//! current state is `S[t + delta_max]`. The agent observes `S[p]` for a
//! pointer `p` that never moves backwards; the effective delay is
//! `t + delta_max − p`.

mod window;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::envs::{Env, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::numcore::rng::{RngStreams, StreamRng};

pub use window::{full_window_count, window_at, window_extract, ReplayWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayKind {
    Constant,
    Uniform,
}

impl FromStr for DelayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(DelayKind::Constant),
            "uniform" => Ok(DelayKind::Uniform),
            _ => Err(Error::invalid(format!("delay kind `{s}`"))),
        }
    }
}

impl fmt::Display for DelayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DelayKind::Constant => "constant",
            DelayKind::Uniform => "uniform",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelaySpec {
    pub kind: DelayKind,
    pub delta_max: usize,
}

impl DelaySpec {
    pub fn constant(delta: usize) -> Result<Self> {
        Self::new(DelayKind::Constant, delta)
    }

    pub fn uniform(delta_max: usize) -> Result<Self> {
        Self::new(DelayKind::Uniform, delta_max)
    }

    pub fn new(kind: DelayKind, delta_max: usize) -> Result<Self> {
        if delta_max < 1 {
            return Err(Error::invalid("delta_max must be at least 1"));
        }
        Ok(Self { kind, delta_max })
    }

    /// Draws the delay of one step.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.kind {
            DelayKind::Constant => self.delta_max,
            DelayKind::Uniform => rng.random_range(1..=self.delta_max),
        }
    }

    /// Probabilities of delays `1..=delta_max`.
    pub fn distribution(&self) -> Vec<f64> {
        match self.kind {
            DelayKind::Constant => {
                let mut p = vec![0.0; self.delta_max];
                p[self.delta_max - 1] = 1.0;
                p
            }
            DelayKind::Uniform => vec![1.0 / self.delta_max as f64; self.delta_max],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub anchor_state: Vec<f64>,
    pub action_queue: Vec<Vec<f64>>,
    pub reward_queue: Vec<f64>,
    pub effective_delay: usize,
    /// Agent time (number of actions submitted so far).
    pub t: usize,
}

impl AugmentedState {
    pub fn validate(&self) -> Result<()> {
        if self.action_queue.len() != self.effective_delay || self.reward_queue.len() != self.effective_delay {
            return Err(Error::invalid(format!(
                "queues of length {}/{} for effective delay {}",
                self.action_queue.len(),
                self.reward_queue.len(),
                self.effective_delay
            )));
        }
        Ok(())
    }
}

/// The augmented state at `t = 0`: anchor `s0`, `delta_max` zero actions
/// and zero rewards.
pub fn initial_augmentation(s0: &[f64], action_dim: usize, spec: &DelaySpec) -> AugmentedState {
    AugmentedState {
        anchor_state: s0.to_vec(),
        action_queue: vec![vec![0.0; action_dim]; spec.delta_max],
        reward_queue: vec![0.0; spec.delta_max],
        effective_delay: spec.delta_max,
        t: 0,
    }
}

/// Fixed-width token encoding of an augmented state.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    /// `delta_max × width`, row-major; rows past the mask are zero.
    pub tokens: Vec<f64>,
    pub mask: Vec<bool>,
    pub positions: Vec<usize>,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl TokenSequence {
    pub fn width(&self) -> usize {
        self.state_dim + self.action_dim + 1
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.tokens[i * w..(i + 1) * w]
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

pub fn tokenize(aug: &AugmentedState, delta_max: usize) -> Result<TokenSequence> {
    aug.validate()?;
    if aug.effective_delay > delta_max || aug.effective_delay == 0 {
        return Err(Error::OutOfRange(format!(
            "effective delay {} with delta_max {delta_max}",
            aug.effective_delay
        )));
    }
    let sd = aug.anchor_state.len();
    let ad = aug.action_queue.first().map_or(0, Vec::len);
    Ok(build_tokens(&aug.anchor_state, &aug.action_queue, &aug.reward_queue, delta_max, sd, ad))
}

pub(crate) fn build_tokens<A: AsRef<[f64]>>(
    anchor: &[f64],
    actions: &[A],
    rewards: &[f64],
    delta_max: usize,
    state_dim: usize,
    action_dim: usize,
) -> TokenSequence {
    let w = state_dim + action_dim + 1;
    let mut tokens = vec![0.0; delta_max * w];
    for (i, (a, r)) in actions.iter().zip(rewards).enumerate() {
        let row = &mut tokens[i * w..(i + 1) * w];
        row[..state_dim].copy_from_slice(anchor);
        row[state_dim..state_dim + action_dim].copy_from_slice(a.as_ref());
        row[w - 1] = *r;
    }
    let n = actions.len();
    TokenSequence {
        tokens,
        mask: (0..delta_max).map(|i| i < n).collect(),
        positions: (0..delta_max).collect(),
        state_dim,
        action_dim,
    }
}

/// Inverse of [`tokenize`] (the time index is not encoded and comes back 0).
pub fn detokenize(seq: &TokenSequence) -> Result<AugmentedState> {
    let n = seq.n_valid();
    if n == 0 || seq.mask.iter().take(n).any(|m| !m) {
        return Err(Error::invalid("mask must be a nonempty prefix"));
    }
    let sd = seq.state_dim;
    let ad = seq.action_dim;
    Ok(AugmentedState {
        anchor_state: seq.token(0)[..sd].to_vec(),
        action_queue: (0..n).map(|i| seq.token(i)[sd..sd + ad].to_vec()).collect(),
        reward_queue: (0..n).map(|i| seq.token(i)[sd + ad]).collect(),
        effective_delay: n,
        t: 0,
    })
}

/// A delay-free environment seen through an observation delay. The true
/// state sequence is privileged: exposed for training code and tests.
#[derive(Clone, Debug)]
pub struct DelayedEnv {
    env: Env,
    spec: DelaySpec,
    horizon: usize,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    pointer: usize,
    t: usize,
    terminal: bool,
    truncated: bool,
    seed: u64,
    step_rng: StreamRng,
    delay_rng: StreamRng,
}

impl DelayedEnv {
    pub fn new(env: Env, spec: DelaySpec) -> Result<Self> {
        let spec = DelaySpec::new(spec.kind, spec.delta_max)?;
        let horizon = env.spec().horizon;
        let mut out = Self {
            env,
            spec,
            horizon,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            pointer: 0,
            t: 0,
            terminal: false,
            truncated: false,
            seed: 0,
            step_rng: RngStreams::new(0).stream("env.step"),
            delay_rng: RngStreams::new(0).stream("delay"),
        };
        out.reset(0)?;
        Ok(out)
    }

    /// Overrides the episode length in agent steps.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn delay_spec(&self) -> &DelaySpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.terminal || self.truncated
    }

    fn padding(&self) -> usize {
        self.spec.delta_max
    }

    pub fn reset(&mut self, seed: u64) -> Result<AugmentedState> {
        let streams = RngStreams::new(seed);
        self.seed = seed;
        self.step_rng = streams.stream("env.step");
        self.delay_rng = streams.stream("delay");
        let s0 = self.env.reset(seed);
        self.states = vec![s0];
        self.actions.clear();
        self.rewards.clear();
        self.pointer = 0;
        self.t = 0;
        self.terminal = false;
        self.truncated = false;
        let pad = vec![0.0; self.env.action_dim()];
        for _ in 0..self.padding() {
            let out = self.env.step(self.states.last().expect("nonempty"), &pad, &mut self.step_rng)?;
            self.states.push(out.next_state);
            self.actions.push(pad.clone());
            self.rewards.push(0.0);
            if out.terminal {
                // terminal during padding: the episode still starts, ending on the first step
                self.terminal = true;
            }
        }
        Ok(self.augmented())
    }

    /// Current observation of the agent.
    pub fn augmented(&self) -> AugmentedState {
        let now = self.t + self.padding();
        AugmentedState {
            anchor_state: self.states[self.pointer].clone(),
            action_queue: self.actions[self.pointer..now].to_vec(),
            reward_queue: self.rewards[self.pointer..now].to_vec(),
            effective_delay: now - self.pointer,
            t: self.t,
        }
    }

    pub fn tokens(&self) -> TokenSequence {
        tokenize(&self.augmented(), self.spec.delta_max).expect("wrapper keeps queues consistent")
    }

    /// Advances the true environment by `action` and reveals new observations.
    /// Returns the next augmented state, the rewards of the transitions whose
    /// outcome was revealed by this step, and the done flag.
    pub fn step(&mut self, action: &[f64]) -> Result<(AugmentedState, f64, bool)> {
        if self.t >= self.horizon || (self.is_done() && self.t > 0) {
            return Err(Error::EpisodeOver);
        }
        if action.len() != self.env.action_dim() {
            return Err(Error::shape("delayed_step", format!("action of length {}", action.len())));
        }
        let a = self.env.clip_action(action);
        let out = self.env.step(self.states.last().expect("nonempty"), &a, &mut self.step_rng)?;
        self.states.push(out.next_state);
        self.actions.push(a);
        self.rewards.push(out.reward);
        self.t += 1;
        self.terminal |= out.terminal;
        self.truncated = !self.terminal && self.t >= self.horizon;
        let now = self.t + self.padding();
        let delta = self.spec.sample(&mut self.delay_rng);
        let old = self.pointer;
        self.pointer = self.pointer.max(now - delta);
        let revealed: f64 = self.rewards[old..self.pointer].iter().sum();
        Ok((self.augmented(), revealed, self.is_done()))
    }

    /// Index of the newest revealed state on the absolute axis.
    pub fn pointer(&self) -> usize {
        self.pointer
    }

    /// The true current state (privileged).
    pub fn true_state(&self) -> &[f64] {
        self.states.last().expect("nonempty")
    }

    /// True state at agent time `t` (may be negative: padding phase).
    pub fn true_state_at(&self, t: isize) -> Option<&[f64]> {
        let k = t + self.padding() as isize;
        usize::try_from(k).ok().and_then(|k| self.states.get(k)).map(Vec::as_slice)
    }

    /// The newest transition (privileged); `None` before the first step of
    /// an episode without padding.
    pub fn last_transition(&self) -> Option<Transition> {
        let k = self.actions.len().checked_sub(1)?;
        Some(Transition {
            state: self.states[k].clone(),
            action: self.actions[k].clone(),
            reward: self.rewards[k],
            next_state: self.states[k + 1].clone(),
            done: self.is_done(),
            truncated: self.truncated,
            step: k,
        })
    }

    /// Sum of the true rewards of the agent's own actions so far.
    pub fn episode_return(&self) -> f64 {
        self.rewards[self.padding()..].iter().sum()
    }

    /// The privileged trajectory, padding transitions first (their rewards
    /// are recorded as zero).
    pub fn record(&self) -> DelayedRecord {
        let n = self.actions.len();
        let transitions = (0..n)
            .map(|k| Transition {
                state: self.states[k].clone(),
                action: self.actions[k].clone(),
                reward: self.rewards[k],
                next_state: self.states[k + 1].clone(),
                done: k + 1 == n && self.is_done(),
                truncated: k + 1 == n && self.truncated,
                step: k,
            })
            .collect();
        DelayedRecord {
            trajectory: Trajectory { seed: self.seed, label: String::new(), transitions },
            padding: self.padding(),
        }
    }
}

/// A privileged trajectory whose first `padding` transitions are the reset
/// padding.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayedRecord {
    pub trajectory: Trajectory,
    pub padding: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;
    use crate::envs::EnvId;

    fn msd() -> Env {
        Env::new(EnvConfig::new(EnvId::MassSpringDamper)).unwrap()
    }

    #[test]
    fn delta_zero_rejected() {
        assert!(DelaySpec::constant(0).is_err());
    }

    #[test]
    fn initial_tokens_repeat_anchor() {
        let spec = DelaySpec::constant(3).unwrap();
        let aug = initial_augmentation(&[0.5, -0.25], 1, &spec);
        let seq = tokenize(&aug, 3).unwrap();
        for i in 0..3 {
            assert_eq!(seq.token(i), &[0.5, -0.25, 0.0, 0.0]);
        }
        assert_eq!(detokenize(&seq).unwrap(), aug);
    }

    #[test]
    fn short_queue_is_masked() {
        let aug = AugmentedState {
            anchor_state: vec![1.0, 2.0],
            action_queue: vec![vec![0.1], vec![0.2]],
            reward_queue: vec![-1.0, -2.0],
            effective_delay: 2,
            t: 5,
        };
        let seq = tokenize(&aug, 4).unwrap();
        assert_eq!(seq.mask, vec![true, true, false, false]);
        assert!(seq.token(3).iter().all(|v| *v == 0.0));
        assert!(matches!(tokenize(&aug, 1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn wrapper_reset_matches_initial_augmentation() {
        let env = msd();
        let mut d = DelayedEnv::new(env.clone(), DelaySpec::constant(4).unwrap()).unwrap();
        let aug = d.reset(9).unwrap();
        let expected = initial_augmentation(&env.reset(9), 1, d.delay_spec());
        assert_eq!(aug, expected);
    }

    #[test]
    fn step_after_horizon_fails() {
        let mut d = DelayedEnv::new(msd(), DelaySpec::constant(2).unwrap()).unwrap().with_horizon(3);
        for _ in 0..3 {
            d.step(&[0.0]).unwrap();
        }
        assert!(d.is_done());
        assert!(matches!(d.step(&[0.0]), Err(Error::EpisodeOver)));
    }
}
