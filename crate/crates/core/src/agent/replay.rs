use std::collections::VecDeque;

use rand::Rng;

use crate::belief::Belief;
use crate::delay::{window_at, ReplayWindow};
use crate::envs::{Trajectory, Transition};
use crate::error::{Error, Result};

/// Where the buffer's forecasts `ŝ_{j+i}` come from.
#[derive(Clone, Copy, Debug)]
pub enum BeliefSource<'a> {
    Model(&'a Belief),
    /// The true states themselves (delay-free training).
    Privileged,
}

impl BeliefSource<'_> {
    fn forecast(&self, windows: &[ReplayWindow]) -> Result<Vec<Vec<Vec<f64>>>> {
        match self {
            BeliefSource::Model(b) => {
                let seqs: Vec<_> = windows.iter().map(|w| &w.tokens).collect();
                b.forecast(&seqs)
            }
            BeliefSource::Privileged => {
                Ok(windows.iter().map(|w| w.states[1..=w.tokens.n_valid()].to_vec()).collect())
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Stored {
    traj: Trajectory,
    first_anchor: usize,
    /// Forecasts for anchors `first_anchor..first_anchor + beliefs.len()`.
    beliefs: Vec<Vec<Vec<f64>>>,
    /// Anchors usable for targets (a prefix of `beliefs`).
    ready: usize,
    closed: bool,
}

impl Stored {
    fn terminal(&self) -> bool {
        self.traj.transitions.last().is_some_and(Transition::terminal)
    }
}

/// One sampled anchor with everything an N-step update needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: ReplayWindow,
    /// `belief[i]` forecasts `s_{j+i+1}`.
    pub belief: Vec<Vec<f64>>,
}

/// Privileged episodes with forecasts cached per anchor. The forecast of
/// anchor `j` uses the `min(Δ, L − j)` tokens starting at `j`; it is made as
/// soon as those tokens exist.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Stored>,
    capacity: usize,
    n_transitions: usize,
    delta: usize,
    n_step: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, delta: usize, n_step: usize) -> Result<Self> {
        if n_step == 0 || n_step > delta || capacity == 0 {
            return Err(Error::invalid(format!("replay needs 1 <= N ({n_step}) <= delta ({delta})")));
        }
        Ok(Self { episodes: VecDeque::new(), capacity, n_transitions: 0, delta, n_step })
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn n_step(&self) -> usize {
        self.n_step
    }

    pub fn n_transitions(&self) -> usize {
        self.n_transitions
    }

    pub fn n_ready(&self) -> usize {
        self.episodes.iter().map(|e| e.ready).sum()
    }

    /// Opens an episode with already-recorded transitions; anchors before
    /// `first_anchor` are never sampled.
    pub fn begin_episode(&mut self, prefix: Trajectory, first_anchor: usize, src: BeliefSource) -> Result<()> {
        if let Some(last) = self.episodes.back() {
            if !last.closed {
                return Err(Error::invalid("previous episode is still open"));
            }
        }
        self.n_transitions += prefix.len();
        self.episodes.push_back(Stored { traj: prefix, first_anchor, beliefs: Vec::new(), ready: 0, closed: false });
        self.refresh(src)?;
        self.evict();
        Ok(())
    }

    pub fn push(&mut self, tr: Transition, src: BeliefSource) -> Result<()> {
        let ep = self.episodes.back_mut().filter(|e| !e.closed).ok_or_else(|| Error::invalid("no open episode"))?;
        let done = tr.done;
        ep.traj.transitions.push(tr);
        self.n_transitions += 1;
        if done {
            self.episodes.back_mut().expect("open").closed = true;
        }
        self.refresh(src)?;
        self.evict();
        Ok(())
    }

    /// Closes the open episode (e.g. at an external cut).
    pub fn end_episode(&mut self, src: BeliefSource) -> Result<()> {
        if let Some(ep) = self.episodes.back_mut() {
            ep.closed = true;
        }
        self.refresh(src)
    }

    fn refresh(&mut self, src: BeliefSource) -> Result<()> {
        let (delta, n) = (self.delta, self.n_step);
        let Some(ep) = self.episodes.back_mut() else { return Ok(()) };
        let len = ep.traj.len();
        let mut windows = Vec::new();
        let mut j = ep.first_anchor + ep.beliefs.len();
        while j < len && (j + delta <= len || ep.closed) {
            let k = delta.min(len - j);
            windows.push(window_at(&ep.traj, j, k, k, delta)?);
            j += 1;
        }
        if !windows.is_empty() {
            ep.beliefs.extend(src.forecast(&windows)?);
        }
        let terminal = ep.terminal();
        let limit = if terminal { len } else { (len + 1).saturating_sub(n) };
        ep.ready = ep.beliefs.len().min(limit.saturating_sub(ep.first_anchor));
        Ok(())
    }

    fn evict(&mut self) {
        while self.n_transitions > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("nonempty");
            self.n_transitions -= old.traj.len();
        }
    }

    /// Uniform draw over ready anchors. The window spans
    /// `min(N, steps to the episode end)` transitions.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<Sample>> {
        let total = self.n_ready();
        if total == 0 {
            return Err(Error::invalid("replay buffer has no ready anchors"));
        }
        (0..batch)
            .map(|_| {
                let mut r = rng.random_range(0..total);
                let ep = self
                    .episodes
                    .iter()
                    .find(|e| {
                        if r < e.ready {
                            true
                        } else {
                            r -= e.ready;
                            false
                        }
                    })
                    .expect("index within total");
                self.sample_at(ep, r)
            })
            .collect()
    }

    fn sample_at(&self, ep: &Stored, i: usize) -> Result<Sample> {
        let j = ep.first_anchor + i;
        let len = ep.traj.len();
        let k = self.delta.min(len - j);
        let n = self.n_step.min(len - j);
        let window = window_at(&ep.traj, j, n, k, self.delta)?;
        Ok(Sample { window, belief: ep.beliefs[i].clone() })
    }

    /// Every ready anchor in storage order.
    pub fn all_samples(&self) -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(self.n_ready());
        for ep in &self.episodes {
            for i in 0..ep.ready {
                out.push(self.sample_at(ep, i)?);
            }
        }
        Ok(out)
    }
}
