use std::fmt::Write as _;

use rand::Rng;

use super::{BeliefSource, ReplayBuffer, Sac, SacConfig};
use crate::belief::Belief;
use crate::delay::{DelaySpec, DelayedEnv};
use crate::envs::{controllers::random_action, Env, Trajectory};
use crate::error::{Error, Result};
use crate::numcore::rng::{RngStreams, StreamRng};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainAgentConfig {
    pub sac: SacConfig,
    /// `None` trains the delay-free reference on true states.
    pub delay: Option<DelaySpec>,
    pub n_step: usize,
    pub total_steps: usize,
    /// Uniform random actions before this many steps; updates start here.
    pub learning_starts: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Episode length override (agent steps).
    pub horizon: Option<usize>,
    pub seed: u64,
}

impl TrainAgentConfig {
    pub fn new(sac: SacConfig, delay: Option<DelaySpec>, n_step: usize, total_steps: usize, seed: u64) -> Self {
        Self {
            sac,
            delay,
            n_step,
            total_steps,
            learning_starts: 5_000,
            buffer_capacity: 1_000_000,
            eval_every: 5_000,
            eval_episodes: 5,
            horizon: None,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub env_step: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub n_episodes: usize,
    pub alpha: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub const HEADER: &'static str = "env_step,mean_return,std_return,n_episodes,alpha,critic_loss,actor_loss";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.10e},{:.10e},{},{:.10e},{},{}",
                r.env_step,
                r.mean_return,
                r.std_return,
                r.n_episodes,
                r.alpha,
                opt(r.critic_loss),
                opt(r.actor_loss)
            );
        }
        s
    }

    pub fn final_return(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mean_return)
    }
}

#[derive(Clone, Debug)]
pub struct AgentRun {
    pub agent: Sac,
    pub curve: LearningCurve,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn episode_seed(streams: &RngStreams, name: &str, k: u64) -> u64 {
    streams.indexed(name, k).random()
}

/// The belief's forecast of the current state from the agent's observation.
fn current_belief(belief: &Belief, denv: &DelayedEnv) -> Result<Vec<f64>> {
    let tokens = denv.tokens();
    let mut pred = belief.forecast(&[&tokens])?;
    pred.pop().and_then(|mut p| p.pop()).ok_or_else(|| Error::invalid("belief returned no forecast"))
}

/// Mean-action returns of `episodes` episodes.
pub fn evaluate_policy(
    agent: &Sac,
    env: &Env,
    delay: Option<&DelaySpec>,
    belief: Option<&Belief>,
    episodes: usize,
    seed: u64,
    horizon: Option<usize>,
) -> Result<Vec<f64>> {
    let streams = RngStreams::new(seed);
    let mut unused: StreamRng = streams.stream("agent.eval.unused");
    let horizon = horizon.unwrap_or(env.spec().horizon);
    (0..episodes as u64)
        .map(|k| {
            let s = episode_seed(&streams, "agent.eval", k);
            match (delay, belief) {
                (Some(spec), Some(b)) => {
                    let mut denv = DelayedEnv::new(env.clone(), *spec)?.with_horizon(horizon);
                    denv.reset(s)?;
                    while !(denv.is_done() || denv.t() >= horizon) {
                        let sh = current_belief(b, &denv)?;
                        let a = agent.act(&sh, true, &mut unused)?;
                        denv.step(&a)?;
                    }
                    Ok(denv.episode_return())
                }
                (Some(_), None) => Err(Error::invalid("a delayed evaluation needs a belief")),
                (None, _) => {
                    let mut ep = env.episode(s);
                    let mut total = 0.0;
                    while !ep.is_done() && ep.t() < horizon {
                        let a = agent.act(ep.state(), true, &mut unused)?;
                        total += ep.step(&a)?.reward;
                    }
                    Ok(total)
                }
            }
        })
        .collect()
}

/// Returns of the uniform random policy on the evaluation episodes.
pub fn random_returns(env: &Env, episodes: usize, seed: u64, horizon: Option<usize>) -> Result<Vec<f64>> {
    let streams = RngStreams::new(seed);
    let mut rng = streams.stream("agent.random");
    let horizon = horizon.unwrap_or(env.spec().horizon);
    (0..episodes as u64)
        .map(|k| {
            let mut ep = env.episode(episode_seed(&streams, "agent.eval", k));
            let mut total = 0.0;
            while !ep.is_done() && ep.t() < horizon {
                let a = random_action(env, &mut rng);
                total += ep.step(&a)?.reward;
            }
            Ok(total)
        })
        .collect()
}

/// Mean of [`random_returns`].
pub fn random_return(env: &Env, episodes: usize, seed: u64, horizon: Option<usize>) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::invalid("random_return needs at least one episode"));
    }
    Ok(random_returns(env, episodes, seed, horizon)?.iter().sum::<f64>() / episodes as f64)
}

enum Runner {
    Delayed(Box<DelayedEnv>),
    Free(Box<crate::envs::Episode>),
}

/// Online training. With a delay, the agent acts on the belief's forecast
/// of the current state; the buffer keeps the privileged trajectory and the
/// belief's forecasts for N-step targets. Without a delay it is plain SAC.
pub fn train_agent(env: &Env, belief: Option<&Belief>, cfg: &TrainAgentConfig) -> Result<AgentRun> {
    let spec = env.spec().clone();
    let gamma = spec.gamma;
    let horizon = cfg.horizon.unwrap_or(spec.horizon);
    let (src, delta) = match (&cfg.delay, belief) {
        (Some(d), Some(b)) => {
            if b.state_dim() != spec.state_dim || b.action_dim() != spec.action_dim {
                return Err(Error::invalid(format!(
                    "belief dims ({}, {}) do not match {} ({}, {})",
                    b.state_dim(),
                    b.action_dim(),
                    env.id(),
                    spec.state_dim,
                    spec.action_dim
                )));
            }
            if b.capacity().is_some_and(|c| c < d.delta_max) {
                return Err(Error::invalid(format!("belief capacity below delay {}", d.delta_max)));
            }
            (BeliefSource::Model(b), d.delta_max)
        }
        (Some(_), None) => return Err(Error::invalid("delayed training needs a belief")),
        (None, _) => (BeliefSource::Privileged, cfg.n_step),
    };
    if cfg.eval_every == 0 {
        return Err(Error::invalid("eval_every must be positive"));
    }
    let mut agent = Sac::new(cfg.sac.clone(), &spec, cfg.seed)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, delta, cfg.n_step)?;
    let streams = RngStreams::new(cfg.seed);
    let mut act_rng = streams.stream("agent.actions");
    let mut upd_rng = streams.stream("agent.updates");
    let mut smp_rng = streams.stream("agent.replay");
    let mut episode = 0u64;
    let start = |episode: &mut u64, buffer: &mut ReplayBuffer| -> Result<Runner> {
        let s = episode_seed(&streams, "agent.episodes", *episode);
        *episode += 1;
        match &cfg.delay {
            Some(d) => {
                let mut denv = DelayedEnv::new(env.clone(), *d)?.with_horizon(horizon);
                denv.reset(s)?;
                let rec = denv.record();
                buffer.begin_episode(rec.trajectory, rec.padding, src)?;
                Ok(Runner::Delayed(Box::new(denv)))
            }
            None => {
                buffer.begin_episode(Trajectory { seed: s, label: String::new(), transitions: Vec::new() }, 0, src)?;
                Ok(Runner::Free(Box::new(env.episode(s))))
            }
        }
    };
    let mut runner = start(&mut episode, &mut buffer)?;
    let mut curve = LearningCurve::default();
    let (mut closs, mut aloss) = (Vec::new(), Vec::new());
    for step in 0..cfg.total_steps {
        let random = step < cfg.learning_starts;
        let done = match &mut runner {
            Runner::Delayed(denv) => {
                let a = if random {
                    random_action(env, &mut act_rng)
                } else {
                    let b = belief.expect("checked above");
                    agent.act(&current_belief(b, denv)?, false, &mut act_rng)?
                };
                denv.step(&a)?;
                let tr = denv.last_transition().expect("just stepped");
                let done = tr.done || denv.t() >= horizon;
                let mut tr = tr;
                if done && !tr.done {
                    tr.done = true;
                    tr.truncated = true;
                }
                buffer.push(tr, src)?;
                done
            }
            Runner::Free(ep) => {
                let a = if random { random_action(env, &mut act_rng) } else { agent.act(ep.state(), false, &mut act_rng)? };
                let mut tr = ep.step(&a)?;
                if !tr.done && ep.t() >= horizon {
                    tr.done = true;
                    tr.truncated = true;
                }
                let done = tr.done;
                buffer.push(tr, src)?;
                done
            }
        };
        if done {
            runner = start(&mut episode, &mut buffer)?;
        }
        if !random && buffer.n_ready() > 0 {
            let samples = buffer.sample(&mut smp_rng, cfg.sac.batch_size)?;
            let stats = agent.update(&samples, cfg.n_step, gamma, &mut upd_rng)?;
            closs.push(stats.critic_loss);
            aloss.extend(stats.actor_loss);
        }
        let n = step + 1;
        if n.is_multiple_of(cfg.eval_every) || n == cfg.total_steps {
            let returns =
                evaluate_policy(&agent, env, cfg.delay.as_ref(), belief, cfg.eval_episodes, cfg.seed, Some(horizon))?;
            let (mean_return, std_return) = mean_std(&returns);
            let avg = |v: &mut Vec<f64>| {
                let out = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
                v.clear();
                out
            };
            curve.rows.push(super::train::CurveRow {
                env_step: n,
                mean_return,
                std_return,
                n_episodes: returns.len(),
                alpha: agent.alpha(),
                critic_loss: avg(&mut closs),
                actor_loss: avg(&mut aloss),
            });
        }
    }
    Ok(AgentRun { agent, curve })
}
