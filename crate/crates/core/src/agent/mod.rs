//! Soft actor-critic on belief-predicted states with N-step bootstrapped
//! targets, and its delay-free reference.

pub mod replay;
pub mod train;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::numcore::rng::{standard_normal, RngStreams, StreamRng};
use crate::numcore::{Adam, AdamConfig, DArray, Mlp, ParamStore, Tape, Var};

pub use replay::{BeliefSource, ReplayBuffer, Sample};
pub use train::{
    evaluate_policy, random_return, random_returns, train_agent, AgentRun, CurveRow, LearningCurve, TrainAgentConfig,
};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const TANH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Critic updates per actor update.
    pub actor_every: usize,
    /// Learned temperature; otherwise `alpha_init` stays fixed.
    pub autotune: bool,
    pub alpha_init: f64,
    /// Two critics with a min-target; one critic otherwise.
    pub twin: bool,
    /// Use `+ α log π` inside the target as printed, instead of the soft
    /// value `− α log π`.
    pub strict_paper_sign: bool,
}

impl SacConfig {
    pub fn paper() -> Self {
        Self {
            hidden: vec![256, 256],
            batch_size: 256,
            tau: 5e-3,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            actor_every: 2,
            autotune: true,
            alpha_init: 1.0,
            twin: true,
            strict_paper_sign: false,
        }
    }

    /// Smaller networks and batches for one CPU core.
    pub fn desk() -> Self {
        Self { hidden: vec![64, 64], batch_size: 128, ..Self::paper() }
    }
}

/// Tanh-squashed Gaussian policy.
#[derive(Clone, Debug)]
pub struct Actor {
    mlp: Mlp,
    action_dim: usize,
    scale: Vec<f64>,
    bias: Vec<f64>,
}

impl Actor {
    fn new(store: &mut ParamStore, spec: &EnvSpec, hidden: &[usize], rng: &mut StreamRng) -> Result<Self> {
        let ad = spec.action_dim;
        let sizes: Vec<usize> =
            std::iter::once(spec.state_dim).chain(hidden.iter().copied()).chain(std::iter::once(2 * ad)).collect();
        Ok(Self {
            mlp: Mlp::new(store, "actor", &sizes, rng)?,
            action_dim: ad,
            scale: spec.action_low.iter().zip(&spec.action_high).map(|(l, h)| 0.5 * (h - l)).collect(),
            bias: spec.action_low.iter().zip(&spec.action_high).map(|(l, h)| 0.5 * (h + l)).collect(),
        })
    }

    /// Mean and log standard deviation, `[B, action_dim]` each; the log std
    /// is squashed into `[LOG_STD_MIN, LOG_STD_MAX]` by a tanh.
    pub fn dist(&self, t: &mut Tape, store: &ParamStore, states: Var) -> Result<(Var, Var)> {
        let ad = self.action_dim;
        let out = self.mlp.forward(t, store, states)?;
        let mean = t.slice(out, 1, 0, ad)?;
        let raw = t.slice(out, 1, ad, 2 * ad)?;
        let sq = t.tanh(raw)?;
        let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        let ls = t.scale(sq, half)?;
        let ls = t.add_scalar(ls, LOG_STD_MIN + half)?;
        Ok((mean, ls))
    }

    /// Reparameterised action `[B, ad]` and its log density `[B]` given
    /// standard-normal `noise`.
    pub fn sample(&self, t: &mut Tape, store: &ParamStore, states: Var, noise: Vec<f64>) -> Result<(Var, Var)> {
        let (mean, ls) = self.dist(t, store, states)?;
        let b = t.shape(mean)[0];
        let gauss: Vec<f64> =
            noise.iter().map(|e| -0.5 * e * e - 0.5 * (2.0 * std::f64::consts::PI).ln()).collect();
        let u = t.gaussian_sample_with(mean, ls, noise)?;
        let y = t.tanh(u)?;
        let scale = t.input(DArray::vector(self.scale.clone()));
        let bias = t.input(DArray::vector(self.bias.clone()));
        let scaled = t.mul(y, scale)?;
        let action = t.add(scaled, bias)?;
        let gauss = t.input(DArray::new(vec![b, self.action_dim], gauss)?);
        let base = t.sub(gauss, ls)?;
        let y2 = t.mul(y, y)?;
        let one_minus = t.neg(y2)?;
        let one_minus = t.add_scalar(one_minus, 1.0)?;
        let jac = t.mul(one_minus, scale)?;
        let jac = t.add_scalar(jac, TANH_EPS)?;
        let log_jac = t.log(jac)?;
        let per = t.sub(base, log_jac)?;
        let logp = t.sum_axis(per, 1)?;
        Ok((action, logp))
    }

    /// `tanh(mean)` mapped to the action box.
    pub fn mean_action(&self, t: &mut Tape, store: &ParamStore, states: Var) -> Result<Var> {
        let (mean, _) = self.dist(t, store, states)?;
        let y = t.tanh(mean)?;
        let scale = t.input(DArray::vector(self.scale.clone()));
        let bias = t.input(DArray::vector(self.bias.clone()));
        let scaled = t.mul(y, scale)?;
        t.add(scaled, bias)
    }
}

/// Inputs of a soft TD target, one entry per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetInputs {
    /// `Σ_{i<m} γ^i r_{j+i}` over the observed rewards.
    pub prefix: Vec<f64>,
    /// `γ^N`, or 0 when the window terminates before `N`.
    pub discount: Vec<f64>,
    /// True state `s_{j+N}` (fed to the critics).
    pub state: Vec<Vec<f64>>,
    /// Forecast `ŝ_{j+N}` (fed to the policy).
    pub belief: Vec<Vec<f64>>,
}

impl TargetInputs {
    /// N-step inputs from replay samples; a true terminal inside the first
    /// `N` transitions truncates the sum and drops the bootstrap term.
    pub fn from_samples(samples: &[Sample], n: usize, gamma: f64) -> Result<Self> {
        let mut out = Self { prefix: Vec::new(), discount: Vec::new(), state: Vec::new(), belief: Vec::new() };
        for s in samples {
            let w = &s.window;
            let stop = w.terminal_at.map(|i| i + 1);
            let m = stop.unwrap_or(n).min(n);
            if w.rewards.len() < m {
                return Err(Error::OutOfRange(format!("window of {} steps for N = {n}", w.rewards.len())));
            }
            let mut prefix = 0.0;
            let mut g = 1.0;
            for r in &w.rewards[..m] {
                prefix += g * r;
                g *= gamma;
            }
            out.prefix.push(prefix);
            if stop.is_some() {
                out.discount.push(0.0);
                out.state.push(w.states[m].clone());
                out.belief.push(s.belief.get(m - 1).cloned().unwrap_or_else(|| w.states[m].clone()));
            } else {
                let b = s.belief.get(n - 1).ok_or_else(|| Error::OutOfRange(format!("no forecast for head {n}")))?;
                out.discount.push(gamma.powi(n as i32));
                out.state.push(w.states[n].clone());
                out.belief.push(b.clone());
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
}

fn matrix(rows: &[Vec<f64>]) -> Result<DArray> {
    let w = rows.first().map_or(0, Vec::len);
    DArray::new(vec![rows.len(), w], rows.concat())
}

fn noise_matrix(rng: &mut StreamRng, b: usize, ad: usize) -> Vec<f64> {
    (0..b * ad).map(|_| standard_normal(rng)).collect()
}

/// Actor, critics, their target copies and the temperature.
#[derive(Clone, Debug)]
pub struct Sac {
    pub config: SacConfig,
    pub spec: EnvSpec,
    pub actor: Actor,
    pub actor_params: ParamStore,
    critics: Vec<Mlp>,
    pub critic_params: ParamStore,
    pub target_params: ParamStore,
    pub log_alpha: ParamStore,
    actor_opt: Adam,
    critic_opt: Adam,
    alpha_opt: Adam,
    updates: u64,
}

impl Sac {
    pub fn new(config: SacConfig, spec: &EnvSpec, seed: u64) -> Result<Self> {
        let streams = RngStreams::new(seed);
        let mut rng = streams.stream("sac.init");
        let mut actor_params = ParamStore::new();
        let actor = Actor::new(&mut actor_params, spec, &config.hidden, &mut rng)?;
        let mut critic_params = ParamStore::new();
        let sizes: Vec<usize> = std::iter::once(spec.state_dim + spec.action_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let n_critics = if config.twin { 2 } else { 1 };
        let critics = (0..n_critics)
            .map(|i| Mlp::new(&mut critic_params, &format!("q{}", i + 1), &sizes, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let target_params = critic_params.clone();
        let mut log_alpha = ParamStore::new();
        if config.alpha_init.is_nan() || config.alpha_init <= 0.0 {
            return Err(Error::invalid(format!("alpha must be positive, got {}", config.alpha_init)));
        }
        log_alpha.add("log_alpha", DArray::scalar(config.alpha_init.ln()))?;
        Ok(Self {
            actor_opt: Adam::new(AdamConfig::adam(config.actor_lr))?,
            critic_opt: Adam::new(AdamConfig::adam(config.critic_lr))?,
            alpha_opt: Adam::new(AdamConfig::adam(config.alpha_lr))?,
            config,
            spec: spec.clone(),
            actor,
            actor_params,
            critics,
            critic_params,
            target_params,
            log_alpha,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value(self.log_alpha.require("log_alpha").expect("created in new")).item().exp()
    }

    pub fn target_entropy(&self) -> f64 {
        -(self.spec.action_dim as f64)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `Q_i(s, a)` for every critic, `[B]` each.
    fn q_values(&self, t: &mut Tape, store: &ParamStore, s: Var, a: Var) -> Result<Vec<Var>> {
        let x = t.concat(&[s, a], 1)?;
        let b = t.shape(x)[0];
        self.critics
            .iter()
            .map(|c| {
                let q = c.forward(t, store, x)?;
                t.reshape(q, vec![b])
            })
            .collect()
    }

    fn min_q(&self, t: &mut Tape, qs: &[Var]) -> Result<Var> {
        let mut m = qs[0];
        for q in &qs[1..] {
            m = t.minimum(m, *q)?;
        }
        Ok(m)
    }

    /// Policy action for one state.
    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        t.freeze(&self.actor_params);
        let s = t.input(DArray::new(vec![1, state.len()], state.to_vec())?);
        let a = if deterministic {
            self.actor.mean_action(&mut t, &self.actor_params, s)?
        } else {
            let noise = noise_matrix(rng, 1, self.spec.action_dim);
            self.actor.sample(&mut t, &self.actor_params, s, noise)?.0
        };
        Ok(t.value(a).data().to_vec())
    }

    /// `Y = prefix + discount · (min_i Q̄_i(s, a') ∓ α log π(a'|ŝ))` with
    /// `a' ~ π(·|ŝ)` drawn from `noise` (`[B, action_dim]`).
    pub fn soft_target(&self, inputs: &TargetInputs, noise: Vec<f64>) -> Result<Vec<f64>> {
        let b = inputs.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        let mut t = Tape::new();
        t.freeze(&self.actor_params);
        t.freeze(&self.target_params);
        let sh = t.input(matrix(&inputs.belief)?);
        let s = t.input(matrix(&inputs.state)?);
        let (a, logp) = self.actor.sample(&mut t, &self.actor_params, sh, noise)?;
        let qs = self.q_values(&mut t, &self.target_params, s, a)?;
        let q = self.min_q(&mut t, &qs)?;
        let alpha = self.alpha();
        let sign = if self.config.strict_paper_sign { 1.0 } else { -1.0 };
        let q = t.value(q).data().to_vec();
        let lp = t.value(logp).data().to_vec();
        Ok((0..b).map(|i| inputs.prefix[i] + inputs.discount[i] * (q[i] + sign * alpha * lp[i])).collect())
    }

    /// Scalar critic loss `Σ_i ½·mean((Q_i(s, a) − Y)²)`, built on `t`.
    pub fn critic_loss(&self, t: &mut Tape, states: &DArray, actions: &DArray, y: &[f64]) -> Result<Var> {
        let s = t.input(states.clone());
        let a = t.input(actions.clone());
        let y = t.input(DArray::vector(y.to_vec()));
        let qs = self.q_values(t, &self.critic_params, s, a)?;
        let mut total: Option<Var> = None;
        for q in qs {
            let d = t.sub(q, y)?;
            let d2 = t.mul(d, d)?;
            let m = t.mean(d2)?;
            let h = t.scale(m, 0.5)?;
            total = Some(match total {
                Some(x) => t.add(x, h)?,
                None => h,
            });
        }
        Ok(total.expect("at least one critic"))
    }

    /// Scalar actor loss `mean(α log π(a|ŝ) − min_i Q_i(s, a))` with `a`
    /// reparameterised from `noise`; also returns the log densities.
    pub fn actor_loss(
        &self,
        t: &mut Tape,
        beliefs: &DArray,
        states: &DArray,
        noise: Vec<f64>,
        alpha: f64,
    ) -> Result<(Var, Vec<f64>)> {
        t.freeze(&self.critic_params);
        let sh = t.input(beliefs.clone());
        let s = t.input(states.clone());
        let (a, logp) = self.actor.sample(t, &self.actor_params, sh, noise)?;
        let qs = self.q_values(t, &self.critic_params, s, a)?;
        let q = self.min_q(t, &qs)?;
        let ent = t.scale(logp, alpha)?;
        let d = t.sub(ent, q)?;
        let loss = t.mean(d)?;
        let lp = t.value(logp).data().to_vec();
        Ok((loss, lp))
    }

    /// One critic step on `(s_j, a_j) → Y`, then a soft target update.
    pub fn critic_update(&mut self, states: &DArray, actions: &DArray, y: &[f64]) -> Result<f64> {
        let mut t = Tape::new();
        let loss = self.critic_loss(&mut t, states, actions, y)?;
        let v = t.value(loss).item();
        self.critic_params.zero_grads();
        t.backward(loss, &mut [&mut self.critic_params])?;
        self.critic_opt.step(&mut self.critic_params)?;
        self.target_params.soft_update_from(&self.critic_params, self.config.tau)?;
        Ok(v)
    }

    /// One actor step followed by a temperature step.
    pub fn actor_update(&mut self, beliefs: &DArray, states: &DArray, noise: Vec<f64>) -> Result<f64> {
        let alpha = self.alpha();
        let mut t = Tape::new();
        let (loss, logp) = self.actor_loss(&mut t, beliefs, states, noise, alpha)?;
        let v = t.value(loss).item();
        self.actor_params.zero_grads();
        t.backward(loss, &mut [&mut self.actor_params])?;
        self.actor_opt.step(&mut self.actor_params)?;
        if self.config.autotune {
            let h = self.target_entropy();
            let mut t = Tape::new();
            let la = t.param(&self.log_alpha, self.log_alpha.require("log_alpha")?);
            let a = t.exp(la)?;
            let c = t.input(DArray::vector(logp.iter().map(|l| l + h).collect()));
            let prod = t.mul(c, a)?;
            let m = t.mean(prod)?;
            let loss = t.neg(m)?;
            self.log_alpha.zero_grads();
            t.backward(loss, &mut [&mut self.log_alpha])?;
            self.alpha_opt.step(&mut self.log_alpha)?;
        }
        Ok(v)
    }

    /// A full update on replay samples: N-step targets, critic step, and
    /// (every `actor_every` calls) an actor step at `(ŝ_{j+N}, s_{j+N})`.
    pub fn update(&mut self, samples: &[Sample], n: usize, gamma: f64, rng: &mut StreamRng) -> Result<UpdateStats> {
        let b = samples.len();
        let ad = self.spec.action_dim;
        let inputs = TargetInputs::from_samples(samples, n, gamma)?;
        let y = self.soft_target(&inputs, noise_matrix(rng, b, ad))?;
        let s0: Vec<Vec<f64>> = samples.iter().map(|s| s.window.states[0].clone()).collect();
        let a0: Vec<Vec<f64>> = samples.iter().map(|s| s.window.actions[0].clone()).collect();
        let critic_loss = self.critic_update(&matrix(&s0)?, &matrix(&a0)?, &y)?;
        self.updates += 1;
        let actor_loss = if self.updates.is_multiple_of(self.config.actor_every.max(1) as u64) {
            let noise = noise_matrix(rng, b, ad);
            Some(self.actor_update(&matrix(&inputs.belief)?, &matrix(&inputs.state)?, noise)?)
        } else {
            None
        };
        Ok(UpdateStats { critic_loss, actor_loss, alpha: self.alpha() })
    }

    /// All parameters in one store for checkpointing (`actor.*`, `q*.*`,
    /// `target.*`, `log_alpha`).
    pub fn checkpoint(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (prefix, store) in [("", &self.actor_params), ("", &self.critic_params), ("target.", &self.target_params)] {
            for (_, p) in store.iter() {
                out.add(&format!("{prefix}{}", p.name), p.value.clone())?;
            }
        }
        for (_, p) in self.log_alpha.iter() {
            out.add(&p.name, p.value.clone())?;
        }
        Ok(out)
    }

    /// Restores parameter values saved by [`Sac::checkpoint`].
    pub fn restore(&mut self, saved: &ParamStore) -> Result<()> {
        for (prefix, store) in [
            ("", &mut self.actor_params),
            ("", &mut self.critic_params),
            ("target.", &mut self.target_params),
            ("", &mut self.log_alpha),
        ] {
            let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
            for (id, name) in ids {
                let v = saved.value(saved.require(&format!("{prefix}{name}"))?);
                if v.shape() != store.value(id).shape() {
                    return Err(Error::Format(format!("checkpoint shape mismatch for `{name}`")));
                }
                *store.value_mut(id) = v.clone();
            }
        }
        Ok(())
    }
}

/// `(R − R_random) / (R_sac − R_random)`.
pub fn normalized_return(r_alg: f64, r_sac: f64, r_random: f64) -> Result<f64> {
    let denom = r_sac - r_random;
    if denom.is_nan() || denom.abs() <= 1e-12 {
        return Err(Error::invalid(format!("degenerate normalisation: R_sac = {r_sac}, R_random = {r_random}")));
    }
    Ok((r_alg - r_random) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{Belief, OracleDynamics};
    use crate::delay::DelaySpec;
    use crate::envs::{rollout, Env};

    fn pendulum() -> Env {
        Env::by_name("pendulum").unwrap()
    }

    fn buffer_with(env: &Env, src: BeliefSource, delta: usize, n: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(10_000, delta, n).unwrap();
        let mut k = 0.0f64;
        let traj = rollout(env, &mut |_: &[f64]| { k += 0.37; vec![k.sin() * 2.0] }, 40, 3).unwrap();
        buf.begin_episode(crate::envs::Trajectory { transitions: Vec::new(), ..traj.clone() }, 0, src).unwrap();
        for tr in traj.transitions {
            buf.push(tr, src).unwrap();
        }
        buf
    }

    #[test]
    fn soft_update_is_exact_polyak() {
        let env = pendulum();
        let mut sac = Sac::new(SacConfig::desk(), env.spec(), 0).unwrap();
        let before = sac.target_params.clone();
        let y = vec![1.0; 4];
        let s = DArray::filled(vec![4, 3], 0.2);
        let a = DArray::filled(vec![4, 1], 0.1);
        sac.critic_update(&s, &a, &y).unwrap();
        for ((_, t), ((_, b), (_, o))) in
            sac.target_params.iter().zip(before.iter().zip(sac.critic_params.iter()))
        {
            for ((tv, bv), ov) in t.value.data().iter().zip(b.value.data()).zip(o.value.data()) {
                assert_eq!(*tv, (1.0 - 5e-3) * bv + 5e-3 * ov);
            }
        }
    }

    #[test]
    fn one_step_oracle_target_matches_single_step_target() {
        let env = pendulum();
        let sac = Sac::new(SacConfig::desk(), env.spec(), 1).unwrap();
        let oracle = Belief::Oracle(OracleDynamics { env: env.clone() });
        let buf = buffer_with(&env, BeliefSource::Model(&oracle), 4, 1);
        let samples = buf.all_samples().unwrap();
        let inputs = TargetInputs::from_samples(&samples, 1, 0.99).unwrap();
        let noise: Vec<f64> = (0..samples.len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = sac.soft_target(&inputs, noise.clone()).unwrap();
        let single = TargetInputs {
            prefix: samples.iter().map(|s| s.window.rewards[0]).collect(),
            discount: samples.iter().map(|_| 0.99).collect(),
            state: samples.iter().map(|s| s.window.states[1].clone()).collect(),
            belief: samples.iter().map(|s| s.window.states[1].clone()).collect(),
        };
        let y1 = sac.soft_target(&single, noise).unwrap();
        assert!(y.iter().zip(&y1).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn zero_discount_keeps_first_reward() {
        let env = pendulum();
        let sac = Sac::new(SacConfig::desk(), env.spec(), 2).unwrap();
        let buf = buffer_with(&env, BeliefSource::Privileged, 4, 4);
        let samples = buf.all_samples().unwrap();
        let inputs = TargetInputs::from_samples(&samples, 4, 0.0).unwrap();
        let y = sac.soft_target(&inputs, vec![0.3; samples.len()]).unwrap();
        for (s, v) in samples.iter().zip(y) {
            assert_eq!(v, s.window.rewards[0]);
        }
    }

    #[test]
    fn min_target_is_below_each_critic() {
        let env = pendulum();
        let sac = Sac::new(SacConfig::desk(), env.spec(), 3).unwrap();
        let buf = buffer_with(&env, BeliefSource::Privileged, 2, 2);
        let samples = buf.all_samples().unwrap();
        let inputs = TargetInputs::from_samples(&samples, 2, 0.99).unwrap();
        let noise = vec![0.1; samples.len()];
        let y = sac.soft_target(&inputs, noise.clone()).unwrap();
        for keep in ["q1", "q2"] {
            let mut single = sac.clone();
            single.critics.retain(|c| single.target_params.param(c.layers[0].w).name.starts_with(keep));
            let yi = single.soft_target(&inputs, noise.clone()).unwrap();
            assert!(y.iter().zip(&yi).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn actions_stay_in_bounds() {
        let env = pendulum();
        let sac = Sac::new(SacConfig::desk(), env.spec(), 4).unwrap();
        let mut rng = RngStreams::new(0).stream("test");
        for i in 0..2000 {
            let s = vec![(i as f64).cos() * 50.0, (i as f64).sin() * 50.0, i as f64 - 1000.0];
            for det in [true, false] {
                let a = sac.act(&s, det, &mut rng).unwrap();
                assert!(a[0] >= -2.0 && a[0] <= 2.0);
            }
        }
        let s = [0.3, -0.2, 1.0];
        assert_eq!(sac.act(&s, true, &mut rng).unwrap(), sac.act(&s, true, &mut rng).unwrap());
    }

    #[test]
    fn zero_steps_leave_networks_untouched() {
        let env = pendulum();
        let cfg = TrainAgentConfig::new(SacConfig::desk(), None, 1, 0, 5);
        let run = train_agent(&env, None, &cfg).unwrap();
        let fresh = Sac::new(SacConfig::desk(), env.spec(), 5).unwrap();
        assert!(run.curve.rows.is_empty());
        assert!(run.agent.actor_params.same_values(&fresh.actor_params));
        assert!(run.agent.critic_params.same_values(&fresh.critic_params));
    }

    #[test]
    fn short_delayed_runs_are_deterministic() {
        let env = pendulum();
        let oracle = Belief::Oracle(OracleDynamics { env: env.clone() });
        let mut cfg =
            TrainAgentConfig::new(SacConfig { hidden: vec![16], batch_size: 16, ..SacConfig::desk() }, Some(DelaySpec::constant(4).unwrap()), 4, 600, 6);
        cfg.learning_starts = 300;
        cfg.eval_every = 300;
        cfg.eval_episodes = 1;
        cfg.horizon = Some(50);
        let a = train_agent(&env, Some(&oracle), &cfg).unwrap();
        let b = train_agent(&env, Some(&oracle), &cfg).unwrap();
        assert_eq!(a.curve.to_csv(), b.curve.to_csv());
        assert_eq!(a.curve.rows.len(), 2);
        assert!(a.curve.rows[1].critic_loss.is_some());
    }

    #[test]
    fn checkpoint_roundtrip_restores_agent() {
        let env = pendulum();
        let a = Sac::new(SacConfig::desk(), env.spec(), 7).unwrap();
        let mut b = Sac::new(SacConfig::desk(), env.spec(), 8).unwrap();
        b.restore(&a.checkpoint().unwrap()).unwrap();
        assert!(b.actor_params.same_values(&a.actor_params));
        assert!(b.target_params.same_values(&a.target_params));
    }

    #[test]
    fn normalized_return_anchors() {
        assert_eq!(normalized_return(-200.0, -200.0, -1200.0).unwrap(), 1.0);
        assert_eq!(normalized_return(-1200.0, -200.0, -1200.0).unwrap(), 0.0);
        assert!(normalized_return(1.0, 3.0, 3.0).is_err());
    }
}
