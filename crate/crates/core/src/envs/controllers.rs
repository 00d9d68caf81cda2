//! Hand-written feedback controllers and the uniform random policy.
//!
//! `expert` is a competent fixed controller per environment; `medium` mixes
//! it with uniform random actions. They stand in for trained agents when a
//! mixed dataset is needed without a prior training run.

use super::{Env, EnvId};
use crate::numcore::rng::{uniform, StreamRng};

pub type BoxedPolicy = Box<dyn FnMut(&[f64]) -> Vec<f64> + Send>;

pub fn random_action(env: &Env, rng: &mut StreamRng) -> Vec<f64> {
    let s = env.spec();
    s.action_low.iter().zip(&s.action_high).map(|(lo, hi)| uniform(rng, *lo, *hi)).collect()
}

pub fn random_policy(env: &Env, mut rng: StreamRng) -> BoxedPolicy {
    let env = env.clone();
    Box::new(move |_| random_action(&env, &mut rng))
}

/// Energy-pumping swing-up with a PD catch near the top.
fn pendulum_expert(state: &[f64]) -> f64 {
    let th = state[1].atan2(state[0]);
    let thdot = state[2];
    if state[0] > 0.9 {
        return (-(10.0 * th + 2.0 * thdot)).clamp(-2.0, 2.0);
    }
    let energy = 0.5 * thdot * thdot + 15.0 * th.cos();
    let pump = thdot * (15.0 - energy);
    if pump == 0.0 {
        2.0
    } else {
        2.0 * pump.signum()
    }
}

pub fn expert_action(env: &Env, state: &[f64]) -> Vec<f64> {
    let raw = match env.id() {
        EnvId::Pendulum => vec![pendulum_expert(state)],
        EnvId::MassSpringDamper => vec![-2.0 * state[0] - 1.0 * state[1]],
        EnvId::PointMassReach => {
            let g = super::systems::REACH_GOAL;
            vec![2.0 * (g[0] - state[0]) - 2.0 * state[2], 2.0 * (g[1] - state[1]) - 2.0 * state[3]]
        }
    };
    env.clip_action(&raw)
}

pub fn expert_policy(env: &Env) -> BoxedPolicy {
    let env = env.clone();
    Box::new(move |s| expert_action(&env, s))
}

/// Expert action with probability 1/2, uniform random otherwise.
pub fn medium_policy(env: &Env, mut rng: StreamRng) -> BoxedPolicy {
    let env = env.clone();
    Box::new(move |s| {
        if uniform(&mut rng, 0.0, 1.0) < 0.5 {
            expert_action(&env, s)
        } else {
            random_action(&env, &mut rng)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;
    use crate::numcore::rng::RngStreams;

    fn mean_return(env: &Env, make: impl Fn(u64) -> BoxedPolicy) -> f64 {
        (0..5u64).map(|s| rollout(env, &mut *make(s), 200, 100 + s).unwrap().total_reward()).sum::<f64>() / 5.0
    }

    #[test]
    fn expert_beats_medium_beats_random() {
        for id in EnvId::ALL {
            let env = Env::new(super::super::EnvConfig::new(id)).unwrap();
            let r = mean_return(&env, |s| random_policy(&env, RngStreams::new(s).stream("random")));
            let m = mean_return(&env, |s| medium_policy(&env, RngStreams::new(s).stream("medium")));
            let e = mean_return(&env, |_| expert_policy(&env));
            assert!(e > m && m > r, "{id}: expert {e}, medium {m}, random {r}");
        }
    }
}
