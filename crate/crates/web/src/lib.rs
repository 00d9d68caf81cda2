//! WebAssembly bindings behind `www/index.html`. Every function returns a
//! flat `Vec<f64>` (row-major) so the page can read it as a `Float64Array`.

use wasm_bindgen::prelude::*;

/// The computations themselves, callable from native code.
pub mod compute {
    use dblf::belief::{recursive_forecast, BiasedDynamics};
    use dblf::delay::{AugmentedState, DelaySpec, DelayedEnv};
    use dblf::envs::controllers::random_action;
    use dblf::envs::{rollout, Env, EnvConfig, EnvId};
    use dblf::numcore::RngStreams;
    use dblf::theory::{measure_rollout_errors, LipschitzSystem};

    fn msg(e: dblf::Error) -> String {
        e.to_string()
    }

    /// Scalar system `x ↦ l·x` against `x ↦ l·x + eps`: rows of
    /// `(delta, measured, bound)` for `delta = 1..=delta_max`.
    pub fn bound_curve(l: f64, eps: f64, delta_max: usize, seed: u64) -> Result<Vec<f64>, String> {
        if delta_max == 0 || delta_max > 512 {
            return Err("delta_max must lie in 1..=512".into());
        }
        let deltas: Vec<usize> = (1..=delta_max).collect();
        let report = measure_rollout_errors(&LipschitzSystem::scalar(l, eps), &deltas, 16, seed, 1.0).map_err(msg)?;
        Ok(report
            .rows
            .iter()
            .flat_map(|r| [r.delta as f64, r.measured_recursive.unwrap_or(f64::NAN), r.geometric_bound])
            .collect())
    }

    /// Pendulum under random torques behind a delay wrapper: rows of
    /// `(t, true angle, observed angle, effective delay)`.
    pub fn delayed_pendulum(delta_max: usize, uniform: bool, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
        let env = Env::new(EnvConfig::new(EnvId::Pendulum)).map_err(msg)?;
        let spec = if uniform { DelaySpec::uniform(delta_max) } else { DelaySpec::constant(delta_max) }.map_err(msg)?;
        let mut denv = DelayedEnv::new(env.clone(), spec).map_err(msg)?.with_horizon(steps.max(1));
        let mut aug = denv.reset(seed).map_err(msg)?;
        let mut rng = RngStreams::new(seed).stream("web.actions");
        let angle = |s: &[f64]| s[1].atan2(s[0]);
        let mut out = Vec::with_capacity(4 * steps);
        for t in 0..steps {
            out.extend([t as f64, angle(denv.true_state()), angle(&aug.anchor_state), aug.effective_delay as f64]);
            if denv.is_done() {
                break;
            }
            aug = denv.step(&random_action(&env, &mut rng)).map_err(msg)?.0;
        }
        Ok(out)
    }

    /// Mass-spring-damper forecast from a `delta`-step-old observation by
    /// recursing a model with constant bias `bias`: rows of
    /// `(horizon, true position, forecast position, L1 error)`.
    pub fn recursive_drift(delta: usize, bias: f64, seed: u64) -> Result<Vec<f64>, String> {
        if delta == 0 || delta > 200 {
            return Err("delta must lie in 1..=200".into());
        }
        let env = Env::new(EnvConfig::new(EnvId::MassSpringDamper)).map_err(msg)?;
        let mut rng = RngStreams::new(seed).stream("web.actions");
        let mut policy = |_: &[f64]| random_action(&env, &mut rng);
        let traj = rollout(&env, &mut policy, delta, seed).map_err(msg)?;
        let aug = AugmentedState {
            anchor_state: traj.transitions[0].state.clone(),
            action_queue: traj.transitions.iter().map(|x| x.action.clone()).collect(),
            reward_queue: traj.transitions.iter().map(|x| x.reward).collect(),
            effective_delay: traj.len(),
            t: 0,
        };
        let model = BiasedDynamics { env: env.clone(), bias: vec![bias, bias] };
        let forecast = recursive_forecast(&model, &aug).map_err(msg)?;
        Ok(traj
            .transitions
            .iter()
            .zip(&forecast)
            .enumerate()
            .flat_map(|(i, (x, f))| {
                let l1: f64 = x.next_state.iter().zip(f).map(|(a, b)| (a - b).abs()).sum();
                [(i + 1) as f64, x.next_state[0], f[0], l1]
            })
            .collect())
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn bound_curve(l: f64, eps: f64, delta_max: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    compute::bound_curve(l, eps, delta_max, seed).map_err(js)
}

#[wasm_bindgen]
pub fn delayed_pendulum(delta_max: usize, uniform: bool, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    compute::delayed_pendulum(delta_max, uniform, steps, seed).map_err(js)
}

#[wasm_bindgen]
pub fn recursive_drift(delta: usize, bias: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    compute::recursive_drift(delta, bias, seed).map_err(js)
}
