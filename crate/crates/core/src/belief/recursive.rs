//! Recursive forecasting with a one-step dynamics model.

use super::normalize::Normalizer;
use super::LossKind;
use crate::delay::{AugmentedState, TokenSequence};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::numcore::rng::RngStreams;
use crate::numcore::{DArray, Mlp, ParamStore, Tape, Var};

/// A (possibly learned) map `(s, a) ↦ s'`, applied to a batch of rows.
pub trait OneStepModel {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn step_batch(&self, states: &[Vec<f64>], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>>;
}

/// The environment's own noise-free dynamics.
#[derive(Clone, Debug)]
pub struct OracleDynamics {
    pub env: Env,
}

impl OneStepModel for OracleDynamics {
    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn step_batch(&self, states: &[Vec<f64>], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        states.iter().zip(actions).map(|(s, a)| Ok(self.env.dynamics(s, a)?.0)).collect()
    }
}

/// Exact dynamics plus a constant offset.
#[derive(Clone, Debug)]
pub struct BiasedDynamics {
    pub env: Env,
    pub bias: Vec<f64>,
}

impl OneStepModel for BiasedDynamics {
    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn step_batch(&self, states: &[Vec<f64>], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        states
            .iter()
            .zip(actions)
            .map(|(s, a)| {
                let mut n = self.env.dynamics(s, a)?.0;
                for (v, b) in n.iter_mut().zip(&self.bias) {
                    *v += b;
                }
                Ok(n)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecursiveConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub loss: LossKind,
}

impl RecursiveConfig {
    /// Two hidden layers of 256.
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self { state_dim, action_dim, hidden: vec![256, 256], loss: LossKind::Mse }
    }
}

/// Learned one-step model `s' = s + scale ⊙ mlp(normalised s, a)`.
#[derive(Clone, Debug)]
pub struct RecursiveModel {
    pub config: RecursiveConfig,
    pub params: ParamStore,
    norm: Normalizer,
    mlp: Mlp,
}

impl RecursiveModel {
    /// `norm` supplies input statistics and the one-step output scale (row 0
    /// of its delta scale).
    pub fn new(config: RecursiveConfig, norm: Normalizer, seed: u64) -> Result<Self> {
        norm.check(config.state_dim, config.action_dim, norm.delta_max())?;
        let norm = Normalizer {
            delta_scale: DArray::new(vec![1, config.state_dim], norm.delta_scale.row(0).to_vec())?,
            ..norm
        };
        let mut params = ParamStore::new();
        let mut rng = RngStreams::new(seed).stream("recursive.init");
        let out = match config.loss {
            LossKind::Mse => config.state_dim,
            LossKind::GaussianNll => 2 * config.state_dim,
        };
        let sizes: Vec<usize> = std::iter::once(config.state_dim + config.action_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(out))
            .collect();
        let mlp = Mlp::new(&mut params, "dyn", &sizes, &mut rng)?;
        norm.store(&mut params)?;
        let loss = if config.loss == LossKind::Mse { 0.0 } else { 1.0 };
        params.add_frozen(
            "meta.recursive",
            DArray::vector(vec![config.state_dim as f64, config.action_dim as f64, config.hidden.len() as f64, loss]),
        )?;
        Ok(Self { config, params, norm, mlp })
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        let m = params.value(params.require("meta.recursive")?).data().to_vec();
        if m.len() != 4 {
            return Err(Error::Format("meta.recursive has the wrong length".into()));
        }
        let n_layers = m[2] as usize + 1;
        let mlp = Mlp::load(&params, "dyn", n_layers)?;
        let hidden = mlp.layers[..n_layers - 1].iter().map(|l| l.fan_out).collect();
        let config = RecursiveConfig {
            state_dim: m[0] as usize,
            action_dim: m[1] as usize,
            hidden,
            loss: if m[3] == 0.0 { LossKind::Mse } else { LossKind::GaussianNll },
        };
        let norm = Normalizer::load(&params)?;
        Ok(Self { config, params, norm, mlp })
    }

    /// `states: [B, sd]`, `actions: [B, ad]` → predicted next states `[B, sd]`
    /// and optional log standard deviations.
    pub fn forward(&self, t: &mut Tape, states: Var, actions: Var) -> Result<(Var, Option<Var>)> {
        let sd = self.config.state_dim;
        let x = t.concat(&[states, actions], 1)?;
        let x = self.norm.normalize_prefix(t, x)?;
        let out = self.mlp.forward(t, &self.params, x)?;
        let mean = if self.config.loss == LossKind::GaussianNll { t.slice(out, 1, 0, sd)? } else { out };
        let scale = self.norm.delta_scale(t, 1)?;
        let scale = t.reshape(scale, vec![sd])?;
        let delta = t.mul(mean, scale)?;
        let pred = t.add(delta, states)?;
        let log_std = if self.config.loss == LossKind::GaussianNll {
            let ls = t.slice(out, 1, sd, 2 * sd)?;
            Some(t.clamp(ls, -10.0, 4.0)?)
        } else {
            None
        };
        Ok((pred, log_std))
    }

    pub fn loss(&self, t: &mut Tape, states: &DArray, actions: &DArray, next: &DArray) -> Result<Var> {
        let s = t.input(states.clone());
        let a = t.input(actions.clone());
        let (pred, log_std) = self.forward(t, s, a)?;
        let b = states.shape()[0];
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let w = DArray::filled(next.shape().to_vec(), 1.0 / b as f64);
        super::masked_loss(t, pred, log_std, next, &w)
    }
}

impl OneStepModel for RecursiveModel {
    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn step_batch(&self, states: &[Vec<f64>], actions: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let b = states.len();
        if b == 0 {
            return Ok(Vec::new());
        }
        let (sd, ad) = (self.config.state_dim, self.config.action_dim);
        let s = DArray::new(vec![b, sd], states.concat())?;
        let a = DArray::new(vec![b, ad], actions.concat())?;
        let mut t = Tape::new();
        t.freeze(&self.params);
        let sv = t.input(s);
        let av = t.input(a);
        let (pred, _) = self.forward(&mut t, sv, av)?;
        Ok(t.value(pred).data().chunks(sd).map(<[f64]>::to_vec).collect())
    }
}

/// `Δ` chained applications of `model` starting from the anchor.
pub fn recursive_forecast<M: OneStepModel + ?Sized>(model: &M, aug: &AugmentedState) -> Result<Vec<Vec<f64>>> {
    aug.validate()?;
    let mut s = aug.anchor_state.clone();
    let mut out = Vec::with_capacity(aug.effective_delay);
    for a in &aug.action_queue {
        s = model.step_batch(&[s], &[a.as_slice()])?.pop().expect("one row");
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("recursive_forecast".into()));
        }
        out.push(s.clone());
    }
    Ok(out)
}

/// Batched [`recursive_forecast`] over token sequences.
pub fn recursive_forecast_batch<M: OneStepModel + ?Sized>(
    model: &M,
    seqs: &[&TokenSequence],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut cur: Vec<Vec<f64>> = seqs.iter().map(|s| s.token(0)[..s.state_dim].to_vec()).collect();
    let mut out: Vec<Vec<Vec<f64>>> = seqs.iter().map(|s| Vec::with_capacity(s.n_valid())).collect();
    let horizon = seqs.iter().map(|s| s.n_valid()).max().unwrap_or(0);
    for i in 0..horizon {
        let active: Vec<usize> = (0..seqs.len()).filter(|&b| i < seqs[b].n_valid()).collect();
        let states: Vec<Vec<f64>> = active.iter().map(|&b| cur[b].clone()).collect();
        let actions: Vec<&[f64]> = active
            .iter()
            .map(|&b| {
                let s = seqs[b];
                &s.token(i)[s.state_dim..s.state_dim + s.action_dim]
            })
            .collect();
        let next = model.step_batch(&states, &actions)?;
        for (&b, n) in active.iter().zip(next) {
            if n.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("recursive_forecast".into()));
            }
            out[b].push(n.clone());
            cur[b] = n;
        }
    }
    Ok(out)
}
