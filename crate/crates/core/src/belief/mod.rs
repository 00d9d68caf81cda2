//! Belief forecasters: the direct causal-attention model, the recursive
//! one-step baseline, their training loops and the L1 belief-error metric.

pub mod dfbt;
pub mod metrics;
pub mod normalize;
pub mod recursive;
pub mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::delay::TokenSequence;
use crate::error::{Error, Result};
use crate::numcore::{checkpoint, DArray, ParamStore, Tape, Var};

pub use dfbt::{Dfbt, DfbtConfig};
pub use metrics::{belief_error, evaluate_belief, one_step_errors, BeliefErrorCurve, HorizonError};
pub use normalize::Normalizer;
pub use recursive::{
    recursive_forecast, recursive_forecast_batch, BiasedDynamics, OneStepModel, OracleDynamics, RecursiveConfig,
    RecursiveModel,
};
pub use train::{train_dfbt, train_recursive, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    GaussianNll,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "gaussian_nll" => Ok(LossKind::GaussianNll),
            _ => Err(Error::invalid(format!("loss kind `{s}`"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::GaussianNll => "gaussian_nll",
        })
    }
}

/// Padded batch of token sequences with per-position targets.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefBatch {
    /// `[B, T, width]`
    pub tokens: DArray,
    /// `[B, state_dim]`
    pub anchors: DArray,
    /// `[B, T, state_dim]`, zero at masked positions.
    pub targets: DArray,
    /// `[B, T, state_dim]`: `1 / (number of valid positions)` where valid.
    pub weights: DArray,
    pub n_valid: Vec<usize>,
}

impl BeliefBatch {
    /// Sequences must share `state_dim`/`action_dim` and have at most
    /// `capacity` tokens. `targets[b]` lists the true states for the valid
    /// positions of sequence `b`.
    pub fn new(seqs: &[&TokenSequence], targets: &[&[Vec<f64>]], capacity: usize) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (sd, w) = (first.state_dim, first.width());
        let b = seqs.len();
        let mut tokens = vec![0.0; b * capacity * w];
        let mut anchors = vec![0.0; b * sd];
        let mut tg = vec![0.0; b * capacity * sd];
        let mut valid = vec![false; b * capacity];
        let mut n_valid = Vec::with_capacity(b);
        for (i, s) in seqs.iter().enumerate() {
            if s.state_dim != sd || s.width() != w || s.len() > capacity {
                return Err(Error::shape("belief_batch", "inconsistent token sequences"));
            }
            let n = s.n_valid();
            tokens[i * capacity * w..i * capacity * w + s.tokens.len()].copy_from_slice(&s.tokens);
            anchors[i * sd..(i + 1) * sd].copy_from_slice(&s.token(0)[..sd]);
            if let Some(tr) = targets.get(i) {
                if tr.len() != n {
                    return Err(Error::shape("belief_batch", format!("{} targets for {n} valid tokens", tr.len())));
                }
                for (p, st) in tr.iter().enumerate() {
                    tg[(i * capacity + p) * sd..(i * capacity + p + 1) * sd].copy_from_slice(st);
                }
            }
            for p in 0..n {
                valid[i * capacity + p] = true;
            }
            n_valid.push(n);
        }
        let total: usize = n_valid.iter().sum();
        if total == 0 {
            return Err(Error::invalid("all positions are masked"));
        }
        let weights = valid.iter().flat_map(|v| std::iter::repeat_n(if *v { 1.0 / total as f64 } else { 0.0 }, sd)).collect();
        Ok(Self {
            tokens: DArray::new(vec![b, capacity, w], tokens)?,
            anchors: DArray::new(vec![b, sd], anchors)?,
            targets: DArray::new(vec![b, capacity, sd], tg)?,
            weights: DArray::new(vec![b, capacity, sd], weights)?,
            n_valid,
        })
    }

    pub fn from_sequences(seqs: &[&TokenSequence], capacity: usize) -> Result<Self> {
        Self::new(seqs, &[], capacity)
    }

    /// Splits a `[B, T, state_dim]` prediction into the valid rows of each
    /// sequence.
    pub fn unpack(&self, pred: &DArray) -> Vec<Vec<Vec<f64>>> {
        let s = pred.shape();
        let (cap, sd) = (s[1], s[2]);
        self.n_valid
            .iter()
            .enumerate()
            .map(|(b, &n)| (0..n).map(|p| pred.data()[(b * cap + p) * sd..(b * cap + p + 1) * sd].to_vec()).collect())
            .collect()
    }
}

/// Weighted sum of per-entry losses: squared error, or the Gaussian negative
/// log-likelihood when `log_std` is given.
pub fn masked_loss(t: &mut Tape, pred: Var, log_std: Option<Var>, targets: &DArray, weights: &DArray) -> Result<Var> {
    if t.shape(pred) != targets.shape() || targets.shape() != weights.shape() {
        return Err(Error::shape(
            "belief_loss",
            format!("pred {:?}, targets {:?}, weights {:?}", t.shape(pred), targets.shape(), weights.shape()),
        ));
    }
    let target = t.input(targets.clone());
    let w = t.input(weights.clone());
    let d = t.sub(pred, target)?;
    let per = match log_std {
        None => t.mul(d, d)?,
        Some(ls) => {
            let neg = t.neg(ls)?;
            let inv = t.exp(neg)?;
            let z = t.mul(d, inv)?;
            let z2 = t.mul(z, z)?;
            let half = t.scale(z2, 0.5)?;
            let nll = t.add(half, ls)?;
            t.add_scalar(nll, 0.5 * (2.0 * std::f64::consts::PI).ln())?
        }
    };
    let weighted = t.mul(per, w)?;
    t.sum(weighted)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefKind {
    Dfbt,
    Recursive,
    Oracle,
}

impl FromStr for BeliefKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfbt" => Ok(BeliefKind::Dfbt),
            "recursive" => Ok(BeliefKind::Recursive),
            "oracle" => Ok(BeliefKind::Oracle),
            _ => Err(Error::invalid(format!("belief kind `{s}`"))),
        }
    }
}

impl fmt::Display for BeliefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeliefKind::Dfbt => "dfbt",
            BeliefKind::Recursive => "recursive",
            BeliefKind::Oracle => "oracle",
        })
    }
}

/// A trained (or exact) forecaster of the hidden states.
#[derive(Clone, Debug)]
pub enum Belief {
    Dfbt(Box<Dfbt>),
    Recursive(Box<RecursiveModel>),
    /// Recursion through the environment's own noise-free dynamics; exact on
    /// deterministic environments.
    Oracle(OracleDynamics),
}

impl Belief {
    pub fn kind(&self) -> BeliefKind {
        match self {
            Belief::Dfbt(_) => BeliefKind::Dfbt,
            Belief::Recursive(_) => BeliefKind::Recursive,
            Belief::Oracle(_) => BeliefKind::Oracle,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Belief::Dfbt(m) => m.config.state_dim,
            Belief::Recursive(m) => m.config.state_dim,
            Belief::Oracle(o) => o.state_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Belief::Dfbt(m) => m.config.action_dim,
            Belief::Recursive(m) => m.config.action_dim,
            Belief::Oracle(o) => o.action_dim(),
        }
    }

    /// Largest token count the belief accepts (unbounded for recursion).
    pub fn capacity(&self) -> Option<usize> {
        match self {
            Belief::Dfbt(m) => Some(m.config.delta_max),
            _ => None,
        }
    }

    /// Predicted states for the valid positions of every sequence.
    pub fn forecast(&self, seqs: &[&TokenSequence]) -> Result<Vec<Vec<Vec<f64>>>> {
        let out = match self {
            Belief::Dfbt(m) => m.predict(seqs)?,
            Belief::Recursive(m) => recursive_forecast_batch(m.as_ref(), seqs)?,
            Belief::Oracle(o) => recursive_forecast_batch(o, seqs)?,
        };
        if out.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("belief forecast".into()));
        }
        Ok(out)
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match self {
            Belief::Dfbt(m) => Some(&m.params),
            Belief::Recursive(m) => Some(&m.params),
            Belief::Oracle(_) => None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = self.params().ok_or_else(|| Error::invalid("the oracle belief has no parameters"))?;
        checkpoint::save(p, path)
    }

    /// Loads a DFBT or recursive checkpoint, telling them apart by metadata.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let params = checkpoint::load(path)?;
        if params.id("meta.dfbt").is_some() {
            Ok(Belief::Dfbt(Box::new(Dfbt::from_params(params)?)))
        } else if params.id("meta.recursive").is_some() {
            Ok(Belief::Recursive(Box::new(RecursiveModel::from_params(params)?)))
        } else {
            Err(Error::Format("checkpoint holds no belief model".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{window_at, DelaySpec};
    use crate::envs::{collect_dataset, Env, PolicyMix};

    fn small_data(env: &Env, n: usize, seed: u64) -> crate::envs::Dataset {
        let mix = PolicyMix::scripted(env, &[("random", 0.5), ("expert", 0.5)]).unwrap();
        collect_dataset(env, &mix, n, seed).unwrap()
    }

    fn tiny_config(env: &Env, delta_max: usize) -> DfbtConfig {
        DfbtConfig { hidden: 16, heads: 2, layers: 1, ..DfbtConfig::desk(env.state_dim(), env.action_dim(), delta_max) }
    }

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let mut t = Tape::new();
        let y = DArray::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = DArray::filled(vec![1, 2, 2], 0.5);
        let p = t.input(y.clone());
        let l = masked_loss(&mut t, p, None, &y, &w).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn unit_variance_nll_is_half_mse_plus_constant() {
        let mut t = Tape::new();
        let y = DArray::new(vec![1, 1, 3], vec![0.0, 1.0, -2.0]).unwrap();
        let p = DArray::new(vec![1, 1, 3], vec![0.5, 0.0, -1.0]).unwrap();
        let w = DArray::filled(vec![1, 1, 3], 1.0);
        let pv = t.input(p.clone());
        let ls = t.input(DArray::zeros(vec![1, 1, 3]));
        let nll = masked_loss(&mut t, pv, Some(ls), &y, &w).unwrap();
        let pv2 = t.input(p);
        let mse = masked_loss(&mut t, pv2, None, &y, &w).unwrap();
        let c = 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((t.value(nll).item() - (0.5 * t.value(mse).item() + c)).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_batch_is_rejected() {
        let env = Env::by_name("pendulum").unwrap();
        let data = small_data(&env, 40, 1);
        let w = window_at(&data.trajectories[0], 0, 3, 3, 4).unwrap();
        let mut empty = w.tokens.clone();
        empty.mask.iter_mut().for_each(|m| *m = false);
        assert!(BeliefBatch::from_sequences(&[&empty], 4).is_err());
    }

    #[test]
    fn dfbt_predictions_ignore_future_tokens() {
        let env = Env::by_name("pendulum").unwrap();
        let data = small_data(&env, 60, 2);
        let norm = Normalizer::fit(&data, 6).unwrap();
        let model = Dfbt::new(tiny_config(&env, 6), norm, 3).unwrap();
        let w = window_at(&data.trajectories[0], 2, 6, 6, 6).unwrap();
        let base = model.predict(&[&w.tokens]).unwrap();
        for k in 1..6 {
            let mut probe = w.tokens.clone();
            let width = probe.width();
            for v in &mut probe.tokens[k * width..(k + 1) * width] {
                *v += 3.7;
            }
            let out = model.predict(&[&probe]).unwrap();
            for i in 0..k {
                assert_eq!(out[0][i], base[0][i], "position {i} moved when token {k} changed");
            }
            assert_ne!(out[0][k], base[0][k]);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let env = Env::by_name("mass_spring_damper").unwrap();
        let data = small_data(&env, 400, 4);
        let norm = Normalizer::fit(&data, 4).unwrap();
        let cfg = TrainConfig::new(4, 16, 3e-3, 5).with_steps(10);
        let delay = DelaySpec::uniform(4).unwrap();
        let run = || {
            let mut m = Dfbt::new(tiny_config(&env, 4), norm.clone(), 6).unwrap();
            let curve = train_dfbt(&mut m, &data, &delay, &cfg).unwrap();
            (m, curve)
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(ca, cb);
        assert!(a.params.same_values(&b.params));
        assert!(ca.last().unwrap() < &ca[0], "{ca:?}");
    }

    #[test]
    fn zero_epochs_leave_the_model_unchanged() {
        let env = Env::by_name("mass_spring_damper").unwrap();
        let data = small_data(&env, 100, 7);
        let norm = Normalizer::fit(&data, 4).unwrap();
        let fresh = Dfbt::new(tiny_config(&env, 4), norm.clone(), 1).unwrap();
        let mut m = fresh.clone();
        let curve = train_dfbt(&mut m, &data, &DelaySpec::constant(4).unwrap(), &TrainConfig::new(0, 8, 1e-3, 0)).unwrap();
        assert!(curve.is_empty());
        assert!(m.params.same_values(&fresh.params));
    }

    #[test]
    fn recursive_training_fits_linear_dynamics() {
        let env = Env::by_name("mass_spring_damper").unwrap();
        let data = small_data(&env, 1000, 8);
        let norm = Normalizer::fit(&data, 1).unwrap();
        let config = RecursiveConfig { hidden: vec![32], ..RecursiveConfig::new(2, 1) };
        let mut m = RecursiveModel::new(config, norm, 2).unwrap();
        let before = one_step_errors(&m, &data).unwrap().iter().sum::<f64>();
        train_recursive(&mut m, &data, &TrainConfig::new(5, 32, 3e-3, 1)).unwrap();
        let after = one_step_errors(&m, &data).unwrap().iter().sum::<f64>();
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn oracle_belief_is_exact_on_deterministic_env() {
        let env = Env::by_name("pendulum").unwrap();
        let data = small_data(&env, 200, 9);
        let belief = Belief::Oracle(OracleDynamics { env });
        let curve = evaluate_belief(&belief, &data, 5, 3).unwrap();
        assert_eq!(curve.rows.len(), 5);
        assert!(curve.max_mean() < 1e-12);
    }

    #[test]
    fn checkpoints_restore_both_model_kinds() {
        let env = Env::by_name("pendulum").unwrap();
        let data = small_data(&env, 60, 10);
        let dir = tempfile::tempdir().unwrap();
        let d = Belief::Dfbt(Box::new(Dfbt::new(tiny_config(&env, 3), Normalizer::fit(&data, 3).unwrap(), 1).unwrap()));
        let r = Belief::Recursive(Box::new(
            RecursiveModel::new(RecursiveConfig::new(3, 1), Normalizer::fit(&data, 1).unwrap(), 1).unwrap(),
        ));
        let w = window_at(&data.trajectories[0], 0, 3, 3, 3).unwrap();
        for (name, b) in [("d.bin", d), ("r.bin", r)] {
            let path = dir.path().join(name);
            b.save(&path).unwrap();
            let back = Belief::load(&path).unwrap();
            assert_eq!(back.kind(), b.kind());
            assert_eq!(back.forecast(&[&w.tokens]).unwrap(), b.forecast(&[&w.tokens]).unwrap());
        }
    }

    #[test]
    fn belief_error_of_empty_set_fails() {
        assert!(belief_error(&[], &[]).is_err());
    }
}
