use rand::Rng;

use super::{BeliefBatch, Dfbt, RecursiveModel};
use crate::delay::{window_at, DelaySpec};
use crate::envs::Dataset;
use crate::error::{Error, Result};
use crate::numcore::rng::RngStreams;
use crate::numcore::{Adam, AdamConfig, DArray, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Defaults to one pass over the samples per epoch.
    pub steps_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub seed: u64,
}

impl TrainConfig {
    /// Adam with the given learning rate and no decay.
    pub fn new(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self { epochs, steps_per_epoch: None, batch_size, lr, weight_decay: 0.0, betas: (0.9, 0.999), seed }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps_per_epoch = Some(steps);
        self
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.betas.0, beta2: self.betas.1, ..AdamConfig::adamw(self.lr, self.weight_decay) }
    }

    fn steps(&self, n_samples: usize) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| n_samples.div_ceil(self.batch_size.max(1)))
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("training needs a positive batch size and learning rate"));
        }
        Ok(())
    }
}

/// Fits the direct forecaster on windows drawn uniformly over all anchors
/// with a full window. Each sample's token count follows `delay`. Returns the
/// mean training loss of every epoch.
pub fn train_dfbt(model: &mut Dfbt, data: &Dataset, delay: &DelaySpec, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let cap = model.config.delta_max;
    if delay.delta_max > cap {
        return Err(Error::invalid(format!("delay up to {} exceeds model capacity {cap}", delay.delta_max)));
    }
    let dm = delay.delta_max;
    let index: Vec<(usize, usize)> = data
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(k, tr)| (0..(tr.len() + 1).saturating_sub(dm)).map(move |j| (k, j)))
        .collect();
    if index.is_empty() {
        return Err(Error::invalid(format!("no trajectory has {dm} transitions")));
    }
    let streams = RngStreams::new(cfg.seed);
    let mut rng = streams.stream("belief.batches");
    let mut opt = Adam::new(cfg.adam())?;
    let steps = cfg.steps(index.len());
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..steps {
            let mut windows = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (k, j) = index[rng.random_range(0..index.len())];
                let eff = delay.sample(&mut rng);
                windows.push(window_at(&data.trajectories[k], j, eff, eff, cap)?);
            }
            let seqs: Vec<_> = windows.iter().map(|w| &w.tokens).collect();
            let targets: Vec<&[Vec<f64>]> = windows.iter().map(|w| &w.states[1..]).collect();
            let batch = BeliefBatch::new(&seqs, &targets, cap)?;
            let global = (epoch * steps + step) as u64;
            let mut t = Tape::new().with_rng(streams.indexed("dfbt.dropout", global));
            let loss = model.loss(&mut t, &batch, true)?;
            total += t.value(loss).item();
            model.params.zero_grads();
            t.backward(loss, &mut [&mut model.params])?;
            opt.step(&mut model.params)?;
        }
        curve.push(total / steps.max(1) as f64);
    }
    Ok(curve)
}

/// Fits the one-step model on every `(s, a, s')` transition of `data`.
pub fn train_recursive(model: &mut RecursiveModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let rows: Vec<_> = data.trajectories.iter().flat_map(|t| t.transitions.iter()).collect();
    if rows.is_empty() {
        return Err(Error::invalid("no transitions to train on"));
    }
    let (sd, ad) = (model.config.state_dim, model.config.action_dim);
    let streams = RngStreams::new(cfg.seed);
    let mut rng = streams.stream("belief.batches");
    let mut opt = Adam::new(cfg.adam())?;
    let steps = cfg.steps(rows.len());
    let b = cfg.batch_size;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let (mut s, mut a, mut n) = (Vec::with_capacity(b * sd), Vec::with_capacity(b * ad), Vec::with_capacity(b * sd));
            for _ in 0..b {
                let tr = rows[rng.random_range(0..rows.len())];
                s.extend_from_slice(&tr.state);
                a.extend_from_slice(&tr.action);
                n.extend_from_slice(&tr.next_state);
            }
            let s = DArray::new(vec![b, sd], s)?;
            let a = DArray::new(vec![b, ad], a)?;
            let n = DArray::new(vec![b, sd], n)?;
            let mut t = Tape::new();
            let loss = model.loss(&mut t, &s, &a, &n)?;
            total += t.value(loss).item();
            model.params.zero_grads();
            t.backward(loss, &mut [&mut model.params])?;
            opt.step(&mut model.params)?;
        }
        curve.push(total / steps.max(1) as f64);
    }
    Ok(curve)
}
