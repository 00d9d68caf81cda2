//! Causal-attention direct forecaster.
//!
//! Tokens are normalised feature-wise, embedded, given learned position
//! embeddings and passed through pre-norm transformer blocks. Position `i`
//! predicts the state `i + 1` steps after the anchor as
//! `anchor + scale_i ⊙ head(h_i)`, where `scale_i` is the dataset spread of
//! the `i + 1`-step state change.

use super::normalize::Normalizer;
use super::{BeliefBatch, LossKind};
use crate::delay::TokenSequence;
use crate::error::{Error, Result};
use crate::numcore::rng::{normal_vec, RngStreams};
use crate::numcore::{DArray, LayerNorm, Linear, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DfbtConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub delta_max: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub loss: LossKind,
}

impl DfbtConfig {
    /// 10 blocks, hidden 256, 4 heads, dropout 0.1.
    pub fn paper(state_dim: usize, action_dim: usize, delta_max: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            delta_max,
            hidden: 256,
            heads: 4,
            layers: 10,
            ff_mult: 4,
            dropout: 0.1,
            loss: LossKind::Mse,
        }
    }

    /// 2 blocks, hidden 64, 4 heads.
    pub fn desk(state_dim: usize, action_dim: usize, delta_max: usize) -> Self {
        Self { hidden: 64, layers: 2, ..Self::paper(state_dim, action_dim, delta_max) }
    }

    pub fn token_width(&self) -> usize {
        self.state_dim + self.action_dim + 1
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!("hidden {} not divisible by {} heads", self.hidden, self.heads)));
        }
        if self.delta_max == 0 || self.state_dim == 0 || self.layers == 0 {
            return Err(Error::invalid("empty DFBT dimensions"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct Dfbt {
    pub config: DfbtConfig,
    pub params: ParamStore,
    norm: Normalizer,
    embed: Linear,
    pos: crate::numcore::ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
    log_std_head: Option<Linear>,
}

impl Dfbt {
    pub fn new(config: DfbtConfig, norm: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        norm.check(config.state_dim, config.action_dim, config.delta_max)?;
        let mut params = ParamStore::new();
        let mut rng = RngStreams::new(seed).stream("dfbt.init");
        let h = config.hidden;
        let embed = Linear::new(&mut params, "embed", config.token_width(), h, &mut rng)?;
        let pos_init: Vec<f64> = normal_vec(&mut rng, config.delta_max * h).into_iter().map(|z| 0.02 * z).collect();
        let pos = params.add("pos", DArray::new(vec![config.delta_max, h], pos_init)?)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("block{l}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut params, &format!("{p}.ln1"), h)?,
                q: Linear::new(&mut params, &format!("{p}.q"), h, h, &mut rng)?,
                k: Linear::new(&mut params, &format!("{p}.k"), h, h, &mut rng)?,
                v: Linear::new(&mut params, &format!("{p}.v"), h, h, &mut rng)?,
                proj: Linear::new(&mut params, &format!("{p}.proj"), h, h, &mut rng)?,
                ln2: LayerNorm::new(&mut params, &format!("{p}.ln2"), h)?,
                ff1: Linear::new(&mut params, &format!("{p}.ff1"), h, config.ff_mult * h, &mut rng)?,
                ff2: Linear::new(&mut params, &format!("{p}.ff2"), config.ff_mult * h, h, &mut rng)?,
            });
        }
        let ln_f = LayerNorm::new(&mut params, "ln_f", h)?;
        let head = Linear::new(&mut params, "head", h, config.state_dim, &mut rng)?;
        let log_std_head = match config.loss {
            LossKind::GaussianNll => Some(Linear::new(&mut params, "log_std_head", h, config.state_dim, &mut rng)?),
            LossKind::Mse => None,
        };
        norm.store(&mut params)?;
        store_meta(&mut params, &config)?;
        Ok(Self { config, params, norm, embed, pos, blocks, ln_f, head, log_std_head })
    }

    /// Rebuilds a model from a checkpointed parameter table.
    pub fn from_params(params: ParamStore) -> Result<Self> {
        let config = load_meta(&params)?;
        config.validate()?;
        let norm = Normalizer::load(&params)?;
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("block{l}");
                Ok(Block {
                    ln1: LayerNorm::load(&params, &format!("{p}.ln1"))?,
                    q: Linear::load(&params, &format!("{p}.q"))?,
                    k: Linear::load(&params, &format!("{p}.k"))?,
                    v: Linear::load(&params, &format!("{p}.v"))?,
                    proj: Linear::load(&params, &format!("{p}.proj"))?,
                    ln2: LayerNorm::load(&params, &format!("{p}.ln2"))?,
                    ff1: Linear::load(&params, &format!("{p}.ff1"))?,
                    ff2: Linear::load(&params, &format!("{p}.ff2"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed: Linear::load(&params, "embed")?,
            pos: params.require("pos")?,
            blocks,
            ln_f: LayerNorm::load(&params, "ln_f")?,
            head: Linear::load(&params, "head")?,
            log_std_head: match config.loss {
                LossKind::GaussianNll => Some(Linear::load(&params, "log_std_head")?),
                LossKind::Mse => None,
            },
            norm,
            config,
            params,
        })
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn n_trainable(&self) -> usize {
        self.params.trainable().map(|id| self.params.value(id).len()).sum()
    }

    fn attention(&self, t: &mut Tape, b: &Block, x: Var, train: bool) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        let (bsz, len, h) = (shape[0], shape[1], shape[2]);
        let nh = self.config.heads;
        let hd = h / nh;
        let p = &self.params;
        let split = |t: &mut Tape, v: Var| -> Result<Var> {
            let v = t.reshape(v, vec![bsz, len, nh, hd])?;
            t.permute(v, &[0, 2, 1, 3])
        };
        let q = b.q.forward(t, p, x)?;
        let q = split(t, q)?;
        let k = b.k.forward(t, p, x)?;
        let k = split(t, k)?;
        let v = b.v.forward(t, p, x)?;
        let v = split(t, v)?;
        let kt = t.transpose(k)?;
        let scores = t.matmul(q, kt)?;
        let scores = t.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let scores = t.causal_mask(scores)?;
        let att = t.softmax(scores, 3)?;
        let att = t.dropout(att, self.config.dropout, train)?;
        let y = t.matmul(att, v)?;
        let y = t.permute(y, &[0, 2, 1, 3])?;
        let y = t.reshape(y, vec![bsz, len, h])?;
        let y = b.proj.forward(t, p, y)?;
        t.dropout(y, self.config.dropout, train)
    }

    fn feed_forward(&self, t: &mut Tape, b: &Block, x: Var, train: bool) -> Result<Var> {
        let p = &self.params;
        let y = b.ff1.forward(t, p, x)?;
        let y = t.relu(y)?;
        let y = t.dropout(y, self.config.dropout, train)?;
        let y = b.ff2.forward(t, p, y)?;
        t.dropout(y, self.config.dropout, train)
    }

    /// `tokens: [B, T, width]`, `anchors: [B, state_dim]` (raw units).
    /// Returns predicted states `[B, T, state_dim]` and, for the Gaussian
    /// head, their log standard deviations.
    pub fn forward(&self, t: &mut Tape, tokens: Var, anchors: Var, train: bool) -> Result<(Var, Option<Var>)> {
        let shape = t.shape(tokens).to_vec();
        if shape.len() != 3 || shape[2] != self.config.token_width() || shape[1] > self.config.delta_max {
            return Err(Error::shape("dfbt_forward", format!("tokens {shape:?}")));
        }
        let (bsz, len) = (shape[0], shape[1]);
        let sd = self.config.state_dim;
        let p = &self.params;
        let x = self.norm.normalize_prefix(t, tokens)?;
        let mut h = self.embed.forward(t, p, x)?;
        let pos = t.param(p, self.pos);
        let pos = if len < self.config.delta_max { t.slice(pos, 0, 0, len)? } else { pos };
        h = t.add(h, pos)?;
        h = t.dropout(h, self.config.dropout, train)?;
        for b in &self.blocks {
            let n1 = b.ln1.forward(t, p, h)?;
            let a = self.attention(t, b, n1, train)?;
            h = t.add(h, a)?;
            let n2 = b.ln2.forward(t, p, h)?;
            let f = self.feed_forward(t, b, n2, train)?;
            h = t.add(h, f)?;
        }
        let h = self.ln_f.forward(t, p, h)?;
        let out = self.head.forward(t, p, h)?;
        let scale = self.norm.delta_scale(t, len)?;
        let delta = t.mul(out, scale)?;
        let anchors = t.reshape(anchors, vec![bsz, 1, sd])?;
        let rep = repeat_rows(t, anchors, len)?;
        let pred = t.add(delta, rep)?;
        let log_std = match &self.log_std_head {
            Some(l) => {
                let ls = l.forward(t, p, h)?;
                let ls = t.clamp(ls, -10.0, 4.0)?;
                Some(ls)
            }
            None => None,
        };
        Ok((pred, log_std))
    }

    /// Scalar training loss of a batch (mean over valid positions).
    pub fn loss(&self, t: &mut Tape, batch: &BeliefBatch, train: bool) -> Result<Var> {
        let tokens = t.input(batch.tokens.clone());
        let anchors = t.input(batch.anchors.clone());
        let (pred, log_std) = self.forward(t, tokens, anchors, train)?;
        super::masked_loss(t, pred, log_std, &batch.targets, &batch.weights)
    }

    /// Eval-mode predictions for a set of token sequences; entry `b` holds
    /// the `n_valid` predicted states of sequence `b`.
    pub fn predict(&self, seqs: &[&TokenSequence]) -> Result<Vec<Vec<Vec<f64>>>> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = BeliefBatch::from_sequences(seqs, self.config.delta_max)?;
        let mut t = Tape::new();
        t.freeze(&self.params);
        let tokens = t.input(batch.tokens.clone());
        let anchors = t.input(batch.anchors.clone());
        let (pred, _) = self.forward(&mut t, tokens, anchors, false)?;
        Ok(batch.unpack(t.value(pred)))
    }
}

/// `[B, 1, d]` → `[B, len, d]` by concatenation.
fn repeat_rows(t: &mut Tape, x: Var, len: usize) -> Result<Var> {
    let parts = vec![x; len];
    t.concat(&parts, 1)
}

fn store_meta(params: &mut ParamStore, c: &DfbtConfig) -> Result<()> {
    let loss = match c.loss {
        LossKind::Mse => 0.0,
        LossKind::GaussianNll => 1.0,
    };
    let meta = [
        c.state_dim as f64,
        c.action_dim as f64,
        c.delta_max as f64,
        c.hidden as f64,
        c.heads as f64,
        c.layers as f64,
        c.ff_mult as f64,
        c.dropout,
        loss,
    ];
    params.add_frozen("meta.dfbt", DArray::vector(meta.to_vec()))?;
    Ok(())
}

fn load_meta(params: &ParamStore) -> Result<DfbtConfig> {
    let m = params.value(params.require("meta.dfbt")?).data();
    if m.len() != 9 {
        return Err(Error::Format("meta.dfbt has the wrong length".into()));
    }
    Ok(DfbtConfig {
        state_dim: m[0] as usize,
        action_dim: m[1] as usize,
        delta_max: m[2] as usize,
        hidden: m[3] as usize,
        heads: m[4] as usize,
        layers: m[5] as usize,
        ff_mult: m[6] as usize,
        dropout: m[7],
        loss: if m[8] == 0.0 { LossKind::Mse } else { LossKind::GaussianNll },
    })
}
