use crate::envs::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{DArray, ParamStore, Tape, Var};

const STD_FLOOR: f64 = 1e-6;

/// Dataset statistics used to whiten model inputs and scale outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    /// Per token feature (state, action, reward).
    pub token_mean: Vec<f64>,
    pub token_std: Vec<f64>,
    /// `[delta_max, state_dim]` root-mean-square of `s_{j+i+1} − s_j`.
    pub delta_scale: DArray,
}

fn mean_std(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for (k, v) in r.iter().enumerate() {
            var[k] += (v - mean[k]).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect())
}

impl Normalizer {
    pub fn identity(state_dim: usize, action_dim: usize, delta_max: usize) -> Self {
        let w = state_dim + action_dim + 1;
        Self {
            token_mean: vec![0.0; w],
            token_std: vec![1.0; w],
            delta_scale: DArray::filled(vec![delta_max, state_dim], 1.0),
        }
    }

    pub fn fit(data: &Dataset, delta_max: usize) -> Result<Self> {
        let trajs = &data.trajectories;
        let first = trajs
            .iter()
            .find_map(|t| t.transitions.first())
            .ok_or_else(|| Error::invalid("cannot fit statistics on an empty dataset"))?;
        let sd = first.state.len();
        let ad = first.action.len();
        let states: Vec<&[f64]> = trajs.iter().flat_map(|t| t.transitions.iter().map(|x| x.state.as_slice())).collect();
        let actions: Vec<&[f64]> = trajs.iter().flat_map(|t| t.transitions.iter().map(|x| x.action.as_slice())).collect();
        let rewards: Vec<[f64; 1]> = trajs.iter().flat_map(|t| t.transitions.iter().map(|x| [x.reward])).collect();
        let rewards: Vec<&[f64]> = rewards.iter().map(|r| r.as_slice()).collect();
        let (sm, ss) = mean_std(&states, sd);
        let (am, as_) = mean_std(&actions, ad);
        let (rm, rs) = mean_std(&rewards, 1);
        let mut sq = vec![0.0; delta_max * sd];
        let mut counts = vec![0usize; delta_max];
        for traj in trajs {
            let states = traj.states();
            for j in 0..traj.len() {
                for i in 0..delta_max.min(traj.len() - j) {
                    counts[i] += 1;
                    for d in 0..sd {
                        sq[i * sd + d] += (states[j + i + 1][d] - states[j][d]).powi(2);
                    }
                }
            }
        }
        for i in 0..delta_max {
            for d in 0..sd {
                let v = &mut sq[i * sd + d];
                *v = if counts[i] > 0 { (*v / counts[i] as f64).sqrt().max(STD_FLOOR) } else { 1.0 };
            }
        }
        Ok(Self {
            token_mean: [sm, am, rm].concat(),
            token_std: [ss, as_, rs].concat(),
            delta_scale: DArray::new(vec![delta_max, sd], sq)?,
        })
    }

    pub fn delta_max(&self) -> usize {
        self.delta_scale.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.delta_scale.shape()[1]
    }

    pub(crate) fn check(&self, state_dim: usize, action_dim: usize, delta_max: usize) -> Result<()> {
        if self.token_mean.len() != state_dim + action_dim + 1
            || self.token_std.len() != self.token_mean.len()
            || self.delta_scale.shape() != [delta_max, state_dim]
        {
            return Err(Error::shape(
                "normalizer",
                format!("statistics do not match dims ({state_dim}, {action_dim}, {delta_max})"),
            ));
        }
        Ok(())
    }

    pub(crate) fn store(&self, params: &mut ParamStore) -> Result<()> {
        params.add_frozen("norm.token_mean", DArray::vector(self.token_mean.clone()))?;
        params.add_frozen("norm.token_std", DArray::vector(self.token_std.clone()))?;
        params.add_frozen("norm.delta_scale", self.delta_scale.clone())?;
        Ok(())
    }

    pub(crate) fn load(params: &ParamStore) -> Result<Self> {
        Ok(Self {
            token_mean: params.value(params.require("norm.token_mean")?).data().to_vec(),
            token_std: params.value(params.require("norm.token_std")?).data().to_vec(),
            delta_scale: params.value(params.require("norm.delta_scale")?).clone(),
        })
    }

    /// `(x − mean) / std` over the trailing feature axis of `x`; `x` may hold
    /// a prefix of the token features (state, or state and action).
    pub(crate) fn normalize_prefix(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let w = *t.shape(x).last().ok_or_else(|| Error::shape("normalize", "scalar"))?;
        if w > self.token_mean.len() {
            return Err(Error::shape("normalize", format!("{w} features")));
        }
        let neg_mean = t.input(DArray::vector(self.token_mean[..w].iter().map(|m| -m).collect()));
        let inv_std = t.input(DArray::vector(self.token_std[..w].iter().map(|s| 1.0 / s).collect()));
        let y = t.add(x, neg_mean)?;
        t.mul(y, inv_std)
    }

    /// Output scale for the first `len` horizons, `[len, state_dim]`.
    pub(crate) fn delta_scale(&self, t: &mut Tape, len: usize) -> Result<Var> {
        let sd = self.state_dim();
        let rows = self.delta_scale.data()[..len * sd].to_vec();
        Ok(t.input(DArray::new(vec![len, sd], rows)?))
    }
}
