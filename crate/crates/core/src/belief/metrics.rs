use super::{Belief, OneStepModel};
use crate::delay::window_at;
use crate::envs::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonError {
    /// 1-based forecast horizon.
    pub horizon: usize,
    pub mean_l1: f64,
    pub std_l1: f64,
    pub n: usize,
}

/// Per-horizon L1 belief error, `‖ŝ − s‖₁` averaged over windows.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefErrorCurve {
    pub rows: Vec<HorizonError>,
}

impl BeliefErrorCurve {
    pub fn at(&self, horizon: usize) -> Option<&HorizonError> {
        self.rows.iter().find(|r| r.horizon == horizon)
    }

    /// Largest mean error over all horizons.
    pub fn max_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.mean_l1).fold(0.0, f64::max)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `predicted[b][i]` is compared with `truth[b][i]`; sequences may have
/// different lengths (horizon `i + 1` only counts the sequences that reach it).
pub fn belief_error(predicted: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> Result<BeliefErrorCurve> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("belief_error", format!("{} predictions, {} targets", predicted.len(), truth.len())));
    }
    let horizon = predicted.iter().map(Vec::len).max().unwrap_or(0);
    if horizon == 0 {
        return Err(Error::invalid("belief error of an empty set"));
    }
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::shape("belief_error", format!("{} predicted states, {} true", p.len(), t.len())));
        }
        for (i, (a, b)) in p.iter().zip(t).enumerate() {
            if a.len() != b.len() {
                return Err(Error::shape("belief_error", "state widths differ"));
            }
            per[i].push(l1(a, b));
        }
    }
    let rows = per
        .iter()
        .enumerate()
        .map(|(i, xs)| {
            let (mean_l1, std_l1) = mean_std(xs);
            HorizonError { horizon: i + 1, mean_l1, std_l1, n: xs.len() }
        })
        .collect();
    Ok(BeliefErrorCurve { rows })
}

/// Forecasts `delta` steps ahead from every `stride`-th anchor of `data`
/// that has a full window and scores the result.
pub fn evaluate_belief(belief: &Belief, data: &Dataset, delta: usize, stride: usize) -> Result<BeliefErrorCurve> {
    if delta == 0 || stride == 0 {
        return Err(Error::invalid("delta and stride must be positive"));
    }
    let cap = belief.capacity().unwrap_or(delta);
    if delta > cap {
        return Err(Error::invalid(format!("delta {delta} exceeds belief capacity {cap}")));
    }
    const CHUNK: usize = 256;
    let mut windows = Vec::new();
    for tr in &data.trajectories {
        for j in (0..(tr.len() + 1).saturating_sub(delta)).step_by(stride) {
            windows.push(window_at(tr, j, delta, delta, cap)?);
        }
    }
    let mut pred = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let seqs: Vec<_> = chunk.iter().map(|w| &w.tokens).collect();
        pred.extend(belief.forecast(&seqs)?);
    }
    let truth: Vec<Vec<Vec<f64>>> = windows.into_iter().map(|w| w.states[1..].to_vec()).collect();
    belief_error(&pred, &truth)
}

/// L1 error of one application of `model` on every transition of `data`.
pub fn one_step_errors<M: OneStepModel + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<f64>> {
    let rows: Vec<_> = data.trajectories.iter().flat_map(|t| t.transitions.iter()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(1024) {
        let states: Vec<Vec<f64>> = chunk.iter().map(|x| x.state.clone()).collect();
        let actions: Vec<&[f64]> = chunk.iter().map(|x| x.action.as_slice()).collect();
        let next = model.step_batch(&states, &actions)?;
        out.extend(next.iter().zip(chunk).map(|(p, x)| l1(p, &x.next_state)));
    }
    Ok(out)
}
