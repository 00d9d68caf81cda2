//! Central finite-difference checks of tape gradients.
//!
//! Every evaluation of the checked function runs on a fresh tape seeded with
//! the same value, so stochastic ops (dropout masks, Gaussian noise) are held
//! fixed across the perturbed evaluations.

use rand::seq::index::sample;

use super::array::DArray;
use super::params::{ParamId, ParamStore};
use super::rng::RngStreams;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so that two tiny gradients that
/// agree in absolute terms are not reported as a large relative mismatch.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Components whose one-sided slopes disagree (a ReLU/clamp kink lies
    /// inside the stencil); they are excluded from `max_rel_error`.
    pub kinks: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar_of(t: &Tape, v: Var) -> Result<f64> {
    let val = t.value(v);
    if val.len() != 1 {
        return Err(Error::NotScalar(val.shape().to_vec()));
    }
    let x = val.item();
    if !x.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(x)
}

struct Stencil {
    eps: f64,
    report: GradCheckReport,
}

impl Stencil {
    fn compare(&mut self, analytic: f64, f0: f64, plus: f64, minus: f64) {
        let e = self.eps;
        let numeric = (plus - minus) / (2.0 * e);
        let fwd = (plus - f0) / e;
        let bwd = (f0 - minus) / e;
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1.0) {
            self.report.kinks += 1;
            return;
        }
        self.report.checked += 1;
        self.report.max_rel_error = self.report.max_rel_error.max(rel_error(analytic, numeric));
    }
}

/// Checks `f(inputs)` (a scalar) against central differences at every
/// component of every input.
pub fn grad_check_report<F>(f: F, inputs: &[DArray], eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check eps {eps}")));
    }
    let eval = |xs: &[DArray]| -> Result<f64> {
        let mut t = Tape::seeded(seed);
        let vars: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let y = f(&mut t, &vars)?;
        scalar_of(&t, y)
    };
    let mut t = Tape::seeded(seed);
    let vars: Vec<Var> = inputs.iter().map(|x| t.input_grad(x.clone())).collect();
    let y = f(&mut t, &vars)?;
    let f0 = scalar_of(&t, y)?;
    t.backward(y, &mut [])?;
    let mut st = Stencil { eps, report: GradCheckReport::default() };
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = t.grad(*v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = xs[k].data()[j];
            xs[k].data_mut()[j] = x0 + eps;
            let plus = eval(&xs)?;
            xs[k].data_mut()[j] = x0 - eps;
            let minus = eval(&xs)?;
            xs[k].data_mut()[j] = x0;
            st.compare(a, f0, plus, minus);
        }
    }
    Ok(st.report)
}

/// Worst relative error between tape gradients and central differences.
pub fn grad_check<F>(f: F, inputs: &[DArray], eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(f, inputs, eps, seed)?.max_rel_error)
}

/// Checks parameter gradients of `f(store)`. At most `per_param` randomly
/// chosen components of each trainable tensor are perturbed; `None` checks
/// all of them. Existing gradients in `store` are zeroed.
pub fn grad_check_params<F>(
    f: F,
    store: &mut ParamStore,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_model(store, |s| s, |t, s| f(t, s), eps, per_param, seed)
}

/// [`grad_check_params`] for a loss computed by a model that owns its
/// parameters: `store` selects the checked store inside `model`, which is
/// perturbed in place between evaluations of `f(model)`.
pub fn grad_check_model<M, S, F>(
    model: &mut M,
    store: S,
    f: F,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: Fn(&mut M) -> &mut ParamStore,
    F: Fn(&mut Tape, &M) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check eps {eps}")));
    }
    store(model).zero_grads();
    let mut t = Tape::seeded(seed);
    let y = f(&mut t, model)?;
    let f0 = scalar_of(&t, y)?;
    t.backward(y, &mut [store(model)])?;
    let mut pick = RngStreams::new(seed).stream("grad_check.pick");
    let mut st = Stencil { eps, report: GradCheckReport::default() };
    let ids: Vec<ParamId> = store(model).trainable().collect();
    let eval = |model: &M| -> Result<f64> {
        let mut t = Tape::seeded(seed);
        let y = f(&mut t, model)?;
        scalar_of(&t, y)
    };
    for id in ids {
        let n = store(model).value(id).len();
        let idx: Vec<usize> = match per_param {
            Some(k) if k < n => sample(&mut pick, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let analytic = store(model).grad(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for j in idx {
            let x0 = store(model).value(id).data()[j];
            store(model).value_mut(id).data_mut()[j] = x0 + eps;
            let plus = eval(model)?;
            store(model).value_mut(id).data_mut()[j] = x0 - eps;
            let minus = eval(model)?;
            store(model).value_mut(id).data_mut()[j] = x0;
            st.compare(analytic[j], f0, plus, minus);
        }
    }
    Ok(st.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let w = DArray::vector(vec![0.3, -1.2, 2.0]);
        let err = grad_check(
            |t, v| {
                let c = t.input(DArray::vector(vec![1.5, 0.5, -2.0]));
                let y = t.mul(v[0], c)?;
                t.sum(y)
            },
            &[w],
            1e-5,
            0,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn kink_is_detected_not_counted() {
        let r = grad_check_report(
            |t, v| {
                let y = t.relu(v[0])?;
                t.sum(y)
            },
            &[DArray::vector(vec![0.0, 1.0])],
            1e-5,
            0,
        )
        .unwrap();
        assert_eq!((r.kinks, r.checked), (1, 1));
        assert!(r.max_rel_error < 1e-9);
    }
}
