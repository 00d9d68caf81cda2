//! Compounding-error bounds for recursive belief forecasting and the
//! direct-versus-recursive comparison, checked on systems with certified
//! Lipschitz constants.
//!
//! Only the belief-error layer is executable. The value-level terms
//! (`L_Q`, `L_π`, `L_V = L_Q(1 + L_π)` and the performance differences
//! `I^true`, `I^recursive`, `I^direct`) multiply these errors in the
//! performance bounds and are not estimated here.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::envs::{Env, EnvId};
use crate::error::{Error, Result};
use crate::numcore::rng::{uniform, RngStreams};

pub type Map = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// `Σ_{k<Δ} L^k · ε`, summed term by term.
pub fn geometric_bound(l_p: f64, eps_p: f64, delta: usize) -> f64 {
    let mut total = 0.0;
    let mut pow = 1.0;
    for _ in 0..delta {
        total += pow;
        pow *= l_p;
    }
    total * eps_p
}

/// Expected geometric term under a delay distribution; `dist[k]` is the
/// probability of delay `k + 1`.
pub fn stochastic_bound(l_p: f64, eps_p: f64, dist: &[f64]) -> Result<f64> {
    let total: f64 = dist.iter().sum();
    if dist.is_empty() || (total - 1.0).abs() > 1e-12 || dist.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(Error::invalid(format!("delay weights sum to {total}")));
    }
    Ok(dist.iter().enumerate().map(|(k, p)| p * geometric_bound(l_p, eps_p, k + 1)).sum())
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// A deterministic map `f`, its approximation `f_θ`, and certified
/// constants `L_P` (w.r.t. `‖Δx‖₂ + ‖Δa‖₂`) and `ε_P = sup ‖f_θ − f‖₂`.
#[derive(Clone)]
pub struct LipschitzSystem {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub f: Map,
    pub f_theta: Map,
    pub l_p: f64,
    pub eps_p: f64,
    pub deterministic: bool,
    /// Box the anchors and actions are sampled from.
    pub state_range: (f64, f64),
    pub action_range: (f64, f64),
}

impl std::fmt::Debug for LipschitzSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LipschitzSystem")
            .field("name", &self.name)
            .field("l_p", &self.l_p)
            .field("eps_p", &self.eps_p)
            .finish_non_exhaustive()
    }
}

impl LipschitzSystem {
    /// `f(x) = l·x` in one dimension with `f_θ(x) = l·x + bias`; the action
    /// channel has no effect.
    pub fn scalar(l: f64, bias: f64) -> Self {
        Self {
            name: format!("scalar(L={l}, bias={bias})"),
            state_dim: 1,
            action_dim: 1,
            f: Arc::new(move |x, _| vec![l * x[0]]),
            f_theta: Arc::new(move |x, _| vec![l * x[0] + bias]),
            l_p: l.abs(),
            eps_p: bias.abs(),
            deterministic: true,
            state_range: (-1.0, 1.0),
            action_range: (-1.0, 1.0),
        }
    }

    /// Linear map `x ↦ A x` with no action channel and an exact `f_θ`.
    pub fn linear(a: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(Error::shape("linear_system", "A must be square"));
        }
        let l_p = operator_norm(&a, 200);
        let m = a.clone();
        let f: Map = Arc::new(move |x, _| m.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect());
        Ok(Self {
            name: format!("linear({n})"),
            state_dim: n,
            action_dim: 1,
            f: f.clone(),
            f_theta: f,
            l_p,
            eps_p: 0.0,
            deterministic: true,
            state_range: (-1.0, 1.0),
            action_range: (0.0, 0.0),
        })
    }

    /// The oscillator's exact dynamics, with `f_θ = f + bias`.
    pub fn mass_spring_damper(env: &Env, bias: &[f64]) -> Result<Self> {
        let osc = *env
            .oscillator()
            .ok_or_else(|| Error::invalid(format!("{} is not a linear system", env.id())))?;
        if bias.len() != 2 {
            return Err(Error::shape("mass_spring_damper", "bias needs two entries"));
        }
        let bias = bias.to_vec();
        let eps_p = l2(&bias);
        let spec = env.spec();
        Ok(Self {
            name: format!("{}(k={})", EnvId::MassSpringDamper, env.config().stiffness),
            state_dim: 2,
            action_dim: 1,
            f: Arc::new(move |x, a| osc.apply(x, a[0])),
            f_theta: Arc::new(move |x, a| osc.apply(x, a[0]).iter().zip(&bias).map(|(v, b)| v + b).collect()),
            l_p: osc.lipschitz(),
            eps_p,
            deterministic: env.config().noise_prob == 0.0,
            state_range: (-2.0, 2.0),
            action_range: (spec.action_low[0], spec.action_high[0]),
        })
    }

    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.state_dim).map(|_| uniform(rng, self.state_range.0, self.state_range.1)).collect()
    }

    fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (lo, hi) = self.action_range;
        (0..self.action_dim).map(|_| if hi > lo { uniform(rng, lo, hi) } else { lo }).collect()
    }
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn operator_norm(a: &[Vec<f64>], iters: usize) -> f64 {
    let n = a.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let av: Vec<f64> = a.iter().map(|r| r.iter().zip(&v).map(|(p, q)| p * q).sum()).collect();
        let mut w = vec![0.0; n];
        for (i, r) in a.iter().enumerate() {
            for (j, p) in r.iter().enumerate() {
                w[j] += p * av[i];
            }
        }
        let norm = l2(&w);
        if norm == 0.0 {
            return 0.0;
        }
        v = w.iter().map(|x| x / norm).collect();
        sigma = norm.sqrt();
    }
    sigma
}

/// Largest observed ratio `‖f(x₁,a₁) − f(x₂,a₂)‖ / (‖x₁−x₂‖ + ‖a₁−a₂‖)`,
/// a lower bound on `L_P`. With `same_action` both points share an action.
pub fn empirical_lipschitz(system: &LipschitzSystem, n_pairs: usize, same_action: bool, seed: u64) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::invalid("empirical_lipschitz needs at least one pair"));
    }
    let mut rng = RngStreams::new(seed).stream("theory.lipschitz");
    let mut best: f64 = 0.0;
    for _ in 0..n_pairs {
        let (x1, x2) = (system.sample_state(&mut rng), system.sample_state(&mut rng));
        let a1 = system.sample_action(&mut rng);
        let a2 = if same_action { a1.clone() } else { system.sample_action(&mut rng) };
        let denom = dist2(&x1, &x2) + dist2(&a1, &a2);
        if denom == 0.0 {
            continue;
        }
        best = best.max(dist2(&(system.f)(&x1, &a1), &(system.f)(&x2, &a2)) / denom);
    }
    Ok(best)
}

/// Empirical 1-Wasserstein distance between one-dimensional samples.
pub fn w1_empirical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("w1 of an empty sample"));
    }
    let sorted = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (p, q) = (sorted(p), sorted(q));
    if p.len() == q.len() {
        return Ok(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64);
    }
    // Integrate |F_p⁻¹ − F_q⁻¹| over the merged grid of cumulative levels.
    let (np, nq) = (p.len() as f64, q.len() as f64);
    let mut levels: Vec<f64> = (1..=p.len()).map(|i| i as f64 / np).chain((1..=q.len()).map(|j| j as f64 / nq)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let quantile = |xs: &[f64], n: f64, u: f64| xs[((u * n).ceil() as usize).clamp(1, xs.len()) - 1];
    let mut prev = 0.0;
    let mut total = 0.0;
    for u in levels {
        let mid = 0.5 * (prev + u);
        total += (u - prev) * (quantile(&p, np, mid) - quantile(&q, nq, mid)).abs();
        prev = u;
    }
    Ok(total)
}

/// One line of a bound report.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub delta: usize,
    pub l_p: f64,
    pub eps_p: f64,
    /// Worst terminal error of the recursive rollouts at `delta`.
    pub measured_recursive: Option<f64>,
    pub geometric_bound: f64,
    pub eps_direct: Option<f64>,
    pub verdict: Option<bool>,
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

impl BoundReport {
    pub const HEADER: &'static str = "delta,L_P,eps_P,measured_recursive,geometric_bound,eps_direct,verdict,margin";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let verdict = r.verdict.map(|v| if v { "pass" } else { "fail" }).unwrap_or("");
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{},{:.12e},{},{},{}",
                r.delta,
                r.l_p,
                r.eps_p,
                opt(r.measured_recursive),
                r.geometric_bound,
                opt(r.eps_direct),
                verdict,
                opt(r.margin)
            );
        }
        s
    }

    /// Rows whose measured recursive error exceeds the bound.
    pub fn violations(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.measured_recursive.is_some_and(|m| !within(m, r.geometric_bound)))
            .map(|r| r.delta)
            .collect()
    }
}

fn within(measured: f64, bound: f64) -> bool {
    measured <= bound * (1.0 + 1e-12) + 1e-15
}

/// Rolls `f` and `f_θ` forward from shared anchors under random actions and
/// records the worst terminal error at each `delta`, with `verdict` and
/// `margin = bound − measured` per row. `bound_factor` scales the reported
/// bound (1 in normal use).
pub fn measure_rollout_errors(
    system: &LipschitzSystem,
    deltas: &[usize],
    n_rollouts: usize,
    seed: u64,
    bound_factor: f64,
) -> Result<BoundReport> {
    if !system.deterministic {
        return Err(Error::invalid("bound rollouts need deterministic dynamics"));
    }
    if deltas.is_empty() || n_rollouts == 0 || deltas.contains(&0) {
        return Err(Error::invalid("need positive delays and at least one rollout"));
    }
    let max_delta = *deltas.iter().max().expect("nonempty");
    let streams = RngStreams::new(seed);
    let mut worst = vec![0.0f64; max_delta + 1];
    for r in 0..n_rollouts {
        let mut rng = streams.indexed("theory.rollout", r as u64);
        let mut x = system.sample_state(&mut rng);
        let mut xh = x.clone();
        for (d, w) in worst.iter_mut().enumerate().skip(1) {
            let a = system.sample_action(&mut rng);
            x = (system.f)(&x, &a);
            xh = (system.f_theta)(&xh, &a);
            let e = dist2(&x, &xh);
            if !e.is_finite() {
                return Err(Error::NonFinite(format!("rollout error at delta {d}")));
            }
            *w = w.max(e);
        }
    }
    let rows = deltas
        .iter()
        .map(|&d| {
            let bound = bound_factor * geometric_bound(system.l_p, system.eps_p, d);
            BoundRow {
                delta: d,
                l_p: system.l_p,
                eps_p: system.eps_p,
                measured_recursive: Some(worst[d]),
                geometric_bound: bound,
                eps_direct: None,
                verdict: Some(within(worst[d], bound)),
                margin: Some(bound - worst[d]),
            }
        })
        .collect();
    Ok(BoundReport { rows })
}

/// [`measure_rollout_errors`] that fails on any violated row.
pub fn rollout_error_experiment(
    system: &LipschitzSystem,
    deltas: &[usize],
    n_rollouts: usize,
    seed: u64,
    bound_factor: f64,
) -> Result<BoundReport> {
    let report = measure_rollout_errors(system, deltas, n_rollouts, seed, bound_factor)?;
    let bad = report.violations();
    if !bad.is_empty() {
        return Err(Error::BoundViolation(format!("recursive error exceeds the bound at delta {bad:?}")));
    }
    Ok(report)
}

/// Direct-proxy rows: `eps_direct` against the geometric term at each delay.
pub fn direct_report(l_p: f64, eps_p: f64, eps_direct: f64, deltas: &[usize]) -> BoundReport {
    BoundReport {
        rows: deltas
            .iter()
            .map(|&d| BoundRow {
                delta: d,
                l_p,
                eps_p,
                measured_recursive: None,
                geometric_bound: geometric_bound(l_p, eps_p, d),
                eps_direct: Some(eps_direct),
                verdict: None,
                margin: None,
            })
            .collect(),
    }
}

/// Fills `verdict = ε_direct ≤ bound` and `margin = bound − ε_direct` on
/// every row; the boundary counts as a pass.
pub fn comparison_verdict(report: &mut BoundReport) -> Result<()> {
    for r in &mut report.rows {
        let e = r.eps_direct.ok_or_else(|| Error::invalid(format!("row {} has no direct error", r.delta)))?;
        r.verdict = Some(e <= r.geometric_bound);
        r.margin = Some(r.geometric_bound - e);
    }
    Ok(())
}

/// Merges recursive and direct rows that share a delay.
pub fn merge_reports(recursive: &BoundReport, direct: &BoundReport) -> Result<BoundReport> {
    let rows = recursive
        .rows
        .iter()
        .map(|r| {
            let d = direct
                .rows
                .iter()
                .find(|x| x.delta == r.delta)
                .ok_or_else(|| Error::invalid(format!("no direct row for delta {}", r.delta)))?;
            Ok(BoundRow { eps_direct: d.eps_direct, verdict: d.verdict, margin: d.margin, ..r.clone() })
        })
        .collect::<Result<_>>()?;
    Ok(BoundReport { rows })
}
