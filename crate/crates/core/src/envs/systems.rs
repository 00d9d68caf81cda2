//! Noise-free dynamics and rewards of the built-in environments.

use std::f64::consts::PI;

pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
const PENDULUM_DT: f64 = 0.05;
const G: f64 = 10.0;

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// State `(cos θ, sin θ, θ̇)`; returns `(next_state, reward)`.
pub fn pendulum(state: &[f64], u: f64) -> (Vec<f64>, f64) {
    let th = state[1].atan2(state[0]);
    let thdot = state[2];
    let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;
    let new_thdot = (thdot + (3.0 * G / 2.0 * th.sin() + 3.0 * u) * PENDULUM_DT)
        .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let new_th = th + new_thdot * PENDULUM_DT;
    (vec![new_th.cos(), new_th.sin(), new_thdot], -cost)
}

pub fn pendulum_reward_bounds() -> (f64, f64) {
    let worst = PI * PI + 0.1 * PENDULUM_MAX_SPEED.powi(2) + 0.001 * PENDULUM_MAX_TORQUE.powi(2);
    (-worst, 0.0)
}

/// Discrete-time linear oscillator `x' = A x + B u` obtained by exact
/// zero-order-hold discretisation of `m ẍ = −k x − c ẋ + u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearOscillator {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

pub const MSD_MASS: f64 = 1.0;
pub const MSD_DAMPING: f64 = 0.1;
pub const MSD_DT: f64 = 0.1;
pub const MSD_REWARD_FLOOR: f64 = -10.0;

impl LinearOscillator {
    pub fn new(stiffness: f64) -> Self {
        let m = MSD_MASS;
        // augmented generator [[M, b], [0, 0]] so one exponential yields A and B
        let gen = [
            [0.0, 1.0, 0.0],
            [-stiffness / m, -MSD_DAMPING / m, 1.0 / m],
            [0.0, 0.0, 0.0],
        ];
        let e = expm3(gen, MSD_DT);
        Self { a: [[e[0][0], e[0][1]], [e[1][0], e[1][1]]], b: [e[0][2], e[1][2]] }
    }

    pub fn apply(&self, x: &[f64], u: f64) -> Vec<f64> {
        vec![
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.b[0] * u,
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.b[1] * u,
        ]
    }

    /// Largest singular value of `A`, in closed form for 2×2 matrices.
    pub fn spectral_norm_a(&self) -> f64 {
        spectral_norm_2x2(self.a)
    }

    pub fn norm_b(&self) -> f64 {
        self.b[0].hypot(self.b[1])
    }

    /// Lipschitz modulus of `(x, u) ↦ A x + B u` with respect to
    /// `‖Δx‖₂ + |Δu|`.
    pub fn lipschitz(&self) -> f64 {
        self.spectral_norm_a().max(self.norm_b())
    }
}

pub fn spectral_norm_2x2(a: [[f64; 2]; 2]) -> f64 {
    // eigenvalues of AᵀA
    let p = a[0][0] * a[0][0] + a[1][0] * a[1][0];
    let q = a[0][0] * a[0][1] + a[1][0] * a[1][1];
    let r = a[0][1] * a[0][1] + a[1][1] * a[1][1];
    let mid = 0.5 * (p + r);
    let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    (mid + rad).sqrt()
}

pub fn msd_reward(x: &[f64], u: f64) -> f64 {
    (-(x[0] * x[0] + 0.1 * x[1] * x[1] + 0.01 * u * u)).max(MSD_REWARD_FLOOR)
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// `exp(M·t)` by scaling and squaring with a truncated Taylor series.
fn expm3(m: [[f64; 3]; 3], t: f64) -> [[f64; 3]; 3] {
    let norm = m.iter().map(|r| r.iter().map(|v| (v * t).abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let s = t / 2f64.powi(squarings);
    let x: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j] * s));
    let mut result = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut term = result;
    for k in 1..=20 {
        term = matmul3(&term, &x);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul3(&result, &result);
    }
    result
}

pub const REACH_DT: f64 = 0.1;
pub const REACH_ARENA: f64 = 2.0;
pub const REACH_GOAL: [f64; 2] = [1.0, 1.0];
pub const REACH_RADIUS: f64 = 0.1;

/// State `(px, py, vx, vy)`; returns `(next_state, reward, reached)`.
pub fn point_mass(state: &[f64], u: &[f64]) -> (Vec<f64>, f64, bool) {
    let vx = state[2] + REACH_DT * u[0];
    let vy = state[3] + REACH_DT * u[1];
    let px = (state[0] + REACH_DT * vx).clamp(-REACH_ARENA, REACH_ARENA);
    let py = (state[1] + REACH_DT * vy).clamp(-REACH_ARENA, REACH_ARENA);
    let dist = (px - REACH_GOAL[0]).hypot(py - REACH_GOAL[1]);
    (vec![px, py, vx, vy], -dist, dist < REACH_RADIUS)
}

pub fn point_mass_reward_bounds() -> (f64, f64) {
    let far = (REACH_ARENA + REACH_GOAL[0]).hypot(REACH_ARENA + REACH_GOAL[1]);
    (-far, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretisation_matches_euler_for_tiny_steps() {
        // A ≈ I + dt·M to first order
        let sys = LinearOscillator::new(2.0);
        assert!((sys.a[0][1] - MSD_DT).abs() < 0.01);
        assert!((sys.a[1][0] + 2.0 * MSD_DT).abs() < 0.01);
        assert!((sys.b[1] - MSD_DT).abs() < 0.01);
    }

    #[test]
    fn undamped_free_response_matches_closed_form() {
        // with c = 0.1 the exact solution is a damped cosine; compare A[0][0]
        let k: f64 = 1.0;
        let sys = LinearOscillator::new(k);
        let zeta = MSD_DAMPING / 2.0;
        let wd = (k - zeta * zeta).sqrt();
        let t = MSD_DT;
        let x = (-zeta * t).exp() * ((wd * t).cos() + zeta / wd * (wd * t).sin());
        assert!((sys.a[0][0] - x).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let (s, c) = 0.3f64.sin_cos();
        assert!((spectral_norm_2x2([[c, -s], [s, c]]) - 1.0).abs() < 1e-12);
        assert!((spectral_norm_2x2([[2.0, 0.0], [0.0, 0.5]]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_switches_lipschitz_branch() {
        assert!(LinearOscillator::new(1.0).lipschitz() < 1.0);
        assert!(LinearOscillator::new(4.0).lipschitz() > 1.0);
    }
}
