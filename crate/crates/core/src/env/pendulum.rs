use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Environment;
use crate::features::{z_pendulum, StateActionPoint};

/// Dynamics constants of the classic torque-limited pendulum.
pub mod constants {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    /// Training/reset draws `θ ~ U[-π, π]`, `θ̇ ~ U[-INIT_SPEED, INIT_SPEED]`.
    pub const INIT_SPEED: f64 = 1.0;
    /// Standard deviations of the measurement noise on `(θ, θ̇, a)`.
    pub const NOISE_STD: [f64; 3] = [0.05, 0.25, 0.05];
    pub const DEFAULT_ACTION_POINTS: usize = 11;
}

use constants::*;

/// `θ = 0` is upright; `θ = ±π` hangs at rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn at_rest() -> Self {
        PendulumState {
            theta: PI,
            theta_dot: 0.0,
        }
    }

    pub fn observation(&self) -> [f64; 3] {
        [self.theta.sin(), self.theta.cos(), self.theta_dot]
    }
}

/// Maps an angle onto `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// One semi-implicit Euler step of `θ̈ = (3g/2ℓ) sin θ + (3/mℓ²) u`.
/// Optional noise `(ε₁, ε₂, ε₃)` perturbs `(θ, θ̇, u)` before integration;
/// the torque is clipped after the perturbation.
pub fn pendulum_step(s: PendulumState, torque: f64, noise: Option<[f64; 3]>) -> PendulumState {
    let [e1, e2, e3] = noise.unwrap_or([0.0; 3]);
    let theta = s.theta + e1;
    let theta_dot = s.theta_dot + e2;
    let u = (torque + e3).clamp(-MAX_TORQUE, MAX_TORQUE);
    let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let new_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
    PendulumState {
        theta: wrap_angle(theta + new_dot * DT),
        theta_dot: new_dot,
    }
}

/// `g = θ² + 0.1 θ̇² + 0.001 a²`, with `θ` taken in `[-π, π]`.
pub fn pendulum_loss(theta: f64, theta_dot: f64, torque: f64) -> f64 {
    theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque
}

/// `points` equispaced torques covering `[-2, 2]`, endpoints included.
pub fn pendulum_actions(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| -MAX_TORQUE + 2.0 * MAX_TORQUE * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    actions: Vec<f64>,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum::new(DEFAULT_ACTION_POINTS)
    }
}

impl Pendulum {
    pub fn new(action_points: usize) -> Self {
        Pendulum {
            actions: pendulum_actions(action_points.max(1)),
        }
    }

    pub fn torques(&self) -> &[f64] {
        &self.actions
    }
}

impl Environment for Pendulum {
    type State = PendulumState;

    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn action_count(&self) -> usize {
        self.actions.len()
    }

    fn input_dim(&self) -> usize {
        4
    }

    fn embed(&self, state: &PendulumState, action: usize) -> StateActionPoint {
        z_pendulum(state.observation(), self.actions[action])
    }

    fn loss(&self, state: &PendulumState, action: usize) -> f64 {
        pendulum_loss(state.theta, state.theta_dot, self.actions[action])
    }

    fn step(&self, state: &PendulumState, action: usize, noise: Option<&[f64]>) -> PendulumState {
        let noise = noise.map(|e| [e[0], e[1], e[2]]);
        pendulum_step(*state, self.actions[action], noise)
    }

    fn default_noise_std(&self) -> Vec<f64> {
        NOISE_STD.to_vec()
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> PendulumState {
        PendulumState {
            theta: rng.gen_range(-PI..=PI),
            theta_dot: rng.gen_range(-INIT_SPEED..=INIT_SPEED),
        }
    }

    fn episode_start(&self, _rng: &mut ChaCha8Rng) -> PendulumState {
        PendulumState::at_rest()
    }

    fn state_columns(&self) -> &'static [&'static str] {
        &["theta", "theta_dot"]
    }

    fn state_values(&self, s: &PendulumState) -> Vec<f64> {
        vec![s.theta, s.theta_dot]
    }

    fn action_value(&self, action: usize) -> f64 {
        self.actions[action]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equilibria() {
        let up = PendulumState {
            theta: 0.0,
            theta_dot: 0.0,
        };
        assert_eq!(pendulum_step(up, 0.0, None), up);

        let next = pendulum_step(PendulumState::at_rest(), 0.0, None);
        assert!(next.theta_dot.abs() < 1e-14);
    }

    #[test]
    fn quarter_turn_step() {
        let s = PendulumState {
            theta: PI / 2.0,
            theta_dot: 0.0,
        };
        let next = pendulum_step(s, 0.0, None);
        assert_abs_diff_eq!(next.theta_dot, 0.05 * 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.theta, PI / 2.0 + 0.75 * 0.05, epsilon = 1e-12);
    }

    #[test]
    fn rest_position_is_stationary() {
        let mut s = PendulumState::at_rest();
        for _ in 0..1000 {
            s = pendulum_step(s, 0.0, None);
            assert!(wrap_angle(s.theta - PI).abs() < 1e-12);
            assert!(s.theta_dot.abs() < 1e-12);
        }
    }

    #[test]
    fn speed_and_torque_clipping() {
        let s = PendulumState {
            theta: 1.0,
            theta_dot: 7.99,
        };
        assert_eq!(pendulum_step(s, 2.0, None).theta_dot, MAX_SPEED);
        let a = pendulum_step(s, 5.0, None);
        let b = pendulum_step(s, 2.0, None);
        assert_eq!(a, b);
        let c = pendulum_step(s, 1.9, Some([0.0, 0.0, 0.5]));
        assert_eq!(c, b);
    }

    #[test]
    fn angle_stays_wrapped() {
        let mut s = PendulumState {
            theta: 3.0,
            theta_dot: 8.0,
        };
        for _ in 0..100 {
            s = pendulum_step(s, 2.0, None);
            assert!((-PI..=PI).contains(&s.theta));
        }
    }

    #[test]
    fn losses() {
        assert_eq!(pendulum_loss(0.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(pendulum_loss(PI, 0.0, 0.0), 9.8696, epsilon = 1e-4);
        assert_abs_diff_eq!(pendulum_loss(1.0, 2.0, -2.0), 1.404, epsilon = 1e-12);
    }

    #[test]
    fn action_grid() {
        let a = pendulum_actions(11);
        assert_eq!(a.len(), 11);
        assert_eq!((a[0], a[10]), (-2.0, 2.0));
        for w in a.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 0.4, epsilon = 1e-12);
        }
        for i in 0..11 {
            assert_abs_diff_eq!(a[i], -a[10 - i], epsilon = 1e-12);
        }
    }
}
