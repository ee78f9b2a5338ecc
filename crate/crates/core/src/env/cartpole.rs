use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Environment;
use crate::features::{z_cartpole, CartAction, StateActionPoint};

/// Dynamics constants of the classic cart-pole.
pub mod constants {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
    /// Half the pole length.
    pub const HALF_LENGTH: f64 = 0.5;
    pub const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    pub const BOUND_X: f64 = 2.4;
    /// 12 degrees, rounded to four places.
    pub const BOUND_THETA: f64 = 0.2095;
    /// Initial states are uniform on `[-INIT_SPREAD, INIT_SPREAD]^4`.
    pub const INIT_SPREAD: f64 = 0.05;
    /// Noise variances on `(x, v, θ, θ̇, force)`.
    pub const NOISE_VAR: [f64; 5] = [0.05, 0.5, 0.05, 0.5, 0.05];
}

use constants::*;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartpoleState {
    pub x: f64,
    pub v: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartpoleState {
    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.v, self.theta, self.theta_dot]
    }

    pub fn in_bounds(&self) -> bool {
        self.x.abs() <= BOUND_X && self.theta.abs() <= BOUND_THETA
    }
}

fn signed_force(a: CartAction) -> f64 {
    match a {
        CartAction::Left => -FORCE,
        CartAction::Right => FORCE,
    }
}

/// One explicit Euler step. Noise `(ε₁..ε₅)` perturbs `(x, v, θ, θ̇)` and the
/// signed force before integration.
pub fn cartpole_step(s: CartpoleState, a: CartAction, noise: Option<[f64; 5]>) -> CartpoleState {
    let [e1, e2, e3, e4, e5] = noise.unwrap_or([0.0; 5]);
    let (x, v, theta, theta_dot) = (s.x + e1, s.v + e2, s.theta + e3, s.theta_dot + e4);
    let force = signed_force(a) + e5;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc =
        (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    CartpoleState {
        x: x + DT * v,
        v: v + DT * x_acc,
        theta: theta + DT * theta_dot,
        theta_dot: theta_dot + DT * theta_acc,
    }
}

/// `0` when `|x| > B_x` or `|θ| > B_θ`, else `-1`. Bounds are inclusive.
pub fn cartpole_loss(s: &CartpoleState) -> f64 {
    if s.in_bounds() {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Cartpole;

impl Cartpole {
    pub fn action(index: usize) -> CartAction {
        if index == 0 {
            CartAction::Left
        } else {
            CartAction::Right
        }
    }
}

impl Environment for Cartpole {
    type State = CartpoleState;

    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn action_count(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        8
    }

    fn embed(&self, state: &CartpoleState, action: usize) -> StateActionPoint {
        z_cartpole(state.as_array(), Cartpole::action(action))
    }

    fn loss(&self, state: &CartpoleState, _action: usize) -> f64 {
        cartpole_loss(state)
    }

    /// Scored on the state the transition lands in; every recorded state is
    /// inside the bounds (resets happen first), so scoring the start state
    /// would make every training loss `-1`.
    fn transition_loss(&self, _state: &CartpoleState, _action: usize, next: &CartpoleState) -> f64 {
        cartpole_loss(next)
    }

    fn step(&self, state: &CartpoleState, action: usize, noise: Option<&[f64]>) -> CartpoleState {
        let noise = noise.map(|e| [e[0], e[1], e[2], e[3], e[4]]);
        cartpole_step(*state, Cartpole::action(action), noise)
    }

    fn default_noise_std(&self) -> Vec<f64> {
        NOISE_VAR.iter().map(|v| v.sqrt()).collect()
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> CartpoleState {
        let mut draw = || rng.gen_range(-INIT_SPREAD..=INIT_SPREAD);
        CartpoleState {
            x: draw(),
            v: draw(),
            theta: draw(),
            theta_dot: draw(),
        }
    }

    fn episode_start(&self, rng: &mut ChaCha8Rng) -> CartpoleState {
        self.initial_state(rng)
    }

    fn is_terminal(&self, state: &CartpoleState) -> bool {
        !state.in_bounds()
    }

    fn state_columns(&self) -> &'static [&'static str] {
        &["x", "v", "theta", "theta_dot"]
    }

    fn state_values(&self, s: &CartpoleState) -> Vec<f64> {
        s.as_array().to_vec()
    }

    fn action_value(&self, action: usize) -> f64 {
        signed_force(Cartpole::action(action))
    }
}
