//! Control environments, noisy training trajectories and greedy rollouts.

mod cartpole;
mod pendulum;

use std::fmt::{self, Debug, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use cartpole::{cartpole_loss, cartpole_step, constants as cartpole_constants, Cartpole, CartpoleState};
pub use pendulum::{
    constants as pendulum_constants, pendulum_actions, pendulum_loss, pendulum_step, wrap_angle, Pendulum,
    PendulumState,
};

use crate::bellman::QFunction;
use crate::error::{Error, Result};
use crate::features::{RffMap, StateActionPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    Cartpole,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Cartpole => "cartpole",
        })
    }
}

impl EnvKind {
    /// Dimension of the state-action embedding.
    pub fn input_dim(&self) -> usize {
        match self {
            EnvKind::Pendulum => 4,
            EnvKind::Cartpole => 8,
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pendulum" => Ok(EnvKind::Pendulum),
            "cartpole" => Ok(EnvKind::Cartpole),
            other => Err(Error::ConfigInvalid(format!(
                "unknown environment `{other}` (expected pendulum or cartpole)"
            ))),
        }
    }
}

/// A discrete-action control system. Actions are indices `0..action_count()`.
pub trait Environment {
    type State: Clone + Debug + PartialEq;

    fn name(&self) -> &'static str;
    fn action_count(&self) -> usize;
    /// Dimension of the state-action embedding.
    fn input_dim(&self) -> usize;
    fn embed(&self, state: &Self::State, action: usize) -> StateActionPoint;
    /// One-step loss `g(z(s, a))`.
    fn loss(&self, state: &Self::State, action: usize) -> f64;
    /// Loss recorded in training data for the transition `s --a--> next`.
    fn transition_loss(&self, state: &Self::State, action: usize, _next: &Self::State) -> f64 {
        self.loss(state, action)
    }
    fn step(&self, state: &Self::State, action: usize, noise: Option<&[f64]>) -> Self::State;
    /// Per-component noise standard deviations used for training data.
    fn default_noise_std(&self) -> Vec<f64>;
    /// Start of a training trajectory, also used after resets.
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Self::State;
    fn episode_start(&self, rng: &mut ChaCha8Rng) -> Self::State;
    /// States that end an episode and force a reset in training data.
    fn is_terminal(&self, _state: &Self::State) -> bool {
        false
    }
    fn state_columns(&self) -> &'static [&'static str];
    fn state_values(&self, state: &Self::State) -> Vec<f64>;
    /// Numeric value of an action, for CSV output.
    fn action_value(&self, action: usize) -> f64;
}

/// Independent zero-mean Gaussian perturbations, one per noise component.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub std: Vec<f64>,
}

impl NoiseModel {
    pub fn none(components: usize) -> Self {
        NoiseModel {
            std: vec![0.0; components],
        }
    }

    pub fn default_for<E: Environment>(env: &E) -> Self {
        NoiseModel {
            std: env.default_noise_std(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.std
            .iter()
            .map(|&s| {
                if s > 0.0 {
                    Normal::new(0.0, s).expect("finite std").sample(rng)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub state: S,
    pub action: usize,
    pub loss: f64,
    pub next_state: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub env: &'static str,
    pub seed: u64,
    pub samples: Vec<Sample<S>>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Random-action trajectory of exactly `length` samples. Each loss comes from
/// `Environment::transition_loss` on the recorded, noiseless states; noise
/// only perturbs the inputs of the transition. After a terminal next state the
/// following sample restarts from a fresh initial state.
pub fn generate_trajectory<E: Environment>(
    env: &E,
    length: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Trajectory<E::State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.initial_state(&mut rng);
    let mut samples = Vec::with_capacity(length);
    for _ in 0..length {
        let action = rng.gen_range(0..env.action_count());
        let eps = noise.draw(&mut rng);
        let next_state = env.step(&state, action, Some(&eps));
        let loss = env.transition_loss(&state, action, &next_state);
        let restart = env.is_terminal(&next_state);
        samples.push(Sample {
            state,
            action,
            loss,
            next_state: next_state.clone(),
        });
        state = if restart { env.initial_state(&mut rng) } else { next_state };
    }
    Trajectory {
        env: env.name(),
        seed,
        samples,
    }
}

/// CSV with header `i,<state cols>,action,loss,<next_ state cols>`.
pub fn trajectory_to_csv<E: Environment>(env: &E, traj: &Trajectory<E::State>) -> String {
    let cols = env.state_columns();
    let mut s = String::new();
    let next: Vec<String> = cols.iter().map(|c| format!("next_{c}")).collect();
    writeln!(s, "i,{},action,loss,{}", cols.join(","), next.join(",")).unwrap();
    for (i, smp) in traj.samples.iter().enumerate() {
        let fmt = |v: Vec<f64>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        writeln!(
            s,
            "{i},{},{},{},{}",
            fmt(env.state_values(&smp.state)),
            env.action_value(smp.action),
            smp.loss,
            fmt(env.state_values(&smp.next_state))
        )
        .unwrap();
    }
    s
}

/// Index of the smallest value; the lowest index wins ties.
pub fn argmin_first(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Greedy action `argmin_a qᵀφ(z(s, a))`.
pub fn greedy_action<E: Environment>(env: &E, q: &QFunction, rff: &RffMap, state: &E::State) -> Result<usize> {
    let mut buf = vec![0.0; rff.dim()];
    let mut values = Vec::with_capacity(env.action_count());
    for a in 0..env.action_count() {
        rff.features_into(env.embed(state, a).as_slice(), &mut buf)?;
        values.push(q.evaluate_features(&buf)?);
    }
    Ok(argmin_first(values).map(|(i, _)| i).unwrap_or(0))
}

#[derive(Debug, Clone)]
pub struct Episode<S> {
    pub visited: Vec<(S, usize)>,
    /// `Σ g` over the visited pairs.
    pub total_loss: f64,
}

/// Noiseless greedy rollout of at most `steps` steps. A terminal state
/// absorbs the episode: the remaining steps contribute zero loss.
pub fn run_episode<E: Environment>(
    env: &E,
    q: &QFunction,
    rff: &RffMap,
    steps: usize,
    seed: u64,
) -> Result<Episode<E::State>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.episode_start(&mut rng);
    let mut visited = Vec::with_capacity(steps);
    let mut total_loss = 0.0;
    for _ in 0..steps {
        if env.is_terminal(&state) {
            break;
        }
        let a = greedy_action(env, q, rff, &state)?;
        total_loss += env.loss(&state, a);
        let next = env.step(&state, a, None);
        visited.push((state, a));
        state = next;
    }
    Ok(Episode { visited, total_loss })
}

/// Per-step loss of a uniformly random policy from the episode start; the
/// reference level learned policies are compared against.
pub fn random_policy_loss<E: Environment>(env: &E, steps: usize, seed: u64) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env.episode_start(&mut rng);
    let mut total = 0.0;
    for _ in 0..steps {
        if env.is_terminal(&state) {
            break;
        }
        let a = rng.gen_range(0..env.action_count());
        total += env.loss(&state, a);
        state = env.step(&state, a, None);
    }
    total / steps as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn trajectory_lengths_and_determinism() {
        let env = Pendulum::default();
        let noise = NoiseModel::default_for(&env);
        for n in [1, 100, 500] {
            assert_eq!(generate_trajectory(&env, n, &noise, 3).len(), n);
        }
        let a = generate_trajectory(&env, 200, &noise, 42);
        let b = generate_trajectory(&env, 200, &noise, 42);
        assert_eq!(a, b);
        assert_ne!(a, generate_trajectory(&env, 200, &noise, 43));
        assert_eq!(
            generate_trajectory(&Cartpole, 100, &NoiseModel::default_for(&Cartpole), 1),
            generate_trajectory(&Cartpole, 100, &NoiseModel::default_for(&Cartpole), 1)
        );
    }

    #[test]
    fn pendulum_chaining_and_loss_sign() {
        let env = Pendulum::default();
        let t = generate_trajectory(&env, 300, &NoiseModel::default_for(&env), 9);
        for w in t.samples.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
        for s in &t.samples {
            assert!(s.loss >= 0.0);
            assert_eq!(s.loss, env.loss(&s.state, s.action));
        }
    }

    #[test]
    fn cartpole_chaining_breaks_only_at_resets() {
        let env = Cartpole;
        let t = generate_trajectory(&env, 500, &NoiseModel::default_for(&env), 5);
        let mut resets = 0;
        for w in t.samples.windows(2) {
            if env.is_terminal(&w[0].next_state) {
                resets += 1;
                assert!(w[1].state.in_bounds());
            } else {
                assert_eq!(w[0].next_state, w[1].state);
            }
        }
        assert!(resets > 0, "noisy random play should leave the bounds");
        for s in &t.samples {
            assert!(s.loss == 0.0 || s.loss == -1.0);
            assert!(s.state.in_bounds());
        }
    }

    #[test]
    fn zero_q_picks_first_action() {
        let env = Pendulum::default();
        let rff = RffMap::sample(4, 8, 1.0, 0).unwrap();
        let q = QFunction::zeros(8);
        let ep = run_episode(&env, &q, &rff, 20, 0).unwrap();
        assert_eq!(ep.visited.len(), 20);
        assert!(ep.visited.iter().all(|(_, a)| *a == 0));
        assert_eq!(ep.visited[0].0, PendulumState::at_rest());

        let empty = run_episode(&env, &q, &rff, 0, 0).unwrap();
        assert!(empty.visited.is_empty());
        assert_eq!(empty.total_loss, 0.0);
    }

    #[test]
    fn cartpole_episode_is_absorbed_on_failure() {
        let rff = RffMap::sample(8, 8, 1.0, 0).unwrap();
        // zero Q always pushes left: the cart must eventually leave the bounds
        let ep = run_episode(&Cartpole, &QFunction::zeros(8), &rff, 500, 1).unwrap();
        assert!(ep.visited.len() < 500);
        assert_eq!(ep.total_loss, -(ep.visited.len() as f64));
        let q = QFunction::new(DVector::from_element(8, 1.0));
        assert!(greedy_action(&Cartpole, &q, &rff, &CartpoleState::default()).is_ok());
    }

    #[test]
    fn argmin_tie_break() {
        assert_eq!(argmin_first([1.0, 0.5, 0.5]), Some((1, 0.5)));
        assert_eq!(argmin_first([0.0; 4]), Some((0, 0.0)));
        assert_eq!(argmin_first(Vec::<f64>::new()), None);
    }

    #[test]
    fn trajectory_csv_header() {
        let env = Pendulum::default();
        let t = generate_trajectory(&env, 3, &NoiseModel::none(3), 0);
        let csv = trajectory_to_csv(&env, &t);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("i,theta,theta_dot,action,loss,next_theta,next_theta_dot"));
        assert_eq!(lines.count(), 3);
    }
}
