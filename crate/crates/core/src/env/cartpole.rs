use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, Environment, StepResult, MAX_EPISODE_STEPS};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
/// Half the pole length.
const LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const VELOCITY_CLIP: f64 = 4.0;
const RESET_HALF_WIDTH: f64 = 0.05;

/// Cart-pole with state `(x, ẋ, θ, θ̇)`; action 0 pushes left, 1 pushes right.
#[derive(Clone, Debug)]
pub struct CartPole {
    spec: EnvSpec,
    state: [f64; 4],
    steps: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "cartpole".into(),
                state_dim: 4,
                actions: 2,
                max_steps: MAX_EPISODE_STEPS,
                state_low: vec![-X_THRESHOLD, -VELOCITY_CLIP, -THETA_THRESHOLD, -VELOCITY_CLIP],
                state_high: vec![X_THRESHOLD, VELOCITY_CLIP, THETA_THRESHOLD, VELOCITY_CLIP],
            },
            state: [0.0; 4],
            steps: 0,
        }
    }
}

/// One semi-implicit Euler step of the cart-pole dynamics.
pub(crate) fn dynamics(state: [f64; 4], action: usize) -> [f64; 4] {
    let [x, x_dot, theta, theta_dot] = state;
    let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp) / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    let x_dot = x_dot + TAU * x_acc;
    let x = x + TAU * x_dot;
    let theta_dot = theta_dot + TAU * theta_acc;
    let theta = theta + TAU * theta_dot;
    [x, x_dot, theta, theta_dot]
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut self.state {
            *s = rng.gen_range(-RESET_HALF_WIDTH..=RESET_HALF_WIDTH);
        }
        self.steps = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> StepResult {
        assert!(action < 2, "cartpole action {action} out of range");
        self.state = dynamics(self.state, action);
        self.steps += 1;
        let [x, _, theta, _] = self.state;
        let terminated = x.abs() > X_THRESHOLD || theta.abs() > THETA_THRESHOLD;
        StepResult {
            next_state: self.state.to_vec(),
            reward: 1.0,
            terminated,
            truncated: !terminated && self.steps >= self.spec.max_steps,
        }
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn raw_state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn set_raw_state(&mut self, state: &[f64]) {
        self.state.copy_from_slice(state);
        self.steps = 0;
    }
}
