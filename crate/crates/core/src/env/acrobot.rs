use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, Environment, StepResult, MAX_EPISODE_STEPS};

const DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
const RESET_HALF_WIDTH: f64 = 0.1;

/// Two-link underactuated swing-up. Internal state `(θ₁, θ₂, θ̇₁, θ̇₂)` with
/// `θ₁ = 0` hanging down; observation `(cos θ₁, sin θ₁, cos θ₂, sin θ₂, θ̇₁, θ̇₂)`.
/// Actions 0, 1, 2 apply torques −1, 0, +1 on the joint between the links.
#[derive(Clone, Debug)]
pub struct Acrobot {
    spec: EnvSpec,
    state: [f64; 4],
    steps: usize,
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

impl Acrobot {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "acrobot".into(),
                state_dim: 6,
                actions: 3,
                max_steps: MAX_EPISODE_STEPS,
                state_low: vec![-1.0, -1.0, -1.0, -1.0, -MAX_VEL_1, -MAX_VEL_2],
                state_high: vec![1.0, 1.0, 1.0, 1.0, MAX_VEL_1, MAX_VEL_2],
            },
            state: [0.0; 4],
            steps: 0,
        }
    }
}

/// `d/dt (θ₁, θ₂, θ̇₁, θ̇₂)` under joint torque `torque`.
pub(crate) fn derivatives(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2, i1, i2, g) =
        (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2, LINK_MOI, LINK_MOI, GRAVITY);
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

/// One classical RK4 step of length `DT`.
pub(crate) fn rk4(s: [f64; 4], torque: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2], a[3] + h * b[3]];
    let k1 = derivatives(s, torque);
    let k2 = derivatives(add(s, k1, DT / 2.0), torque);
    let k3 = derivatives(add(s, k2, DT / 2.0), torque);
    let k4 = derivatives(add(s, k3, DT), torque);
    let mut out = s;
    for i in 0..4 {
        out[i] = s[i] + DT / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Wraps an angle into `[-π, π)`.
pub(crate) fn wrap(x: f64) -> f64 {
    let diff = 2.0 * PI;
    let mut x = x;
    while x > PI {
        x -= diff;
    }
    while x < -PI {
        x += diff;
    }
    x
}

pub(crate) fn is_terminal(s: [f64; 4]) -> bool {
    -s[0].cos() - (s[1] + s[0]).cos() > 1.0
}

/// Total mechanical energy (kinetic + potential, zero at the pivot height).
pub fn mechanical_energy(s: [f64; 4]) -> f64 {
    let [t1, t2, w1, w2] = s;
    let d1 = LINK_MASS_1 * LINK_COM_1 * LINK_COM_1
        + LINK_MASS_2 * (LINK_LENGTH_1 * LINK_LENGTH_1 + LINK_COM_2 * LINK_COM_2 + 2.0 * LINK_LENGTH_1 * LINK_COM_2 * t2.cos())
        + 2.0 * LINK_MOI;
    let d2 = LINK_MASS_2 * (LINK_COM_2 * LINK_COM_2 + LINK_LENGTH_1 * LINK_COM_2 * t2.cos()) + LINK_MOI;
    let d3 = LINK_MASS_2 * LINK_COM_2 * LINK_COM_2 + LINK_MOI;
    let kinetic = 0.5 * (d1 * w1 * w1 + 2.0 * d2 * w1 * w2 + d3 * w2 * w2);
    let potential = -(LINK_MASS_1 * LINK_COM_1 + LINK_MASS_2 * LINK_LENGTH_1) * GRAVITY * t1.cos()
        - LINK_MASS_2 * LINK_COM_2 * GRAVITY * (t1 + t2).cos();
    kinetic + potential
}

fn observe(s: &[f64; 4]) -> Vec<f64> {
    vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), s[2], s[3]]
}

impl Environment for Acrobot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut self.state {
            *s = rng.gen_range(-RESET_HALF_WIDTH..=RESET_HALF_WIDTH);
        }
        self.steps = 0;
        observe(&self.state)
    }

    fn step(&mut self, action: usize) -> StepResult {
        let torque = TORQUES[action];
        let mut ns = rk4(self.state, torque);
        ns[0] = wrap(ns[0]);
        ns[1] = wrap(ns[1]);
        ns[2] = ns[2].clamp(-MAX_VEL_1, MAX_VEL_1);
        ns[3] = ns[3].clamp(-MAX_VEL_2, MAX_VEL_2);
        self.state = ns;
        self.steps += 1;
        let terminated = is_terminal(ns);
        StepResult {
            next_state: observe(&ns),
            reward: if terminated { 0.0 } else { -1.0 },
            terminated,
            truncated: !terminated && self.steps >= self.spec.max_steps,
        }
    }

    fn observation(&self) -> Vec<f64> {
        observe(&self.state)
    }

    fn raw_state(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn set_raw_state(&mut self, state: &[f64]) {
        self.state.copy_from_slice(state);
        self.steps = 0;
    }
}
