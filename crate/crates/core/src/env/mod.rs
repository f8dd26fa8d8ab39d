//! Classic-control benchmarks behind one interface.

mod acrobot;
mod cartpole;

use serde::{Deserialize, Serialize};

pub use acrobot::{mechanical_energy as acrobot_energy, Acrobot};
pub use cartpole::CartPole;

use crate::error::{Error, Result};

/// Episode step cap shared by both tasks.
pub const MAX_EPISODE_STEPS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub actions: usize,
    pub max_steps: usize,
    /// Finite observation box used for initialization (unbounded coordinates clipped).
    pub state_low: Vec<f64>,
    pub state_high: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Goal reached or failure; masks the bootstrap.
    pub terminated: bool,
    /// Step cap reached; does not mask the bootstrap.
    pub truncated: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode from a seed-determined initial state; returns the observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: usize) -> StepResult;

    fn observation(&self) -> Vec<f64>;

    /// Raw internal state (may differ from the observation encoding).
    fn raw_state(&self) -> Vec<f64>;

    /// Overwrites the internal state and restarts the episode step counter.
    fn set_raw_state(&mut self, state: &[f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    CartPole,
    Acrobot,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Acrobot => "acrobot",
        }
    }

    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::CartPole => Box::new(CartPole::new()),
            EnvKind::Acrobot => Box::new(Acrobot::new()),
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "acrobot" => Ok(EnvKind::Acrobot),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds an environment by name (`"cartpole"` or `"acrobot"`).
pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    Ok(name.parse::<EnvKind>()?.make())
}
