//! Flat experiment settings shared by the command line and JSON config files.
//!
//! Every key is optional; [`Settings::merge`] layers flags over a config file
//! and [`Settings::resolve`] fills the remaining gaps with defaults.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use sgmm_core::agent::AgentConfig;
use sgmm_core::env::EnvKind;
use sgmm_core::loss::RegGradMode;
use sgmm_core::manifold::TransportMode;
use sgmm_core::model::DEFAULT_SPARSITY_TAU;
use sgmm_core::radam::AdamVariant;

use crate::error::{CliError, Result};

pub const DEFAULT_RHO_GRID: [f64; 7] = [0.0, 1e-4, 5e-4, 1e-3, 3e-3, 5e-3, 1e-2];
pub const DEFAULT_K_GRID: [usize; 2] = [50, 500];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Parser)]
#[command(name = "sgmm", version, about = "Train sparse Gaussian-mixture Q-function agents and sweep their hyperparameters")]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// Environment: cartpole or acrobot.
    #[arg(long, value_parser = parse_from_str::<EnvKind>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvKind>,
    /// Mixture components K (default 50 on cartpole, 500 on acrobot).
    #[arg(long = "K")]
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Hadamard factors J.
    #[arg(long = "J")]
    #[serde(default, rename = "J", skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    /// Regularization coefficient.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    /// Denominator guard of the optimizer.
    #[arg(long = "adam-eps")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    /// Replay buffer capacity.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Environment steps per run (default 3e5 on cartpole, 5e5 on acrobot).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<u64>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_episodes: Option<usize>,
    /// Exploration probability of the epsilon-greedy behaviour policy.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Single seed; shorthand for `--seeds N`.
    #[arg(long, conflicts_with = "seeds")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Sweep the regularization coefficient (bare flag: 0,1,5,10,30,50,100 x 1e-4).
    #[arg(long, value_delimiter = ',', num_args = 0..=1, default_missing_value = "0,1e-4,5e-4,1e-3,3e-3,5e-3,1e-2")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_rho: Option<Vec<f64>>,
    /// Sweep the component count (bare flag: 50,500).
    #[arg(long, value_delimiter = ',', num_args = 0..=1, default_missing_value = "50,500")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_k: Option<Vec<usize>>,
    /// Parallel runs.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Covariance momentum transport: standard or paper-literal.
    #[arg(long, value_parser = parse_from_str::<TransportMode>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportMode>,
    /// Second-moment rule: paper-literal, standard or elementwise.
    #[arg(long, value_parser = parse_from_str::<AdamVariant>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamVariant>,
    /// Regularizer gradient: analytic or paper-literal.
    #[arg(long, value_parser = parse_from_str::<RegGradMode>)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg_grad: Option<RegGradMode>,
    /// Gradient steps per environment step.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updates_per_step: Option<usize>,
    /// Extra record interval between evaluations.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<u64>,
    /// Magnitude below which a weight counts as zero.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Stop a run once its evaluation mean reaches this return.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_return: Option<f64>,
    /// Fill the wall_ms column (makes CSVs run-dependent).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock: Option<bool>,
    /// Scalar type of the model and optimizer.
    #[arg(long, value_enum)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
    /// Rebuild aggregates and the summary from the run CSVs under --out.
    #[arg(long)]
    #[serde(skip)]
    pub aggregate_only: bool,
    /// JSON file with the same keys as the long flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = sgmm_core::Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: sgmm_core::Error| e.to_string())
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f),)* aggregate_only: $top.aggregate_only || $base.aggregate_only, config: $top.config.or($base.config) }
    };
}

impl Settings {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// `top` wins wherever it sets a key. `seed` and `seeds` act as one key.
    pub fn merge(self, top: Settings) -> Settings {
        let mut base = self;
        if top.seed.is_some() || top.seeds.is_some() {
            base.seed = None;
            base.seeds = None;
        }
        if top.sweep_rho.is_some() || top.sweep_k.is_some() {
            base.sweep_rho = None;
            base.sweep_k = None;
        }
        overlay!(base, top; env, k, j, rho, alpha, lr, beta1, beta2, adam_eps, buffer, batch, steps, eval_every,
            eval_episodes, epsilon, seed, seeds, sweep_rho, sweep_k, jobs, out, transport, adam, reg_grad,
            updates_per_step, log_every, tau, target_return, wall_clock, precision)
    }

    /// Fills every unset key with its default; `env` is required.
    pub fn resolve(&self) -> Result<Settings> {
        let env = self.env.ok_or_else(|| CliError::Usage("--env is required (cartpole or acrobot)".into()))?;
        let base = AgentConfig::for_env(env, 1, 0);
        let (k, steps) = match env {
            EnvKind::CartPole => (50, 300_000),
            EnvKind::Acrobot => (500, 500_000),
        };
        let seeds = match (self.seed, &self.seeds) {
            (Some(_), Some(_)) => return Err(CliError::Usage("give either seed or seeds, not both".into())),
            (Some(s), None) => vec![s],
            (None, Some(v)) => v.clone(),
            (None, None) => vec![0],
        };
        if self.sweep_rho.is_some() && self.sweep_k.is_some() {
            return Err(CliError::Usage("sweep over rho or K, not both".into()));
        }
        Ok(Settings {
            env: Some(env),
            k: Some(self.k.unwrap_or(k)),
            j: Some(self.j.unwrap_or(base.model.factors)),
            rho: Some(self.rho.unwrap_or(base.loss.rho)),
            alpha: Some(self.alpha.unwrap_or(base.loss.alpha)),
            lr: Some(self.lr.unwrap_or(base.optim.lr)),
            beta1: Some(self.beta1.unwrap_or(base.optim.beta1)),
            beta2: Some(self.beta2.unwrap_or(base.optim.beta2)),
            adam_eps: Some(self.adam_eps.unwrap_or(base.optim.epsilon)),
            buffer: Some(self.buffer.unwrap_or(base.buffer_capacity)),
            batch: Some(self.batch.unwrap_or(base.batch_size)),
            steps: Some(self.steps.unwrap_or(steps)),
            eval_every: Some(self.eval_every.unwrap_or(base.eval_every)),
            eval_episodes: Some(self.eval_episodes.unwrap_or(base.eval_episodes)),
            epsilon: Some(self.epsilon.unwrap_or(base.epsilon_explore)),
            seed: None,
            seeds: Some(seeds),
            sweep_rho: self.sweep_rho.clone(),
            sweep_k: self.sweep_k.clone(),
            jobs: Some(self.jobs.unwrap_or(1)),
            out: Some(self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))),
            transport: Some(self.transport.unwrap_or(base.optim.transport)),
            adam: Some(self.adam.unwrap_or(base.optim.variant)),
            reg_grad: Some(self.reg_grad.unwrap_or(base.loss.reg_grad)),
            updates_per_step: Some(self.updates_per_step.unwrap_or(base.updates_per_step)),
            log_every: self.log_every,
            tau: Some(self.tau.unwrap_or(DEFAULT_SPARSITY_TAU)),
            target_return: self.target_return,
            wall_clock: Some(self.wall_clock.unwrap_or(false)),
            precision: Some(self.precision.unwrap_or_default()),
            aggregate_only: self.aggregate_only,
            config: None,
        })
    }

    /// Agent configuration of one run of resolved settings.
    pub fn agent_config(&self, seed: u64) -> AgentConfig {
        let env = self.env.expect("resolved settings");
        let mut cfg = AgentConfig::for_env(env, self.k.unwrap(), seed);
        cfg.model.factors = self.j.unwrap();
        cfg.loss.rho = self.rho.unwrap();
        cfg.loss.alpha = self.alpha.unwrap();
        cfg.loss.reg_grad = self.reg_grad.unwrap();
        cfg.optim.lr = self.lr.unwrap();
        cfg.optim.beta1 = self.beta1.unwrap();
        cfg.optim.beta2 = self.beta2.unwrap();
        cfg.optim.epsilon = self.adam_eps.unwrap();
        cfg.optim.variant = self.adam.unwrap();
        cfg.optim.transport = self.transport.unwrap();
        cfg.buffer_capacity = self.buffer.unwrap();
        cfg.batch_size = self.batch.unwrap();
        cfg.total_steps = self.steps.unwrap();
        cfg.eval_every = self.eval_every.unwrap();
        cfg.eval_episodes = self.eval_episodes.unwrap();
        cfg.epsilon_explore = self.epsilon.unwrap();
        cfg.updates_per_step = self.updates_per_step.unwrap();
        cfg.log_every = self.log_every;
        cfg.sparsity_tau = self.tau.unwrap();
        cfg.record_wall_clock = self.wall_clock.unwrap();
        cfg
    }

    /// Flat description of a single run: no sweep, one seed, no output or
    /// scheduling keys. Feeding it back through `--config` reruns exactly that run.
    pub fn for_run(&self, seed: u64) -> Settings {
        Settings {
            seed: Some(seed),
            seeds: None,
            sweep_rho: None,
            sweep_k: None,
            jobs: None,
            out: None,
            aggregate_only: false,
            config: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("settings serialize")
    }
}
