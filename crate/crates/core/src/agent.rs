//! Online approximate policy iteration: act greedily, store the transition,
//! take one Riemannian Adam step on a replay mini-batch against the frozen
//! current Q-function, and evaluate periodically on a separate environment.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, Environment};
use crate::error::{Error, Result};
use crate::loss::{loss_and_gradient, Greedy, LossConfig, Transition};
use crate::manifold::ParameterPoint;
use crate::model::{init_parameters, model_size, nonzero_fraction, ModelConfig, QFunction, DEFAULT_SPARSITY_TAU};
use crate::radam::{RAdamConfig, RiemannianAdam};
use crate::replay::ReplayBuffer;
use crate::scalar::Scalar;

const STREAM_BUFFER: u64 = 1;
const STREAM_EPISODES: u64 = 2;
const STREAM_EXPLORE: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Independent deterministic sub-seed of `seed` for one consumer.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: RAdamConfig,
    /// Replay capacity `B`.
    pub buffer_capacity: usize,
    /// Mini-batch size `T`.
    pub batch_size: usize,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub epsilon_explore: f64,
    pub seed: u64,
    pub updates_per_step: usize,
    /// Record interval; `None` records only at evaluation steps.
    pub log_every: Option<u64>,
    pub sparsity_tau: f64,
    pub record_wall_clock: bool,
}

impl AgentConfig {
    /// Default hyperparameters for an environment with the given shape.
    pub fn new(state_dim: usize, actions: usize, components: usize, seed: u64) -> Self {
        Self {
            model: ModelConfig { components, factors: 3, state_dim, actions, init_seed: seed },
            loss: LossConfig::default(),
            optim: RAdamConfig::default(),
            buffer_capacity: 10_000,
            batch_size: 64,
            total_steps: 300_000,
            eval_every: 10_000,
            eval_episodes: 20,
            epsilon_explore: 0.0,
            seed,
            updates_per_step: 1,
            log_every: None,
            sparsity_tau: DEFAULT_SPARSITY_TAU,
            record_wall_clock: false,
        }
    }

    pub fn for_env(env: EnvKind, components: usize, seed: u64) -> Self {
        let e = env.make();
        Self::new(e.spec().state_dim, e.spec().actions, components, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        let positive = [
            ("buffer capacity", self.buffer_capacity as u64),
            ("batch size", self.batch_size as u64),
            ("eval interval", self.eval_every),
            ("eval episodes", self.eval_episodes as u64),
            ("updates per step", self.updates_per_step as u64),
            ("log interval", self.log_every.unwrap_or(1)),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_explore) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.epsilon_explore)));
        }
        if !(self.sparsity_tau >= 0.0) {
            return Err(Error::Config("sparsity threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    /// Mean mini-batch loss over the updates since the previous record.
    pub loss: f64,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub nonzero_frac: f64,
    /// Surviving learnable parameters over the full count.
    pub model_frac: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub records: Vec<TrainRecord>,
    pub final_point: ParameterPoint<T>,
    /// Point with the highest evaluation mean (earliest on ties), if any evaluation ran.
    pub best: Option<(u64, f64, ParameterPoint<T>)>,
    /// Set when an observer stopped the run early.
    pub stopped_at: Option<u64>,
}

/// Numerical breakdown mid-run, carrying everything produced up to the failing step.
#[derive(Clone, Debug)]
pub struct TrainFailure<T> {
    pub error: Error,
    pub step: u64,
    pub records: Vec<TrainRecord>,
    /// Point before the failing step; `None` when the run never started.
    pub last_valid: Option<ParameterPoint<T>>,
    pub best: Option<(u64, f64, ParameterPoint<T>)>,
}

/// Hooks into the training loop.
pub trait TrainObserver<T> {
    /// Called before each optimizer step with the batch, the transition pushed
    /// at this step, the frozen target and the point being updated.
    fn on_update(
        &mut self,
        _step: u64,
        _batch: &[&Transition<T>],
        _newest: &Transition<T>,
        _q_bar: &ParameterPoint<T>,
        _omega: &ParameterPoint<T>,
    ) {
    }

    /// Called after each record is appended; `Break` ends training.
    fn on_record(&mut self, _record: &TrainRecord, _omega: &ParameterPoint<T>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<T> TrainObserver<T> for NoObserver {}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Greedy-policy return statistics over `episodes` independently seeded episodes.
///
/// Returns the mean and the sample standard deviation (0 for one episode).
pub fn evaluate<T: Scalar>(omega: &ParameterPoint<T>, env: &mut dyn Environment, episodes: usize, seed: u64) -> (f64, f64) {
    assert!(episodes >= 1, "at least one evaluation episode is required");
    let q = QFunction::new(omega);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let returns: Vec<f64> = (0..episodes)
        .map(|_| {
            let mut s = env.reset(seeds.next_u64());
            let mut ret = 0.0;
            loop {
                let r = env.step(q.greedy_action(&to_t::<T>(&s)));
                ret += r.reward;
                if r.terminated || r.truncated {
                    break ret;
                }
                s = r.next_state;
            }
        })
        .collect();
    mean_and_sample_std(&returns)
}

pub fn evaluate_named<T: Scalar>(omega: &ParameterPoint<T>, env: EnvKind, episodes: usize, seed: u64) -> (f64, f64) {
    evaluate(omega, env.make().as_mut(), episodes, seed)
}

pub fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn train<T: Scalar>(cfg: &AgentConfig, env: EnvKind) -> Result<TrainOutput<T>, TrainFailure<T>> {
    train_with_observer(cfg, env, &mut NoObserver)
}

/// Runs the training loop. Invalid configurations fail before any step with
/// `step == 0` and no point.
pub fn train_with_observer<T: Scalar>(
    cfg: &AgentConfig,
    env_kind: EnvKind,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutput<T>, TrainFailure<T>> {
    let mut env = env_kind.make();
    let mut eval_env = env_kind.make();
    let spec = env.spec().clone();

    let early = |error: Error| TrainFailure {
        error,
        step: 0,
        records: Vec::new(),
        last_valid: None,
        best: None,
    };
    if let Err(e) = cfg.validate() {
        return Err(early(e));
    }
    if cfg.model.state_dim != spec.state_dim || cfg.model.actions != spec.actions {
        return Err(early(Error::Config(format!(
            "model shape ({} states, {} actions) does not match {} ({} states, {} actions)",
            cfg.model.state_dim, cfg.model.actions, spec.name, spec.state_dim, spec.actions
        ))));
    }
    let mut omega: ParameterPoint<T> = match init_parameters(&cfg.model, &spec.state_low, &spec.state_high) {
        Ok(p) => p,
        Err(e) => return Err(early(e)),
    };

    let mut optimizer = RiemannianAdam::new(cfg.optim, &omega);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, derive_seed(cfg.seed, STREAM_BUFFER));
    let mut episode_seeds = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EPISODES));
    let mut explore = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EXPLORE));
    let eval_seed = derive_seed(cfg.seed, STREAM_EVAL);
    let tau = T::lit(cfg.sparsity_tau);
    let log_every = cfg.log_every.unwrap_or(cfg.eval_every);
    let start = Instant::now();

    let mut records = Vec::new();
    let mut best: Option<(u64, f64, ParameterPoint<T>)> = None;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut state = to_t::<T>(&env.reset(episode_seeds.next_u64()));

    for n in 1..=cfg.total_steps {
        let action = if cfg.epsilon_explore > 0.0 && explore.gen::<f64>() < cfg.epsilon_explore {
            explore.gen_range(0..spec.actions)
        } else {
            QFunction::new(&omega).greedy_action(&state)
        };
        let r = env.step(action);
        let next = to_t::<T>(&r.next_state);
        buffer.push(Transition {
            s: std::mem::replace(&mut state, next.clone()),
            a: action,
            r: T::lit(r.reward),
            s_next: next,
            terminal: r.terminated,
        });
        if r.terminated || r.truncated {
            state = to_t::<T>(&env.reset(episode_seeds.next_u64()));
        }

        for _ in 0..cfg.updates_per_step {
            let newest = buffer.newest().cloned().expect("buffer holds the transition just pushed");
            let batch = buffer.sample(cfg.batch_size);
            observer.on_update(n, &batch, &newest, &omega, &omega);
            let (value, grad) = loss_and_gradient(&omega, &omega, &Greedy, &batch, &cfg.loss);
            let stepped = if value.is_finite() {
                optimizer.step(&omega, &grad)
            } else {
                Err(Error::Divergence(format!("loss became {value}")))
            };
            match stepped {
                Ok(next) => omega = next,
                Err(error) => {
                    return Err(TrainFailure { error, step: n, records, last_valid: Some(omega), best });
                }
            }
            loss_sum += value.as_f64();
            loss_count += 1;
        }

        let eval_due = n % cfg.eval_every == 0;
        if eval_due || n % log_every == 0 {
            let (eval_mean, eval_std) = if eval_due {
                let (m, s) = evaluate(&omega, eval_env.as_mut(), cfg.eval_episodes, eval_seed);
                if best.as_ref().map_or(true, |(_, b, _)| m > *b) {
                    best = Some((n, m, omega.clone()));
                }
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            let record = TrainRecord {
                step: n,
                loss: loss_sum / loss_count as f64,
                eval_mean,
                eval_std,
                nonzero_frac: nonzero_fraction(&omega, tau),
                model_frac: model_size(&omega, tau).fraction(),
                wall_ms: cfg.record_wall_clock.then(|| start.elapsed().as_secs_f64() * 1e3),
            };
            loss_sum = 0.0;
            loss_count = 0;
            let flow = observer.on_record(&record, &omega);
            records.push(record);
            if flow.is_break() {
                return Ok(TrainOutput { records, final_point: omega, best, stopped_at: Some(n) });
            }
        }
    }
    Ok(TrainOutput { records, final_point: omega, best, stopped_at: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CartPole;

    fn small(env: EnvKind, steps: u64) -> AgentConfig {
        let mut cfg = AgentConfig::for_env(env, 8, 3);
        cfg.total_steps = steps;
        cfg.eval_every = 100;
        cfg.eval_episodes = 2;
        cfg.buffer_capacity = 200;
        cfg.batch_size = 16;
        cfg
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = small(EnvKind::CartPole, 0);
        let out = train::<f64>(&cfg, EnvKind::CartPole).unwrap();
        assert!(out.records.is_empty());
        let spec = CartPole::new().spec().clone();
        let init = init_parameters::<f64>(&cfg.model, &spec.state_low, &spec.state_high).unwrap();
        assert_eq!(out.final_point, init);
        assert!(out.best.is_none());
    }

    #[test]
    fn eval_record_count_and_order() {
        let cfg = small(EnvKind::CartPole, 350);
        let out = train::<f64>(&cfg, EnvKind::CartPole).unwrap();
        let steps: Vec<u64> = out.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![100, 200, 300]);
        assert!(out.records.iter().all(|r| r.eval_mean.is_some() && r.wall_ms.is_none()));
    }

    #[test]
    fn log_interval_adds_rows_without_eval() {
        let mut cfg = small(EnvKind::CartPole, 200);
        cfg.log_every = Some(40);
        let out = train::<f64>(&cfg, EnvKind::CartPole).unwrap();
        let steps: Vec<u64> = out.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![40, 80, 100, 120, 160, 200]);
        assert_eq!(out.records.iter().filter(|r| r.eval_mean.is_some()).count(), 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = small(EnvKind::Acrobot, 300);
        cfg.epsilon_explore = 0.1;
        let a = train::<f64>(&cfg, EnvKind::Acrobot).unwrap();
        let b = train::<f64>(&cfg, EnvKind::Acrobot).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_point, b.final_point);
    }

    #[test]
    fn shape_mismatch_is_rejected_up_front() {
        let cfg = small(EnvKind::CartPole, 10);
        let err = train::<f64>(&cfg, EnvKind::Acrobot).unwrap_err();
        assert!(matches!(err.error, Error::Config(_)));
        assert_eq!(err.step, 0);
        assert!(err.last_valid.is_none());
    }

    #[test]
    fn sample_std_conventions() {
        assert_eq!(mean_and_sample_std(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_and_sample_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_episode_has_zero_std() {
        let cfg = small(EnvKind::CartPole, 0);
        let spec = CartPole::new().spec().clone();
        let p = init_parameters::<f64>(&cfg.model, &spec.state_low, &spec.state_high).unwrap();
        let (_, s) = evaluate_named(&p, EnvKind::CartPole, 1, 0);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let s: Vec<u64> = (1..=4).map(|k| derive_seed(42, k)).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(42, 2), derive_seed(42, 2));
    }
}
