//! Experiment plans: a base configuration, an optional sweep axis and a seed
//! list, executed as independent runs on a thread pool.

use std::collections::BTreeSet;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sgmm_core::agent::{train_with_observer, AgentConfig, TrainObserver, TrainRecord};
use sgmm_core::checkpoint;
use sgmm_core::env::EnvKind;
use sgmm_core::manifold::ParameterPoint;
use sgmm_core::Scalar;

use crate::error::{CliError, Result};
use crate::output::{self, aggregate_files, run_file_name, Summary, BUILD_HASH, CHECKPOINT_DIR, RUNS_DIR};
use crate::settings::{Precision, Settings};

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    None,
    Rho(Vec<f64>),
    K(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub tag: String,
    pub seed: u64,
    /// Flat settings of this run alone.
    pub settings: Settings,
    pub agent: AgentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    /// Fully resolved settings.
    pub settings: Settings,
    pub env: EnvKind,
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub precision: Precision,
    pub target_return: Option<f64>,
}

impl ExperimentPlan {
    /// Builds and validates a plan from resolved settings.
    pub fn from_settings(settings: Settings) -> Result<Self> {
        let axis = match (&settings.sweep_rho, &settings.sweep_k) {
            (Some(v), None) => SweepAxis::Rho(v.clone()),
            (None, Some(v)) => SweepAxis::K(v.clone()),
            (None, None) => SweepAxis::None,
            _ => return Err(CliError::Usage("sweep over rho or K, not both".into())),
        };
        let plan = Self {
            env: settings.env.expect("resolved settings"),
            axis,
            seeds: settings.seeds.clone().expect("resolved settings"),
            out: settings.out.clone().expect("resolved settings"),
            jobs: settings.jobs.expect("resolved settings"),
            precision: settings.precision.expect("resolved settings"),
            target_return: settings.target_return,
            settings,
        };
        plan.validate()?;
        Ok(plan)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(CliError::Usage("seeds must be distinct".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Usage("jobs must be positive".into()));
        }
        match &self.axis {
            SweepAxis::Rho(v) if v.is_empty() => return Err(CliError::Usage("empty rho sweep".into())),
            SweepAxis::K(v) if v.is_empty() => return Err(CliError::Usage("empty K sweep".into())),
            SweepAxis::Rho(v) if v.iter().map(|x| x.to_bits()).collect::<BTreeSet<_>>().len() != v.len() => {
                return Err(CliError::Usage("rho sweep values must be distinct".into()))
            }
            SweepAxis::K(v) if v.iter().collect::<BTreeSet<_>>().len() != v.len() => {
                return Err(CliError::Usage("K sweep values must be distinct".into()))
            }
            _ => {}
        }
        if self.target_return.is_some_and(|t| !t.is_finite()) {
            return Err(CliError::Usage("target return must be finite".into()));
        }
        for run in self.runs() {
            run.agent.validate()?;
        }
        Ok(())
    }

    /// Sweep values as `(tag, settings with the value applied)`.
    fn variants(&self) -> Vec<(String, Settings)> {
        let base = &self.settings;
        match &self.axis {
            SweepAxis::None => vec![("single".to_string(), base.clone())],
            SweepAxis::Rho(v) => v.iter().map(|&r| (format!("rho-{r}"), Settings { rho: Some(r), ..base.clone() })).collect(),
            SweepAxis::K(v) => v.iter().map(|&k| (format!("K-{k}"), Settings { k: Some(k), ..base.clone() })).collect(),
        }
    }

    /// Every `(sweep value, seed)` run, sweep-major.
    pub fn runs(&self) -> Vec<RunSpec> {
        self.variants()
            .into_iter()
            .flat_map(|(tag, s)| {
                self.seeds.iter().map(move |&seed| {
                    let settings = s.for_run(seed);
                    let agent = settings.agent_config(seed);
                    RunSpec { tag: tag.clone(), seed, settings, agent }
                })
            })
            .collect()
    }

    pub fn run_path(&self, run: &RunSpec) -> PathBuf {
        self.out.join(RUNS_DIR).join(run_file_name(&run.tag, run.seed))
    }

    pub fn checkpoint_path(&self, run: &RunSpec, kind: &str) -> PathBuf {
        self.out.join(CHECKPOINT_DIR).join(format!("{}_seed-{}_{kind}.json", run.tag, run.seed))
    }
}

/// Ends training once an evaluation mean reaches the target.
struct StopAt(Option<f64>);

impl<T> TrainObserver<T> for StopAt {
    fn on_record(&mut self, record: &TrainRecord, _omega: &ParameterPoint<T>) -> ControlFlow<()> {
        match (self.0, record.eval_mean) {
            (Some(t), Some(m)) if m >= t => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    }
}

fn write_checkpoint<T: Scalar>(path: &Path, omega: &ParameterPoint<T>) -> Result<()> {
    fs::write(path, checkpoint::to_json(omega)).map_err(|e| CliError::io(path, e))
}

/// Runs one training job and writes its files. A numerical failure is
/// returned as `Ok(Some(message))` after persisting the last valid point.
fn execute_run<T: Scalar>(plan: &ExperimentPlan, run: &RunSpec) -> Result<Option<String>> {
    let result = train_with_observer::<T>(&run.agent, plan.env, &mut StopAt(plan.target_return));
    let csv = plan.run_path(run);
    match result {
        Ok(out) => {
            output::write_run_csv(&csv, &run.settings, &out.records)?;
            write_checkpoint(&plan.checkpoint_path(run, "final"), &out.final_point)?;
            if let Some((_, _, p)) = &out.best {
                write_checkpoint(&plan.checkpoint_path(run, "best"), p)?;
            }
            let best = out.best.as_ref().map(|b| format!("{} at step {}", b.1, b.0)).unwrap_or_else(|| "none".into());
            eprintln!("{} seed {}: {} records, best eval {best}", run.tag, run.seed, out.records.len());
            Ok(None)
        }
        Err(f) if !f.error.is_numerical() => Err(CliError::Config(f.error)),
        Err(f) => {
            output::write_run_csv(&csv, &run.settings, &f.records)?;
            if let Some(p) = &f.last_valid {
                write_checkpoint(&plan.checkpoint_path(run, "last-valid"), p)?;
            }
            if let Some((_, _, p)) = &f.best {
                write_checkpoint(&plan.checkpoint_path(run, "best"), p)?;
            }
            let msg = format!("{} seed {} failed at step {}: {}", run.tag, run.seed, f.step, f.error);
            eprintln!("{msg}");
            Ok(Some(msg))
        }
    }
}

#[derive(Serialize)]
struct PlanEcho<'a> {
    config: &'a Settings,
    build: &'a str,
}

/// Prepares the output tree, refusing directories that hold runs of another plan.
fn prepare_output(plan: &ExperimentPlan, runs: &[RunSpec]) -> Result<()> {
    for sub in [RUNS_DIR, CHECKPOINT_DIR] {
        let d = plan.out.join(sub);
        fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
    }
    let ours: BTreeSet<PathBuf> = runs.iter().map(|r| plan.run_path(r)).collect();
    if let Some(stray) = output::list_run_files(&plan.out)?.into_iter().find(|p| !ours.contains(p)) {
        return Err(CliError::Usage(format!(
            "{} holds run files of a different plan (e.g. {}); choose another --out",
            plan.out.display(),
            stray.display()
        )));
    }
    let echo = PlanEcho { config: &plan.settings, build: BUILD_HASH };
    let path = plan.out.join("plan.json");
    let text = serde_json::to_string_pretty(&echo).expect("plan serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

/// Executes every run, then aggregates. Numerical failures leave their run
/// files and last valid checkpoints but produce no aggregate.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Summary> {
    let runs = plan.runs();
    prepare_output(plan, &runs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", plan.jobs)))?;
    let outcomes: Vec<Result<Option<String>>> = pool.install(|| {
        use rayon::prelude::*;
        runs.par_iter()
            .map(|r| match plan.precision {
                Precision::F64 => execute_run::<f64>(plan, r),
                Precision::F32 => execute_run::<f32>(plan, r),
            })
            .collect()
    });
    let mut failures = Vec::new();
    for o in outcomes {
        if let Some(msg) = o? {
            failures.push(msg);
        }
    }
    if let Some(first) = failures.first() {
        return Err(CliError::Numerical { failed: failures.len(), total: runs.len(), first: first.clone() });
    }
    let files: Vec<PathBuf> = runs.iter().map(|r| plan.run_path(r)).collect();
    aggregate_files(&plan.out, &files)
}
