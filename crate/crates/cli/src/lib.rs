//! Experiment harness for S-GMM-QF agents: flags and JSON config, single
//! runs, ρ and K sweeps over several seeds, per-run CSVs, seed aggregates and
//! a summary pairing final sparsity with best evaluation return.

pub mod error;
pub mod output;
pub mod plan;
pub mod settings;

use std::ffi::OsString;
use std::fs;

use clap::Parser;

pub use error::{CliError, Result};
pub use output::Summary;
pub use plan::{run_plan, ExperimentPlan, SweepAxis};
pub use settings::Settings;

/// Layers `flags` over the `--config` file (if any) and resolves defaults.
pub fn plan_from_settings(flags: Settings) -> Result<ExperimentPlan> {
    let merged = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let file = Settings::from_json(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
            file.merge(flags)
        }
        None => flags,
    };
    ExperimentPlan::from_settings(merged.resolve()?)
}

/// Parses an argument vector (program name first) into a validated plan.
pub fn parse_cli<I, T>(argv: I) -> Result<ExperimentPlan>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let flags = Settings::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    plan_from_settings(flags)
}

/// Runs what the flags ask for: a full plan, or only re-aggregation.
pub fn execute(flags: Settings) -> Result<Summary> {
    if flags.aggregate_only {
        let out = flags.out.clone().unwrap_or_else(|| "runs".into());
        return output::aggregate_dir(&out);
    }
    run_plan(&plan_from_settings(flags)?)
}
