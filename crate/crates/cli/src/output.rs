//! Run CSVs, per-group aggregates and the sweep summary.
//!
//! Every file starts with `# key: value` metadata lines followed by a CSV
//! table with one row per record. Aggregates and the summary are computed
//! from the run files alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sgmm_core::agent::{mean_and_sample_std, TrainRecord};

use crate::error::{CliError, Result};
use crate::settings::Settings;

pub const RUN_COLUMNS: [&str; 7] = ["step", "loss", "eval_mean", "eval_std", "nonzero_frac", "model_frac", "wall_ms"];
const METRICS: usize = RUN_COLUMNS.len() - 1;

pub const RUNS_DIR: &str = "runs";
pub const AGGREGATE_DIR: &str = "aggregate";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SUMMARY_FILE: &str = "summary.json";

/// Content hash of the sources this binary was built from.
pub const BUILD_HASH: &str = env!("SGMM_BUILD_HASH");

pub fn run_file_name(tag: &str, seed: u64) -> String {
    format!("{tag}_seed-{seed}.csv")
}

fn fmt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

fn write_table(path: &Path, meta: &[(&str, String)], header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = String::new();
    for (k, v) in meta {
        buf.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::format(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::format(path, e))?;
    }
    let table = w.into_inner().map_err(|e| CliError::format(path, e.error()))?;
    buf.push_str(std::str::from_utf8(&table).expect("csv output is utf-8"));
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

/// Writes one run: metadata lines `config` (flat run settings) and `build`.
pub fn write_run_csv(path: &Path, run: &Settings, records: &[TrainRecord]) -> Result<()> {
    let header: Vec<String> = RUN_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                fmt(Some(r.loss)),
                fmt(r.eval_mean),
                fmt(r.eval_std),
                fmt(Some(r.nonzero_frac)),
                fmt(Some(r.model_frac)),
                fmt(r.wall_ms),
            ]
        })
        .collect();
    write_table(path, &[("config", run.to_json()), ("build", BUILD_HASH.to_string())], &header, &rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub step: u64,
    /// `loss, eval_mean, eval_std, nonzero_frac, model_frac, wall_ms`.
    pub values: [Option<f64>; METRICS],
}

#[derive(Clone, Debug)]
pub struct RunFile {
    pub path: PathBuf,
    pub config: Settings,
    pub build: String,
    pub rows: Vec<RunRow>,
}

impl RunFile {
    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    pub fn column(&self, name: &str) -> Vec<Option<f64>> {
        let i = RUN_COLUMNS.iter().position(|c| *c == name).expect("known column") - 1;
        self.rows.iter().map(|r| r.values[i]).collect()
    }
}

fn read_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l[1..].trim_start().split_once(": ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

pub fn read_run_csv(path: &Path) -> Result<RunFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let meta = read_meta(&text);
    let config = meta.get("config").ok_or_else(|| CliError::format(path, "missing `# config:` line"))?;
    let config = Settings::from_json(config).map_err(|e| CliError::format(path, e))?;
    let build = meta.get("build").cloned().unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| CliError::format(path, e))?.iter().map(String::from).collect();
    if header != RUN_COLUMNS {
        return Err(CliError::format(path, format!("unexpected columns {header:?}")));
    }
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| CliError::format(path, format!("bad number `{s}`")))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let step = rec[0].parse().map_err(|_| CliError::format(path, format!("bad step `{}`", &rec[0])))?;
        let mut values = [None; METRICS];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse(&rec[i + 1])?;
        }
        rows.push(RunRow { step, values });
    }
    Ok(RunFile { path: path.to_path_buf(), config, build, rows })
}

/// Aggregate of all seeds of one sweep value.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub tag: String,
    pub runs: Vec<RunFile>,
    pub steps: Vec<u64>,
    /// Per step and metric: seed mean and seed sample standard deviation.
    pub stats: Vec<[Option<(f64, f64)>; METRICS]>,
}

impl Aggregate {
    /// `runs` must be ordered by seed.
    pub fn from_runs(tag: &str, runs: Vec<RunFile>) -> Self {
        let mut by_step: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
        for run in &runs {
            for row in &run.rows {
                let slot = by_step.entry(row.step).or_insert_with(|| vec![Vec::new(); METRICS]);
                for (i, v) in row.values.iter().enumerate() {
                    if let Some(v) = v {
                        slot[i].push(*v);
                    }
                }
            }
        }
        let steps = by_step.keys().copied().collect();
        let stats = by_step
            .values()
            .map(|cols| {
                let mut out = [None; METRICS];
                for (o, c) in out.iter_mut().zip(cols) {
                    if !c.is_empty() {
                        *o = Some(mean_and_sample_std(c));
                    }
                }
                out
            })
            .collect();
        Self { tag: tag.to_string(), runs, steps, stats }
    }

    pub fn mean(&self, name: &str) -> Vec<Option<f64>> {
        let i = RUN_COLUMNS.iter().position(|c| *c == name).expect("known column") - 1;
        self.stats.iter().map(|s| s[i].map(|(m, _)| m)).collect()
    }

    /// Columns: the run columns holding seed means, then `<metric>_seed_std`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = RUN_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(RUN_COLUMNS[1..].iter().map(|c| format!("{c}_seed_std")));
        let rows: Vec<Vec<String>> = self
            .steps
            .iter()
            .zip(&self.stats)
            .map(|(step, st)| {
                let mut r = vec![step.to_string()];
                r.extend(st.iter().map(|s| fmt(s.map(|(m, _)| m))));
                r.extend(st.iter().map(|s| fmt(s.map(|(_, sd)| sd))));
                r
            })
            .collect();
        let files: Vec<String> = self
            .runs
            .iter()
            .map(|r| r.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect();
        let meta = [
            ("runs", serde_json::to_string(&files).expect("names serialize")),
            ("build", self.runs.first().map(|r| r.build.clone()).unwrap_or_default()),
        ];
        write_table(path, &meta, &header, &rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_step: Option<u64>,
    pub final_nonzero_frac: Option<f64>,
    pub final_model_frac: Option<f64>,
    pub best_eval_mean: Option<f64>,
    pub best_eval_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub tag: String,
    /// `"rho"`, `"K"` or `null`.
    pub axis: Option<String>,
    pub value: Option<f64>,
    pub seeds: Vec<u64>,
    /// Seed mean of each run's last nonzero fraction.
    pub final_nonzero_frac: Option<f64>,
    pub final_nonzero_frac_seed_std: Option<f64>,
    pub final_model_frac: Option<f64>,
    /// Maximum of the seed-mean evaluation curve.
    pub best_eval_mean: Option<f64>,
    pub best_eval_step: Option<u64>,
    pub epsilon: Option<f64>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub build: String,
    pub groups: Vec<GroupSummary>,
}

/// First maximum of `(step, value)` pairs with a value.
fn best(steps: &[u64], values: &[Option<f64>]) -> Option<(u64, f64)> {
    steps.iter().zip(values).filter_map(|(s, v)| v.map(|v| (*s, v))).fold(None, |acc, (s, v)| match acc {
        Some((_, b)) if b >= v => acc,
        _ => Some((s, v)),
    })
}

fn last_of(values: &[Option<f64>]) -> Option<f64> {
    values.iter().rev().find_map(|v| *v)
}

pub fn axis_of(tag: &str) -> Option<&'static str> {
    if tag.starts_with("rho-") {
        Some("rho")
    } else if tag.starts_with("K-") {
        Some("K")
    } else {
        None
    }
}

impl GroupSummary {
    pub fn from_aggregate(agg: &Aggregate) -> Self {
        let axis = axis_of(&agg.tag);
        let first = agg.runs.first().map(|r| &r.config);
        let value = match axis {
            Some("rho") => first.and_then(|c| c.rho),
            Some("K") => first.and_then(|c| c.k.map(|k| k as f64)),
            _ => None,
        };
        let runs: Vec<RunSummary> = agg
            .runs
            .iter()
            .map(|r| {
                let steps: Vec<u64> = r.rows.iter().map(|row| row.step).collect();
                let b = best(&steps, &r.column("eval_mean"));
                RunSummary {
                    seed: r.seed(),
                    final_step: steps.last().copied(),
                    final_nonzero_frac: last_of(&r.column("nonzero_frac")),
                    final_model_frac: last_of(&r.column("model_frac")),
                    best_eval_mean: b.map(|(_, v)| v),
                    best_eval_step: b.map(|(s, _)| s),
                }
            })
            .collect();
        let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_nonzero_frac).collect();
        let model: Vec<f64> = runs.iter().filter_map(|r| r.final_model_frac).collect();
        let nz = (!finals.is_empty()).then(|| mean_and_sample_std(&finals));
        let b = best(&agg.steps, &agg.mean("eval_mean"));
        Self {
            tag: agg.tag.clone(),
            axis: axis.map(String::from),
            value,
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_nonzero_frac: nz.map(|(m, _)| m),
            final_nonzero_frac_seed_std: nz.map(|(_, s)| s),
            final_model_frac: (!model.is_empty()).then(|| mean_and_sample_std(&model).0),
            best_eval_mean: b.map(|(_, v)| v),
            best_eval_step: b.map(|(s, _)| s),
            epsilon: first.and_then(|c| c.epsilon),
            runs,
        }
    }
}

/// Splits `<tag>_seed-<n>.csv`.
pub fn parse_run_file_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let (tag, seed) = stem.rsplit_once("_seed-")?;
    Some((tag.to_string(), seed.parse().ok()?))
}

/// Reads the given run files, writes one aggregate per tag and the summary.
pub fn aggregate_files(out: &Path, files: &[PathBuf]) -> Result<Summary> {
    let mut groups: BTreeMap<String, Vec<RunFile>> = BTreeMap::new();
    for f in files {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let (tag, _) = parse_run_file_name(&name).ok_or_else(|| CliError::format(f, "not a run file name"))?;
        groups.entry(tag).or_default().push(read_run_csv(f)?);
    }
    let builds: std::collections::BTreeSet<String> = groups.values().flatten().map(|r| r.build.clone()).collect();
    if builds.len() > 1 {
        return Err(CliError::format(out.join(RUNS_DIR), "run files come from different builds"));
    }
    let agg_dir = out.join(AGGREGATE_DIR);
    fs::create_dir_all(&agg_dir).map_err(|e| CliError::io(&agg_dir, e))?;
    let mut summaries = Vec::new();
    for (tag, mut runs) in groups {
        runs.sort_by_key(|r| r.seed());
        let agg = Aggregate::from_runs(&tag, runs);
        agg.write(&agg_dir.join(format!("{tag}.csv")))?;
        summaries.push(GroupSummary::from_aggregate(&agg));
    }
    summaries.sort_by(|a, b| a.value.unwrap_or(0.0).total_cmp(&b.value.unwrap_or(0.0)).then_with(|| a.tag.cmp(&b.tag)));
    let summary = Summary { build: builds.into_iter().next().unwrap_or_default(), groups: summaries };
    let path = out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(summary)
}

/// Run CSVs currently under `out/runs`, sorted by name.
pub fn list_run_files(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join(RUNS_DIR);
    let rd = match fs::read_dir(&dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(&dir, e)),
    };
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).and_then(parse_run_file_name).is_some())
        .collect();
    files.sort();
    Ok(files)
}

/// Rebuilds every aggregate and the summary from the run files under `out`.
pub fn aggregate_dir(out: &Path) -> Result<Summary> {
    let files = list_run_files(out)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no run files under {}", out.join(RUNS_DIR).display())));
    }
    aggregate_files(out, &files)
}
