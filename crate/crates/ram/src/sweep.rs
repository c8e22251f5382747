//! Linear-search harness: vary exactly one hyperparameter against a fixed
//! baseline, run every (value, seed) combination, and reduce the results
//! into comparable trend reports.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{RamError, Result};
use crate::report::MetricsSink;
use crate::training::{train, DataSplit, HyperParams, RunConfig, RunStatus};

/// Description of one linear search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Name of the `HyperParams` field to vary.
    pub parameter: String,
    /// Ordered values to try; types must match the field.
    pub values: Vec<Value>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Shorten every run to this many epochs (some searches do not need the
    /// baseline's full budget).
    #[serde(default)]
    pub epochs_override: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(RamError::Config("sweep needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(RamError::Config("sweep needs at least one seed".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RamError::io(path, e))?;
        let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| RamError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

fn as_count(v: &Value, field: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| RamError::Config(format!("{field} wants a non-negative integer, got {v}")))
}

fn as_real(v: &Value, field: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| RamError::Config(format!("{field} wants a number, got {v}")))
}

/// Return a copy of `base` with the named field replaced. Unknown fields and
/// type mismatches are configuration errors.
pub fn apply_field(base: &HyperParams, field: &str, value: &Value) -> Result<HyperParams> {
    let mut out = base.clone();
    match field {
        "num_glimpses" => out.num_glimpses = as_count(value, field)?,
        "num_scales" => out.num_scales = as_count(value, field)?,
        "bandwidth" => out.bandwidth = as_count(value, field)?,
        "loc_std" => out.loc_std = as_real(value, field)?,
        "batch_size" => out.batch_size = as_count(value, field)?,
        "epochs" => out.epochs = as_count(value, field)?,
        "optimizer" => {
            let s = value
                .as_str()
                .ok_or_else(|| RamError::Config(format!("optimizer wants a string, got {value}")))?;
            out.optimizer = s.parse()?;
        }
        "learning_rate" => out.learning_rate = as_real(value, field)?,
        "decay" => out.decay = as_real(value, field)?,
        other => {
            return Err(RamError::Config(format!(
                "unknown hyperparameter field {other:?}"
            )))
        }
    }
    out.validate()?;
    Ok(out)
}

/// Display form of a swept JSON value, used in run ids and tables.
pub fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// The field a run varied, in display form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweptField {
    pub param: String,
    pub value: String,
}

/// One fully resolved run of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub swept: SweptField,
    pub seed: u64,
    pub hyper: HyperParams,
}

/// Expand a spec against a baseline: `|values| * |seeds|` configs, each
/// differing from the baseline in exactly the swept field (and the seed),
/// ordered values-major exactly as written.
pub fn expand(spec: &SweepSpec, baseline: &HyperParams) -> Result<Vec<SweepRun>> {
    spec.validate()?;
    let mut runs = Vec::with_capacity(spec.values.len() * spec.seeds.len());
    for value in &spec.values {
        let mut hyper = apply_field(baseline, &spec.parameter, value)?;
        if let Some(epochs) = spec.epochs_override {
            hyper.epochs = epochs;
        }
        for &seed in &spec.seeds {
            runs.push(SweepRun {
                swept: SweptField {
                    param: spec.parameter.clone(),
                    value: value_label(value),
                },
                seed,
                hyper: hyper.clone(),
            });
        }
    }
    Ok(runs)
}

/// Outcome of one run, as persisted in `result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub swept: Option<SweptField>,
    pub seed: u64,
    pub config: HyperParams,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Epoch-loop wall clock, evaluation included.
    pub wall_seconds: f64,
    /// Epoch-loop wall clock with evaluation time subtracted.
    pub train_seconds: f64,
    /// `train_seconds / epochs_run` (pure model cost per epoch).
    pub seconds_per_epoch: f64,
    pub epochs_run: usize,
    pub status: RunStatus,
}

fn sanitize_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' })
        .collect()
}

/// Execute every expanded run, optionally `parallelism` at a time. Each run
/// writes `metrics.csv`, `metrics.jsonl`, `result.json` and a final
/// `checkpoint.json` under `<out>/<param>=<value>/seed=<s>/`. A run that
/// fails becomes `status = aborted` instead of failing the harness, and the
/// output order always matches the spec order.
pub fn run_sweep(
    spec: &SweepSpec,
    baseline: &RunConfig,
    data: &DataSplit,
    out_dir: &Path,
    parallelism: usize,
) -> Result<Vec<RunResult>> {
    let runs = expand(spec, &baseline.hyper)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RamError::Config(format!("thread pool: {e}")))?;

    let results: Vec<RunResult> = pool.install(|| {
        runs.par_iter()
            .map(|sweep_run| execute_run(sweep_run, baseline, data, out_dir))
            .collect()
    });
    Ok(results)
}

fn execute_run(
    sweep_run: &SweepRun,
    baseline: &RunConfig,
    data: &DataSplit,
    out_dir: &Path,
) -> RunResult {
    let dir = out_dir
        .join(sanitize_component(&format!(
            "{}={}",
            sweep_run.swept.param, sweep_run.swept.value
        )))
        .join(format!("seed={}", sweep_run.seed));
    let run_id = format!(
        "{}={} seed={}",
        sweep_run.swept.param, sweep_run.swept.value, sweep_run.seed
    )
    .replace(' ', "_");

    let run_cfg = RunConfig {
        run_id,
        hyper: sweep_run.hyper.clone(),
        seed: sweep_run.seed,
        out_dir: Some(dir.clone()),
        ..baseline.clone()
    };

    let aborted = |msg: String| {
        eprintln!("run {}={} seed={} aborted: {msg}",
            sweep_run.swept.param, sweep_run.swept.value, sweep_run.seed);
        RunResult {
            swept: Some(sweep_run.swept.clone()),
            seed: sweep_run.seed,
            config: sweep_run.hyper.clone(),
            final_accuracy: 0.0,
            best_accuracy: 0.0,
            wall_seconds: 0.0,
            train_seconds: 0.0,
            seconds_per_epoch: 0.0,
            epochs_run: 0,
            status: RunStatus::Aborted,
        }
    };

    let mut sink = match MetricsSink::create(&dir) {
        Ok(s) => s,
        Err(e) => return aborted(e.to_string()),
    };
    let outcome = match train(&run_cfg, data, Some(&mut sink)) {
        Ok(o) => o,
        Err(e) => return aborted(e.to_string()),
    };

    let result = RunResult {
        swept: Some(sweep_run.swept.clone()),
        seed: sweep_run.seed,
        config: sweep_run.hyper.clone(),
        final_accuracy: outcome.final_accuracy,
        best_accuracy: outcome.best_accuracy,
        wall_seconds: outcome.wall_seconds,
        train_seconds: outcome.train_seconds,
        seconds_per_epoch: if outcome.epochs_run > 0 {
            outcome.train_seconds / outcome.epochs_run as f64
        } else {
            0.0
        },
        epochs_run: outcome.epochs_run,
        status: outcome.status,
    };

    // best-effort persistence; the in-memory result is authoritative
    let _ = outcome.params.save(&dir.join("checkpoint.json"));
    if let Ok(json) = serde_json::to_string_pretty(&result) {
        let _ = std::fs::write(dir.join("result.json"), json);
    }
    result
}

/// Per-value row of a trend report, seed-averaged.
#[derive(Debug, Clone, Serialize)]
pub struct TrendRow {
    pub value: String,
    pub numeric: Option<f64>,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub mean_seconds_per_epoch: f64,
}

/// Trend checks over one sweep's completed results.
#[derive(Debug, Clone, Serialize)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
    pub completed: usize,
    /// R^2 of the least-squares line time-vs-value; `None` when the values
    /// are non-numeric, fewer than two rows exist, or time is constant.
    pub time_fit_r2: Option<f64>,
    pub time_constant: bool,
    pub time_monotone_increasing: bool,
    pub accuracy_monotone_increasing: bool,
    /// Swept value with the best mean accuracy.
    pub best_value: Option<String>,
}

/// Reduce run results into per-value means plus trend checks. Order of rows
/// follows first appearance, i.e. the sweep's value order.
pub fn compare(results: &[RunResult]) -> TrendReport {
    let completed: Vec<&RunResult> = results
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .collect();

    let mut rows: Vec<TrendRow> = Vec::new();
    for r in &completed {
        let value = r
            .swept
            .as_ref()
            .map(|s| s.value.clone())
            .unwrap_or_else(|| "-".into());
        match rows.iter_mut().find(|row| row.value == value) {
            Some(row) => {
                row.runs += 1;
                row.mean_accuracy += r.final_accuracy;
                row.mean_seconds_per_epoch += r.seconds_per_epoch;
            }
            None => rows.push(TrendRow {
                numeric: value.parse().ok(),
                value,
                runs: 1,
                mean_accuracy: r.final_accuracy,
                mean_seconds_per_epoch: r.seconds_per_epoch,
            }),
        }
    }
    for row in rows.iter_mut() {
        row.mean_accuracy /= row.runs as f64;
        row.mean_seconds_per_epoch /= row.runs as f64;
    }

    let best_value = rows
        .iter()
        .max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy))
        .map(|r| r.value.clone());

    let time_monotone_increasing = rows.len() >= 2
        && rows
            .windows(2)
            .all(|w| w[1].mean_seconds_per_epoch > w[0].mean_seconds_per_epoch);
    let accuracy_monotone_increasing = rows.len() >= 2
        && rows.windows(2).all(|w| w[1].mean_accuracy > w[0].mean_accuracy);

    let (time_fit_r2, time_constant) = fit_r2(&rows);

    TrendReport {
        completed: completed.len(),
        rows,
        time_fit_r2,
        time_constant,
        time_monotone_increasing,
        accuracy_monotone_increasing,
        best_value,
    }
}

/// Least-squares line of time against the numeric swept value.
fn fit_r2(rows: &[TrendRow]) -> (Option<f64>, bool) {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.numeric.map(|x| (x, r.mean_seconds_per_epoch)))
        .collect();
    if points.len() < 2 {
        return (None, false);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    if ss_tot < 1e-18 {
        return (None, true);
    }
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let pred = mean_y + slope * (p.0 - mean_x);
            (p.1 - pred) * (p.1 - pred)
        })
        .sum();
    (Some(1.0 - ss_res / ss_tot), false)
}

/// Human-readable rendering of a trend report.
pub fn render_trend(report: &TrendReport) -> String {
    let mut out = String::from("value,runs,mean_accuracy,mean_seconds_per_epoch\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.3}\n",
            row.value, row.runs, row.mean_accuracy, row.mean_seconds_per_epoch
        ));
    }
    out.push_str(&format!(
        "# completed={} time_r2={} time_constant={} time_monotone={} best_value={}\n",
        report.completed,
        report
            .time_fit_r2
            .map(|r| format!("{r:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report.time_constant,
        report.time_monotone_increasing,
        report.best_value.as_deref().unwrap_or("n/a"),
    ));
    out
}

/// Sweep output layout helper: every `<param>=<value>/seed=<s>` run dir
/// under `root`, in lexical order.
pub fn discover_run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| RamError::io(root, e))?;
    let mut level1: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    level1.sort();
    for dir in level1 {
        let mut seeds: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| RamError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.join("result.json").exists())
            .collect();
        seeds.sort();
        dirs.extend(seeds);
    }
    Ok(dirs)
}
