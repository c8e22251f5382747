//! Metrics persistence (CSV primary, JSONL mirror) and figure/table
//! emission: accuracy-vs-time curves as dependency-free SVG, summary tables
//! over sweep results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};
use crate::sweep::RunResult;

/// One logged evaluation point within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub wall_seconds: f64,
    pub lr: f64,
}

impl MetricsRecord {
    /// Equality ignoring the wall-clock field (used by determinism checks).
    pub fn same_excluding_wall(&self, other: &Self) -> bool {
        self.run_id == other.run_id
            && self.epoch == other.epoch
            && self.step == other.step
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.eval_accuracy.to_bits() == other.eval_accuracy.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
    }
}

pub const METRICS_CSV_HEADER: &str =
    "run_id,epoch,step,train_loss,eval_accuracy,wall_seconds,lr";

/// Append-only metrics writer: one CSV row plus one JSONL line per record,
/// flushed on every write so a crash loses at most the record in flight.
/// One sink per run; records must have strictly increasing steps and
/// non-decreasing wall clocks.
pub struct MetricsSink {
    csv_path: PathBuf,
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
    last_step: Option<usize>,
    last_wall: f64,
}

impl MetricsSink {
    /// Create `metrics.csv` and `metrics.jsonl` inside `dir`.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| RamError::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        let jsonl_path = dir.join("metrics.jsonl");
        let mut csv =
            BufWriter::new(File::create(&csv_path).map_err(|e| RamError::io(&csv_path, e))?);
        writeln!(csv, "{METRICS_CSV_HEADER}").map_err(|e| RamError::io(&csv_path, e))?;
        csv.flush().map_err(|e| RamError::io(&csv_path, e))?;
        let jsonl =
            BufWriter::new(File::create(&jsonl_path).map_err(|e| RamError::io(&jsonl_path, e))?);
        Ok(MetricsSink {
            csv_path,
            csv,
            jsonl,
            last_step: None,
            last_wall: 0.0,
        })
    }

    pub fn append(&mut self, rec: &MetricsRecord) -> Result<()> {
        if rec.run_id.contains([',', '"', '\n', '\r']) {
            return Err(RamError::Validation(format!(
                "run_id {:?} contains CSV delimiter characters",
                rec.run_id
            )));
        }
        for (name, v) in [
            ("train_loss", rec.train_loss),
            ("eval_accuracy", rec.eval_accuracy),
            ("wall_seconds", rec.wall_seconds),
            ("lr", rec.lr),
        ] {
            if !v.is_finite() {
                return Err(RamError::Validation(format!("non-finite {name}: {v}")));
            }
        }
        if let Some(last) = self.last_step {
            if rec.step <= last {
                return Err(RamError::Validation(format!(
                    "step {} does not increase past {last}",
                    rec.step
                )));
            }
        }
        if rec.wall_seconds < self.last_wall {
            return Err(RamError::Validation(format!(
                "wall_seconds {} decreased below {}",
                rec.wall_seconds, self.last_wall
            )));
        }
        writeln!(
            self.csv,
            "{},{},{},{},{},{},{}",
            rec.run_id,
            rec.epoch,
            rec.step,
            rec.train_loss,
            rec.eval_accuracy,
            rec.wall_seconds,
            rec.lr
        )
        .map_err(|e| RamError::io(&self.csv_path, e))?;
        self.csv.flush().map_err(|e| RamError::io(&self.csv_path, e))?;
        let line = serde_json::to_string(rec).map_err(|e| RamError::Json {
            path: self.csv_path.with_extension("jsonl"),
            source: e,
        })?;
        writeln!(self.jsonl, "{line}").map_err(|e| RamError::io(&self.csv_path, e))?;
        self.jsonl.flush().map_err(|e| RamError::io(&self.csv_path, e))?;
        self.last_step = Some(rec.step);
        self.last_wall = rec.wall_seconds;
        Ok(())
    }
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| RamError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_CSV_HEADER => {}
        other => {
            return Err(RamError::Validation(format!(
                "bad metrics header: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(RamError::Validation(format!(
                "line {} has {} fields",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| RamError::Validation(format!("bad float {s:?}")))
        };
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| RamError::Validation(format!("bad count {s:?}")))
        };
        out.push(MetricsRecord {
            run_id: fields[0].to_string(),
            epoch: parse_u(fields[1])?,
            step: parse_u(fields[2])?,
            train_loss: parse_f(fields[3])?,
            eval_accuracy: parse_f(fields[4])?,
            wall_seconds: parse_f(fields[5])?,
            lr: parse_f(fields[6])?,
        });
    }
    Ok(out)
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| RamError::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| RamError::Json {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}

pub struct PlotSummary {
    pub plotted: usize,
    pub skipped: Vec<String>,
}

const PALETTE: [&str; 8] = [
    "#e08214", "#4878cf", "#6acc65", "#d65f5f", "#b47cc7", "#c4ad66", "#77bedb", "#8c613c",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Emit accuracy-vs-wall-time polylines, one per stream, as a standalone
/// SVG. Empty streams are skipped and reported in the summary. Output is
/// byte-deterministic for identical input.
pub fn plot_accuracy_vs_time(
    streams: &[(String, Vec<MetricsRecord>)],
    out: &Path,
) -> Result<PlotSummary> {
    let (width, height) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (70.0, 170.0, 30.0, 50.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);

    let mut skipped = Vec::new();
    let live: Vec<&(String, Vec<MetricsRecord>)> = streams
        .iter()
        .filter(|(label, recs)| {
            if recs.is_empty() {
                skipped.push(label.clone());
                false
            } else {
                true
            }
        })
        .collect();

    let max_t = live
        .iter()
        .flat_map(|(_, recs)| recs.iter().map(|r| r.wall_seconds))
        .fold(0.0f64, f64::max)
        .max(1e-9);

    let sx = |t: f64| ml + t / max_t * pw;
    let sy = |a: f64| mt + (1.0 - a.clamp(0.0, 1.0)) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    // axes with ticks
    svg.push_str(&format!(
        "  <line x1=\"{ml}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        mt + ph
    ));
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let x = ml + frac * pw;
        let y = mt + ph - frac * ph;
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            mt + ph,
            mt + ph + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{:.1}</text>\n",
            mt + ph + 18.0,
            frac * max_t
        ));
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{ml}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            ml - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{frac:.1}</text>\n",
            ml - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">wall time (s)</text>\n",
        ml + pw / 2.0,
        height - 10.0
    ));
    svg.push_str(&format!(
        "  <text x=\"18\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">accuracy</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0
    ));

    for (k, (label, recs)) in live.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = recs
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.wall_seconds), sy(r.eval_accuracy)))
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = mt + 14.0 + k as f64 * 18.0;
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ml + pw + 12.0,
            ml + pw + 34.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            ml + pw + 40.0,
            ly + 4.0,
            xml_escape(label)
        ));
    }
    svg.push_str("</svg>\n");

    std::fs::write(out, svg).map_err(|e| RamError::io(out, e))?;
    Ok(PlotSummary {
        plotted: live.len(),
        skipped,
    })
}

pub const SUMMARY_CSV_HEADER: &str = "param,value,seed,optimizer,learning_rate,\
final_accuracy,best_accuracy,seconds_per_epoch,wall_seconds,status";

/// Write sweep results as a CSV table, one row per run, in input order.
pub fn summary_table(results: &[RunResult], out: &Path) -> Result<()> {
    let mut text = String::from(SUMMARY_CSV_HEADER);
    text.push('\n');
    for r in results {
        let (param, value) = match &r.swept {
            Some(s) => (s.param.as_str(), s.value.as_str()),
            None => ("-", "-"),
        };
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            param,
            value,
            r.seed,
            r.config.optimizer,
            r.config.learning_rate,
            r.final_accuracy,
            r.best_accuracy,
            r.seconds_per_epoch,
            r.wall_seconds,
            r.status,
        ));
    }
    std::fs::write(out, text).map_err(|e| RamError::io(out, e))
}
