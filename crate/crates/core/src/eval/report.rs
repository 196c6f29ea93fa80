//! Machine-readable reports and their aligned text tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AblationRow, MetricReport, RunSummary, SweepReport};
use crate::error::Result;
use crate::records::{write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportBody {
    Eval {
        model: String,
        summary: RunSummary,
    },
    Sweep {
        source: String,
        /// Mean over runs; equal to the single run when there is one.
        sweep: SweepReport,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        runs: Vec<SweepReport>,
    },
    Ablation {
        threshold: f64,
        rows: Vec<AblationRow>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run: String,
    pub dataset: String,
    pub split: String,
    /// Accuracy of predicting every example inconsistent.
    pub baseline_acc: f64,
    pub body: ReportBody,
}

impl Report {
    /// Rows whose accuracy does not beat the all-negative baseline.
    pub fn below_baseline(&self) -> Vec<String> {
        let check = |name: String, r: &MetricReport| (r.acc <= self.baseline_acc).then_some(name);
        match &self.body {
            ReportBody::Eval { model, summary } => check(model.clone(), &summary.mean).into_iter().collect(),
            ReportBody::Sweep { sweep, .. } => sweep
                .rows
                .iter()
                .filter_map(|r| check(format!("threshold {}", fmt_t(r.threshold)), r))
                .collect(),
            ReportBody::Ablation { rows, .. } => rows
                .iter()
                .filter_map(|r| check(r.variant.to_string(), &r.summary.mean))
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "run: {}\ndataset: {}\nsplit: {}\n\n",
            self.run, self.dataset, self.split
        );
        out.push_str(&match &self.body {
            ReportBody::Eval { model, summary } => render_eval(model, summary),
            ReportBody::Sweep { sweep, .. } => render_sweep(sweep),
            ReportBody::Ablation { rows, threshold } => render_ablation(rows, *threshold),
        });
        out.push_str(&format!(
            "\nall-negative baseline accuracy: {:.4}\n",
            self.baseline_acc
        ));
        for name in self.below_baseline() {
            out.push_str(&format!("WARNING: {name} does not beat the all-negative baseline\n"));
        }
        out
    }

    /// Writes `<stem>.report` and `<stem>.txt` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_json(&dir.join(format!("{stem}.report")), self)?;
        write_atomic(&dir.join(format!("{stem}.txt")), self.render().as_bytes())
    }
}

fn fmt_t(t: f64) -> String {
    format!("{t:.2}")
}

fn header(first: &str) -> String {
    format!(
        "{:<16} {:>8} {:>8} {:>8} {:>10}\n",
        first, "Acc", "F1", "MCC", "F1(bin)"
    )
}

fn row(name: &str, r: &MetricReport) -> String {
    format!(
        "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>10.4}\n",
        name, r.acc, r.macro_f1, r.mcc, r.binary_f1
    )
}

pub fn render_eval(model: &str, summary: &RunSummary) -> String {
    let mut out = header("Model");
    out.push_str(&row(model, &summary.mean));
    if summary.runs.len() > 1 {
        out.push_str("\nper seed:\n");
        out.push_str(&header("Seed"));
        for r in &summary.runs {
            let name = r.seed.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&row(&name, r));
        }
    }
    out.push_str(&format!("\nthreshold {}  n {}\n", fmt_t(summary.mean.threshold), summary.mean.n));
    out
}

pub fn render_sweep(sweep: &SweepReport) -> String {
    let mut out = header("Threshold");
    for r in &sweep.rows {
        out.push_str(&row(&fmt_t(r.threshold), r));
    }
    out.push('\n');
    for (metric, t) in &sweep.best_by {
        out.push_str(&format!("best {metric}: {}\n", fmt_t(*t)));
    }
    out
}

pub fn render_ablation(rows: &[AblationRow], threshold: f64) -> String {
    let mut out = header("Loss");
    for r in rows {
        out.push_str(&row(r.variant.label(), &r.summary.mean));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}: gamma={} alpha=[{}, {}] seeds={}\n",
            r.variant,
            r.loss.gamma,
            r.loss.alpha[0],
            r.loss.alpha[1],
            r.summary.runs.len()
        ));
    }
    out.push_str(&format!("threshold {}\n", fmt_t(threshold)));
    out
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate, threshold_sweep, DEFAULT_GRID};
    use super::*;

    #[test]
    fn sweep_report_renders_five_rows_and_flags_baseline() {
        let p = vec![0.1, 0.2, 0.3, 0.7, 0.45, 0.52];
        let y = vec![0, 0, 0, 1, 0, 0];
        let sweep = threshold_sweep(&p, &y, &DEFAULT_GRID).unwrap();
        let r = Report {
            run: "r".into(),
            dataset: "d".into(),
            split: "validation".into(),
            baseline_acc: 5.0 / 6.0,
            body: ReportBody::Sweep {
                source: "s".into(),
                sweep,
                runs: Vec::new(),
            },
        };
        let text = r.render();
        for t in ["0.40", "0.45", "0.50", "0.55", "0.60"] {
            assert!(text.lines().any(|l| l.starts_with(t)), "{text}");
        }
        assert!(text.contains("WARNING: threshold 0.40"));
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), "x").unwrap();
        let back: Report = crate::records::read_json(&dir.path().join("x.report")).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn eval_report_lists_seeds() {
        let runs: Vec<MetricReport> = (0..3)
            .map(|s| evaluate(&[0.9, 0.1, 0.6], &[1, 0, 0], 0.5, Some(s)).unwrap())
            .collect();
        let summary = super::super::summarize(runs).unwrap();
        let text = render_eval("native", &summary);
        assert!(text.contains("per seed"));
        assert_eq!(text.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 3);
    }
}
