//! Confusion-matrix metrics, thresholding, threshold sweeps, multi-seed
//! averaging, the loss ablation harness and report rendering.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, FeatureSet, LossConfig, LossVariant, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use report::{render_ablation, render_eval, render_sweep, Report, ReportBody};

pub const DEFAULT_GRID: [f64; 5] = [0.40, 0.45, 0.50, 0.55, 0.60];

/// Positive class is label 1 (consistent).
pub fn binarize(p_positive: &[f64], threshold: f64) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::validation(format!("threshold {threshold} must lie in (0, 1)")));
    }
    Ok(p_positive.iter().map(|p| u8::from(*p >= threshold)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(predicted: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predicted.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::validation("cannot build a confusion matrix from zero examples"));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, y) in predicted.iter().zip(labels) {
        match (*p != 0, *y != 0) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub macro_f1: f64,
    /// F1 of the consistent class alone.
    pub binary_f1: f64,
    pub mcc: f64,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.n();
    if n == 0 {
        return Err(Error::validation("empty confusion matrix"));
    }
    let pos = f1(cm.tp, cm.fp, cm.fn_);
    let neg = f1(cm.tn, cm.fn_, cm.fp);
    let factors = [cm.tp + cm.fp, cm.tp + cm.fn_, cm.tn + cm.fp, cm.tn + cm.fn_];
    let mcc = if factors.contains(&0) {
        0.0
    } else {
        let num = cm.tp as f64 * cm.tn as f64 - cm.fp as f64 * cm.fn_ as f64;
        let den = factors.iter().map(|f| *f as f64).product::<f64>().sqrt();
        (num / den).clamp(-1.0, 1.0)
    };
    Ok(Metrics {
        acc: (cm.tp + cm.tn) as f64 / n as f64,
        macro_f1: (pos + neg) / 2.0,
        binary_f1: pos,
        mcc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub threshold: f64,
    pub acc: f64,
    pub macro_f1: f64,
    pub binary_f1: f64,
    pub mcc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    pub n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MetricReport {
    pub fn from_confusion(threshold: f64, cm: ConfusionMatrix, seed: Option<u64>) -> Result<Self> {
        let m = metrics(&cm)?;
        Ok(MetricReport {
            threshold,
            acc: m.acc,
            macro_f1: m.macro_f1,
            binary_f1: m.binary_f1,
            mcc: m.mcc,
            confusion: Some(cm),
            n: cm.n(),
            seed,
        })
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "acc" => Some(self.acc),
            "macro_f1" => Some(self.macro_f1),
            "binary_f1" => Some(self.binary_f1),
            "mcc" => Some(self.mcc),
            _ => None,
        }
    }
}

pub fn evaluate(p_positive: &[f64], labels: &[u8], threshold: f64, seed: Option<u64>) -> Result<MetricReport> {
    let yhat = binarize(p_positive, threshold)?;
    MetricReport::from_confusion(threshold, confusion(&yhat, labels)?, seed)
}

pub const METRIC_NAMES: [&str; 4] = ["acc", "macro_f1", "binary_f1", "mcc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: Vec<f64>,
    pub rows: Vec<MetricReport>,
    pub best_by: BTreeMap<String, f64>,
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("threshold grid is empty"));
    }
    if grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::validation("grid thresholds must lie in (0, 1)"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("threshold grid must be strictly increasing"));
    }
    Ok(())
}

/// Best threshold for `metric`: highest value, ties broken toward 0.5 and
/// then toward the lower threshold.
pub fn best_threshold(rows: &[MetricReport], metric: &str) -> Option<f64> {
    rows.iter()
        .filter_map(|r| r.metric(metric).map(|v| (v, r.threshold)))
        .min_by(|(va, ta), (vb, tb)| {
            vb.total_cmp(va)
                .then((ta - 0.5).abs().total_cmp(&(tb - 0.5).abs()))
                .then(ta.total_cmp(tb))
        })
        .map(|(_, t)| t)
}

pub fn threshold_sweep(p_positive: &[f64], labels: &[u8], grid: &[f64]) -> Result<SweepReport> {
    validate_grid(grid)?;
    let rows = grid
        .iter()
        .map(|t| evaluate(p_positive, labels, *t, None))
        .collect::<Result<Vec<_>>>()?;
    let best_by = METRIC_NAMES
        .iter()
        .filter_map(|m| best_threshold(&rows, m).map(|t| (m.to_string(), t)))
        .collect();
    Ok(SweepReport {
        grid: grid.to_vec(),
        rows,
        best_by,
    })
}

/// Row-wise mean of sweeps over the same grid, with the best thresholds
/// chosen on the mean rows.
pub fn average_sweeps(sweeps: &[SweepReport]) -> Result<SweepReport> {
    let first = sweeps
        .first()
        .ok_or_else(|| Error::validation("no sweeps to average"))?;
    if sweeps.len() == 1 {
        return Ok(first.clone());
    }
    if sweeps.iter().any(|s| s.grid != first.grid) {
        return Err(Error::validation("cannot average sweeps over different grids"));
    }
    let rows = (0..first.rows.len())
        .map(|i| {
            let col: Vec<MetricReport> = sweeps.iter().map(|s| s.rows[i].clone()).collect();
            average_runs(&col)
        })
        .collect::<Result<Vec<_>>>()?;
    let best_by = METRIC_NAMES
        .iter()
        .filter_map(|m| best_threshold(&rows, m).map(|t| (m.to_string(), t)))
        .collect();
    Ok(SweepReport {
        grid: first.grid.clone(),
        rows,
        best_by,
    })
}

/// Reads `example_id<TAB>probability` lines and aligns them to
/// `example_ids`.
pub fn load_external_scores(path: &Path, example_ids: &[String]) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(path, &text, example_ids)
}

pub fn parse_scores(path: &Path, text: &str, example_ids: &[String]) -> Result<Vec<f64>> {
    let bad = |line: usize, detail: String| Error::Record {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(p), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(line_no, "expected `example_id<TAB>probability`".into()));
        };
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| bad(line_no, format!("invalid probability {p:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(bad(line_no, format!("probability {p} outside [0, 1]")));
        }
        if scores.insert(id.trim(), p).is_some() {
            return Err(bad(line_no, format!("duplicate example id {id}")));
        }
    }
    let wanted: BTreeSet<&str> = example_ids.iter().map(|s| s.as_str()).collect();
    let missing: Vec<&str> = wanted.iter().filter(|id| !scores.contains_key(*id)).copied().collect();
    let extra: Vec<&str> = scores.keys().filter(|id| !wanted.contains(*id)).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |v: &[&str]| {
            let mut s = v.iter().take(10).copied().collect::<Vec<_>>().join(", ");
            if v.len() > 10 {
                s.push_str(&format!(" and {} more", v.len() - 10));
            }
            s
        };
        let mut detail = format!("score file {} does not cover the dataset:", path.display());
        if !missing.is_empty() {
            detail.push_str(&format!(" missing {}", list(&missing)));
        }
        if !extra.is_empty() {
            detail.push_str(&format!(" extra {}", list(&extra)));
        }
        return Err(Error::validation(detail));
    }
    Ok(example_ids.iter().map(|id| scores[id.as_str()]).collect())
}

/// Per-seed reports and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: MetricReport,
    pub runs: Vec<MetricReport>,
}

pub fn average_runs(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::validation("no reports to average"))?;
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    if reports.iter().any(|r| r.threshold != first.threshold || r.n != first.n) {
        return Err(Error::validation("cannot average reports with different thresholds or sizes"));
    }
    let k = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    Ok(MetricReport {
        threshold: first.threshold,
        acc: mean(|r| r.acc),
        macro_f1: mean(|r| r.macro_f1),
        binary_f1: mean(|r| r.binary_f1),
        mcc: mean(|r| r.mcc),
        confusion: None,
        n: first.n,
        seed: None,
    })
}

pub fn summarize(runs: Vec<MetricReport>) -> Result<RunSummary> {
    Ok(RunSummary {
        mean: average_runs(&runs)?,
        runs,
    })
}

/// Accuracy of predicting every example negative.
pub fn all_negative_baseline(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|y| **y == 0).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: LossVariant,
    pub loss: LossConfig,
    pub summary: RunSummary,
}

/// Scores of one trained run, kept so every reported row can be recomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScores {
    pub variant: LossVariant,
    pub seed: u64,
    pub p_positive: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub scores: Vec<RunScores>,
}

/// Trains one model per (variant, seed) under identical training settings
/// and evaluates each on `eval_set` at `threshold`.
pub fn loss_ablation<T: Scalar>(
    train_set: &FeatureSet<T>,
    val_set: &FeatureSet<T>,
    eval_set: &FeatureSet<T>,
    train_cfg: &TrainConfig,
    base_loss: &LossConfig,
    variants: &[LossVariant],
    seeds: &[u64],
    threshold: f64,
) -> Result<Ablation> {
    if seeds.is_empty() {
        return Err(Error::validation("ablation needs at least one seed"));
    }
    let jobs: Vec<(LossVariant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |s| (*v, *s)))
        .collect();
    let runs: Vec<Result<(MetricReport, RunScores)>> = jobs
        .par_iter()
        .map(|(v, s)| {
            let cfg = base_loss.for_variant(*v);
            let out = train(train_set, val_set, train_cfg, &cfg, *s)?;
            let preds = out.model.predict(&eval_set.ids, &eval_set.features)?;
            let p: Vec<f64> = preds.iter().map(|p| p.p_positive()).collect();
            let report = evaluate(&p, &eval_set.labels, threshold, Some(*s))?;
            Ok((
                report,
                RunScores {
                    variant: *v,
                    seed: *s,
                    p_positive: p,
                },
            ))
        })
        .collect();
    let mut per_variant: BTreeMap<LossVariant, Vec<MetricReport>> = BTreeMap::new();
    let mut scores = Vec::new();
    for r in runs {
        let (rep, sc) = r?;
        per_variant.entry(sc.variant).or_default().push(rep);
        scores.push(sc);
    }
    let rows = variants
        .iter()
        .map(|v| {
            Ok(AblationRow {
                variant: *v,
                loss: base_loss.for_variant(*v),
                summary: summarize(per_variant.remove(v).unwrap_or_default())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ablation { rows, scores })
}
