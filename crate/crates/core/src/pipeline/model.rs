//! Model stages: training, prediction, evaluation, threshold sweeps and the
//! loss ablation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{load_dataset_manifest, load_examples};
use super::{Pipeline, StageReport};
use crate::classifier::{
    build_pair_feature, run_seeds, train, write_log, write_scores, ClassifierModel, FeatureSet,
    LossConfig, LossVariant, Prediction, TrainConfig,
};
use crate::dataset::{Example, Split};
use crate::error::{Error, Result};
use crate::eval::{
    all_negative_baseline, average_sweeps, evaluate, load_external_scores, loss_ablation, summarize,
    threshold_sweep, Report, ReportBody,
};
use crate::records::{read_json, write_json, Warning};
use crate::workspace::validate_slug;
use crate::Embedding;

/// Record of one `train` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedRun {
    pub run: String,
    pub dataset: String,
    pub dataset_digest: String,
    pub feature_dim: usize,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub best_epochs: Vec<usize>,
}

/// Where evaluation scores come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScoreSource {
    /// Scores written by `train` or `predict` for every seed of a run.
    Native(String),
    /// An external `example_id<TAB>probability` file over a dataset split.
    External { name: String, dataset: String, path: PathBuf },
}

const RUN_FILE: &str = "run.json";

impl Pipeline {
    fn run_dir(&self, run: &str) -> Result<PathBuf> {
        validate_slug(run)?;
        Ok(self.ws.models().join(run))
    }

    fn scores_dir(&self, run: &str) -> Result<PathBuf> {
        validate_slug(run)?;
        let d = self.ws.reports().join(run);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn scores_path(&self, run: &str, seed: u64, split: Split) -> Result<PathBuf> {
        Ok(self.scores_dir(run)?.join(format!("seed-{seed}.{split}.scores")))
    }

    pub fn load_run(&self, run: &str) -> Result<TrainedRun> {
        let p = self.run_dir(run)?.join(RUN_FILE);
        if !p.exists() {
            return Err(Error::missing(format!("trained run {run}"), "run `concord train`"));
        }
        read_json(&p)
    }

    pub fn checkpoint_path(&self, run: &str, seed: u64) -> Result<PathBuf> {
        Ok(self.run_dir(run)?.join(format!("seed-{seed}.json")))
    }

    /// Pair features for one split. Units without an embedding get a zero
    /// vector and a warning.
    pub fn features(
        &self,
        examples: &[Example],
        vectors: &(BTreeMap<String, Embedding>, BTreeMap<String, Embedding>),
        warnings: &mut Vec<Warning>,
    ) -> Result<FeatureSet<f64>> {
        let (svecs, fvecs) = vectors;
        let dim = svecs
            .values()
            .next()
            .map(|v| v.dim())
            .ok_or_else(|| Error::missing("sentence embeddings", "run `concord embed`"))?;
        let zero = vec![0.0f64; dim];
        let lookup = |map: &BTreeMap<String, Embedding>, id: &str, w: &mut Vec<Warning>| -> Vec<f64> {
            match map.get(id) {
                Some(v) => v.values.iter().map(|x| *x as f64).collect(),
                None => {
                    w.push(Warning::new("features", id, "no embedding; using a zero vector"));
                    zero.clone()
                }
            }
        };
        let mut set = FeatureSet::default();
        for e in examples {
            let u = lookup(svecs, &e.sentence_id, warnings);
            let v = lookup(fvecs, &e.function_id, warnings);
            set.features.push(build_pair_feature(&u, &v)?.values);
            set.ids.push(e.example_id.clone());
            set.labels.push(e.label);
        }
        Ok(set)
    }

    fn dataset_features(&self, dataset: &str, warnings: &mut Vec<Warning>) -> Result<[FeatureSet<f64>; 3]> {
        let vectors = self.load_vectors()?;
        let mut sets: [FeatureSet<f64>; 3] = Default::default();
        for (i, s) in Split::ALL.into_iter().enumerate() {
            sets[i] = self.features(&load_examples(&self.ws, dataset, s)?, &vectors, warnings)?;
        }
        Ok(sets)
    }

    pub fn train(&mut self, dataset: &str, run: &str) -> Result<StageReport> {
        let mut report = StageReport::new("train");
        let manifest = load_dataset_manifest(&self.ws, dataset)?;
        let [tr, va, te] = self.dataset_features(dataset, &mut report.warnings)?;
        let seeds = run_seeds(self.config.seed, self.config.training.runs);
        let train_cfg = self.config.training.clone();
        let loss_cfg = self.config.loss;
        let outcomes = seeds
            .par_iter()
            .map(|s| train(&tr, &va, &train_cfg, &loss_cfg, *s))
            .collect::<Result<Vec<_>>>()?;
        let dir = self.run_dir(run)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut lines = Vec::new();
        for (seed, out) in seeds.iter().zip(&outcomes) {
            let ckpt = self.checkpoint_path(run, *seed)?;
            out.model.save(&ckpt)?;
            write_log(&dir.join(format!("seed-{seed}.log")), &out.log)?;
            for (s, set) in Split::ALL.into_iter().zip([&tr, &va, &te]) {
                let preds = out.model.predict(&set.ids, &set.features)?;
                write_scores(&self.scores_path(run, *seed, s)?, &preds)?;
            }
            lines.push(format!(
                "seed {seed}: best epoch {} of {}, validation metric {:.4}",
                out.model.best_epoch,
                out.model.trained_epochs,
                out.model.best_val_metric.unwrap_or(f64::NAN)
            ));
            report.outputs.push(ckpt);
        }
        let record = TrainedRun {
            run: run.to_string(),
            dataset: dataset.to_string(),
            dataset_digest: manifest.config_digest,
            feature_dim: tr.features.first().map(|f| f.len()).unwrap_or(0),
            loss: loss_cfg,
            train: train_cfg,
            seeds: seeds.clone(),
            best_epochs: outcomes.iter().map(|o| o.model.best_epoch).collect(),
        };
        write_json(&dir.join(RUN_FILE), &record)?;
        report.summary = lines.join("\n");
        Ok(report)
    }

    /// Recomputes scores for one split from the stored checkpoints.
    pub fn predict(&mut self, run: &str, split: Split) -> Result<StageReport> {
        let mut report = StageReport::new("predict");
        let record = self.load_run(run)?;
        let vectors = self.load_vectors()?;
        let examples = load_examples(&self.ws, &record.dataset, split)?;
        let set = self.features(&examples, &vectors, &mut report.warnings)?;
        for seed in &record.seeds {
            let model = ClassifierModel::<f64>::load(&self.checkpoint_path(run, *seed)?)?;
            if model.input_dim != set.features.first().map(|f| f.len()).unwrap_or(model.input_dim) {
                return Err(Error::validation(format!(
                    "checkpoint expects {} features, dataset provides {}",
                    model.input_dim,
                    set.features[0].len()
                )));
            }
            let preds: Vec<Prediction> = model.predict(&set.ids, &set.features)?;
            let out = self.scores_path(run, *seed, split)?;
            write_scores(&out, &preds)?;
            report.outputs.push(out);
        }
        report.summary = format!("{} examples scored for {} seeds", set.len(), record.seeds.len());
        Ok(report)
    }

    /// Per-run positive probabilities, the labels and the dataset name.
    fn gather_scores(&self, source: &ScoreSource, split: Split) -> Result<(String, String, Vec<(Option<u64>, Vec<f64>)>, Vec<u8>)> {
        match source {
            ScoreSource::Native(run) => {
                let record = self.load_run(run)?;
                let examples = load_examples(&self.ws, &record.dataset, split)?;
                let ids: Vec<String> = examples.iter().map(|e| e.example_id.clone()).collect();
                let labels = examples.iter().map(|e| e.label).collect();
                let mut runs = Vec::new();
                for seed in &record.seeds {
                    let p = self.scores_path(run, *seed, split)?;
                    if !p.exists() {
                        return Err(Error::missing(
                            format!("{split} scores of run {run}"),
                            "run `concord predict`",
                        ));
                    }
                    runs.push((Some(*seed), load_external_scores(&p, &ids)?));
                }
                Ok((run.clone(), record.dataset, runs, labels))
            }
            ScoreSource::External { name, dataset, path } => {
                validate_slug(name)?;
                let examples = load_examples(&self.ws, dataset, split)?;
                let ids: Vec<String> = examples.iter().map(|e| e.example_id.clone()).collect();
                let labels = examples.iter().map(|e| e.label).collect();
                let p = load_external_scores(path, &ids)?;
                Ok((name.clone(), dataset.clone(), vec![(None, p)], labels))
            }
        }
    }

    pub fn eval(&mut self, source: &ScoreSource, split: Split, threshold: Option<f64>) -> Result<StageReport> {
        let mut report = StageReport::new("eval");
        let threshold = threshold.unwrap_or(self.config.eval.threshold);
        let (name, dataset, runs, labels) = self.gather_scores(source, split)?;
        let reports = runs
            .iter()
            .map(|(seed, p)| evaluate(p, &labels, threshold, *seed))
            .collect::<Result<Vec<_>>>()?;
        let out = Report {
            run: name.clone(),
            dataset,
            split: split.to_string(),
            baseline_acc: all_negative_baseline(&labels),
            body: ReportBody::Eval {
                model: name.clone(),
                summary: summarize(reports)?,
            },
        };
        self.write_report(&mut report, &out, &format!("{name}.eval"))?;
        Ok(report)
    }

    pub fn sweep(&mut self, source: &ScoreSource, split: Split) -> Result<StageReport> {
        let mut report = StageReport::new("sweep");
        if split == Split::Test && !self.config.eval.allow_test_sweep {
            return Err(Error::validation(
                "sweeping thresholds on the test split is disabled; use the validation split or pass --allow-test-sweep",
            ));
        }
        let (name, dataset, runs, labels) = self.gather_scores(source, split)?;
        let sweeps = runs
            .iter()
            .map(|(_, p)| threshold_sweep(p, &labels, &self.config.eval.grid))
            .collect::<Result<Vec<_>>>()?;
        let mean = average_sweeps(&sweeps)?;
        let out = Report {
            run: name.clone(),
            dataset,
            split: split.to_string(),
            baseline_acc: all_negative_baseline(&labels),
            body: ReportBody::Sweep {
                source: match source {
                    ScoreSource::Native(_) => "native".into(),
                    ScoreSource::External { path, .. } => path.display().to_string(),
                },
                sweep: mean,
                runs: if sweeps.len() > 1 { sweeps } else { Vec::new() },
            },
        };
        self.write_report(&mut report, &out, &format!("{name}.sweep"))?;
        Ok(report)
    }

    /// Trains every loss variant under identical settings and evaluates
    /// each on the configured evaluation split.
    pub fn ablate(&mut self, dataset: &str, run: &str) -> Result<StageReport> {
        let mut report = StageReport::new("ablate");
        validate_slug(run)?;
        load_dataset_manifest(&self.ws, dataset)?;
        let [tr, va, te] = self.dataset_features(dataset, &mut report.warnings)?;
        let split = self.config.eval.eval_split;
        let eval_set = match split {
            Split::Train => &tr,
            Split::Validation => &va,
            Split::Test => &te,
        };
        let seeds = run_seeds(self.config.seed, self.config.training.runs);
        let threshold = self.config.eval.threshold;
        let ablation = loss_ablation(
            &tr,
            &va,
            eval_set,
            &self.config.training,
            &self.config.loss,
            &LossVariant::ALL,
            &seeds,
            threshold,
        )?;
        let dir = self.ws.reports().join(format!("{run}.ablation"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for sc in &ablation.scores {
            let preds: Vec<Prediction> = eval_set
                .ids
                .iter()
                .zip(&sc.p_positive)
                .map(|(id, p)| Prediction {
                    example_id: id.clone(),
                    p: [1.0 - p, *p],
                })
                .collect();
            write_scores(&dir.join(format!("{}-s{}.{split}.scores", sc.variant, sc.seed)), &preds)?;
        }
        let out = Report {
            run: run.to_string(),
            dataset: dataset.to_string(),
            split: split.to_string(),
            baseline_acc: all_negative_baseline(&eval_set.labels),
            body: ReportBody::Ablation {
                threshold,
                rows: ablation.rows,
            },
        };
        self.write_report(&mut report, &out, &format!("{run}.ablation"))?;
        Ok(report)
    }

    fn write_report(&self, stage: &mut StageReport, report: &Report, stem: &str) -> Result<()> {
        let dir = self.ws.reports();
        report.write(&dir, stem)?;
        stage.outputs.push(dir.join(format!("{stem}.report")));
        stage.outputs.push(dir.join(format!("{stem}.txt")));
        stage.summary = report.render();
        Ok(())
    }

    /// Re-renders a stored report by stem, e.g. `run1.sweep`.
    pub fn report(&self, stem: &str) -> Result<Report> {
        let p = self.ws.reports().join(format!("{stem}.report"));
        if !p.exists() {
            return Err(Error::missing(format!("report {stem}"), "run `concord eval`, `sweep` or `ablate`"));
        }
        read_json(&p)
    }
}
