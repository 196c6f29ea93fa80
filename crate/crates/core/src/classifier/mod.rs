//! Native consistency classifier over pair features of sentence and
//! function embeddings.
//!
//! The head is linear (optionally behind one rectified hidden layer) with a
//! two-class softmax, trained with the focal loss family and AdamW.

mod loss;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, Metrics};
use crate::records::{parse_lines, read_json, write_atomic, write_json};
use crate::scalar::Scalar;

pub use loss::{logit_gradient_scale, loss, softmax, LossConfig, LossVariant, PROB_EPS};

/// `[u; v; u*v; |u-v|]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature<T> {
    pub values: Vec<T>,
}

pub fn build_pair_feature<T: Scalar>(u: &[T], v: &[T]) -> Result<PairFeature<T>> {
    if u.len() != v.len() {
        return Err(Error::validation(format!(
            "pair feature dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let d = u.len();
    let mut values = Vec::with_capacity(4 * d);
    values.extend_from_slice(u);
    values.extend_from_slice(v);
    values.extend(u.iter().zip(v).map(|(a, b)| *a * *b));
    values.extend(u.iter().zip(v).map(|(a, b)| (*a - *b).abs()));
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("pair feature has non-finite entries"));
    }
    Ok(PairFeature { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    MacroF1,
    Mcc,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate used for full transformer fine-tuning; recorded for
    /// reference, not used by the native head.
    pub reference_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub stop_metric: StopMetric,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Output-layer weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub hidden_layer: bool,
    pub hidden_width: usize,
    /// Threshold used for validation metrics during training.
    pub threshold: f64,
    /// Independent runs per configuration; run `r` uses seed `seed + r`.
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            reference_learning_rate: 2e-5,
            batch_size: 16,
            max_epochs: 10,
            early_stopping_patience: 3,
            stop_metric: StopMetric::MacroF1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_scale: 0.01,
            hidden_layer: false,
            hidden_width: 256,
            threshold: 0.5,
            runs: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("reference_learning_rate", self.reference_learning_rate),
            ("adam_eps", self.adam_eps),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("training.{name} must be > 0")));
            }
        }
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.runs == 0
            || (self.hidden_layer && self.hidden_width == 0)
        {
            return Err(Error::validation(
                "training batch_size, max_epochs, runs and hidden_width must be > 0",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("adam betas must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight_decay must be >= 0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::validation("training threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Trainable parameters. `w1`/`b1` are empty without a hidden layer. All
/// matrices are row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn zeros_like(other: &Params<T>) -> Params<T> {
        Params {
            w1: vec![T::zero(); other.w1.len()],
            b1: vec![T::zero(); other.b1.len()],
            w: vec![T::zero(); other.w.len()],
            b: vec![T::zero(); other.b.len()],
        }
    }

    /// Parameter blocks paired with whether weight decay applies.
    pub fn blocks(&self) -> [(&Vec<T>, bool); 4] {
        [(&self.w1, true), (&self.b1, false), (&self.w, true), (&self.b, false)]
    }

    pub fn blocks_mut(&mut self) -> [(&mut Vec<T>, bool); 4] {
        [
            (&mut self.w1, true),
            (&mut self.b1, false),
            (&mut self.w, true),
            (&mut self.b, false),
        ]
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(b, _)| b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierModel<T> {
    pub input_dim: usize,
    /// Zero without a hidden layer.
    pub hidden_width: usize,
    pub params: Params<T>,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub trained_epochs: usize,
    pub best_epoch: usize,
    /// Early-stopping metric of the best epoch; `None` before training.
    pub best_val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub p: [f64; 2],
}

impl Prediction {
    pub fn p_positive(&self) -> f64 {
        self.p[1]
    }
}

fn matvec<T: Scalar>(m: &[T], x: &[T], rows: usize, out: &mut Vec<T>) {
    let cols = x.len();
    out.clear();
    out.extend((0..rows).map(|r| {
        let row = &m[r * cols..(r + 1) * cols];
        row.iter().zip(x).fold(T::zero(), |acc, (a, b)| acc + *a * *b)
    }));
}

impl<T: Scalar> ClassifierModel<T> {
    /// Seeded initialization: hidden weights uniform in `±1/sqrt(fan_in)`,
    /// output weights uniform in `±init_scale`, biases zero.
    pub fn init(input_dim: usize, loss: LossConfig, train: TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden_width = if train.hidden_layer { train.hidden_width } else { 0 };
        let mut uniform = |n: usize, scale: f64| -> Vec<T> {
            (0..n).map(|_| T::of(rng.gen_range(-scale..=scale))).collect()
        };
        let (w1, b1, head_in) = if hidden_width > 0 {
            let s = 1.0 / (input_dim.max(1) as f64).sqrt();
            (uniform(hidden_width * input_dim, s), vec![T::zero(); hidden_width], hidden_width)
        } else {
            (Vec::new(), Vec::new(), input_dim)
        };
        let w = uniform(2 * head_in, train.init_scale);
        ClassifierModel {
            input_dim,
            hidden_width,
            params: Params {
                w1,
                b1,
                w,
                b: vec![T::zero(); 2],
            },
            loss,
            train,
            seed,
            trained_epochs: 0,
            best_epoch: 0,
            best_val_metric: None,
        }
    }

    /// Returns hidden pre-activations (empty without a hidden layer) and
    /// logits.
    fn forward_parts(&self, x: &[T]) -> (Vec<T>, [T; 2]) {
        let mut pre = Vec::new();
        let mut z = Vec::with_capacity(2);
        if self.hidden_width > 0 {
            matvec(&self.params.w1, x, self.hidden_width, &mut pre);
            for (p, b) in pre.iter_mut().zip(&self.params.b1) {
                *p += *b;
            }
            let a: Vec<T> = pre.iter().map(|v| v.max(T::zero())).collect();
            matvec(&self.params.w, &a, 2, &mut z);
        } else {
            matvec(&self.params.w, x, 2, &mut z);
        }
        (pre, [z[0] + self.params.b[0], z[1] + self.params.b[1]])
    }

    pub fn logits(&self, x: &[T]) -> Result<[T; 2]> {
        if x.len() != self.input_dim {
            return Err(Error::validation(format!(
                "feature dimension {} does not match model input {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature"));
        }
        Ok(self.forward_parts(x).1)
    }

    pub fn forward(&self, x: &[T]) -> Result<[T; 2]> {
        self.logits(x).map(softmax)
    }

    /// Mean loss over `batch` and its gradient with respect to every
    /// parameter.
    pub fn loss_and_gradient(&self, batch: &[(&[T], usize)]) -> Result<(T, Params<T>)> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let mut grad = Params::zeros_like(&self.params);
        let mut total = T::zero();
        let n = T::of(batch.len() as f64);
        let head_in = if self.hidden_width > 0 { self.hidden_width } else { self.input_dim };
        for (x, y) in batch {
            let y = *y;
            if x.len() != self.input_dim || y > 1 {
                return Err(Error::validation("batch entry has wrong dimension or label"));
            }
            let (pre, z) = self.forward_parts(x);
            let p = softmax(z);
            total += loss(p[y], y, &self.loss);
            let g = logit_gradient_scale(p[y], y, &self.loss) / n;
            let dz = [
                g * (if y == 0 { T::one() } else { T::zero() } - p[0]),
                g * (if y == 1 { T::one() } else { T::zero() } - p[1]),
            ];
            let act: Vec<T>;
            let input: &[T] = if self.hidden_width > 0 {
                act = pre.iter().map(|v| v.max(T::zero())).collect();
                &act
            } else {
                x
            };
            for (r, d) in dz.iter().enumerate() {
                grad.b[r] += *d;
                let row = &mut grad.w[r * head_in..(r + 1) * head_in];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += *d * *a;
                }
            }
            if self.hidden_width > 0 {
                let d_in = x.len();
                for h in 0..self.hidden_width {
                    if pre[h] <= T::zero() {
                        continue;
                    }
                    let da = dz[0] * self.params.w[h] + dz[1] * self.params.w[head_in + h];
                    grad.b1[h] += da;
                    let row = &mut grad.w1[h * d_in..(h + 1) * d_in];
                    for (gw, a) in row.iter_mut().zip(x.iter()) {
                        *gw += da * *a;
                    }
                }
            }
        }
        Ok((total / n, grad))
    }

    pub fn predict(&self, ids: &[String], features: &[Vec<T>]) -> Result<Vec<Prediction>> {
        if ids.len() != features.len() {
            return Err(Error::validation("prediction ids and features differ in length"));
        }
        ids.par_iter()
            .zip(features.par_iter())
            .map(|(id, x)| {
                let p = self.forward(x)?;
                Ok(Prediction {
                    example_id: id.clone(),
                    p: [p[0].as_f64(), p[1].as_f64()],
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        let head_in = if m.hidden_width > 0 { m.hidden_width } else { m.input_dim };
        let shapes_ok = m.params.w.len() == 2 * head_in
            && m.params.b.len() == 2
            && m.params.w1.len() == m.hidden_width * m.input_dim
            && m.params.b1.len() == m.hidden_width;
        if !shapes_ok || !m.params.is_finite() {
            return Err(Error::validation(format!(
                "checkpoint {} has inconsistent or non-finite parameters",
                path.display()
            )));
        }
        Ok(m)
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    m: Params<T>,
    v: Params<T>,
    step: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Params<T>) -> Self {
        AdamW {
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params<T>, grad: &Params<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let lr = T::of(cfg.learning_rate);
        let wd = T::of(cfg.weight_decay);
        let eps = T::of(cfg.adam_eps);
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let ms = self.m.blocks_mut();
        let vs = self.v.blocks_mut();
        let ps = params.blocks_mut();
        let gs = grad.blocks();
        for (((m, v), (p, decay)), (g, _)) in ms.into_iter().zip(vs).zip(ps).zip(gs) {
            for i in 0..p.len() {
                m.0[i] = b1 * m.0[i] + (T::one() - b1) * g[i];
                v.0[i] = b2 * v.0[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m.0[i] / c1;
                let vhat = v.0[i] / c2;
                if decay {
                    let cur = p[i];
                    p[i] = cur - lr * wd * cur;
                }
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Features and labels for one split.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet<T> {
    pub ids: Vec<String>,
    pub features: Vec<Vec<T>>,
    pub labels: Vec<u8>,
}

impl<T> FeatureSet<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
    pub val_mcc: f64,
    /// Value of the early-stopping metric (higher is better).
    pub val_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ClassifierModel<T>,
    pub log: Vec<EpochLog>,
}

pub fn mean_loss<T: Scalar>(model: &ClassifierModel<T>, set: &FeatureSet<T>) -> Result<f64> {
    let batch: Vec<(&[T], usize)> = set
        .features
        .iter()
        .zip(&set.labels)
        .map(|(x, y)| (x.as_slice(), *y as usize))
        .collect();
    let total: f64 = batch
        .par_iter()
        .map(|(x, y)| model.forward(x).map(|p| loss(p[*y], *y, &model.loss).as_f64()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / batch.len() as f64)
}

pub fn evaluate_at<T: Scalar>(model: &ClassifierModel<T>, set: &FeatureSet<T>, threshold: f64) -> Result<Metrics> {
    let preds = model.predict(&set.ids, &set.features)?;
    let yhat: Vec<u8> = preds.iter().map(|p| u8::from(p.p_positive() >= threshold)).collect();
    metrics(&confusion(&yhat, &set.labels)?)
}

/// Seeds of the independent runs derived from a base seed.
pub fn run_seeds(base: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|r| base.wrapping_add(r)).collect()
}

/// Mini-batch training with early stopping on the validation metric; the
/// returned model is the best checkpoint.
pub fn train<T: Scalar>(
    train_set: &FeatureSet<T>,
    val_set: &FeatureSet<T>,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::validation("training and validation splits must be non-empty"));
    }
    let dim = train_set.features[0].len();
    let mut model = ClassifierModel::<T>::init(dim, *loss_cfg, train_cfg.clone(), seed);
    let mut opt = AdamW::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba7c);
    let mut best: Option<ClassifierModel<T>> = None;
    let mut best_metric = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<(&[T], usize)> = chunk
                .iter()
                .map(|&i| (train_set.features[i].as_slice(), train_set.labels[i] as usize))
                .collect();
            let (l, g) = model.loss_and_gradient(&batch)?;
            opt.step(&mut model.params, &g, train_cfg);
            loss_sum += l.as_f64();
            batches += 1;
        }
        if !model.params.is_finite() {
            return Err(Error::validation(format!("training diverged at epoch {epoch}")));
        }
        model.trained_epochs = epoch;
        let m = evaluate_at(&model, val_set, train_cfg.threshold)?;
        let val_loss = mean_loss(&model, val_set)?;
        let val_metric = match train_cfg.stop_metric {
            StopMetric::MacroF1 => m.macro_f1,
            StopMetric::Mcc => m.mcc,
            StopMetric::Loss => -val_loss,
        };
        let improved = val_metric > best_metric;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_acc: m.acc,
            val_macro_f1: m.macro_f1,
            val_mcc: m.mcc,
            val_metric,
            improved,
        });
        if improved {
            best_metric = val_metric;
            since_best = 0;
            model.best_epoch = epoch;
            model.best_val_metric = Some(val_metric);
            best = Some(model.clone());
        } else {
            since_best += 1;
            if since_best > train_cfg.early_stopping_patience {
                break;
            }
        }
    }
    let mut best = best.expect("at least one epoch ran");
    best.trained_epochs = model.trained_epochs;
    Ok(TrainOutcome { model: best, log })
}

/// Renders `example_id<TAB>p_positive` lines.
pub fn scores_to_string(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&p.example_id);
        out.push('\t');
        out.push_str(&p.p_positive().to_string());
        out.push('\n');
    }
    out
}

pub fn write_scores(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_atomic(path, scores_to_string(preds).as_bytes())
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    crate::records::write_lines(path, log)
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lines(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pair_feature_blocks() {
        let u = [1.0f64, -2.0, 3.0];
        let f = build_pair_feature(&u, &u).unwrap();
        assert_eq!(&f.values[9..], &[0.0, 0.0, 0.0]);
        assert_eq!(&f.values[6..9], &[1.0, 4.0, 9.0]);
        let v = [0.5f64, 0.0, -1.0];
        assert_ne!(build_pair_feature(&u, &v).unwrap(), build_pair_feature(&v, &u).unwrap());
        assert!(build_pair_feature(&u, &v[..2]).is_err());
        assert!(build_pair_feature(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn pair_feature_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let u = rand_vec(&mut rng, 16);
            let v = rand_vec(&mut rng, 16);
            let f = build_pair_feature(&u, &v).unwrap().values;
            for i in 0..16 {
                assert_eq!(f[i], u[i]);
                assert_eq!(f[16 + i], v[i]);
                assert_eq!(f[32 + i], u[i] * v[i]);
                assert_eq!(f[48 + i], (u[i] - v[i]).abs());
            }
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = ClassifierModel::<f64>::init(4, LossConfig::default(), TrainConfig::default(), 0);
        m.params.w.iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), [0.5, 0.5]);
        m.params.b = vec![0.0, 3f64.ln()];
        let p = m.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((p[1] - 0.75).abs() < 1e-15);
        assert!(m.forward(&[1.0]).is_err());
        assert!(m.forward(&[f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
    }

    /// Central differences over every parameter of `model` for `batch`.
    fn numeric_gradient(model: &ClassifierModel<f64>, batch: &[(&[f64], usize)], h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let base = model.clone();
        for block in 0..4 {
            let len = base.params.blocks()[block].0.len();
            for i in 0..len {
                let mut plus = base.clone();
                plus.params.blocks_mut()[block].0[i] += h;
                let mut minus = base.clone();
                minus.params.blocks_mut()[block].0[i] -= h;
                let lp = plus.loss_and_gradient(batch).unwrap().0;
                let lm = minus.loss_and_gradient(batch).unwrap().0;
                out.push((lp - lm) / (2.0 * h));
            }
        }
        out
    }

    fn flatten(p: &Params<f64>) -> Vec<f64> {
        p.blocks().iter().flat_map(|(b, _)| b.iter().copied()).collect()
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..60 {
            let dim = rng.gen_range(2..8);
            let gamma = [0.0, 1.0, 2.0][case % 3];
            let alpha = if case % 2 == 0 { [1.0, 1.0] } else { [1.0, 5.0] };
            let mut tc = TrainConfig::default();
            tc.init_scale = 1.0;
            let mut m = ClassifierModel::<f64>::init(dim, LossConfig { gamma, alpha }, tc, case as u64);
            m.params.b = rand_vec(&mut rng, 2);
            let xs: Vec<Vec<f64>> = (0..rng.gen_range(1..6)).map(|_| rand_vec(&mut rng, dim)).collect();
            let batch: Vec<(&[f64], usize)> = xs.iter().map(|x| (x.as_slice(), rng.gen_range(0..2))).collect();
            let analytic = flatten(&m.loss_and_gradient(&batch).unwrap().1);
            let numeric = numeric_gradient(&m, &batch, 1e-5);
            assert!(relative_error(&analytic, &numeric) <= 1e-4, "case {case}");
        }
    }

    #[test]
    fn hidden_layer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..12 {
            let tc = TrainConfig {
                hidden_layer: true,
                hidden_width: 5,
                init_scale: 1.0,
                ..Default::default()
            };
            let gamma = [0.0, 1.0, 2.0][case % 3];
            let mut m = ClassifierModel::<f64>::init(4, LossConfig { gamma, alpha: [1.0, 5.0] }, tc, case as u64);
            m.params.b1 = rand_vec(&mut rng, 5);
            let xs: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 4)).collect();
            let batch: Vec<(&[f64], usize)> = xs.iter().map(|x| (x.as_slice(), rng.gen_range(0..2))).collect();
            let analytic = flatten(&m.loss_and_gradient(&batch).unwrap().1);
            let numeric = numeric_gradient(&m, &batch, 1e-5);
            assert!(relative_error(&analytic, &numeric) <= 1e-4, "case {case}");
        }
    }

    #[test]
    fn ce_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tc = TrainConfig::default();
        tc.init_scale = 1.0;
        let m = ClassifierModel::<f64>::init(3, LossConfig { gamma: 0.0, alpha: [1.0, 1.0] }, tc, 1);
        let x = rand_vec(&mut rng, 3);
        let (_, g) = m.loss_and_gradient(&[(&x, 1)]).unwrap();
        let p = m.forward(&x).unwrap();
        let residual = [p[0], p[1] - 1.0];
        for r in 0..2 {
            assert!((g.b[r] - residual[r]).abs() < 1e-15);
            for c in 0..3 {
                assert!((g.w[r * 3 + c] - residual[r] * x[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn confident_batch_has_vanishing_gradient() {
        let mut m = ClassifierModel::<f64>::init(2, LossConfig::default(), TrainConfig::default(), 0);
        m.params.w = vec![0.0; 4];
        m.params.b = vec![-40.0, 40.0];
        let x = [0.3, -0.2];
        let (l, g) = m.loss_and_gradient(&[(&x, 1), (&x, 1)]).unwrap();
        assert!(l < 1e-30);
        assert!(flatten(&g).iter().all(|v| v.abs() < 1e-30));
    }

    fn separable(n: usize, dim: usize, seed: u64) -> FeatureSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = FeatureSet::default();
        for i in 0..n {
            let y = u8::from(i % 6 == 0);
            let mut x = rand_vec(&mut rng, dim);
            x[0] = if y == 1 { 1.0 } else { -1.0 } + 0.1 * x[0];
            set.ids.push(format!("e{i}"));
            set.features.push(x);
            set.labels.push(y);
        }
        set
    }

    #[test]
    fn trains_on_separable_data() {
        let tr = separable(600, 8, 1);
        let va = separable(120, 8, 2);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            ..Default::default()
        };
        let out = train(&tr, &va, &cfg, &LossConfig::default(), 7).unwrap();
        assert!(out.log.last().unwrap().train_loss < out.log[0].train_loss);
        let m = evaluate_at(&out.model, &va, 0.5).unwrap();
        assert!(m.macro_f1 >= 0.95, "{m:?}");
        let best = out.log.iter().map(|e| e.val_metric).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.model.best_val_metric, Some(best));

        let again = train(&tr, &va, &cfg, &LossConfig::default(), 7).unwrap();
        assert_eq!(again.model, out.model);
        assert_eq!(again.log, out.log);

        let preds = out.model.predict(&tr.ids, &tr.features).unwrap();
        let mean = |lab: u8| {
            let v: Vec<f64> = preds.iter().zip(&tr.labels).filter(|(_, y)| **y == lab).map(|(p, _)| p.p_positive()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(1) > mean(0));
        assert!(out.model.predict(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn patience_zero_stops_one_epoch_past_best() {
        // A mostly uninformative problem so validation does not improve
        // every epoch.
        let mut tr = separable(200, 4, 3);
        for x in tr.features.iter_mut() {
            x[0] = 0.0;
        }
        let va = separable(60, 4, 4);
        let cfg = TrainConfig {
            early_stopping_patience: 0,
            max_epochs: 50,
            ..Default::default()
        };
        let out = train(&tr, &va, &cfg, &LossConfig::default(), 3).unwrap();
        assert_eq!(out.log.len(), out.model.best_epoch + 1);
        assert!(!out.log.last().unwrap().improved);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainConfig {
            hidden_layer: true,
            hidden_width: 3,
            ..Default::default()
        };
        let m = ClassifierModel::<f64>::init(5, LossConfig::default(), tc, 11);
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(ClassifierModel::<f64>::load(&p).unwrap(), m);
        let mut text = std::fs::read_to_string(&p).unwrap();
        text = text.replacen("\"hidden_width\": 3", "\"hidden_width\": 4", 1);
        std::fs::write(&p, text).unwrap();
        assert!(ClassifierModel::<f64>::load(&p).is_err());
    }

    #[test]
    fn empty_splits_rejected() {
        let e = FeatureSet::<f64>::default();
        assert!(train(&e, &e, &TrainConfig::default(), &LossConfig::default(), 0).is_err());
    }

    #[test]
    fn single_precision_model_runs() {
        let m = ClassifierModel::<f32>::init(3, LossConfig::default(), TrainConfig::default(), 0);
        let p = m.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), x in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let mut tc = TrainConfig::default();
            tc.init_scale = 3.0;
            let m = ClassifierModel::<f64>::init(6, LossConfig::default(), tc, seed);
            let p = m.forward(&x).unwrap();
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-9);
            prop_assert!(p[0] > 0.0 && p[1] > 0.0);
        }
    }
}
