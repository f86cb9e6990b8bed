//! Mini-batch SGD with momentum and weight decay.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Dataset;
use crate::model::Model;
use crate::nn::{softmax, softmax_ce, Network, NnError};
use crate::tensor::{Tensor, TensorError};
use crate::wavelet::{extract_features, FeatureMode, FilterKind, WaveletError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite parameter after epoch {0}")]
    NonFiniteParams(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteParams(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub feature_mode: FeatureMode,
    pub filter: FilterKind,
    /// Validation accuracy is measured every `eval_every` epochs and after the last one.
    pub eval_every: usize,
    /// `(H, W)` every image is resized to before feature extraction.
    pub image_size: (usize, usize),
    pub train_ratio: f64,
    pub val_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 7,
            feature_mode: FeatureMode::StackedSubbands,
            filter: FilterKind::Haar,
            eval_every: 1,
            image_size: (64, 64),
            train_ratio: 0.7,
            val_ratio: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.eval_every == 0 {
            return bad("epochs and eval_every must be positive".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        let (tr, va) = (self.train_ratio, self.val_ratio);
        if !(tr > 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return bad(format!(
                "split ratios train={tr} val={va} are not a valid partition"
            ));
        }
        if self.image_size.0 < 2 || self.image_size.1 < 2 {
            return bad(format!("image size {:?} is too small", self.image_size));
        }
        Ok(())
    }

    /// `(C, H, W)` of the tensors this config feeds the model.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        self.feature_mode
            .feature_shape(self.image_size.0, self.image_size.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Seconds since training started.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    /// `epoch,train_loss,train_acc,val_acc,wall_time_s`; `val_acc` is empty
    /// on epochs without a validation pass.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc,wall_time_s\n");
        for r in &self.records {
            let val = r.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.epoch, r.train_loss, r.train_accuracy, val, r.wall_time_s
            );
        }
        out
    }
}

/// Feature tensors `(C, H, W)` and their labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the chosen samples into an `(N, C, H, W)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>), TensorError> {
        let shape = self.features[indices[0]].shape();
        let mut data = Vec::with_capacity(indices.len() * self.features[indices[0]].len());
        for &i in indices {
            let f = &self.features[i];
            if f.shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "batch",
                    left: shape.to_vec(),
                    right: f.shape().to_vec(),
                });
            }
            data.extend_from_slice(f.data());
        }
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend_from_slice(shape);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::from_values(&batch_shape, data)?, labels))
    }
}

/// Extracts features for the given sample indices of a dataset.
pub fn feature_set(
    dataset: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<LabeledSet, TrainError> {
    let filters = cfg.filter.filters();
    let mut set = LabeledSet::default();
    for &i in indices {
        let sample = &dataset.samples[i];
        set.features
            .push(extract_features(&sample.image, &filters, cfg.feature_mode)?);
        set.labels.push(sample.label);
    }
    Ok(set)
}

/// SGD with classical momentum: `v = mu * v + (g + wd * w)`, `w -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<(), TensorError> {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "sgd step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            for ((w, &dw), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + (dw + self.weight_decay * *w);
                *w -= self.learning_rate * *vel;
            }
        }
        Ok(())
    }
}

/// Class probabilities and argmax predictions (ties go to the lower index).
pub fn predict<N: Network>(net: &N, x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let probs = softmax(&net.infer(x)?)?;
    let k = probs.shape()[1];
    let classes = probs.data().chunks(k).map(argmax).collect();
    Ok((probs, classes))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode probabilities for a whole set, in chunks of `batch_size`.
pub fn predict_set<N: Network>(
    net: &N,
    set: &LabeledSet,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, NnError> {
    let mut rows = Vec::with_capacity(set.len());
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk)?;
        let (probs, _) = predict(net, &x)?;
        let k = probs.shape()[1];
        rows.extend(probs.data().chunks(k).map(<[f64]>::to_vec));
    }
    Ok(rows)
}

pub fn accuracy<N: Network>(net: &N, set: &LabeledSet, batch_size: usize) -> Result<f64, NnError> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let probs = predict_set(net, set, batch_size)?;
    let correct = probs
        .iter()
        .zip(&set.labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Shuffled batches; a trailing singleton joins the previous batch so batch
/// norm always sees at least two samples.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

#[derive(Debug, Clone)]
pub struct FitOutcome<N> {
    /// Snapshot with the best validation accuracy (latest on ties).
    pub model: N,
    pub log: TrainLog,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
}

/// Trains any [`Network`] on prepared feature sets.
pub fn fit<N: Network + Clone>(
    mut net: N,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<FitOutcome<N>, TrainError> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, N)> = None;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, indices) in epoch_batches(train.len(), cfg.batch_size, &mut rng)
            .iter()
            .enumerate()
        {
            let (x, labels) = train.batch(indices)?;
            let (logits, tape) = net.forward_train(&x)?;
            let (loss, grad) = softmax_ce(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            let k = logits.shape()[1];
            correct += logits
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            loss_sum += loss * labels.len() as f64;
            let grads = net.backward(tape, &grad)?;
            sgd.step(net.params_mut(), &grads)?;
        }
        if !net.params().iter().all(|p| p.is_finite()) {
            return Err(TrainError::NonFiniteParams(epoch));
        }

        let val_accuracy = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let acc = accuracy(&net, val, cfg.batch_size)?;
            if best.as_ref().is_none_or(|(b, _, _)| acc >= *b) {
                best = Some((acc, epoch, net.clone()));
            }
            Some(acc)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} val acc {:?}",
            record.train_loss,
            record.train_accuracy,
            record.val_accuracy
        );
        log.records.push(record);
    }

    let (best_val_accuracy, best_epoch, model) = best.expect("last epoch always validates");
    Ok(FitOutcome {
        model,
        log,
        best_val_accuracy,
        best_epoch,
    })
}

/// Extracts features for the dataset's splits and fits the model.
pub fn train(
    model: Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<FitOutcome<Model>, TrainError> {
    cfg.validate()?;
    let expected = cfg.feature_shape();
    if model.config().input_shape != expected {
        return Err(TrainError::Config(format!(
            "model input {:?} does not match features {:?} from {} mode at {:?}",
            model.config().input_shape,
            expected,
            cfg.feature_mode,
            cfg.image_size
        )));
    }
    if dataset.splits.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dataset.splits.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train_set = feature_set(dataset, &dataset.splits.train, cfg)?;
    let val_set = feature_set(dataset, &dataset.splits.val, cfg)?;
    fit(model, &train_set, &val_set, cfg)
}
