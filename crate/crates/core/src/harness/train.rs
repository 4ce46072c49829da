//! Mini-batch training and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::metrics::ConfusionMatrix;
use crate::model::{predict, ModelConfig, NetInputs, Network};
use crate::ops::{BnConfig, BnMode};
use crate::params::{AdamConfig, ParamStore};
use crate::real::Real;
use crate::sardata::{load_manifest, DatasetManifest, GuidedTriple};
use crate::tape::Tape;
use crate::{par, seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Preprocessed, labelled samples with their class-name table.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<GuidedTriple>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<GuidedTriple>, class_names: Vec<String>) -> Result<Self> {
        let k = class_names.len();
        for s in &samples {
            match s.label {
                Some(l) if l < k => {}
                Some(l) => return Err(Error::LabelOutOfRange { label: l, classes: k }),
                None => {
                    return Err(Error::invalid("dataset", format!("sample `{}` is unlabelled", s.id)))
                }
            }
        }
        Ok(Dataset { samples, class_names })
    }

    /// Loads every chip of `manifest` at the model's input size. Only the
    /// channels of enabled branches are derived.
    pub fn from_manifest(manifest: &DatasetManifest, cfg: &ModelConfig) -> Result<Self> {
        let samples = load_manifest(manifest, cfg.input_size, cfg.branch_mask())?;
        Self::new(samples, manifest.class_names.clone())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].label.expect("validated in Dataset::new")
    }

    pub fn per_class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.class_names.len()];
        for i in 0..self.len() {
            counts[self.label(i)] += 1;
        }
        counts
    }

    fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("dataset", "no samples"));
        }
        if self.class_names.len() != cfg.classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, model has {}",
                self.class_names.len(),
                cfg.classes
            )));
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the train-mode predictions made while stepping.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub log: Vec<LogEntry>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainOutcome {
    /// The loss log as JSON lines.
    pub fn log_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        Ok(out)
    }
}

fn batch_inputs<T: Real>(
    data: &Dataset,
    idx: &[usize],
    cfg: &ModelConfig,
) -> Result<(NetInputs<T>, Vec<usize>)> {
    let samples: Vec<&GuidedTriple> = idx.iter().map(|&i| &data.samples[i]).collect();
    let labels = idx.iter().map(|&i| data.label(i)).collect();
    Ok((NetInputs::from_triples(&samples, cfg)?, labels))
}

/// Trains `store` in place with Adam and cross-entropy.
///
/// Each epoch visits the data in a fresh permutation drawn from
/// `tcfg.seed`; the final partial batch is kept.
pub fn train<T: Real>(
    net: &Network,
    store: &mut ParamStore<T>,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    let cfg = net.config();
    data.check_against(cfg)?;
    if tcfg.batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {}",
            tcfg.batch_size,
            data.len()
        )));
    }
    let adam = AdamConfig::with_lr(tcfg.lr);
    let momentum = BnConfig::default().momentum;
    let mut outcome = TrainOutcome::default();
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::rng(tcfg.seed, &format!("shuffle/epoch{epoch}")));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut batches = 0;
        for idx in order.chunks(tcfg.batch_size) {
            let (inputs, labels) = batch_inputs::<T>(data, idx, cfg)?;
            let mut tape = Tape::new();
            let out = net.forward(&mut tape, store, &inputs, BnMode::Train)?;
            let loss = tape.cross_entropy(out.logits, &labels)?;
            let loss_value = tape.value(loss).data()[0].as_f64();
            let preds = predict(tape.value(out.logits))?;
            correct += preds.iter().zip(&labels).filter(|(p, &l)| p.label == l).count();
            let grads = tape.backward(loss)?;
            store.zero_grad();
            store.accumulate_grads(&tape, &grads)?;
            store.adam_step(&adam)?;
            for u in &out.bn_updates {
                store.update_bn_running(&u.prefix, &u.mean, &u.var, momentum)?;
            }
            outcome.log.push(LogEntry {
                step: store.step(),
                loss: loss_value,
            });
            loss_sum += loss_value;
            batches += 1;
        }
        outcome.epochs.push(EpochSummary {
            epoch: epoch + 1,
            mean_loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    store.zero_grad();
    Ok(outcome)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    /// Predicted label per sample, in dataset order.
    pub predictions: Vec<usize>,
    /// Correct predictions counted while streaming, independent of the matrix.
    pub correct: u64,
    pub accuracy: f64,
}

/// Scores `(truth, predicted)` pairs.
pub fn score(
    class_names: Vec<String>,
    pairs: impl IntoIterator<Item = (usize, usize)>,
) -> Result<EvalReport> {
    let mut matrix = ConfusionMatrix::new(class_names)?;
    let mut predictions = Vec::new();
    let mut correct = 0u64;
    for (truth, pred) in pairs {
        matrix.record(truth, pred)?;
        correct += u64::from(truth == pred);
        predictions.push(pred);
    }
    let accuracy = matrix
        .accuracy()
        .ok_or_else(|| Error::invalid("evaluate", "no samples"))?;
    Ok(EvalReport {
        matrix,
        predictions,
        correct,
        accuracy,
    })
}

/// Evaluates with BN in eval mode. Batches run in parallel; the result does
/// not depend on batch size or thread count.
pub fn evaluate<T: Real>(
    net: &Network,
    store: &ParamStore<T>,
    data: &Dataset,
    batch_size: usize,
) -> Result<EvalReport> {
    let cfg = net.config();
    data.check_against(cfg)?;
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let n = data.len();
    let batches = n.div_ceil(batch_size);
    let preds = par::map_range(batches, |b| -> Result<Vec<usize>> {
        let idx: Vec<usize> = (b * batch_size..((b + 1) * batch_size).min(n)).collect();
        let (inputs, _) = batch_inputs::<T>(data, &idx, cfg)?;
        let mut tape = Tape::new();
        let out = net.forward(&mut tape, store, &inputs, BnMode::Eval)?;
        Ok(predict(tape.value(out.logits))?.into_iter().map(|p| p.label).collect())
    });
    let mut flat = Vec::with_capacity(n);
    for p in preds {
        flat.extend(p?);
    }
    score(
        data.class_names.clone(),
        flat.into_iter().enumerate().map(|(i, p)| (data.label(i), p)),
    )
}
