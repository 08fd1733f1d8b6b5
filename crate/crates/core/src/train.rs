//! Training loop, evaluation and multi-seed aggregation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alga::{encode_graph, KernelOptions};
use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::graph::{LabeledDataset, SplitIndices};
use crate::matrix::Matrix;
use crate::metrics::Metrics;
use crate::model::{AlterModel, ModelConfig};
use crate::optim::{cosine_lr, AdamConfig, AdamState};

/// Node features and long-range embedding of one labeled graph.
#[derive(Clone, Debug)]
pub struct EncodedSample {
    pub id: String,
    pub x: Matrix,
    pub e: Matrix,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct EncodedDataset {
    pub name: String,
    pub samples: Vec<EncodedSample>,
    pub k_hops: usize,
}

impl EncodedDataset {
    pub fn from_dataset(ds: &LabeledDataset, k_hops: usize, kernel: KernelOptions) -> Result<Self> {
        let samples = ds
            .graphs
            .par_iter()
            .zip(&ds.subject_ids)
            .zip(&ds.labels)
            .map(|((g, id), &label)| {
                Ok(EncodedSample {
                    id: id.clone(),
                    x: g.x.clone(),
                    e: encode_graph(g, k_hops, kernel)?.e,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(ds.name.clone(), samples, k_hops)
    }

    pub fn from_samples(name: String, samples: Vec<EncodedSample>, k_hops: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("dataset has no samples"))?;
        let (n, d) = first.x.shape();
        for s in &samples {
            if s.x.shape() != (n, d) || s.e.shape() != (n, k_hops) {
                return Err(Error::shape(
                    "EncodedDataset",
                    format!(
                        "sample {} has X {:?} and E {:?}, expected ({n}, {d}) and ({n}, {k_hops})",
                        s.id,
                        s.x.shape(),
                        s.e.shape()
                    ),
                ));
            }
            if s.label > 1 {
                return Err(Error::invalid(format!("sample {} has label {}", s.id, s.label)));
            }
        }
        Ok(EncodedDataset { name, samples, k_hops })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.samples[0].x.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].x.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-4,
            decoupled_weight_decay: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            decoupled: self.decoupled_weight_decay,
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        self.adam().validate()?;
        if !(self.lr >= 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return Err(Error::invalid(format!(
                "need 0 <= lr_min <= lr, got lr={} lr_min={}",
                self.lr, self.lr_min
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if self.batch_size > train_len {
            return Err(Error::invalid(format!(
                "batch_size {} exceeds the {train_len} training samples",
                self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were retained as the best model.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Test metrics of the best model.
    pub test: Metrics,
}

/// Models kept by a run next to its record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub initial: AlterModel,
    pub best: AlterModel,
    pub last: AlterModel,
}

/// SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Class-1 probabilities for the samples at `indices`.
pub fn predict_scores(model: &AlterModel, data: &EncodedDataset, indices: &[usize]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| {
            let s = data
                .samples
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
            Ok(model.predict(&s.x, &s.e)?[1])
        })
        .collect()
}

pub fn evaluate(model: &AlterModel, data: &EncodedDataset, indices: &[usize], threshold: f64) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let scores = predict_scores(model, data, indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.samples[i].label).collect();
    Metrics::from_scores(&scores, &labels, threshold)
}

fn diverged(epoch: usize, step: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(detail) => Error::Diverged { epoch, step, detail },
        other => other,
    }
}

/// Trains one model. Batches are visited in a seeded shuffle order and
/// per-sample gradients are summed in batch order, so a run is a pure
/// function of its inputs.
pub fn train_loop(
    data: &EncodedDataset,
    split: &SplitIndices,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate(split.train.len())?;
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::invalid("validation and test splits must be non-empty"));
    }
    if model_config.k_hops != data.k_hops {
        return Err(Error::invalid(format!(
            "model expects K={} but the dataset was encoded with K={}",
            model_config.k_hops, data.k_hops
        )));
    }
    let hash = config_hash(&(model_config, config))?;
    let mut model = AlterModel::new(model_config.clone(), data.num_nodes(), data.feature_dim(), config.seed)?;
    let initial = model.clone();
    let mut adam = AdamState::new(model.store(), config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut order = split.train.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_auc = f64::NEG_INFINITY;
    let mut step = 0;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Gradients> = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &data.samples[i];
                let (loss, g) = model
                    .loss_and_grads(&s.x, &s.e, s.label)
                    .map_err(|e| diverged(epoch, step, e))?;
                loss_sum += loss;
                grads.push(g);
            }
            let store = model.store_mut();
            store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for g in &grads {
                store.accumulate(g, scale)?;
            }
            adam.step(store, lr)?;
            if let Some(p) = store.iter().find(|p| !p.value.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("parameter {} became non-finite", p.name),
                });
            }
            step += 1;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val = evaluate(&model, data, &split.val, config.threshold)?;
        log::debug!(
            "seed {} epoch {epoch}: lr {lr:.3e} loss {train_loss:.5} val auc {:.4}",
            config.seed,
            val.auc
        );
        if val.auc > best_auc {
            best_auc = val.auc;
            best_epoch = epoch;
            best = model.clone();
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val,
        });
    }

    let test = evaluate(&best, data, &split.test, config.threshold)?;
    Ok(TrainOutcome {
        record: RunRecord {
            seed: config.seed,
            config_hash: hash,
            epochs,
            best_epoch,
            best_val_auc: best_auc,
            test,
        },
        initial,
        best,
        last: model,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Mean and standard deviation of each test metric, reduced in seed order.
pub fn summarize(records: &[RunRecord]) -> BTreeMap<String, MeanStd> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    let pick: [(&str, fn(&Metrics) -> f64); 5] = [
        ("acc", |m| m.acc),
        ("auc", |m| m.auc),
        ("sen", |m| m.sen),
        ("spe", |m| m.spe),
        ("f1", |m| m.f1),
    ];
    pick.iter()
        .map(|(name, f)| {
            let vals: Vec<f64> = sorted.iter().map(|r| f(&r.test)).collect();
            (name.to_string(), MeanStd::of(&vals))
        })
        .collect()
}
