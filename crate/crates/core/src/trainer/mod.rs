//! Straight-through-estimator training of shadow `(W, b)` parameters and
//! export to integer threshold networks.

pub mod config;
pub mod export;
pub mod optim;
pub mod shadow;
pub mod ste;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::TrainConfig;
pub use export::{export, export_connection, verify_export, EquivalenceSummary};
pub use optim::OptimizerKind;
pub use shadow::{softmax_cross_entropy, Grads, ShadowEntry, ShadowLayer, ShadowModel};
pub use ste::{sign_ste_backward, sign_ste_forward, Activation};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Architecture;

/// Gradient chunks evaluated concurrently before being folded in order.
const WAVE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub arch: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
    pub final_test_accuracy: Option<f64>,
}

impl TrainReport {
    /// Everything except wall-clock timings.
    pub fn metrics(&self) -> Vec<(usize, f64, f64, f64, Option<f64>)> {
        self.epochs
            .iter()
            .map(|e| {
                (
                    e.epoch,
                    e.learning_rate,
                    e.train_loss,
                    e.train_accuracy,
                    e.val_accuracy,
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            let val = e
                .val_accuracy
                .map(|v| format!("{v:.17}"))
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{:.17},{:.17},{}\n",
                e.epoch, e.train_loss, e.train_accuracy, val
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.val_accuracy)
            .reduce(f64::max)
    }
}

pub(crate) fn pixels_f64(d: &Dataset, i: usize) -> Vec<f64> {
    d.pixels(i).iter().map(|&p| p as f64).collect()
}

fn check_dataset(arch: &Architecture, d: &Dataset) -> Result<()> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !arch.input.accepts(&d.image_shape()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", arch.input.shape),
            got: format!("{:?}", d.image_shape()),
        });
    }
    Ok(())
}

struct ChunkResult {
    grads: Grads,
    loss: f64,
    correct: usize,
}

fn chunk_gradient(
    model: &ShadowModel,
    d: &Dataset,
    idx: &[usize],
    temperature: f64,
) -> Result<ChunkResult> {
    let mut grads = Grads::zeros_like(model);
    let mut loss = 0.0;
    let mut correct = 0;
    for &i in idx {
        let trace = model.forward_traced(&pixels_f64(d, i), Activation::Sign)?;
        let (l, g, pred) = softmax_cross_entropy(&trace.output, d.label(i), temperature);
        loss += l;
        correct += (pred == d.label(i)) as usize;
        model.backward(&trace, &g, &mut grads);
    }
    Ok(ChunkResult {
        grads,
        loss,
        correct,
    })
}

/// Mean gradient, summed loss and correct count over `batch`, reduced in a
/// fixed chunk order.
pub fn batch_gradient(
    model: &ShadowModel,
    d: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(Grads, f64, usize)> {
    let mut total = Grads::zeros_like(model);
    let mut loss = 0.0;
    let mut correct = 0;
    for wave in batch.chunks(cfg.chunk_size * WAVE) {
        let parts = exec.map_chunks(wave, cfg.chunk_size, |idx| {
            chunk_gradient(model, d, idx, cfg.temperature)
        });
        for part in parts {
            let part = part?;
            total.add(&part.grads);
            loss += part.loss;
            correct += part.correct;
        }
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, loss, correct))
}

/// Accuracy of the shadow model's `Sign` forward on `d`.
pub fn evaluate_shadow(model: &ShadowModel, d: &Dataset, exec: Exec) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..d.len()).collect();
    let hits = exec.map_chunks(&idx, 64, |chunk| -> Result<usize> {
        let mut hits = 0;
        for &i in chunk {
            let out = model.forward(&pixels_f64(d, i), Activation::Sign)?;
            let (_, _, pred) = softmax_cross_entropy(&out, d.label(i), 1.0);
            hits += (pred == d.label(i)) as usize;
        }
        Ok(hits)
    });
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / d.len() as f64)
}

pub fn train(
    arch: &Architecture,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(ShadowModel, TrainReport)> {
    train_with_progress(arch, train_set, val_set, cfg, exec, |_| {})
}

/// Minibatch training with a seeded shuffle per epoch; `on_epoch` sees each
/// finished epoch record.
pub fn train_with_progress<F: FnMut(&EpochRecord)>(
    arch: &Architecture,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: F,
) -> Result<(ShadowModel, TrainReport)> {
    cfg.validate()?;
    arch.validate()?;
    check_dataset(arch, train_set)?;
    if let Some(v) = val_set {
        check_dataset(arch, v)?;
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ShadowModel::init(arch, cfg.saturate_in_training, &mut rng)?;
    let mut opt = optim::Optimizer::new(cfg.optimizer, &model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (grads, loss, hits) = batch_gradient(&model, train_set, batch, cfg, exec)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss,
                });
            }
            opt.step(&mut model, &grads, lr);
            loss_sum += loss;
            correct += hits;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_accuracy = val_set
            .map(|v| evaluate_shadow(&model, v, exec))
            .transpose()?;
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_accuracy,
            wall_seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
    }

    let report = TrainReport {
        arch: arch.name.to_string(),
        config: cfg.clone(),
        epochs: records,
        wall_seconds: started.elapsed().as_secs_f64(),
        final_test_accuracy: None,
    };
    Ok((model, report))
}
