//! Mini-batch Adam with per-epoch validation and best-checkpoint selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accumulate_example, encode_all, predict, Encoded, ModelConfig, ModelError, ModelWeights};
use crate::domain::{Example, SplitTag};
use crate::tensor::{with_flush_to_zero, AdamConfig, AdamError, AdamState, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { lr: 1e-3, batch_size: 128, max_epochs: 60, patience: 10, init_std: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy on validation examples carrying no held-out tag.
    pub val_random: f64,
    /// Accuracy on each held-out tag's validation subset (absent when empty).
    pub val_splits: BTreeMap<SplitTag, f64>,
}

impl EpochRecord {
    /// Mean accuracy over the non-empty held-out validation subsets.
    pub fn compositional(&self) -> Option<f64> {
        (!self.val_splits.is_empty())
            .then(|| self.val_splits.values().sum::<f64>() / self.val_splits.len() as f64)
    }

    /// Model-selection key, compared lexicographically.
    pub fn selection_key(&self) -> (f64, f64) {
        (self.compositional().unwrap_or(self.val_random), self.val_random)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub split_columns: Vec<SplitTag>,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_random");
        for t in &self.split_columns {
            let _ = write!(out, ",val_{t}");
        }
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{},{:.6},{:.6}", r.epoch, r.loss, r.val_random);
            for t in &self.split_columns {
                match r.val_splits.get(t) {
                    Some(a) => {
                        let _ = write!(out, ",{a:.6}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn accuracy(weights: &ModelWeights<f32>, config: &ModelConfig, examples: &[&Example]) -> Result<f64, ModelError> {
    let owned: Vec<Example> = examples.iter().map(|e| (*e).clone()).collect();
    let preds = predict(weights, config, &owned)?;
    let correct = preds.iter().zip(&owned).filter(|(p, e)| **p == e.target.index()).count();
    Ok(correct as f64 / owned.len() as f64)
}

fn validate(
    weights: &ModelWeights<f32>,
    config: &ModelConfig,
    val_random: &[&Example],
    val_splits: &BTreeMap<SplitTag, Vec<&Example>>,
) -> Result<(f64, BTreeMap<SplitTag, f64>), ModelError> {
    let random = accuracy(weights, config, val_random)?;
    let mut splits = BTreeMap::new();
    for (tag, subset) in val_splits {
        splits.insert(*tag, accuracy(weights, config, subset)?);
    }
    Ok((random, splits))
}

/// Trains from a seeded Gaussian init. Returns the best-validation weights.
///
/// `holdout` names the tags excluded from training; their validation subsets
/// drive model selection. `on_epoch` sees each record as it is produced.
pub fn train(
    config: &ModelConfig,
    train_set: &[Example],
    val_set: &[Example],
    holdout: &BTreeSet<SplitTag>,
    hyper: &TrainHyper,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelWeights<f32>, TrainingLog), ModelError> {
    with_flush_to_zero(|| train_inner(config, train_set, val_set, holdout, hyper, on_epoch))
}

fn train_inner(
    config: &ModelConfig,
    train_set: &[Example],
    val_set: &[Example],
    holdout: &BTreeSet<SplitTag>,
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelWeights<f32>, TrainingLog), ModelError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyDataset("training set".into()));
    }
    let held: Vec<SplitTag> = holdout.iter().copied().filter(|t| *t != SplitTag::Random).collect();
    let val_random: Vec<&Example> =
        val_set.iter().filter(|e| !held.iter().any(|t| e.has_tag(*t))).collect();
    if val_random.is_empty() {
        return Err(ModelError::EmptyDataset("validation set has no random-split examples".into()));
    }
    let mut val_splits: BTreeMap<SplitTag, Vec<&Example>> = BTreeMap::new();
    for t in &held {
        let subset: Vec<&Example> = val_set.iter().filter(|e| e.has_tag(*t)).collect();
        if !subset.is_empty() {
            val_splits.insert(*t, subset);
        }
    }

    let data: Vec<Encoded> = encode_all(train_set, config.variant)?;
    let mut weights = ModelWeights::<f32>::random(config, hyper.init_std, hyper.seed);
    let mut adam = AdamState::new(AdamConfig { lr: hyper.lr, ..AdamConfig::default() }, &weights);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_0f_ba7c4);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = hyper.batch_size.max(1);

    let mut log = TrainingLog { epochs: Vec::new(), best_epoch: 0, split_columns: held.clone() };
    let mut best = weights.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut since_best = 0;

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let mut grads = weights.zeros_like();
            let w = 1.0 / chunk.len() as f32;
            let mut batch_loss = 0.0f64;
            for &i in chunk {
                batch_loss += accumulate_example(&weights, config, &data[i], w, &mut grads)
                    .map_err(|e| ModelError::Divergence { epoch, step, detail: e.to_string() })?
                    as f64;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Divergence { epoch, step, detail: "non-finite loss".into() });
            }
            loss_sum += batch_loss;
            match adam.step(&mut weights, &grads) {
                Ok(()) => {}
                Err(AdamError::NonFiniteGradient(name)) => {
                    return Err(ModelError::Divergence {
                        epoch,
                        step,
                        detail: format!("non-finite gradient in {name}"),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
        if !weights.is_finite() {
            return Err(ModelError::Divergence { epoch, step: 0, detail: "non-finite weights".into() });
        }

        let (random, splits) = validate(&weights, config, &val_random, &val_splits)?;
        let record = EpochRecord { epoch, loss: loss_sum / data.len() as f64, val_random: random, val_splits: splits };
        on_epoch(&record);
        let key = record.selection_key();
        let perfect = key.0 >= 1.0 && key.1 >= 1.0;
        log.epochs.push(record);
        if key > best_key {
            best_key = key;
            best = weights.clone();
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if perfect || since_best >= hyper.patience {
            break;
        }
    }
    debug_assert_eq!(best.tensors().len(), weights.tensors().len());
    Ok((best, log))
}
