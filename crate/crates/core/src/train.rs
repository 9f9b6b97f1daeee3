//! Pairwise training with validation-based early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Fold};
use crate::error::{Error, Result};
use crate::eval::mean_ndcg;
use crate::model::{ModelConfig, RankingModel};
use crate::params::AdamConfig;
use crate::tensor::sigmoid;
use crate::text::{EncodedGroup, Encoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `−log σ(s_pos − s_neg)` over clicked/non-clicked pairs.
    Pairwise,
    /// Binary cross-entropy of `σ(score)` against each document's label.
    Pointwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub min_count: u64,
    /// NDCG cutoff used for early stopping.
    pub k: usize,
    pub loss: LossKind,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            batch_size: 256,
            max_epochs: 50,
            patience: 3,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            min_count: 2,
            k: 20,
            loss: LossKind::Pairwise,
        }
    }
}

impl HyperParams {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainPair {
    pub group: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One pair for every non-clicked document, against the clicked one.
pub fn generate_pairs(group: usize, labels: &[u8]) -> Vec<TrainPair> {
    let Some(positive) = labels.iter().position(|&l| l == 1) else {
        return Vec::new();
    };
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 0)
        .map(|(negative, _)| TrainPair {
            group,
            positive,
            negative,
        })
        .collect()
}

/// `log(1 + e^{-x})` without overflow.
fn softplus_neg(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn pairwise_loss(s_pos: f64, s_neg: f64) -> f64 {
    softplus_neg(s_pos - s_neg)
}

/// ∂L/∂s_pos; the derivative in `s_neg` is its negation.
pub fn pairwise_loss_grad(s_pos: f64, s_neg: f64) -> f64 {
    sigmoid(s_pos - s_neg) - 1.0
}

pub fn pointwise_loss(score: f64, label: u8) -> f64 {
    if label == 1 {
        softplus_neg(score)
    } else {
        softplus_neg(-score)
    }
}

pub fn pointwise_loss_grad(score: f64, label: u8) -> f64 {
    sigmoid(score) - f64::from(label)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
}

impl TrainLog {
    /// CSV with header `epoch,train_loss,val_ndcg`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "train_loss", "val_ndcg"])?;
        for e in &self.epochs {
            wtr.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_ndcg.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_ndcg: f64,
    pub epochs_without_improvement: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    fn new(seed: u64) -> Self {
        TrainState {
            epoch: 0,
            best_val_ndcg: f64::NEG_INFINITY,
            epochs_without_improvement: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f01d),
        }
    }
}

/// A model together with the encoder fit on its training partition.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: RankingModel,
    pub encoder: Encoder,
}

#[derive(Clone, Copy, Debug)]
enum Item {
    Pair(TrainPair),
    Doc { group: usize, index: usize },
}

/// Run one mini-batch: forward, backward, and (unless `step` is false) an
/// optimizer step. Returns the summed loss over the batch.
fn run_batch(
    model: &mut RankingModel,
    groups: &[EncodedGroup],
    batch: &[Item],
    adam: &AdamConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for item in batch {
        match *item {
            Item::Pair(p) => {
                let g = &groups[p.group];
                let (pos, neg) = (&g.docs[p.positive], &g.docs[p.negative]);
                let (s_pos, t_pos) = model.forward(&g.query, pos)?;
                let (s_neg, t_neg) = model.forward(&g.query, neg)?;
                total += pairwise_loss(s_pos, s_neg);
                let d = pairwise_loss_grad(s_pos, s_neg) * scale;
                model.backward(&g.query, pos, &t_pos, d)?;
                model.backward(&g.query, neg, &t_neg, -d)?;
            }
            Item::Doc { group, index } => {
                let g = &groups[group];
                let doc = &g.docs[index];
                let (s, t) = model.forward(&g.query, doc)?;
                total += pointwise_loss(s, g.labels[index]);
                model.backward(
                    &g.query,
                    doc,
                    &t,
                    pointwise_loss_grad(s, g.labels[index]) * scale,
                )?;
            }
        }
    }
    model.store_mut().adam_step(adam)?;
    Ok(total)
}

fn items(groups: &[EncodedGroup], loss: LossKind) -> Vec<Item> {
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_single_doc())
        .flat_map(|(gi, g)| match loss {
            LossKind::Pairwise => generate_pairs(gi, &g.labels)
                .into_iter()
                .map(Item::Pair)
                .collect::<Vec<_>>(),
            LossKind::Pointwise => (0..g.docs.len())
                .map(|index| Item::Doc { group: gi, index })
                .collect(),
        })
        .collect()
}

/// Mean pairwise loss over every pair of the given groups, without updating.
pub fn mean_pair_loss(model: &RankingModel, groups: &[EncodedGroup]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (gi, g) in groups.iter().enumerate() {
        for p in generate_pairs(gi, &g.labels) {
            let s_pos = model.score(&g.query, &g.docs[p.positive])?;
            let s_neg = model.score(&g.query, &g.docs[p.negative])?;
            total += pairwise_loss(s_pos, s_neg);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Take `steps` optimizer steps on one fixed batch of groups (all pairs each step).
pub fn train_steps(
    model: &mut RankingModel,
    groups: &[EncodedGroup],
    steps: usize,
    hyper: &HyperParams,
) -> Result<()> {
    let batch = items(groups, hyper.loss);
    if batch.is_empty() {
        return Err(Error::Config("no training pairs in batch".into()));
    }
    let adam = hyper.adam();
    for step in 0..steps {
        let loss = run_batch(model, groups, &batch, &adam)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {step}")));
        }
    }
    Ok(())
}

/// Train on `fold.train`, early-stopping on NDCG@k of `fold.validation`.
pub fn train_model(
    config: &ModelConfig,
    fold: &Fold,
    corpus: &Corpus,
    hyper: &HyperParams,
) -> Result<(TrainedModel, TrainLog)> {
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let encoder = Encoder::fit(&fold.train, corpus, hyper.min_count)?;
    let train = encoder.encode_groups(&fold.train, corpus);
    let validation = encoder.encode_groups(&fold.validation, corpus);
    if !train.iter().any(|g| !g.is_single_doc()) || !validation.iter().any(|g| !g.is_single_doc()) {
        return Err(Error::Config(
            "degenerate fold: training and validation each need a group with at least two documents".into(),
        ));
    }

    let mut model =
        RankingModel::new(config.clone(), encoder.vocab.len(), encoder.countries.len())?;
    let mut items = items(&train, hyper.loss);
    let adam = hyper.adam();
    let mut state = TrainState::new(config.seed);
    let mut log = TrainLog::default();
    let mut best = model.store().snapshot();

    while state.epoch < hyper.max_epochs {
        state.epoch += 1;
        items.shuffle(&mut state.rng);
        let mut total = 0.0;
        for (b, batch) in items.chunks(hyper.batch_size).enumerate() {
            let loss = run_batch(&mut model, &train, batch, &adam)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {} batch {b}",
                    state.epoch
                )));
            }
            total += loss;
        }
        let val_ndcg = mean_ndcg(&model, &validation, hyper.k)?.0;
        log.epochs.push(EpochLog {
            epoch: state.epoch,
            train_loss: total / items.len() as f64,
            val_ndcg,
        });
        if val_ndcg > state.best_val_ndcg {
            state.best_val_ndcg = val_ndcg;
            state.epochs_without_improvement = 0;
            log.best_epoch = state.epoch;
            log.best_val_ndcg = val_ndcg;
            best = model.store().snapshot();
        } else {
            state.epochs_without_improvement += 1;
            if state.epochs_without_improvement >= hyper.patience {
                break;
            }
        }
    }
    model.store_mut().restore(&best)?;
    Ok((TrainedModel { model, encoder }, log))
}
