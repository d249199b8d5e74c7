use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{ModelConfig, Network};
use super::ops::{softmax, softmax_cross_entropy};
use super::{NnError, Result, Tensor};
use crate::eval::roc_auc;
use crate::features::FeatureMatrix;

/// Samples stored contiguously in NHWC order with one class index each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub input: [usize; 3],
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(input: [usize; 3], data: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = input.iter().product();
        if labels.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        if data.len() != per * labels.len() {
            return Err(NnError::ShapeViolation {
                expected: vec![labels.len(), input[0], input[1], input[2]],
                got: vec![data.len()],
            });
        }
        Ok(LabeledSet { input, data, labels })
    }

    /// Stack feature matrices as single-channel `[rows, cols, 1]` images.
    pub fn from_features(features: &[FeatureMatrix], labels: Vec<usize>) -> Result<Self> {
        let first = features.first().ok_or(NnError::EmptyDataset)?;
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(features.len() * rows * cols);
        for f in features {
            if f.shape() != (rows, cols) {
                let (r, c) = f.shape();
                return Err(NnError::ShapeViolation {
                    expected: vec![rows, cols],
                    got: vec![r, c],
                });
            }
            data.extend(f.values.iter().copied());
        }
        LabeledSet::new([rows, cols, 1], data, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Gather samples into a `[n, H, W, C]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let [h, w, c] = self.input;
        Tensor::from_vec(&[indices.len(), h, w, c], data).expect("gathered length")
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            input: self.input,
            data: self.batch(indices).into_data(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Samples per forward/backward pass; gradients are accumulated up to
    /// `batch_size`. Ignored for batch-norm networks, whose statistics need
    /// the whole batch.
    pub micro_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 14,
            micro_batch: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn predicted_class(p_copd: f64) -> usize {
    usize::from(p_copd > 0.5)
}

/// Eval-mode probabilities `[p_non_copd, p_copd]` for every sample.
pub fn predict_probabilities(net: &Network<f32>, set: &LabeledSet, chunk: usize) -> Result<Vec<[f64; 2]>> {
    check_input(net.config.input, set)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for c in idx.chunks(chunk.max(1)) {
        for row in net.predict_proba(&set.batch(c))? {
            out.push([row[0] as f64, row[1] as f64]);
        }
    }
    Ok(out)
}

/// Mean loss, accuracy, and COPD probabilities of `net` over `set` in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub p_copd: Vec<f64>,
}

pub fn evaluate(net: &Network<f32>, set: &LabeledSet, chunk: usize) -> Result<Evaluation> {
    check_input(net.config.input, set)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut loss = 0.0;
    let mut p_copd = Vec::with_capacity(set.len());
    for c in idx.chunks(chunk.max(1)) {
        let logits = net.forward_eval(&set.batch(c))?;
        let labels: Vec<usize> = c.iter().map(|&i| set.labels[i]).collect();
        let (l, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l as f64 * c.len() as f64;
        let probs = softmax(&logits);
        p_copd.extend(probs.data().chunks_exact(2).map(|r| r[1] as f64));
    }
    let correct = p_copd
        .iter()
        .zip(&set.labels)
        .filter(|(&p, &l)| predicted_class(p) == l)
        .count();
    Ok(Evaluation {
        loss: loss / set.len() as f64,
        accuracy: correct as f64 / set.len() as f64,
        p_copd,
    })
}

fn check_input(input: [usize; 3], set: &LabeledSet) -> Result<()> {
    if set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if set.input != input {
        return Err(NnError::ShapeViolation {
            expected: input.to_vec(),
            got: set.input.to_vec(),
        });
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= 2) {
        return Err(NnError::InvalidLabel(bad));
    }
    Ok(())
}

/// Split a shuffled order into batches of `size`, keeping the remainder. For
/// batch-norm networks a remainder of one sample is merged into the previous
/// batch, since a single sample has no batch statistics.
fn make_batches(order: &[usize], size: usize, merge_singleton: bool) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if merge_singleton && batches.len() > 1 && batches.last().unwrap().len() == 1 {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Train a freshly initialized network with Adam on mean cross-entropy.
///
/// Everything is derived from `seed`: the initial weights, the per-epoch
/// shuffles, and the dropout masks, each from its own ChaCha stream. Batches
/// are processed in order on one thread, so a run is reproducible bit for bit.
pub fn train(
    config: &ModelConfig,
    set: &LabeledSet,
    validation: Option<&LabeledSet>,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<(Network<f32>, TrainHistory)> {
    check_input(config.input, set)?;
    if let Some(v) = validation {
        check_input(config.input, v)?;
    }
    if hyper.batch_size == 0 || hyper.micro_batch == 0 {
        return Err(NnError::InvalidConfig("batch sizes must be positive".into()));
    }
    let bn = config.has_batch_norm();
    if bn && set.len() < 2 {
        return Err(NnError::BatchTooSmall(set.len()));
    }
    let mut net: Network<f32> = Network::new(config.clone(), seed)?;
    let mut adam = AdamState::new(hyper.adam, &net.params.trainable());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(2);

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in make_batches(&order, hyper.batch_size, bn) {
            let micro = if bn { batch.len() } else { hyper.micro_batch };
            let mut grads: Option<Vec<Tensor<f32>>> = None;
            for mb in batch.chunks(micro) {
                let x = set.batch(mb);
                let labels: Vec<usize> = mb.iter().map(|&i| set.labels[i]).collect();
                let (logits, caches) = net.forward_train(&x, &mut dropout_rng)?;
                let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
                loss_sum += loss as f64 * mb.len() as f64;
                let probs = softmax(&logits);
                correct += probs
                    .data()
                    .chunks_exact(2)
                    .zip(&labels)
                    .filter(|(r, &l)| predicted_class(r[1] as f64) == l)
                    .count();
                let mut g = net.backward(caches, dlogits)?;
                // Per-micro-batch gradients are means; reweight to a batch mean.
                let w = mb.len() as f32 / batch.len() as f32;
                g.iter_mut().for_each(|t| t.scale(w));
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, t) in acc.iter_mut().zip(&g) {
                            a.add_assign(t)?;
                        }
                    }
                }
            }
            let grads = grads.expect("non-empty batch");
            adam_step(&mut net.params.trainable_mut(), &grads, &mut adam)?;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / set.len() as f64,
            train_acc: correct as f64 / set.len() as f64,
            val_loss: None,
            val_acc: None,
            val_auc: None,
        };
        if let Some(v) = validation {
            let e = evaluate(&net, v, hyper.micro_batch)?;
            record.val_loss = Some(e.loss);
            record.val_acc = Some(e.accuracy);
            record.val_auc = roc_auc(&e.p_copd, &v.labels).ok();
        }
        history.epochs.push(record);
    }
    Ok((net, history))
}
