//! Downstream head: mini-batch multinomial logistic regression over embedding
//! rows, with an optional single ReLU hidden layer.
//!
//! Y = SoftMax(σ(E·W₁)·W₂). The optimizer is plain momentum SGD (fixed 0.9),
//! deterministic given the config seed: initialization, epoch shuffles and
//! dropout masks all come from one ChaCha8 stream, and training is
//! single-threaded. L2 applies to weight matrices only, never biases. The
//! losses reported in metrics are plain data cross-entropy; the L2 term is
//! part of the optimized objective only.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::EmbeddingMatrix;

const MOMENTUM: f64 = 0.9;

/// Train/validation/test membership plus per-row labels, all in the row-id
/// space of an [`EmbeddingMatrix`].
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
    pub labels: HashMap<u64, usize>,
    pub class_count: usize,
}

impl LabeledSplit {
    pub fn new(
        train: Vec<u64>,
        validation: Vec<u64>,
        test: Vec<u64>,
        labels: HashMap<u64, usize>,
        class_count: usize,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::validation("class count must be positive"));
        }
        let mut seen: HashSet<u64> = HashSet::new();
        for (name, ids) in [("train", &train), ("validation", &validation), ("test", &test)] {
            for &id in ids.iter() {
                if !seen.insert(id) {
                    return Err(Error::validation(format!(
                        "row id {id} appears in more than one split (found again in {name})"
                    )));
                }
                match labels.get(&id) {
                    None => {
                        return Err(Error::validation(format!("row id {id} has no label")))
                    }
                    Some(&c) if c >= class_count => {
                        return Err(Error::validation(format!(
                            "label {c} out of range for {class_count} classes (row {id})"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(LabeledSplit { train, validation, test, labels, class_count })
    }
}

/// Hyper-parameters. `hidden == 0` means plain logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub l2: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.1,
            max_epochs: 200,
            l2: 1e-4,
            hidden: 0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must be in [0,1)"));
        }
        if self.l2 < 0.0 {
            return Err(Error::validation("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Trained parameters. Weight layouts are row-major: w1 is input×hidden,
/// w2 is hidden×classes (or input×classes when hidden = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_dim: usize,
    hidden: usize,
    class_count: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Loss/accuracy after each epoch. Validation slots are None when the
/// validation split is empty (in which case early stopping is disabled).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Labels and softmax scores for a queried id list; `scores` is row-major
/// rows×class_count.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Model {
    fn new_random(input_dim: usize, hidden: usize, class_count: usize, rng: &mut ChaCha8Rng) -> Model {
        let glorot = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-s..s)).collect::<Vec<f64>>()
        };
        if hidden == 0 {
            Model {
                input_dim,
                hidden,
                class_count,
                w1: Vec::new(),
                b1: Vec::new(),
                w2: glorot(input_dim, class_count, rng),
                b2: vec![0.0; class_count],
            }
        } else {
            Model {
                input_dim,
                hidden,
                class_count,
                w1: glorot(input_dim, hidden, rng),
                b1: vec![0.0; hidden],
                w2: glorot(hidden, class_count, rng),
                b2: vec![0.0; class_count],
            }
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Logits for one input row; `scratch` must have length `hidden`.
    fn logits(&self, x: &[f64], scratch: &mut [f64], mask: Option<&[f64]>) -> Vec<f64> {
        let activations: &[f64] = if self.hidden == 0 {
            x
        } else {
            for j in 0..self.hidden {
                let mut z = self.b1[j];
                for (i, &xi) in x.iter().enumerate() {
                    z += xi * self.w1[i * self.hidden + j];
                }
                scratch[j] = if z > 0.0 { z } else { 0.0 };
                if let Some(m) = mask {
                    scratch[j] *= m[j];
                }
            }
            scratch
        };
        let mut logits = self.b2.clone();
        for (j, &a) in activations.iter().enumerate() {
            if a != 0.0 {
                for c in 0..self.class_count {
                    logits[c] += a * self.w2[j * self.class_count + c];
                }
            }
        }
        logits
    }
}

/// Numerically stable softmax + cross-entropy; returns (loss, probabilities).
fn softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / total).collect();
    let loss = total.ln() + max - logits[label];
    (loss, probs)
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

struct Gradients {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &Model) -> Gradients {
        Gradients {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }
}

/// Mean data loss over the batch plus the L2 term; fills `grads` with the
/// gradient of that objective. `masks` carries per-row inverted-dropout
/// scales for the hidden layer (None outside training).
fn batch_objective(
    model: &Model,
    rows: &[&[f64]],
    labels: &[usize],
    l2: f64,
    masks: Option<&[Vec<f64>]>,
    grads: Option<&mut Gradients>,
) -> f64 {
    let batch = rows.len() as f64;
    let mut scratch = vec![0.0; model.hidden];
    let mut total_loss = 0.0;
    let mut g = grads;
    for (idx, (&x, &y)) in rows.iter().zip(labels).enumerate() {
        let mask = masks.map(|m| m[idx].as_slice());
        let logits = model.logits(x, &mut scratch, mask);
        let (loss, probs) = softmax_ce(&logits, y);
        total_loss += loss;
        if let Some(grads) = g.as_deref_mut() {
            // dL/dlogit_c = probs_c − 1[c=y], averaged over the batch
            let mut dlogits = probs;
            dlogits[y] -= 1.0;
            for d in dlogits.iter_mut() {
                *d /= batch;
            }
            let activations: &[f64] = if model.hidden == 0 { x } else { &scratch };
            for (j, &a) in activations.iter().enumerate() {
                for (c, &d) in dlogits.iter().enumerate() {
                    grads.w2[j * model.class_count + c] += a * d;
                }
            }
            for (c, &d) in dlogits.iter().enumerate() {
                grads.b2[c] += d;
            }
            if model.hidden > 0 {
                for j in 0..model.hidden {
                    if scratch[j] <= 0.0 {
                        continue; // ReLU gate closed (or dropped out)
                    }
                    let mut da = 0.0;
                    for (c, &d) in dlogits.iter().enumerate() {
                        da += model.w2[j * model.class_count + c] * d;
                    }
                    if let Some(m) = mask {
                        da *= m[j];
                    }
                    grads.b1[j] += da;
                    for (i, &xi) in x.iter().enumerate() {
                        grads.w1[i * model.hidden + j] += xi * da;
                    }
                }
            }
        }
    }
    let mut objective = total_loss / batch;
    if l2 > 0.0 {
        let sq: f64 = model.w1.iter().chain(model.w2.iter()).map(|w| w * w).sum();
        objective += 0.5 * l2 * sq;
        if let Some(grads) = g {
            for (gw, w) in grads.w1.iter_mut().zip(&model.w1) {
                *gw += l2 * w;
            }
            for (gw, w) in grads.w2.iter_mut().zip(&model.w2) {
                *gw += l2 * w;
            }
        }
    }
    objective
}

/// Plain data loss and accuracy on an id list (no dropout, no L2).
pub fn evaluate(
    model: &Model,
    e: &EmbeddingMatrix,
    ids: &[u64],
    labels: &HashMap<u64, usize>,
) -> Result<(f64, f64)> {
    let positions = row_positions(e, ids)?;
    let mut scratch = vec![0.0; model.hidden];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (&id, &pos) in ids.iter().zip(&positions) {
        let y = *labels
            .get(&id)
            .ok_or_else(|| Error::validation(format!("row id {id} has no label")))?;
        if y >= model.class_count {
            return Err(Error::validation(format!("label {y} out of range")));
        }
        let logits = model.logits(e.row(pos), &mut scratch, None);
        let (l, probs) = softmax_ce(&logits, y);
        loss += l;
        if argmax(&probs) == y {
            correct += 1;
        }
    }
    let n = ids.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn row_positions(e: &EmbeddingMatrix, ids: &[u64]) -> Result<Vec<usize>> {
    let index: HashMap<u64, usize> =
        e.row_ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::validation(format!("row id {id} not present in embedding")))
        })
        .collect()
}

/// Train the head. Deterministic given `cfg.seed`. Early-stops after 50
/// epochs without validation-loss improvement and restores the best-epoch
/// weights; with an empty validation split it always runs `max_epochs`.
pub fn train(
    e: &EmbeddingMatrix,
    split: &LabeledSplit,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::validation("empty train split"));
    }
    let train_pos = row_positions(e, &split.train)?;
    row_positions(e, &split.validation)?;
    let train_labels: Vec<usize> = split
        .train
        .iter()
        .map(|id| split.labels[id])
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new_random(e.cols(), cfg.hidden, split.class_count, &mut rng);
    let mut vel = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..train_pos.len()).collect();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| e.row(train_pos[i])).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let masks: Option<Vec<Vec<f64>>> = if cfg.hidden > 0 && cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                Some(
                    (0..rows.len())
                        .map(|_| {
                            (0..cfg.hidden)
                                .map(|_| {
                                    if rng.random_range(0.0..1.0) < keep { 1.0 / keep } else { 0.0 }
                                })
                                .collect()
                        })
                        .collect(),
                )
            } else {
                None
            };
            let mut grads = Gradients::zeros_like(&model);
            batch_objective(&model, &rows, &labels, cfg.l2, masks.as_deref(), Some(&mut grads));
            let step = |w: &mut [f64], v: &mut [f64], g: &[f64]| {
                for i in 0..w.len() {
                    v[i] = MOMENTUM * v[i] - cfg.learning_rate * g[i];
                    w[i] += v[i];
                }
            };
            step(&mut model.w1, &mut vel.w1, &grads.w1);
            step(&mut model.b1, &mut vel.b1, &grads.b1);
            step(&mut model.w2, &mut vel.w2, &grads.w2);
            step(&mut model.b2, &mut vel.b2, &grads.b2);
        }

        let (train_loss, train_accuracy) = evaluate(&model, e, &split.train, &split.labels)?;
        let (val_loss, val_accuracy) = if split.validation.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&model, e, &split.validation, &split.labels)?;
            (Some(l), Some(a))
        };
        metrics.push(EpochMetrics { epoch, train_loss, train_accuracy, val_loss, val_accuracy });

        if let Some(vl) = val_loss {
            let improved = best.as_ref().map_or(true, |(b, _)| vl < *b);
            if improved {
                best = Some((vl, model.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= 50 {
                    break;
                }
            }
        }
    }

    if let Some((_, best_model)) = best {
        model = best_model;
    }
    Ok((model, metrics))
}

/// Softmax scores and argmax labels for the given embedding rows.
pub fn predict(model: &Model, e: &EmbeddingMatrix, ids: &[u64]) -> Result<Prediction> {
    if e.cols() != model.input_dim {
        return Err(Error::validation(format!(
            "embedding has {} columns, model expects {}",
            e.cols(),
            model.input_dim
        )));
    }
    let positions = row_positions(e, ids)?;
    let mut scratch = vec![0.0; model.hidden];
    let mut labels = Vec::with_capacity(ids.len());
    let mut scores = Vec::with_capacity(ids.len() * model.class_count);
    for &pos in &positions {
        let logits = model.logits(e.row(pos), &mut scratch, None);
        let (_, probs) = softmax_ce(&logits, 0);
        labels.push(argmax(&probs));
        scores.extend_from_slice(&probs);
    }
    Ok(Prediction { labels, scores })
}

/// Compare the analytic gradient of the full objective (cross-entropy + L2)
/// with central finite differences (step h = 1e-5) on a random instance.
/// Returns the maximum relative error over all parameters.
pub fn gradient_check(
    rows: usize,
    cols: usize,
    class_count: usize,
    hidden: usize,
    seed: u64,
) -> f64 {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..class_count)).collect();
    let row_refs: Vec<&[f64]> = (0..rows).map(|i| &data[i * cols..(i + 1) * cols]).collect();
    let mut model = Model::new_random(cols, hidden, class_count, &mut rng);
    let l2 = 0.01;

    let mut grads = Gradients::zeros_like(&model);
    batch_objective(&model, &row_refs, &labels, l2, None, Some(&mut grads));

    let mut worst: f64 = 0.0;
    // index into the concatenation [w1 | b1 | w2 | b2]
    let total = model.w1.len() + model.b1.len() + model.w2.len() + model.b2.len();
    for flat in 0..total {
        let analytic = {
            let (g1, g2, g3, g4) = (&grads.w1, &grads.b1, &grads.w2, &grads.b2);
            pick(flat, g1, g2, g3, g4)
        };
        let original = {
            let (p1, p2, p3, p4) = (&model.w1, &model.b1, &model.w2, &model.b2);
            pick(flat, p1, p2, p3, p4)
        };
        set(flat, &mut model, original + H);
        let plus = batch_objective(&model, &row_refs, &labels, l2, None, None);
        set(flat, &mut model, original - H);
        let minus = batch_objective(&model, &row_refs, &labels, l2, None, None);
        set(flat, &mut model, original);
        let numeric = (plus - minus) / (2.0 * H);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

fn pick(flat: usize, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let mut i = flat;
    for part in [a, b, c, d] {
        if i < part.len() {
            return part[i];
        }
        i -= part.len();
    }
    unreachable!("flat index out of range")
}

fn set(flat: usize, model: &mut Model, value: f64) {
    let mut i = flat;
    for part in [&mut model.w1, &mut model.b1, &mut model.w2, &mut model.b2] {
        if i < part.len() {
            part[i] = value;
            return;
        }
        i -= part.len();
    }
    unreachable!("flat index out of range")
}

/// Parse "row_id<TAB>class" lines; blank lines and '#' comments are skipped.
pub fn load_labels<R: BufRead>(reader: R) -> Result<HashMap<u64, usize>> {
    let mut labels = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let id: u64 = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno + 1, "bad row id"))?;
        let class: usize = parts
            .next()
            .ok_or_else(|| Error::parse(lineno + 1, "expected \"row_id<TAB>class\""))?
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno + 1, "bad class"))?;
        if parts.next().is_some() {
            return Err(Error::parse(lineno + 1, "expected exactly two fields"));
        }
        if labels.insert(id, class).is_some() {
            return Err(Error::parse(lineno + 1, format!("duplicate label for row {id}")));
        }
    }
    if labels.is_empty() {
        return Err(Error::validation("label file contains no labels"));
    }
    Ok(labels)
}

/// Parse a split file: one row id per line.
pub fn load_split_ids<R: BufRead>(reader: R) -> Result<Vec<u64>> {
    let mut ids = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        ids.push(line.parse().map_err(|_| Error::parse(lineno + 1, "bad row id"))?);
    }
    Ok(ids)
}
