//! Mini-batch training with early stopping, macro P/R/F1 evaluation, and
//! attention extraction.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BinningMode, DatasetSplit, Sentence, Sentiment};
use crate::error::{Error, Result};
use crate::model::{
    argmax, forward, AttentionDistribution, AttentionSource, Model, ModelConfig, ModelParams, Vocab,
};
use crate::multitask::multitask_loss;
use crate::ndgraph::{Grad, Graph, NodeId};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 32,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("train.epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::config(format!(
                "train.validation_fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(
                "train.beta1 and train.beta2 must lie in [0, 1)",
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("train.epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub validation_size: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_macro_f1"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_macro_f1.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// One training example: vocabulary ids, an optional gold class, and an
/// optional normalized gaze vector for the auxiliary term.
#[derive(Clone, Debug)]
pub(crate) struct Example<'s> {
    pub ids: Vec<usize>,
    pub class: Option<usize>,
    pub gaze: Option<&'s [f64]>,
}

struct Adam<'c> {
    cfg: &'c TrainConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl<'c> Adam<'c> {
    fn new(cfg: &'c TrainConfig, params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            cfg,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one step with gradients already averaged over the batch.
    /// Row-sparse gradients update only the rows they touch (lazy moments);
    /// rows marked frozen in the embedding table (tensor 0) never move.
    fn step(
        &mut self,
        params: &mut ModelParams,
        grads: Vec<Option<Grad>>,
        frozen: Option<&[bool]>,
    ) -> Result<()> {
        self.t += 1;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.cfg.learning_rate;
        for (k, (tensor, grad)) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            let cols = tensor.cols();
            let data = tensor.data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut update = |i: usize, gi: f64| -> Result<()> {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                data[i] -= step;
                if !data[i].is_finite() {
                    return Err(Error::Internal(format!(
                        "non-finite parameter after update {}",
                        self.t
                    )));
                }
                Ok(())
            };
            let is_frozen = |row: usize| k == 0 && frozen.is_some_and(|f| !f[row]);
            match grad {
                Grad::Dense(g) => {
                    for (i, gi) in g.into_iter().enumerate() {
                        if !is_frozen(i / cols) {
                            update(i, gi)?;
                        }
                    }
                }
                Grad::Rows { rows, .. } => {
                    for (r, g) in rows {
                        if is_frozen(r) {
                            continue;
                        }
                        for (j, gi) in g.into_iter().enumerate() {
                            update(r * cols + j, gi)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_grad(acc: &mut Option<Grad>, g: Grad, len: usize) {
    match (acc.take(), g) {
        (None, g) => *acc = Some(g),
        (Some(Grad::Rows { cols, mut rows }), Grad::Rows { rows: more, .. }) => {
            for (r, v) in more {
                let e = rows.entry(r).or_insert_with(|| vec![0.0; cols]);
                e.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            *acc = Some(Grad::Rows { cols, rows });
        }
        (Some(a), b) => {
            let mut d = a.to_dense(len);
            d.iter_mut().zip(b.to_dense(len)).for_each(|(x, y)| *x += y);
            *acc = Some(Grad::Dense(d));
        }
    }
}

fn scale_grad(g: &mut Grad, k: f64) {
    match g {
        Grad::Dense(d) => d.iter_mut().for_each(|x| *x *= k),
        Grad::Rows { rows, .. } => rows.values_mut().flatten().for_each(|x| *x *= k),
    }
}

fn example_loss<'p>(
    g: &mut Graph<'p>,
    params: &'p ModelParams,
    config: &ModelConfig,
    ex: &Example<'_>,
    lambda: f64,
) -> Result<NodeId> {
    let nodes = params.register(g);
    let f = forward(g, &nodes, config, &ex.ids)?;
    match (ex.class, ex.gaze.filter(|_| lambda > 0.0)) {
        (Some(c), Some(gaze)) => {
            let alpha = f
                .attention
                .ok_or_else(|| Error::config("gaze supervision requires use_attention"))?;
            multitask_loss(g, f.logits, c, alpha, gaze, lambda)
        }
        (Some(c), None) => g.cross_entropy(f.logits, c),
        (None, Some(gaze)) => {
            let alpha = f
                .attention
                .ok_or_else(|| Error::config("gaze supervision requires use_attention"))?;
            let mse = crate::multitask::gaze_mse(g, alpha, gaze)?;
            Ok(g.scale(mse, lambda))
        }
        (None, None) => Err(Error::Internal(
            "example carries neither a label nor gaze".into(),
        )),
    }
}

/// Loss value and parameter gradients (canonical tensor order) for one example.
fn example_grads(
    params: &ModelParams,
    config: &ModelConfig,
    ex: &Example<'_>,
    lambda: f64,
) -> Result<(f64, Vec<Option<Grad>>)> {
    let mut g = Graph::new();
    let loss = example_loss(&mut g, params, config, ex, lambda)?;
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    // parameters are the first leaves registered, in canonical order
    let n = params.tensors().len();
    let out = (0..n).map(|i| grads.take(NodeId(i))).collect();
    Ok((value, out))
}

struct ValScore {
    macro_f1: f64,
    loss: f64,
}

fn validate(model: &Model, val: &[Example<'_>], num_classes: usize) -> Result<ValScore> {
    let scored: Vec<(usize, usize, f64)> = val
        .par_iter()
        .map(|ex| {
            let class = ex
                .class
                .ok_or_else(|| Error::Internal("unlabeled validation example".into()))?;
            let mut g = Graph::new();
            let nodes = model.params.register(&mut g);
            let f = forward(&mut g, &nodes, &model.config, &ex.ids)?;
            let pred = argmax(g.value(f.logits).data());
            let ce = g.cross_entropy(f.logits, class)?;
            Ok((class, pred, g.value(ce).item()))
        })
        .collect::<Result<_>>()?;
    let truth: Vec<usize> = scored.iter().map(|s| s.0).collect();
    let pred: Vec<usize> = scored.iter().map(|s| s.1).collect();
    let loss = scored.iter().map(|s| s.2).sum::<f64>() / scored.len() as f64;
    Ok(ValScore {
        macro_f1: confusion_report(&truth, &pred, num_classes)?.macro_f1,
        loss,
    })
}

/// Shared training protocol: seeded validation hold-out from the labeled
/// examples, seeded per-epoch shuffles, Adam on batch-mean loss, early stop
/// on validation macro-F1 (ties to lower validation loss). Gaze-only
/// examples are always trained on, never validated.
pub(crate) fn fit_examples(
    mut model: Model,
    labeled: Vec<Example<'_>>,
    gaze_only: Vec<Example<'_>>,
    config: &TrainConfig,
    lambda: f64,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    let num_classes = model.config.num_classes;
    let distinct: std::collections::BTreeSet<usize> =
        labeled.iter().filter_map(|e| e.class).collect();
    if distinct.len() < 2 {
        return Err(Error::config(format!(
            "training set has {} class(es); at least 2 are required",
            distinct.len()
        )));
    }
    if distinct.iter().any(|&c| c >= num_classes) {
        return Err(Error::config(
            "training label outside the model's class range",
        ));
    }
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut rng_for(config.seed, "trainer/validation-split"));
    let n_val = ((labeled.len() as f64 * config.validation_fraction).round() as usize).max(1);
    if n_val >= labeled.len() {
        return Err(Error::config(
            "training set too small to hold out a validation fraction",
        ));
    }
    let mut labeled: Vec<Option<Example<'_>>> = labeled.into_iter().map(Some).collect();
    let val: Vec<Example<'_>> = order[..n_val]
        .iter()
        .map(|&i| labeled[i].take().expect("unique index"))
        .collect();
    let mut train: Vec<Example<'_>> = labeled.into_iter().flatten().collect();
    train.extend(gaze_only);

    let mut adam = Adam::new(config, &model.params);
    let mut shuffle_rng = rng_for(config.seed, "trainer/shuffle");
    let sizes: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        train_size: train.len(),
        validation_size: val.len(),
    };
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, batch) in idx.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, Vec<Option<Grad>>)> = batch
                .par_iter()
                .map(|&i| example_grads(&model.params, &model.config, &train[i], lambda))
                .collect::<Result<_>>()?;
            let mut acc: Vec<Option<Grad>> = vec![None; sizes.len()];
            let mut batch_loss = 0.0;
            for (loss, grads) in results {
                batch_loss += loss;
                for (k, g) in grads.into_iter().enumerate() {
                    if let Some(g) = g {
                        add_grad(&mut acc[k], g, sizes[k]);
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Internal(format!(
                    "non-finite training loss at epoch {epoch}, step {}",
                    step + 1
                )));
            }
            loss_sum += batch_loss;
            let k = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|g| scale_grad(g, k));
            adam.step(&mut model.params, acc, model.trainable_rows.as_deref())?;
        }
        let score = validate(&model, &val, num_classes)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_macro_f1: score.macro_f1,
            val_loss: score.loss,
        });
        let improved = match &best {
            None => true,
            Some((f1, loss, ..)) => {
                score.macro_f1 > *f1 || (score.macro_f1 == *f1 && score.loss < *loss)
            }
        };
        if improved {
            best = Some((score.macro_f1, score.loss, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    model.params = params;
    Ok((model, history))
}

pub(crate) fn labeled_examples<'s>(
    model: &Model,
    sentences: &'s [Sentence],
    mode: BinningMode,
) -> Result<Vec<Example<'s>>> {
    sentences
        .iter()
        .map(|s| {
            let class = mode.class_index(s.label).ok_or_else(|| {
                Error::config(format!(
                    "label {} of {} is not a {mode:?} class",
                    s.label.as_str(),
                    s.sentence_id
                ))
            })?;
            if s.is_empty() {
                return Err(Error::Input(format!(
                    "sentence {} has no tokens",
                    s.sentence_id
                )));
            }
            Ok(Example {
                ids: model.token_ids(s),
                class: Some(class),
                gaze: None,
            })
        })
        .collect()
}

/// Trains an already-initialized model on `sentences`.
pub fn fit(
    model: Model,
    sentences: &[Sentence],
    mode: BinningMode,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    if model.config.num_classes != mode.num_classes() {
        return Err(Error::config(format!(
            "model has {} classes but {mode:?} mode has {}",
            model.config.num_classes,
            mode.num_classes()
        )));
    }
    let examples = labeled_examples(&model, sentences, mode)?;
    fit_examples(model, examples, Vec::new(), config, 0.0)
}

/// Builds the vocabulary from `dataset`, initializes a model, and trains it.
pub fn train(
    dataset: &DatasetSplit,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mode: BinningMode,
) -> Result<(Model, TrainHistory)> {
    if dataset.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let (model, _) = Model::new(
        model_config.clone(),
        Vocab::from_sentences(&dataset.sentences),
    )?;
    fit(model, &dataset.sentences, mode, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro precision/recall/F1 over class indices `0..k`.
pub fn confusion_report(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<EvalReport> {
    if truth.len() != pred.len() {
        return Err(Error::usage(format!(
            "{} labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::usage("cannot evaluate an empty split"));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::usage(format!(
                "class index out of range 0..{num_classes}"
            )));
        }
        confusion[t][p] += 1;
    }
    let labels: Vec<String> = (0..num_classes).map(|c| c.to_string()).collect();
    Ok(report_from_confusion(confusion, labels))
}

fn report_from_confusion(confusion: Vec<Vec<usize>>, labels: Vec<String>) -> EvalReport {
    let k = confusion.len();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassReport {
            label: labels[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let mean = |f: fn(&ClassReport) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    EvalReport {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: ratio(correct, total),
        per_class,
        confusion,
    }
}

/// Evaluates on labeled sentences; classes are named by `mode`.
pub fn evaluate_predictions(
    truth: &[Sentiment],
    pred: &[Sentiment],
    mode: BinningMode,
) -> Result<EvalReport> {
    let idx = |s: &Sentiment| {
        mode.class_index(*s)
            .ok_or_else(|| Error::usage(format!("label {} is not a {mode:?} class", s.as_str())))
    };
    let t: Vec<usize> = truth.iter().map(idx).collect::<Result<_>>()?;
    let p: Vec<usize> = pred.iter().map(idx).collect::<Result<_>>()?;
    let mut r = confusion_report(&t, &p, mode.num_classes())?;
    for (c, cls) in r.per_class.iter_mut().zip(mode.classes()) {
        c.label = cls.as_str().to_string();
    }
    Ok(r)
}

pub fn predict(model: &Model, sentences: &[Sentence]) -> Result<Vec<usize>> {
    sentences
        .par_iter()
        .map(|s| Ok(model.classify(s)?.predicted()))
        .collect()
}

pub fn evaluate_macro(model: &Model, split: &[Sentence], mode: BinningMode) -> Result<EvalReport> {
    let pred: Vec<Sentiment> = predict(model, split)?
        .into_iter()
        .map(|c| mode.label(c))
        .collect();
    let truth: Vec<Sentiment> = split.iter().map(|s| s.label).collect();
    evaluate_predictions(&truth, &pred, mode)
}

/// Attention of one sentence plus the prediction it accompanied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedAttention {
    pub distribution: AttentionDistribution,
    pub predicted: Sentiment,
    pub correct: bool,
}

pub fn extract_attention(
    model: &Model,
    sentences: &[Sentence],
    mode: BinningMode,
) -> Result<Vec<ExtractedAttention>> {
    extract_attention_as(model, sentences, mode, AttentionSource::Ma)
}

pub fn extract_attention_as(
    model: &Model,
    sentences: &[Sentence],
    mode: BinningMode,
    source: AttentionSource,
) -> Result<Vec<ExtractedAttention>> {
    if !model.config.use_attention {
        return Err(Error::usage(
            "attention extraction requires a model trained with use_attention = true",
        ));
    }
    sentences
        .par_iter()
        .map(|s| {
            let c = model.classify(s)?;
            let predicted = mode.label(c.predicted());
            Ok(ExtractedAttention {
                distribution: AttentionDistribution {
                    sentence_id: s.sentence_id.clone(),
                    source,
                    weights: c.attention.expect("attention enabled"),
                },
                predicted,
                correct: predicted == s.label,
            })
        })
        .collect()
}

/// Class counts of a split, in mode order.
pub fn class_distribution(sentences: &[Sentence], mode: BinningMode) -> BTreeMap<Sentiment, usize> {
    let mut m: BTreeMap<Sentiment, usize> = mode.classes().iter().map(|c| (*c, 0)).collect();
    for s in sentences {
        *m.entry(s.label).or_default() += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Vec<Sentence> {
        let pos = [
            "good film",
            "a good story",
            "good acting here",
            "really good",
            "good fun",
        ];
        let neg = [
            "bad film",
            "a bad story",
            "bad acting here",
            "really bad",
            "bad fun",
        ];
        let mut out = Vec::new();
        for (i, t) in pos.iter().enumerate() {
            let w: Vec<&str> = t.split(' ').collect();
            out.push(Sentence::new(format!("p{i}"), &w, Sentiment::Positive));
        }
        for (i, t) in neg.iter().enumerate() {
            let w: Vec<&str> = t.split(' ').collect();
            out.push(Sentence::new(format!("n{i}"), &w, Sentiment::Negative));
        }
        out
    }

    fn small_config(encoder: EncoderKind) -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            hidden_dim: 4,
            encoder,
            num_classes: 2,
            use_attention: true,
            seed: 3,
            ..Default::default()
        }
    }

    fn toy_train_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 4,
            patience: 200,
            validation_fraction: 0.1,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn hand_confusion_example() {
        use Sentiment::*;
        let r = evaluate_predictions(
            &[Positive, Positive, Negative, Negative],
            &[Positive, Negative, Negative, Negative],
            BinningMode::Binary,
        )
        .unwrap();
        assert!((r.macro_precision - 0.8333).abs() < 1e-4);
        assert!((r.macro_recall - 0.75).abs() < 1e-4);
        assert!((r.macro_f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_degenerate_predictors() {
        use Sentiment::*;
        let t = [Positive, Negative, Positive];
        let r = evaluate_predictions(&t, &t, BinningMode::Binary).unwrap();
        assert_eq!(
            (r.macro_precision, r.macro_recall, r.macro_f1),
            (1.0, 1.0, 1.0)
        );
        let r = evaluate_predictions(&t, &[Positive; 3], BinningMode::Binary).unwrap();
        let pos = r.per_class.iter().find(|c| c.label == "positive").unwrap();
        let neg = r.per_class.iter().find(|c| c.label == "negative").unwrap();
        assert_eq!(pos.recall, 1.0);
        assert_eq!(neg.f1, 0.0);
        assert!(evaluate_predictions(&[], &[], BinningMode::Binary).is_err());
    }

    /// Independent oracle: counts straight from pairs, no matrix.
    fn brute(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64) {
        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t == c && **p == c)
                .count() as f64;
            let fp = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t != c && **p == c)
                .count() as f64;
            let fneg = truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| **t == c && **p != c)
                .count() as f64;
            let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let r = if tp + fneg == 0.0 {
                0.0
            } else {
                tp / (tp + fneg)
            };
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            sp += p;
            sr += r;
            sf += f;
        }
        (sp / k as f64, sr / k as f64, sf / k as f64)
    }

    #[test]
    fn confusion_matches_bruteforce_on_1000_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let k = rng.random_range(2..=3);
            let n = rng.random_range(1..40);
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let r = confusion_report(&t, &p, k).unwrap();
            let (bp, br, bf) = brute(&t, &p, k);
            assert_eq!(r.macro_precision, bp);
            assert_eq!(r.macro_recall, br);
            assert_eq!(r.macro_f1, bf);
            for (c, row) in r.confusion.iter().enumerate() {
                assert_eq!(
                    row.iter().sum::<usize>(),
                    t.iter().filter(|x| **x == c).count()
                );
            }
        }
    }

    proptest! {
        #[test]
        fn rates_are_bounded(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = confusion_report(&t, &p, 3).unwrap();
            for c in &r.per_class {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = toy();
        let split = DatasetSplit::new(crate::corpus::SplitName::Train, data.clone());
        let (model, hist) = train(
            &split,
            &small_config(EncoderKind::None),
            &toy_train_config(),
            BinningMode::Binary,
        )
        .unwrap();
        assert!(hist.epochs.iter().all(|e| e.train_loss.is_finite()));
        let r = evaluate_macro(&model, &data, BinningMode::Binary).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let split = DatasetSplit::new(crate::corpus::SplitName::Train, toy());
        let mut cfg = toy_train_config();
        cfg.epochs = 5;
        for enc in [EncoderKind::None, EncoderKind::BiLstm] {
            let (a, ha) = train(&split, &small_config(enc), &cfg, BinningMode::Binary).unwrap();
            let (b, hb) = train(&split, &small_config(enc), &cfg, BinningMode::Binary).unwrap();
            assert_eq!(a.params, b.params);
            assert_eq!(ha, hb);
            let ea = extract_attention(&a, &split.sentences, BinningMode::Binary).unwrap();
            let eb = extract_attention(&b, &split.sentences, BinningMode::Binary).unwrap();
            assert_eq!(ea, eb);
        }
    }

    #[test]
    fn single_class_training_set_rejected() {
        let data: Vec<Sentence> = toy()
            .into_iter()
            .filter(|s| s.label == Sentiment::Positive)
            .collect();
        let split = DatasetSplit::new(crate::corpus::SplitName::Train, data);
        let r = train(
            &split,
            &small_config(EncoderKind::None),
            &toy_train_config(),
            BinningMode::Binary,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_train_config_rejected() {
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                validation_fraction: 0.5,
                ..Default::default()
            },
            TrainConfig {
                validation_fraction: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn extraction_contracts() {
        let data = toy();
        let (model, _) = Model::new(
            small_config(EncoderKind::Lstm),
            Vocab::from_sentences(&data),
        )
        .unwrap();
        let mut with_single = data.clone();
        with_single.push(Sentence::new("one", &["good"], Sentiment::Positive));
        let a = extract_attention(&model, &with_single, BinningMode::Binary).unwrap();
        assert_eq!(a.len(), with_single.len());
        for (e, s) in a.iter().zip(&with_single) {
            assert_eq!(e.distribution.weights.len(), s.len());
            assert!((e.distribution.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(e.distribution.source, AttentionSource::Ma);
            assert_eq!(e.correct, e.predicted == s.label);
        }
        assert_eq!(a.last().unwrap().distribution.weights, vec![1.0]);
        assert_eq!(
            a,
            extract_attention(&model, &with_single, BinningMode::Binary).unwrap()
        );

        let mut cfg = small_config(EncoderKind::None);
        cfg.use_attention = false;
        let (m, _) = Model::new(cfg, Vocab::from_sentences(&data)).unwrap();
        assert!(matches!(
            extract_attention(&m, &data, BinningMode::Binary),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn frozen_rows_do_not_move() {
        let data = toy();
        let (mut model, _) = Model::new(
            small_config(EncoderKind::None),
            Vocab::from_sentences(&data),
        )
        .unwrap();
        let frozen_id = model.vocab.id("good");
        let mut mask = vec![true; model.vocab.len()];
        mask[frozen_id] = false;
        model.trainable_rows = Some(mask);
        let before = model.params.embedding.row(frozen_id).to_vec();
        let other = model.vocab.id("bad");
        let other_before = model.params.embedding.row(other).to_vec();
        let mut cfg = toy_train_config();
        cfg.epochs = 3;
        let (trained, _) = fit(model, &data, BinningMode::Binary, &cfg).unwrap();
        assert_eq!(trained.params.embedding.row(frozen_id), &before[..]);
        assert_ne!(trained.params.embedding.row(other), &other_before[..]);
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_macro_f1: 0.25,
                val_loss: 0.7,
            }],
            best_epoch: 1,
            stopped_early: false,
            train_size: 9,
            validation_size: 1,
        };
        assert_eq!(
            h.to_csv().unwrap(),
            "epoch,train_loss,val_macro_f1\n1,0.5,0.25\n"
        );
    }
}
