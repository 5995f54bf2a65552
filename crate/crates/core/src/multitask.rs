//! Gaze-supervised multi-task training: sentiment classification plus an
//! auxiliary term pulling the attention distribution toward normalized gaze.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{BinningMode, GazeMeasure, Sentence};
use crate::error::{Error, Result};
use crate::metrics::{corpus_average, jsd, scc, MetricKind, MetricRow};
use crate::model::{AttentionDistribution, AttentionSource, Model};
use crate::ndgraph::{Graph, NodeId, Tensor};
use crate::trainer::{
    evaluate_macro, extract_attention_as, fit_examples, labeled_examples, EvalReport, Example,
    ExtractedAttention, TrainConfig, TrainHistory,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultitaskConfig {
    pub measure: GazeMeasure,
    /// Weight of the gaze term; 0 reduces exactly to single-task training.
    pub lambda: f64,
    /// Let evaluation sentences supply gaze supervision (their labels are
    /// never used for training).
    pub include_eval_gaze: bool,
}

impl Default for MultitaskConfig {
    fn default() -> Self {
        Self {
            measure: GazeMeasure::NFix,
            lambda: 1.0,
            include_eval_gaze: false,
        }
    }
}

impl MultitaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "multitask.lambda must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Token-mean squared error between `α` and a gaze vector.
pub fn gaze_mse(g: &mut Graph<'_>, alpha: NodeId, gaze: &[f64]) -> Result<NodeId> {
    let n = g.value(alpha).len();
    if n != gaze.len() {
        return Err(Error::usage(format!(
            "attention has {n} tokens but gaze has {}",
            gaze.len()
        )));
    }
    let target = g.constant(Tensor::vector(gaze.to_vec()));
    let diff = g.sub(alpha, target)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// `CE(logits, label) + λ · MSE(α, gaze)`; at `λ = 0` the gaze term is not
/// built at all, so the result is the cross-entropy node itself.
pub fn multitask_loss(
    g: &mut Graph<'_>,
    logits: NodeId,
    label: usize,
    alpha: NodeId,
    gaze: &[f64],
    lambda: f64,
) -> Result<NodeId> {
    if g.value(alpha).len() != gaze.len() {
        return Err(Error::usage(format!(
            "attention has {} tokens but gaze has {}",
            g.value(alpha).len(),
            gaze.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::usage("lambda must be non-negative"));
    }
    let ce = g.cross_entropy(logits, label)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let mse = gaze_mse(g, alpha, gaze)?;
    let weighted = g.scale(mse, lambda);
    g.add(ce, weighted)
}

/// The chosen measure of a sentence, when present and not degenerate.
pub fn usable_gaze(sentence: &Sentence, measure: GazeMeasure) -> Option<&[f64]> {
    let profile = sentence.gaze.as_ref()?;
    if profile.is_degenerate(measure) {
        return None;
    }
    let v = profile.get(measure);
    (v.len() == sentence.len()).then_some(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultitaskOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub report: EvalReport,
    /// Fine-tuned attention (source `MA_ft`) on the evaluation sentences.
    pub attention: Vec<ExtractedAttention>,
    /// Sentences whose gaze entered the loss.
    pub gaze_supervised: Vec<String>,
}

/// Trains `model` from its initial parameters with the multi-task loss under
/// the single-task protocol, then evaluates and extracts `MA_ft` on `eval`.
pub fn train_multitask(
    model: Model,
    train: &[Sentence],
    eval: &[Sentence],
    mode: BinningMode,
    train_config: &TrainConfig,
    config: &MultitaskConfig,
) -> Result<MultitaskOutcome> {
    config.validate()?;
    if !model.config.use_attention {
        return Err(Error::config(
            "multi-task training requires use_attention = true",
        ));
    }
    if model.config.num_classes != mode.num_classes() {
        return Err(Error::config(
            "model class count does not match the binning mode",
        ));
    }
    let lambda = config.lambda;
    let mut labeled = labeled_examples(&model, train, mode)?;
    let mut supervised = Vec::new();
    if lambda > 0.0 {
        for (ex, s) in labeled.iter_mut().zip(train) {
            ex.gaze = usable_gaze(s, config.measure);
            if ex.gaze.is_some() {
                supervised.push(s.sentence_id.clone());
            }
        }
    }
    let mut gaze_only = Vec::new();
    if lambda > 0.0 && config.include_eval_gaze {
        for s in eval {
            if let Some(g) = usable_gaze(s, config.measure) {
                gaze_only.push(Example {
                    ids: model.token_ids(s),
                    class: None,
                    gaze: Some(g),
                });
                supervised.push(s.sentence_id.clone());
            }
        }
    }
    if lambda > 0.0 && supervised.is_empty() {
        return Err(Error::config(format!(
            "lambda = {lambda} but no sentence carries usable {} gaze{}",
            config.measure.as_str(),
            if config.include_eval_gaze {
                ""
            } else {
                " (evaluation gaze is excluded unless include_eval_gaze is set)"
            }
        )));
    }
    log::info!(
        "multi-task training: {} gaze-supervised sentences, lambda = {lambda}",
        supervised.len()
    );
    let (model, history) = fit_examples(model, labeled, gaze_only, train_config, lambda)?;
    let report = evaluate_macro(&model, eval, mode)?;
    let attention = extract_attention_as(&model, eval, mode, AttentionSource::MaFt)?;
    Ok(MultitaskOutcome {
        model,
        history,
        report,
        attention,
        gaze_supervised: supervised,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub measure: GazeMeasure,
    pub metric: MetricKind,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Per-sentence SCC and JSD rows of one attention source against one measure.
pub fn gaze_rows(
    attention: &[AttentionDistribution],
    sentences: &HashMap<&str, &Sentence>,
    measure: GazeMeasure,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(attention.len() * 2);
    for a in attention {
        let s = sentences.get(a.sentence_id.as_str()).ok_or_else(|| {
            Error::usage(format!(
                "no sentence {} for attention source {}",
                a.sentence_id, a.source
            ))
        })?;
        let profile = s.gaze.as_ref().ok_or_else(|| {
            Error::usage(format!("sentence {} has no gaze profile", a.sentence_id))
        })?;
        let g = profile.get(measure);
        let target = AttentionSource::Gaze(measure);
        rows.push(MetricRow::new(
            &a.sentence_id,
            a.source,
            Some(target),
            MetricKind::Scc,
            scc(&a.weights, g)?,
        ));
        rows.push(MetricRow::new(
            &a.sentence_id,
            a.source,
            Some(target),
            MetricKind::Jsd,
            jsd(&a.weights, g)?,
        ));
    }
    Ok(rows)
}

/// Corpus-averaged SCC and JSD of MA and MA_ft against every gaze measure,
/// with `delta = after − before`.
pub fn before_after_comparison(
    ma: &[AttentionDistribution],
    ma_ft: &[AttentionDistribution],
    sentences: &[Sentence],
) -> Result<Vec<DeltaRow>> {
    let ids = |v: &[AttentionDistribution]| {
        let mut ids: Vec<String> = v.iter().map(|a| a.sentence_id.clone()).collect();
        ids.sort_unstable();
        ids
    };
    if ids(ma) != ids(ma_ft) {
        return Err(Error::usage("MA and MA_ft cover different sentence sets"));
    }
    let by_id: HashMap<&str, &Sentence> = sentences
        .iter()
        .map(|s| (s.sentence_id.as_str(), s))
        .collect();
    let mut out = Vec::with_capacity(8);
    for measure in GazeMeasure::ALL {
        let before_rows = gaze_rows(ma, &by_id, measure)?;
        let after_rows = gaze_rows(ma_ft, &by_id, measure)?;
        for metric in [MetricKind::Scc, MetricKind::Jsd] {
            let before = corpus_average(&before_rows, metric)?.mean;
            let after = corpus_average(&after_rows, metric)?.mean;
            out.push(DeltaRow {
                measure,
                metric,
                before,
                after,
                delta: after - before,
            });
        }
    }
    Ok(out)
}

pub fn write_delta_csv<W: std::io::Write>(rows: &[DeltaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["measure", "metric", "before", "after", "delta"])?;
    for r in rows {
        w.write_record([
            r.measure.as_str().to_string(),
            r.metric.to_string(),
            r.before.to_string(),
            r.after.to_string(),
            r.delta.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GazeProfile, Sentiment};
    use crate::model::{forward, EncoderKind, ModelConfig, Vocab};
    use crate::ndgraph::finite_diff_check;
    use crate::trainer::fit;

    fn loss_value(alpha: &[f64], gaze: &[f64], lambda: f64) -> (f64, f64) {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::vector(vec![0.3, -0.2]));
        let a = g.constant(Tensor::vector(alpha.to_vec()));
        let ce = g.cross_entropy(logits, 1).unwrap();
        let l = multitask_loss(&mut g, logits, 1, a, gaze, lambda).unwrap();
        (g.value(l).item(), g.value(ce).item())
    }

    #[test]
    fn loss_examples() {
        let (l, ce) = loss_value(&[0.5, 0.5], &[0.25, 0.75], 1.0);
        assert!((l - ce - 0.0625).abs() < 1e-15);
        let (l, ce) = loss_value(&[0.5, 0.5], &[0.25, 0.75], 0.0);
        assert_eq!(l, ce);
        let (l, ce) = loss_value(&[0.2, 0.8], &[0.2, 0.8], 3.0);
        assert_eq!(l, ce);
        let mut g = Graph::new();
        let logits = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let a = g.constant(Tensor::vector(vec![0.5, 0.5]));
        assert!(matches!(
            multitask_loss(&mut g, logits, 0, a, &[1.0], 1.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let vocab = Vocab::new(["a", "b", "c", "d"].map(String::from));
        for enc in [EncoderKind::None, EncoderKind::Lstm, EncoderKind::BiLstm] {
            let cfg = ModelConfig {
                embedding_dim: 4,
                hidden_dim: 3,
                encoder: enc,
                num_classes: 3,
                seed: 1,
                ..Default::default()
            };
            let (m, _) = Model::new(cfg.clone(), vocab.clone()).unwrap();
            for lambda in [0.0, 0.5, 1.0] {
                let mut tensors: Vec<Tensor> = m.params.tensors().into_iter().cloned().collect();
                tensors
                    .iter_mut()
                    .for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= 10.0));
                let err = finite_diff_check(&mut tensors, 1e-4, |g, ids| {
                    let nodes = m.params.nodes_from_ids(ids);
                    let f = forward(g, &nodes, &cfg, &[1, 2, 3, 4])?;
                    multitask_loss(
                        g,
                        f.logits,
                        0,
                        f.attention.unwrap(),
                        &[0.1, 0.6, 0.0, 0.3],
                        lambda,
                    )
                })
                .unwrap();
                assert!(err < 1e-4, "{enc:?} λ={lambda}: {err}");
            }
        }
    }

    fn gaze_sentence(id: &str, words: &[&str], label: Sentiment, hot: usize) -> Sentence {
        let mut s = Sentence::new(id, words, label);
        let mut v = vec![0.0; words.len()];
        v[hot] = 1.0;
        s.gaze = Some(GazeProfile {
            sentence_id: id.into(),
            n_fix: v.clone(),
            ffd: v.clone(),
            trt: v.clone(),
            rrt: v,
            degenerate: vec![],
        });
        s
    }

    fn fixture() -> Vec<Sentence> {
        let mut out = Vec::new();
        for i in 0..12 {
            let (w, l) = if i % 2 == 0 {
                ("great", Sentiment::Positive)
            } else {
                ("awful", Sentiment::Negative)
            };
            out.push(gaze_sentence(
                &format!("s{i}"),
                &["the", "movie", w, "was"],
                l,
                2,
            ));
        }
        out
    }

    fn cfgs() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                embedding_dim: 6,
                num_classes: 2,
                seed: 4,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.02,
                epochs: 8,
                batch_size: 4,
                validation_fraction: 0.2,
                seed: 9,
                ..Default::default()
            },
        )
    }

    #[test]
    fn lambda_zero_reproduces_single_task_bitwise() {
        let data = fixture();
        let (mc, tc) = cfgs();
        let (m, _) = Model::new(mc, Vocab::from_sentences(&data)).unwrap();
        let (single, h1) = fit(m.clone(), &data, BinningMode::Binary, &tc).unwrap();
        let mt = MultitaskConfig {
            lambda: 0.0,
            include_eval_gaze: true,
            ..Default::default()
        };
        let out = train_multitask(m, &data, &data, BinningMode::Binary, &tc, &mt).unwrap();
        assert_eq!(out.model.params, single.params);
        assert_eq!(out.history, h1);
        assert!(out.gaze_supervised.is_empty());
    }

    #[test]
    fn no_gaze_at_positive_lambda_is_config_error() {
        let data: Vec<Sentence> = fixture()
            .into_iter()
            .map(|mut s| {
                s.gaze = None;
                s
            })
            .collect();
        let (mc, tc) = cfgs();
        let (m, _) = Model::new(mc, Vocab::from_sentences(&data)).unwrap();
        let r = train_multitask(
            m,
            &data,
            &data,
            BinningMode::Binary,
            &tc,
            &MultitaskConfig::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn eval_gaze_only_used_when_enabled() {
        let eval = fixture();
        let train: Vec<Sentence> = eval
            .iter()
            .cloned()
            .map(|mut s| {
                s.gaze = None;
                s
            })
            .collect();
        let (mc, tc) = cfgs();
        let (m, _) = Model::new(mc, Vocab::from_sentences(&train)).unwrap();
        let off = train_multitask(
            m.clone(),
            &train,
            &eval,
            BinningMode::Binary,
            &tc,
            &MultitaskConfig::default(),
        );
        assert!(matches!(off, Err(Error::Config(_))));
        let on = MultitaskConfig {
            include_eval_gaze: true,
            ..Default::default()
        };
        let out = train_multitask(m, &train, &eval, BinningMode::Binary, &tc, &on).unwrap();
        assert_eq!(out.gaze_supervised.len(), eval.len());
        assert!(out
            .attention
            .iter()
            .all(|a| a.distribution.source == AttentionSource::MaFt));
    }

    fn dist(id: &str, source: AttentionSource, w: &[f64]) -> AttentionDistribution {
        AttentionDistribution {
            sentence_id: id.into(),
            source,
            weights: w.to_vec(),
        }
    }

    #[test]
    fn before_after_contracts() {
        let mut s1 = gaze_sentence("a", &["x", "y", "z"], Sentiment::Positive, 1);
        s1.gaze.as_mut().unwrap().n_fix = vec![0.2, 0.5, 0.3];
        let s2 = gaze_sentence("b", &["x", "y"], Sentiment::Negative, 0);
        let sentences = vec![s1, s2];
        let ma = vec![
            dist("a", AttentionSource::Ma, &[0.3, 0.3, 0.4]),
            dist("b", AttentionSource::Ma, &[0.4, 0.6]),
        ];
        let same: Vec<AttentionDistribution> = ma
            .iter()
            .map(|d| dist(&d.sentence_id, AttentionSource::MaFt, &d.weights))
            .collect();
        let rows = before_after_comparison(&ma, &same, &sentences).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.delta == 0.0));

        let perfect: Vec<AttentionDistribution> = sentences
            .iter()
            .map(|s| {
                dist(
                    &s.sentence_id,
                    AttentionSource::MaFt,
                    s.gaze(GazeMeasure::NFix).unwrap(),
                )
            })
            .collect();
        let rows = before_after_comparison(&ma, &perfect, &sentences).unwrap();
        let nfix: Vec<&DeltaRow> = rows
            .iter()
            .filter(|r| r.measure == GazeMeasure::NFix)
            .collect();
        assert!(
            (nfix
                .iter()
                .find(|r| r.metric == MetricKind::Scc)
                .unwrap()
                .after
                - 1.0)
                .abs()
                < 1e-12
        );
        assert_eq!(
            nfix.iter()
                .find(|r| r.metric == MetricKind::Jsd)
                .unwrap()
                .after,
            0.0
        );

        assert!(matches!(
            before_after_comparison(&ma, &perfect[..1], &sentences),
            Err(Error::Usage(_))
        ));

        let mut out = Vec::new();
        write_delta_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("measure,metric,before,after,delta\nnFix,SCC,"));
        assert_eq!(text.lines().count(), 9);
    }
}
