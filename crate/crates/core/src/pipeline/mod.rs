//! End-to-end experiment pipeline: ingest → train → extract → compare →
//! analyze → fine-tune, with every output written under one directory and a
//! run manifest recorded even when a stage fails.

pub mod compare;
pub mod config;
pub mod heatmap;
pub mod ingest;
pub mod manifest;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{GazeMeasure, Sentence};
use crate::error::{Error, Result};
use crate::metrics::{random_attention, MetricKind};
use crate::model::{
    AttentionDistribution, AttentionSource, EmbeddingSource, Model, OovReport, Vocab,
};
use crate::multitask::{before_after_comparison, train_multitask, write_delta_csv, DeltaRow};
use crate::stats::{
    attention_shape_study, write_anova_csv, write_means_csv, DistStats, ShapeStudy, StatKind,
};
use crate::trainer::{
    evaluate_macro, extract_attention, fit, EvalReport, ExtractedAttention, TrainHistory,
};

pub use compare::Windows;
pub use config::{Cell, ExperimentConfig};
pub use ingest::{Dataset, IngestInputs, Ingested};
pub use manifest::{OutputDir, RunManifest, RunStatus, Stage};

/// Pipeline entry points exposed as CLI subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Experiment,
    Extract,
    Compare,
    Anova,
    Multitask,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Experiment => "experiment",
            Command::Extract => "extract",
            Command::Compare => "compare",
            Command::Anova => "anova",
            Command::Multitask => "multitask",
        }
    }

    /// Stages run by the command, in order.
    pub fn stages(self, config: &ExperimentConfig) -> Result<Vec<Stage>> {
        use Stage::*;
        Ok(match self {
            Command::Ingest => vec![Ingest],
            Command::Extract => vec![Ingest, Train, Extract],
            Command::Compare => vec![Ingest, Train, Extract, Compare],
            Command::Anova => vec![Ingest, Train, Extract, Anova],
            Command::Multitask => {
                if config.multitask.is_none() {
                    return Err(Error::config(
                        "multitask: section is missing from the configuration",
                    ));
                }
                vec![Ingest, Multitask]
            }
            Command::Experiment => {
                let mut v = vec![Ingest, Train, Extract, Compare, Anova];
                if config.multitask.is_some() {
                    v.push(Multitask);
                }
                v
            }
        })
    }

    pub fn manifest_file(self) -> String {
        format!("manifest-{}.json", self.name())
    }
}

/// A trained grid cell.
#[derive(Clone, Debug)]
pub struct TrainedCell {
    pub cell: Cell,
    pub model: Model,
    pub history: TrainHistory,
    pub report: EvalReport,
    pub oov: Option<OovReport>,
}

/// In-memory results shared between stages of one run.
#[derive(Debug, Default)]
pub struct RunState {
    pub ingested: Option<Ingested>,
    pub trained: Vec<TrainedCell>,
    /// Machine attention per attention-enabled cell, in grid order.
    pub extracted: Vec<(Cell, Vec<ExtractedAttention>)>,
    /// Random baseline on the test sentences.
    pub random: Vec<AttentionDistribution>,
}

impl RunState {
    fn ingested(&self) -> Result<&Ingested> {
        self.ingested
            .as_ref()
            .ok_or_else(|| Error::Internal("ingest stage has not run".into()))
    }
}

/// Runs `command` and writes its manifest (also on failure). Returns the
/// manifest together with the in-memory state when every stage succeeds.
pub fn run(
    config: &ExperimentConfig,
    command: Command,
    out_dir: &Path,
) -> Result<(RunManifest, RunState)> {
    let mut out = OutputDir::create(out_dir)?;
    let stages = command.stages(config)?;
    let mut manifest = RunManifest::new(command.name(), config, &stages);
    let manifest_file = command.manifest_file();

    let result = run_stages(config, &stages, &mut out, &mut manifest);
    manifest.outputs = out.written().to_vec();
    match &result {
        Ok(_) => manifest.status = RunStatus::Succeeded,
        Err((stage, e)) => {
            manifest.status = RunStatus::Failed;
            manifest.failed_stage = Some(*stage);
            manifest.error = Some(e.to_string());
        }
    }
    out.write_untracked(&manifest_file, to_json(&manifest)?)?;
    match result {
        Ok(state) => Ok((manifest, state)),
        Err((_, e)) => Err(e),
    }
}

fn run_stages(
    config: &ExperimentConfig,
    stages: &[Stage],
    out: &mut OutputDir,
    manifest: &mut RunManifest,
) -> std::result::Result<RunState, (Stage, Error)> {
    let first = stages.first().copied().unwrap_or(Stage::Ingest);
    for path in config.input_files() {
        let digest = manifest::sha256_file(&path).map_err(|e| (first, e))?;
        manifest.inputs.push(digest);
    }
    let mut state = RunState::default();
    for &stage in stages {
        let start = Instant::now();
        log::info!("stage {stage}: start");
        let r = match stage {
            Stage::Ingest => stage_ingest(config, out, manifest, &mut state),
            Stage::Train => stage_train(config, out, &mut state),
            Stage::Extract => stage_extract(config, out, &mut state),
            Stage::Compare => stage_compare(config, out, &state),
            Stage::Anova => stage_anova(config, out, manifest, &state),
            Stage::Multitask => stage_multitask(config, out, manifest, &mut state),
        };
        let seconds = start.elapsed().as_secs_f64();
        manifest
            .timings
            .push(manifest::StageTiming { stage, seconds });
        if let Err(e) = r {
            log::error!("stage {stage} failed: {e}");
            return Err((stage, e));
        }
        log::info!("stage {stage}: done in {seconds:.2}s");
    }
    Ok(state)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn ingest_inputs(config: &ExperimentConfig) -> IngestInputs {
    IngestInputs {
        gaze: config.data.gaze.clone(),
        labels: config.data.labels.clone(),
        treebank: config.data.treebank.clone(),
        sentiment: config
            .data
            .positive_words
            .clone()
            .zip(config.data.negative_words.clone()),
        pos_lexicon: config.data.pos_lexicon.clone(),
    }
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    mode: crate::corpus::BinningMode,
    train_sentences: usize,
    test_sentences: usize,
    train_classes: Option<&'a std::collections::BTreeMap<crate::corpus::Sentiment, usize>>,
    test_classes: &'a std::collections::BTreeMap<crate::corpus::Sentiment, usize>,
    report: &'a crate::corpus::IngestReport,
    lexicon_conflicts: &'a [String],
}

fn stage_ingest(
    config: &ExperimentConfig,
    out: &mut OutputDir,
    manifest: &mut RunManifest,
    state: &mut RunState,
) -> Result<()> {
    let ingested = ingest::ingest(&ingest_inputs(config), config.mode)?;
    let ds = &ingested.dataset;
    out.write("dataset.json", to_json(ds)?)?;
    out.write(
        "ingest_report.json",
        to_json(&IngestSummary {
            mode: ds.mode,
            train_sentences: ds.train.as_ref().map_or(0, |t| t.len()),
            test_sentences: ds.test.len(),
            train_classes: ds.train.as_ref().map(|t| &t.class_counts),
            test_classes: &ds.test.class_counts,
            report: &ingested.report,
            lexicon_conflicts: &ingested.lexicon_conflicts,
        })?,
    )?;
    out.write_with("gaze_profiles.csv", |b| {
        ingest::write_profiles_csv(ingested.test(), b)
    })?;
    let r = &ingested.report;
    if !r.dropped.is_empty() {
        manifest.notes.push(format!(
            "ingest: {} sentence(s) dropped, see ingest_report.json",
            r.dropped.len()
        ));
    }
    if !r.degenerate.is_empty() {
        manifest.notes.push(format!(
            "ingest: {} degenerate (sentence, measure) profile(s)",
            r.degenerate.len()
        ));
    }
    state.ingested = Some(ingested);
    Ok(())
}

/// Trains one grid cell from its derived seeds and evaluates it on the test
/// split.
pub fn train_cell(config: &ExperimentConfig, cell: &Cell, data: &Ingested) -> Result<TrainedCell> {
    let train = data.train()?;
    let test = data.test();
    let model_config = config.model_config(cell)?;
    let vocab = match model_config.embedding {
        EmbeddingSource::Random => Vocab::from_sentences(train),
        EmbeddingSource::Pretrained(_) => Vocab::from_sentences(train.iter().chain(test)),
    };
    let (model, oov) = Model::new(model_config, vocab)?;
    let (model, history) = fit(model, train, config.mode, &config.train_config(cell))?;
    let report = evaluate_macro(&model, test, config.mode)?;
    log::info!(
        "cell {}: macro-F1 {:.4}, best epoch {}",
        cell.id(),
        report.macro_f1,
        history.best_epoch
    );
    Ok(TrainedCell {
        cell: cell.clone(),
        model,
        history,
        report,
        oov,
    })
}

pub const EVAL_HEADER: [&str; 10] = [
    "embedding",
    "encoder",
    "attention",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "accuracy",
    "best_epoch",
    "epochs_run",
    "stopped_early",
];

fn stage_train(config: &ExperimentConfig, out: &mut OutputDir, state: &mut RunState) -> Result<()> {
    let data = state.ingested()?;
    data.train()?;
    let cells = config.cells();
    // Cells train in parallel; collecting keeps grid order for the merge.
    let trained: Vec<TrainedCell> = cells
        .par_iter()
        .map(|c| train_cell(config, c, data))
        .collect::<Result<_>>()?;

    out.write_with("eval.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(EVAL_HEADER)?;
        for t in &trained {
            w.write_record([
                t.cell.embedding.clone(),
                t.cell.encoder.as_str().to_string(),
                t.cell.attention.to_string(),
                t.report.macro_precision.to_string(),
                t.report.macro_recall.to_string(),
                t.report.macro_f1.to_string(),
                t.report.accuracy.to_string(),
                t.history.best_epoch.to_string(),
                t.history.epochs.len().to_string(),
                t.history.stopped_early.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    })?;
    for t in &trained {
        let id = t.cell.id();
        out.write(&format!("cells/{id}/history.csv"), t.history.to_csv()?)?;
        out.write(&format!("cells/{id}/eval.json"), t.report.to_json()? + "\n")?;
        if let Some(oov) = &t.oov {
            out.write(&format!("cells/{id}/oov.json"), to_json(oov)?)?;
        }
        if config.output.save_models {
            out.write(&format!("cells/{id}/model.json"), t.model.to_json()?)?;
        }
    }
    state.trained = trained;
    Ok(())
}

pub const ATTENTION_HEADER: [&str; 8] = [
    "cell",
    "sentence_id",
    "source",
    "token_index",
    "token",
    "weight",
    "predicted",
    "correct",
];

/// Attention rows of one grid cell: each distribution with its predicted
/// label and correctness (absent for the random baseline).
pub type AttentionBlock = (String, Vec<(AttentionDistribution, Option<(String, bool)>)>);

/// Writes attention rows; `cell` is empty and prediction columns are blank
/// for distributions without a model (the random baseline).
pub fn write_attention_csv<W: std::io::Write>(
    blocks: &[AttentionBlock],
    sentences: &[Sentence],
    out: W,
) -> Result<()> {
    let by_id: HashMap<&str, &Sentence> = sentences
        .iter()
        .map(|s| (s.sentence_id.as_str(), s))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ATTENTION_HEADER)?;
    for (cell, dists) in blocks {
        for (d, pred) in dists {
            let s = by_id.get(d.sentence_id.as_str()).ok_or_else(|| {
                Error::Internal(format!("attention for unknown sentence {}", d.sentence_id))
            })?;
            for (i, (wt, tok)) in d.weights.iter().zip(&s.tokens).enumerate() {
                let (p, c) = pred
                    .as_ref()
                    .map(|(p, c)| (p.clone(), c.to_string()))
                    .unwrap_or_default();
                w.write_record([
                    cell.clone(),
                    d.sentence_id.clone(),
                    d.source.to_string(),
                    i.to_string(),
                    tok.surface.clone(),
                    wt.to_string(),
                    p,
                    c,
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

fn extracted_block(cell: &str, ex: &[ExtractedAttention]) -> AttentionBlock {
    (
        cell.to_string(),
        ex.iter()
            .map(|e| {
                (
                    e.distribution.clone(),
                    Some((e.predicted.as_str().to_string(), e.correct)),
                )
            })
            .collect(),
    )
}

/// Random-baseline distributions for every sentence.
pub fn random_baseline(sentences: &[Sentence], seed: u64) -> Result<Vec<AttentionDistribution>> {
    sentences
        .iter()
        .map(|s| random_attention(&s.sentence_id, s.len(), seed))
        .collect()
}

fn stage_extract(
    config: &ExperimentConfig,
    out: &mut OutputDir,
    state: &mut RunState,
) -> Result<()> {
    let data = state.ingested()?;
    let test = data.test();
    let mut extracted = Vec::new();
    for t in state.trained.iter().filter(|t| t.cell.attention) {
        extracted.push((
            t.cell.clone(),
            extract_attention(&t.model, test, config.mode)?,
        ));
    }
    if extracted.is_empty() {
        return Err(Error::config(
            "grid.attention: no attention-enabled cells to extract attention from",
        ));
    }
    let random = random_baseline(test, config.random_attention_seed())?;
    let blocks: Vec<_> = extracted
        .iter()
        .map(|(c, ex)| extracted_block(&c.id(), ex))
        .collect();
    out.write_with("attention.csv", |b| write_attention_csv(&blocks, test, b))?;
    let ran_block = vec![(
        String::new(),
        random.iter().map(|d| (d.clone(), None)).collect(),
    )];
    out.write_with("random_attention.csv", |b| {
        write_attention_csv(&ran_block, test, b)
    })?;
    state.extracted = extracted;
    state.random = random;
    Ok(())
}

fn windows(config: &ExperimentConfig) -> Windows {
    Windows {
        waor: config.analysis.waor_windows.clone(),
        posar: config.analysis.posar_windows.clone(),
    }
}

fn primary_attention<'s>(
    config: &ExperimentConfig,
    state: &'s RunState,
) -> Result<(&'s Cell, &'s [ExtractedAttention])> {
    let primary = config
        .primary_cell()
        .ok_or_else(|| Error::config("grid.attention: no attention-enabled cells"))?;
    state
        .extracted
        .iter()
        .find(|(c, _)| *c == primary)
        .map(|(c, ex)| (c, ex.as_slice()))
        .ok_or_else(|| Error::Internal(format!("primary cell {} was not extracted", primary.id())))
}

fn distributions(ex: &[ExtractedAttention]) -> Vec<AttentionDistribution> {
    ex.iter().map(|e| e.distribution.clone()).collect()
}

fn stage_compare(config: &ExperimentConfig, out: &mut OutputDir, state: &RunState) -> Result<()> {
    let test = state.ingested()?.test();
    let win = windows(config);
    let mut summaries = Vec::new();
    for (cell, ex) in &state.extracted {
        let rows = compare::comparison_rows(test, &distributions(ex), &state.random, &win)?;
        out.write_with(&format!("comparison/{}.csv", cell.id()), |b| {
            crate::metrics::write_rows_csv(&rows, b)
        })?;
        summaries.push((cell.id(), compare::summarize(&rows)?));
    }
    out.write_with("comparison_summary.csv", |b| {
        compare::write_summary_csv(&summaries, b)
    })?;
    out.write_with("posar_table.csv", |b| {
        compare::write_posar_table(&summaries, &win.posar, b)
    })?;
    out.write_with("waor_trend.csv", |b| {
        compare::write_waor_trend(&summaries, &win.waor, b)
    })?;

    let (_, ex) = primary_attention(config, state)?;
    let ma = distributions(ex);
    for (metric, name) in [
        (MetricKind::Scc, "matrix_scc.csv"),
        (MetricKind::Jsd, "matrix_jsd.csv"),
    ] {
        let m = compare::source_matrix(test, &ma, &state.random, metric)?;
        out.write_with(name, |b| compare::write_matrix_csv(&m, b))?;
    }
    Ok(())
}

pub const SHAPE_HEADER: [&str; 9] = [
    "cell",
    "sentence_id",
    "R",
    "IQR",
    "STD",
    "CV",
    "skew",
    "kurt",
    "constant",
];

fn stage_anova(
    config: &ExperimentConfig,
    out: &mut OutputDir,
    manifest: &mut RunManifest,
    state: &RunState,
) -> Result<()> {
    let mut shapes: Vec<(Cell, Vec<(String, DistStats)>)> = Vec::new();
    for (cell, ex) in &state.extracted {
        shapes.push((cell.clone(), compare::shape_stats(&distributions(ex))?));
    }
    out.write_with("shape_stats.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(SHAPE_HEADER)?;
        for (cell, rows) in &shapes {
            for (sid, st) in rows {
                let mut rec = vec![cell.id(), sid.clone()];
                rec.extend(StatKind::ALL.iter().map(|k| st.get(*k).to_string()));
                rec.push(st.constant.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    })?;

    let primary = config
        .primary_cell()
        .ok_or_else(|| Error::config("grid.attention: no attention-enabled cells"))?;
    let mut studies: Vec<ShapeStudy> = Vec::new();
    let mut attempt = |name: &str,
                       groups: Vec<(String, Vec<DistStats>)>,
                       notes: &mut Vec<String>|
     -> Result<()> {
        if groups.len() < 2 {
            notes.push(format!(
                "anova: grouping `{name}` skipped: {} group(s), at least 2 needed",
                groups.len()
            ));
            return Ok(());
        }
        if let Some((g, v)) = groups.iter().find(|(_, v)| v.len() < 2) {
            notes.push(format!("anova: grouping `{name}` skipped: group `{g}` has {} sentence(s), at least 2 needed", v.len()));
            return Ok(());
        }
        studies.push(attention_shape_study(name, &groups)?);
        Ok(())
    };

    // Encoders of the primary embedding (attention on).
    let encoder_groups: Vec<(String, Vec<DistStats>)> = shapes
        .iter()
        .filter(|(c, _)| c.embedding == primary.embedding)
        .map(|(c, rows)| {
            (
                c.encoder.as_str().to_string(),
                rows.iter().map(|(_, s)| *s).collect(),
            )
        })
        .collect();
    attempt("encoder", encoder_groups, &mut manifest.notes)?;

    // Correctly vs wrongly classified sentences of the primary cell.
    let (_, ex) = primary_attention(config, state)?;
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for e in ex.iter().filter(|e| e.distribution.weights.len() >= 2) {
        let st = crate::stats::dist_stats(&e.distribution.weights)?;
        if e.correct {
            correct.push(st);
        } else {
            wrong.push(st);
        }
    }
    attempt(
        "prediction",
        vec![
            ("correct".to_string(), correct),
            ("wrong".to_string(), wrong),
        ],
        &mut manifest.notes,
    )?;

    out.write_with("anova.csv", |b| write_anova_csv(&studies, b))?;
    out.write_with("anova_means.csv", |b| write_means_csv(&studies, b))?;
    Ok(())
}

#[derive(Serialize)]
struct MultitaskEval<'a> {
    base_cell: String,
    supervision: GazeMeasure,
    lambda: f64,
    include_eval_gaze: bool,
    best_epoch: usize,
    report: &'a EvalReport,
    gaze_supervised: &'a [String],
}

pub const MULTITASK_SUMMARY_HEADER: [&str; 7] = [
    "supervision",
    "lambda",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "accuracy",
    "gaze_supervised",
];

fn stage_multitask(
    config: &ExperimentConfig,
    out: &mut OutputDir,
    manifest: &mut RunManifest,
    state: &mut RunState,
) -> Result<()> {
    let mt = config
        .multitask
        .as_ref()
        .ok_or_else(|| Error::config("multitask: section is missing from the configuration"))?;
    let base = config.multitask_base().expect("multitask section present");
    let data = state.ingested()?;
    let (train, test) = (data.train()?, data.test());

    let existing = state.trained.iter().find(|t| t.cell == base).cloned();
    let base_trained = match existing {
        Some(t) => t,
        None => {
            manifest.notes.push(format!(
                "multitask: trained base cell {} for the comparison",
                base.id()
            ));
            train_cell(config, &base, data)?
        }
    };
    let ma = distributions(&extract_attention(&base_trained.model, test, config.mode)?);

    let mut summary: Vec<[String; 7]> = vec![[
        "none".to_string(),
        "0".to_string(),
        base_trained.report.macro_precision.to_string(),
        base_trained.report.macro_recall.to_string(),
        base_trained.report.macro_f1.to_string(),
        base_trained.report.accuracy.to_string(),
        "0".to_string(),
    ]];
    let mut all_deltas: Vec<(GazeMeasure, Vec<DeltaRow>)> = Vec::new();
    for &measure in &mt.measures {
        let (model, _) = Model::new(
            config.model_config(&base)?,
            base_trained.model.vocab.clone(),
        )?;
        let outcome = train_multitask(
            model,
            train,
            test,
            config.mode,
            &config.train_config(&base),
            &mt.config_for(measure),
        )?;
        let ma_ft = distributions(&outcome.attention);
        let deltas = before_after_comparison(&ma, &ma_ft, test)?;
        let dir = format!("multitask/{}", measure.as_str());
        out.write_with(&format!("{dir}/delta.csv"), |b| write_delta_csv(&deltas, b))?;
        out.write(&format!("{dir}/history.csv"), outcome.history.to_csv()?)?;
        out.write(
            &format!("{dir}/eval.json"),
            to_json(&MultitaskEval {
                base_cell: base.id(),
                supervision: measure,
                lambda: mt.lambda,
                include_eval_gaze: mt.include_eval_gaze,
                best_epoch: outcome.history.best_epoch,
                report: &outcome.report,
                gaze_supervised: &outcome.gaze_supervised,
            })?,
        )?;
        let block = vec![extracted_block(&base.id(), &outcome.attention)];
        out.write_with(&format!("{dir}/attention_ft.csv"), |b| {
            write_attention_csv(&block, test, b)
        })?;
        summary.push([
            measure.as_str().to_string(),
            mt.lambda.to_string(),
            outcome.report.macro_precision.to_string(),
            outcome.report.macro_recall.to_string(),
            outcome.report.macro_f1.to_string(),
            outcome.report.accuracy.to_string(),
            outcome.gaze_supervised.len().to_string(),
        ]);
        all_deltas.push((measure, deltas));
    }
    out.write_with("multitask_summary.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(MULTITASK_SUMMARY_HEADER)?;
        for r in &summary {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    })?;
    out.write_with("multitask_delta.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "supervision",
            "measure",
            "metric",
            "before",
            "after",
            "delta",
        ])?;
        for (sup, rows) in &all_deltas {
            for r in rows {
                w.write_record([
                    sup.as_str().to_string(),
                    r.measure.as_str().to_string(),
                    r.metric.as_str().to_string(),
                    r.before.to_string(),
                    r.after.to_string(),
                    r.delta.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    })?;
    Ok(())
}

/// Reads `(weights)` for one sentence, source and cell from an attention
/// CSV written by [`write_attention_csv`].
pub fn read_attention_weights(
    path: &Path,
    cell: &str,
    sentence_id: &str,
    source: AttentionSource,
) -> Result<Option<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Internal(format!("{}: {other:?}", path.display())),
    })?;
    let source = source.to_string();
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.get(0) == Some(cell)
            && rec.get(1) == Some(sentence_id)
            && rec.get(2) == Some(source.as_str())
        {
            let parse_err = |what: &str| {
                Error::format(
                    path.display().to_string(),
                    i as u64 + 2,
                    format!("bad {what}"),
                )
            };
            let idx: usize = rec
                .get(3)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err("token_index"))?;
            let w: f64 = rec
                .get(5)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err("weight"))?;
            weights.push((idx, w));
        }
    }
    if weights.is_empty() {
        return Ok(None);
    }
    weights.sort_by_key(|(i, _)| *i);
    if weights.iter().enumerate().any(|(k, (i, _))| k != *i) {
        return Err(Error::format(
            path.display().to_string(),
            0,
            format!("token indices of {sentence_id} are not contiguous"),
        ));
    }
    Ok(Some(weights.into_iter().map(|(_, w)| w).collect()))
}

/// Options of the heatmap command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeatmapRequest {
    pub sentence_id: String,
    /// Sources to draw; empty means machine attention (when extracted),
    /// the random baseline and the four gaze measures.
    pub sources: Vec<AttentionSource>,
    /// Grid cell id of the machine attention; defaults to the primary cell.
    pub cell: Option<String>,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Renders one sentence's attention sources as an SVG file under
/// `<out>/heatmaps/`. Machine attention is read from a previous `extract`
/// run in the same output directory. Writes `manifest-heatmap.json`.
pub fn run_heatmap(
    config: &ExperimentConfig,
    out_dir: &Path,
    req: &HeatmapRequest,
) -> Result<PathBuf> {
    let mut out = OutputDir::create(out_dir)?;
    let mut manifest = RunManifest::new("heatmap", config, &[]);
    let start = Instant::now();
    let result = config
        .input_files()
        .iter()
        .map(|p| manifest::sha256_file(p))
        .collect::<Result<Vec<_>>>()
        .and_then(|inputs| {
            manifest.inputs = inputs;
            render_sentence(config, &mut out, req)
        });
    manifest.notes.push(format!(
        "heatmap: sentence {} rendered in {:.3}s",
        req.sentence_id,
        start.elapsed().as_secs_f64()
    ));
    manifest.outputs = out.written().to_vec();
    match &result {
        Ok(_) => manifest.status = RunStatus::Succeeded,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    out.write_untracked("manifest-heatmap.json", to_json(&manifest)?)?;
    result
}

fn render_sentence(
    config: &ExperimentConfig,
    out: &mut OutputDir,
    req: &HeatmapRequest,
) -> Result<PathBuf> {
    let out_dir = out.root().to_path_buf();
    let mut inputs = ingest_inputs(config);
    inputs.treebank = None;
    let data = ingest::ingest(&inputs, config.mode)?;
    let sentence = data
        .find(&req.sentence_id)
        .ok_or_else(|| Error::usage(format!("unknown sentence_id `{}`", req.sentence_id)))?;
    let cell = match &req.cell {
        Some(c) => c.clone(),
        None => config.primary_cell().map(|c| c.id()).unwrap_or_default(),
    };
    let attention_csv = out_dir.join("attention.csv");
    let ft_csv =
        |m: GazeMeasure| out_dir.join(format!("multitask/{}/attention_ft.csv", m.as_str()));
    let ft_measure = config
        .multitask
        .as_ref()
        .and_then(|m| m.measures.first().copied());
    let ft_cell = config.multitask_base().map(|c| c.id()).unwrap_or_default();

    let sources = if req.sources.is_empty() {
        let mut v = Vec::new();
        if attention_csv.exists() {
            v.push(AttentionSource::Ma);
        }
        v.push(AttentionSource::Ran);
        if sentence.gaze.is_some() {
            v.extend(GazeMeasure::ALL.map(AttentionSource::Gaze));
        }
        v
    } else {
        req.sources.clone()
    };

    let mut rows = Vec::new();
    for src in sources {
        let weights = match src {
            AttentionSource::Ma => {
                if !attention_csv.exists() {
                    return Err(Error::usage(format!(
                        "{} not found; run `extract` first",
                        attention_csv.display()
                    )));
                }
                read_attention_weights(&attention_csv, &cell, &sentence.sentence_id, src)?
                    .ok_or_else(|| {
                        Error::usage(format!(
                            "no MA weights for sentence `{}` in cell `{cell}`",
                            sentence.sentence_id
                        ))
                    })?
            }
            AttentionSource::MaFt => {
                let m = ft_measure.ok_or_else(|| {
                    Error::usage("MA_ft requested but the configuration has no multitask section")
                })?;
                let path = ft_csv(m);
                if !path.exists() {
                    return Err(Error::usage(format!(
                        "{} not found; run `multitask` first",
                        path.display()
                    )));
                }
                read_attention_weights(&path, &ft_cell, &sentence.sentence_id, src)?.ok_or_else(
                    || {
                        Error::usage(format!(
                            "no MA_ft weights for sentence `{}`",
                            sentence.sentence_id
                        ))
                    },
                )?
            }
            AttentionSource::Ran => {
                random_attention(
                    &sentence.sentence_id,
                    sentence.len(),
                    config.random_attention_seed(),
                )?
                .weights
            }
            AttentionSource::Gaze(m) => sentence
                .gaze(m)
                .ok_or_else(|| {
                    Error::usage(format!(
                        "sentence `{}` has no gaze data",
                        sentence.sentence_id
                    ))
                })?
                .to_vec(),
        };
        if weights.len() != sentence.len() {
            return Err(Error::usage(format!(
                "{src} has {} weights for {} tokens",
                weights.len(),
                sentence.len()
            )));
        }
        rows.push((src.to_string(), weights));
    }
    let tokens: Vec<String> = sentence.tokens.iter().map(|t| t.surface.clone()).collect();
    let svg = heatmap::render_heatmap(&sentence.sentence_id, &tokens, &rows)?;
    out.write(
        &format!("heatmaps/{}.svg", sanitize(&sentence.sentence_id)),
        svg,
    )
}
