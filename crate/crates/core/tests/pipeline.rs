//! End-to-end runs of the experiment pipeline on small synthetic corpora.

use std::fs;
use std::path::Path;

use gazeattn::model::AttentionSource;
use gazeattn::pipeline::{
    self, Command, ExperimentConfig, HeatmapRequest, RunManifest, RunStatus, Stage,
};
use gazeattn::synthetic::{config_toml, write_corpus, SyntheticSpec};
use gazeattn::Error;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        seed: 11,
        train_sentences: 150,
        test_sentences: 24,
        subjects: 2,
        ..SyntheticSpec::default()
    }
}

fn setup(dir: &Path, extra: &str, multitask: bool) -> ExperimentConfig {
    let spec = small_spec();
    write_corpus(dir, &spec).unwrap();
    let text = config_toml(&spec, &["None", "LSTM"], 3, multitask) + extra;
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(String::from)
        .collect()
}

#[test]
fn full_experiment_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "", true);
    let out = dir.path().join("out");
    let (manifest, state) = pipeline::run(&config, Command::Experiment, &out).unwrap();
    assert_eq!(manifest.status, RunStatus::Succeeded);
    assert_eq!(
        manifest.stages,
        vec![
            Stage::Ingest,
            Stage::Train,
            Stage::Extract,
            Stage::Compare,
            Stage::Anova,
            Stage::Multitask
        ]
    );
    assert_eq!(manifest.timings.len(), 6);
    assert_eq!(manifest.inputs.len(), 6);
    assert!(manifest.inputs.iter().all(|d| d.sha256.len() == 64));

    // Manifest on disk matches the returned value.
    let on_disk = RunManifest::load(&out.join("manifest-experiment.json")).unwrap();
    assert_eq!(on_disk, manifest);
    for rel in &manifest.outputs {
        assert!(out.join(rel).is_file(), "{} missing", rel.display());
    }

    // 2 encoders x attention on/off.
    let eval = csv_lines(&out.join("eval.csv"));
    assert_eq!(eval[0], "embedding,encoder,attention,macro_precision,macro_recall,macro_f1,accuracy,best_epoch,epochs_run,stopped_early");
    assert_eq!(eval.len(), 5);
    assert_eq!(state.trained.len(), 4);
    assert_eq!(state.extracted.len(), 2);

    // Six-by-six source matrices.
    for name in ["matrix_scc.csv", "matrix_jsd.csv"] {
        let m = csv_lines(&out.join(name));
        assert_eq!(m[0], "source,MA,RAN,nFix,FFD,TRT,RRT");
        assert_eq!(m.len(), 7);
        assert!(m[1..].iter().all(|l| l.split(',').count() == 7));
    }

    // WAOR at windows 1-5, POSAR at 3-5 for the four tracked tags.
    let trend = csv_lines(&out.join("waor_trend.csv"));
    assert_eq!(trend[0], "cell,source_a,source_b,top1,top2,top3,top4,top5");
    assert_eq!(trend.len(), 1 + 2 * 2 * 4);
    let posar = csv_lines(&out.join("posar_table.csv"));
    assert_eq!(posar[0], "cell,source,pos,top3,top4,top5");
    assert_eq!(posar.len(), 1 + 2 * 6 * 4);
    for tag in ["NN", "VB", "JJ", "RB"] {
        assert!(posar.iter().any(|l| l.split(',').nth(2) == Some(tag)));
    }

    let comparison = csv_lines(&out.join("comparison/Embedding-None-attn.csv"));
    assert_eq!(
        comparison[0],
        "sentence_id,source_a,source_b,metric,window,pos,value,flags"
    );
    for metric in ["SCC", "JSD", "WAOR", "POSAR", "SWAR"] {
        assert!(
            comparison
                .iter()
                .any(|l| l.split(',').nth(3) == Some(metric)),
            "{metric} missing"
        );
    }

    // Both ANOVA groupings have six statistics each.
    let anova = csv_lines(&out.join("anova.csv"));
    assert_eq!(
        anova[0],
        "grouping,statistic,F,df_between,df_within,p,significant_at_0.001"
    );
    let groupings: Vec<&str> = anova[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(groupings.iter().filter(|g| **g == "encoder").count(), 6);
    let prediction = groupings.iter().filter(|g| **g == "prediction").count();
    assert!(prediction == 6 || manifest.notes.iter().any(|n| n.contains("prediction")));

    // Multitask: one delta table per supervising measure with 4 measures x 2 metrics.
    for m in ["nFix", "TRT"] {
        let d = csv_lines(&out.join(format!("multitask/{m}/delta.csv")));
        assert_eq!(d[0], "measure,metric,before,after,delta");
        assert_eq!(d.len(), 9);
    }
    assert_eq!(csv_lines(&out.join("multitask_summary.csv")).len(), 4);

    // Every pipeline gaze profile sums to one or is flagged degenerate.
    let data = state.ingested.as_ref().unwrap();
    for s in data.test() {
        let g = s.gaze.as_ref().unwrap();
        for m in gazeattn::corpus::GazeMeasure::ALL {
            let sum: f64 = g.get(m).iter().sum();
            assert!(g.is_degenerate(m) || (sum - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn stage_failure_keeps_partial_outputs_and_marks_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = setup(dir.path(), "", false);
    config.grid.attention = vec![false];
    let out = dir.path().join("out");
    let err = pipeline::run(&config, Command::Compare, &out).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let manifest = RunManifest::load(&out.join("manifest-compare.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Failed);
    assert_eq!(manifest.failed_stage, Some(Stage::Extract));
    assert!(manifest
        .error
        .as_deref()
        .unwrap()
        .contains("grid.attention"));
    assert!(out.join("eval.csv").is_file());
    assert!(manifest.outputs.iter().any(|p| p == Path::new("eval.csv")));
}

#[test]
fn missing_input_fails_before_processing_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = setup(dir.path(), "", false);
    config.data.gaze = dir.path().join("nope.tsv");
    let out = dir.path().join("out");
    assert!(matches!(
        pipeline::run(&config, Command::Ingest, &out),
        Err(Error::Io { .. })
    ));
    let manifest = RunManifest::load(&out.join("manifest-ingest.json")).unwrap();
    assert_eq!(manifest.failed_stage, Some(Stage::Ingest));
    assert!(manifest.inputs.is_empty() && manifest.outputs.is_empty());
}

#[test]
fn ingest_only_needs_no_treebank_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = setup(dir.path(), "", false);
    config.data.treebank = None;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    pipeline::run(&config, Command::Ingest, &a).unwrap();
    pipeline::run(&config, Command::Ingest, &b).unwrap();
    for f in ["dataset.json", "ingest_report.json", "gaze_profiles.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    // Training needs the treebank.
    let err = pipeline::run(&config, Command::Extract, &a).unwrap_err();
    assert!(err.to_string().contains("data.treebank"), "{err}");
}

#[test]
fn heatmap_after_extract() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "", false);
    let out = dir.path().join("out");
    pipeline::run(&config, Command::Extract, &out).unwrap();
    let req = HeatmapRequest {
        sentence_id: "etc0003".into(),
        ..HeatmapRequest::default()
    };
    let path = pipeline::run_heatmap(&config, &out, &req).unwrap();
    let svg = fs::read_to_string(&path).unwrap();
    assert!(svg.contains("viewBox"));
    // MA, RAN and four gaze rows.
    for label in [">MA<", ">RAN<", ">nFix<", ">FFD<", ">TRT<", ">RRT<"] {
        assert!(svg.contains(label), "{label}");
    }
    let manifest = RunManifest::load(&out.join("manifest-heatmap.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Succeeded);

    let bad = HeatmapRequest {
        sentence_id: "no-such-sentence".into(),
        ..HeatmapRequest::default()
    };
    assert!(matches!(
        pipeline::run_heatmap(&config, &out, &bad),
        Err(Error::Usage(_))
    ));
    let manifest = RunManifest::load(&out.join("manifest-heatmap.json")).unwrap();
    assert_eq!(manifest.status, RunStatus::Failed);

    // MA_ft needs a multitask section.
    let ft = HeatmapRequest {
        sentence_id: "etc0003".into(),
        sources: vec![AttentionSource::MaFt],
        cell: None,
    };
    assert!(pipeline::run_heatmap(&config, &out, &ft).is_err());
}
