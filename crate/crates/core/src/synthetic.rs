//! Deterministic synthetic corpora in the canonical input formats, for tests
//! and demonstrations. Sentiment words carry the sentence label and attract
//! most of the simulated gaze.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BinningMode, PosTag, Sentiment};
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const POSITIVE: [&str; 8] = [
    "good",
    "great",
    "excellent",
    "wonderful",
    "brilliant",
    "superb",
    "delightful",
    "charming",
];
pub const NEGATIVE: [&str; 8] = [
    "bad", "awful", "terrible", "boring", "dull", "poor", "weak", "tedious",
];
const NOUNS: [&str; 10] = [
    "film", "movie", "story", "plot", "cast", "script", "scene", "director", "actor", "ending",
];
const VERBS: [&str; 6] = ["is", "was", "feels", "seems", "looks", "remains"];
const ADVERBS: [&str; 5] = ["really", "very", "quite", "truly", "rather"];
const FILLERS: [&str; 7] = ["the", "a", "this", "that", "and", "of", "it"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub subjects: usize,
    pub mode: BinningMode,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a training sentence's label is replaced by another
    /// class (its score follows the new label).
    pub label_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            train_sentences: 300,
            test_sentences: 40,
            subjects: 3,
            mode: BinningMode::Ternary,
            min_len: 4,
            max_len: 9,
            label_noise: 0.0,
        }
    }
}

/// One generated sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSentence {
    pub words: Vec<String>,
    pub label: Sentiment,
    pub score: f64,
}

/// Paths of a written corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFiles {
    pub gaze: PathBuf,
    pub labels: PathBuf,
    pub treebank: PathBuf,
    pub positive: PathBuf,
    pub negative: PathBuf,
    pub pos_lexicon: PathBuf,
}

fn score_for(rng: &mut ChaCha8Rng, label: Sentiment) -> f64 {
    let (lo, hi): (f64, f64) = match label {
        Sentiment::Negative => (0.05, 0.35),
        Sentiment::Neutral => (0.45, 0.55),
        Sentiment::Positive => (0.65, 0.95),
    };
    // Three decimals keep the files short and the scores exactly parseable.
    (rng.random_range(lo..hi) * 1000.0).round() / 1000.0
}

/// A sentence whose sentiment words agree with `label` (none for neutral).
pub fn sentence(
    rng: &mut ChaCha8Rng,
    label: Sentiment,
    min_len: usize,
    max_len: usize,
) -> Vec<String> {
    let len = rng.random_range(min_len.max(2)..=max_len.max(min_len.max(2)));
    let mut words: Vec<&str> = (0..len)
        .map(|_| match rng.random_range(0..4) {
            0 => *NOUNS.choose(rng).unwrap(),
            1 => *VERBS.choose(rng).unwrap(),
            2 => *ADVERBS.choose(rng).unwrap(),
            _ => *FILLERS.choose(rng).unwrap(),
        })
        .collect();
    let lexicon: &[&str] = match label {
        Sentiment::Positive => &POSITIVE,
        Sentiment::Negative => &NEGATIVE,
        Sentiment::Neutral => &[],
    };
    if !lexicon.is_empty() {
        let count = if len >= 6 { rng.random_range(1..=2) } else { 1 };
        for _ in 0..count {
            let at = rng.random_range(0..len);
            words[at] = lexicon.choose(rng).unwrap();
        }
    }
    words.into_iter().map(String::from).collect()
}

fn draw_label(rng: &mut ChaCha8Rng, mode: BinningMode) -> Sentiment {
    *mode.classes().choose(rng).unwrap()
}

pub fn generate(
    spec: &SyntheticSpec,
    split: &str,
    count: usize,
    noise: f64,
) -> Vec<SyntheticSentence> {
    let mut rng = rng_for(spec.seed, &format!("synthetic/{split}"));
    (0..count)
        .map(|_| {
            let true_label = draw_label(&mut rng, spec.mode);
            let words = sentence(&mut rng, true_label, spec.min_len, spec.max_len);
            let label = if noise > 0.0 && rng.random_bool(noise) {
                let others: Vec<Sentiment> = spec
                    .mode
                    .classes()
                    .iter()
                    .copied()
                    .filter(|c| *c != true_label)
                    .collect();
                *others.choose(&mut rng).unwrap()
            } else {
                true_label
            };
            let score = score_for(&mut rng, label);
            SyntheticSentence {
                words,
                label,
                score,
            }
        })
        .collect()
}

pub fn is_sentiment_word(w: &str) -> bool {
    POSITIVE.contains(&w) || NEGATIVE.contains(&w)
}

/// Writes gaze, labels, treebank and lexicon files into `dir`.
pub fn write_corpus(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticFiles> {
    if spec.subjects == 0 || spec.test_sentences == 0 {
        return Err(Error::usage(
            "synthetic corpus needs at least one subject and one test sentence",
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles {
        gaze: dir.join("gaze.tsv"),
        labels: dir.join("labels.tsv"),
        treebank: dir.join("treebank.tsv"),
        positive: dir.join("positive.txt"),
        negative: dir.join("negative.txt"),
        pos_lexicon: dir.join("pos_lexicon.tsv"),
    };
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));

    let mut tb = String::from("text\tscore\n");
    for s in generate(spec, "train", spec.train_sentences, spec.label_noise) {
        let _ = writeln!(tb, "{}\t{}", s.words.join(" "), s.score);
    }
    write(&files.treebank, tb)?;

    let test = generate(spec, "test", spec.test_sentences, 0.0);
    let mut labels = String::from("sentence_id\tlabel\tscore\n");
    let mut gaze = String::from("sentence_id\tsubject_id\ttoken_index\ttoken\tnFix\tFFD\tTRT\n");
    let mut rng = rng_for(spec.seed, "synthetic/gaze");
    for (i, s) in test.iter().enumerate() {
        let sid = format!("etc{i:04}");
        let _ = writeln!(labels, "{sid}\t{}\t{}", s.label.as_str(), s.score);
        for subj in 0..spec.subjects {
            for (t, w) in s.words.iter().enumerate() {
                let salient = is_sentiment_word(w);
                let skipped = !salient && rng.random_bool(0.3);
                let (n_fix, ffd, trt) = if skipped {
                    (0.0, 0.0, 0.0)
                } else if salient {
                    let ffd = rng.random_range(180.0..320.0_f64).round();
                    (
                        rng.random_range(2..=4) as f64,
                        ffd,
                        ffd + rng.random_range(150.0..400.0_f64).round(),
                    )
                } else {
                    let ffd = rng.random_range(60.0..180.0_f64).round();
                    (1.0, ffd, ffd + rng.random_range(0.0..80.0_f64).round())
                };
                let _ = writeln!(gaze, "{sid}\ts{subj}\t{t}\t{w}\t{n_fix}\t{ffd}\t{trt}");
            }
        }
    }
    write(&files.labels, labels)?;
    write(&files.gaze, gaze)?;
    write(&files.positive, POSITIVE.join("\n") + "\n")?;
    write(&files.negative, NEGATIVE.join("\n") + "\n")?;
    let mut lex = String::new();
    for (words, tag) in [
        (&NOUNS[..], PosTag::NN),
        (&VERBS[..], PosTag::VB),
        (&ADVERBS[..], PosTag::RB),
        (&POSITIVE[..], PosTag::JJ),
        (&NEGATIVE[..], PosTag::JJ),
    ] {
        for w in words {
            let _ = writeln!(lex, "{w}\t{}", tag.as_str());
        }
    }
    write(&files.pos_lexicon, lex)?;
    Ok(files)
}

/// A TOML experiment configuration for a corpus written by
/// [`write_corpus`] (paths relative to the same directory).
pub fn config_toml(
    spec: &SyntheticSpec,
    encoders: &[&str],
    epochs: usize,
    multitask: bool,
) -> String {
    let mode = match spec.mode {
        BinningMode::Ternary => "ternary",
        BinningMode::Binary => "binary",
    };
    let encoders = encoders
        .iter()
        .map(|e| format!("\"{e}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let mut s = format!(
        r#"seed = {seed}
mode = "{mode}"

[data]
gaze = "gaze.tsv"
labels = "labels.tsv"
treebank = "treebank.tsv"
positive_words = "positive.txt"
negative_words = "negative.txt"
pos_lexicon = "pos_lexicon.tsv"

[model]
embedding_dim = 16
hidden_dim = 8

[grid]
embeddings = [{{ name = "Embedding" }}]
encoders = [{encoders}]
attention = [true, false]

[train]
learning_rate = 0.01
epochs = {epochs}
batch_size = 16
patience = 3
"#,
        seed = spec.seed
    );
    if multitask {
        s.push_str("\n[multitask]\nmeasures = [\"nFix\", \"TRT\"]\nlambda = 1.0\ninclude_eval_gaze = true\n");
    }
    s
}
