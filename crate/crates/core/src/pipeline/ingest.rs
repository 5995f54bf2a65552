//! Ingestion stage: read the canonical TSV files, build the train/test
//! splits and annotate test tokens with POS tags and sentiment polarity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    assemble_corpus, read_gaze_tsv, read_labels_tsv, read_treebank_tsv, IngestReport,
};
use crate::corpus::{
    build_datasets, BinningMode, DatasetSplit, GazeMeasure, Polarity, PosTag, Sentence, SplitName,
};
use crate::error::{Error, Result};
use crate::lexicon::{mark_sentiment, tag_pos, PosLexicon, SentimentLexicon};

/// Input files for ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestInputs {
    pub gaze: PathBuf,
    pub labels: PathBuf,
    pub treebank: Option<PathBuf>,
    /// `(positive, negative)` word lists.
    pub sentiment: Option<(PathBuf, PathBuf)>,
    pub pos_lexicon: Option<PathBuf>,
}

/// Canonical dataset written by the ingest stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub mode: BinningMode,
    /// Absent when no treebank file was given.
    pub train: Option<DatasetSplit>,
    pub test: DatasetSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub dataset: Dataset,
    pub report: IngestReport,
    /// Words listed as both positive and negative (dropped from the lexicon).
    pub lexicon_conflicts: Vec<String>,
}

impl Ingested {
    pub fn test(&self) -> &[Sentence] {
        &self.dataset.test.sentences
    }

    pub fn train(&self) -> Result<&[Sentence]> {
        self.dataset
            .train
            .as_ref()
            .map(|s| s.sentences.as_slice())
            .ok_or_else(|| {
                Error::config("data.treebank: a training corpus is required for this stage")
            })
    }

    pub fn find(&self, sentence_id: &str) -> Option<&Sentence> {
        self.test().iter().find(|s| s.sentence_id == sentence_id)
    }
}

/// Stores the final tag and polarity on each token so that downstream
/// metrics read them from the sentence.
pub fn annotate(sentence: &mut Sentence, pos: &PosLexicon, sentiment: &SentimentLexicon) {
    let tags = tag_pos(&sentence.tokens, pos);
    let polarities = mark_sentiment(&sentence.tokens, sentiment);
    for ((t, tag), pol) in sentence.tokens.iter_mut().zip(tags).zip(polarities) {
        t.pos = Some(tag);
        t.polarity = Some(pol);
    }
}

pub fn ingest(inputs: &IngestInputs, mode: BinningMode) -> Result<Ingested> {
    let rows = read_gaze_tsv(&inputs.gaze)?;
    let labels = read_labels_tsv(&inputs.labels)?;
    let (mut etc, report) = assemble_corpus(&rows, &labels, mode)
        .map_err(|e| e.in_file(&inputs.gaze.display().to_string()))?;
    let pos = match &inputs.pos_lexicon {
        Some(p) => PosLexicon::load(p)?,
        None => PosLexicon::default(),
    };
    let sentiment = match &inputs.sentiment {
        Some((p, n)) => SentimentLexicon::load(p, n)?,
        None => SentimentLexicon::new(Vec::<String>::new(), Vec::<String>::new()),
    };
    for s in &mut etc {
        annotate(s, &pos, &sentiment);
    }
    let (train, test) = match &inputs.treebank {
        Some(path) => {
            let treebank = read_treebank_tsv(path)?;
            let (train, test) = build_datasets(&treebank, &etc, mode)?;
            (Some(train), test)
        }
        None => {
            if etc.is_empty() {
                return Err(Error::config("eye-tracking test corpus is empty"));
            }
            (None, DatasetSplit::new(SplitName::Test, etc))
        }
    };
    Ok(Ingested {
        dataset: Dataset { mode, train, test },
        report,
        lexicon_conflicts: sentiment.conflicts().to_vec(),
    })
}

/// One row per test token with its annotations and normalized gaze.
pub fn write_profiles_csv<W: std::io::Write>(sentences: &[Sentence], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sentence_id", "token_index", "token", "pos", "polarity"];
    header.extend(GazeMeasure::ALL.iter().map(|m| m.as_str()));
    w.write_record(&header)?;
    for s in sentences {
        for (i, t) in s.tokens.iter().enumerate() {
            let mut rec = vec![
                s.sentence_id.clone(),
                i.to_string(),
                t.surface.clone(),
                t.pos.unwrap_or(PosTag::OTHER).as_str().to_string(),
                polarity_str(t.polarity.unwrap_or(Polarity::None)).to_string(),
            ];
            for m in GazeMeasure::ALL {
                rec.push(s.gaze(m).map(|g| g[i].to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}

fn polarity_str(p: Polarity) -> &'static str {
    match p {
        Polarity::Pos => "pos",
        Polarity::Neg => "neg",
        Polarity::None => "none",
    }
}
