//! Eye-tracking corpora, sentiment treebank ingestion and dataset assembly.
//!
//! Gaze measures are summed over subjects and normalized per sentence into
//! distributions. Re-reading time is derived per subject (`TRT − FFD`,
//! clamped at zero) before summation.

mod tsv;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use tsv::{
    assemble_corpus, read_gaze_tsv, read_labels_tsv, read_treebank_tsv, GazeRow, IngestReport,
    LabelRow,
};

/// Coarse part-of-speech classes tracked by the POS attention rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PosTag {
    NN,
    VB,
    JJ,
    RB,
    OTHER,
}

impl PosTag {
    pub const ALL: [PosTag; 5] = [
        PosTag::NN,
        PosTag::VB,
        PosTag::JJ,
        PosTag::RB,
        PosTag::OTHER,
    ];
    pub const TRACKED: [PosTag; 4] = [PosTag::NN, PosTag::VB, PosTag::JJ, PosTag::RB];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::NN => "NN",
            PosTag::VB => "VB",
            PosTag::JJ => "JJ",
            PosTag::RB => "RB",
            PosTag::OTHER => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NN" => Ok(PosTag::NN),
            "VB" => Ok(PosTag::VB),
            "JJ" => Ok(PosTag::JJ),
            "RB" => Ok(PosTag::RB),
            "OTHER" => Ok(PosTag::OTHER),
            other => Err(Error::Input(format!("unknown POS tag `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Pos,
    Neg,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<PosTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
}

impl Token {
    pub fn new(index: usize, surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            index,
            pos: None,
            polarity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GazeMeasure {
    #[serde(rename = "nFix")]
    NFix,
    #[serde(rename = "FFD")]
    Ffd,
    #[serde(rename = "TRT")]
    Trt,
    #[serde(rename = "RRT")]
    Rrt,
}

impl GazeMeasure {
    pub const ALL: [GazeMeasure; 4] = [
        GazeMeasure::NFix,
        GazeMeasure::Ffd,
        GazeMeasure::Trt,
        GazeMeasure::Rrt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GazeMeasure::NFix => "nFix",
            GazeMeasure::Ffd => "FFD",
            GazeMeasure::Trt => "TRT",
            GazeMeasure::Rrt => "RRT",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for GazeMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GazeMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GazeMeasure::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Input(format!("unknown gaze measure `{s}`")))
    }
}

/// One subject's reading of one token.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeRecord {
    pub subject_id: String,
    pub sentence_id: String,
    pub token_index: usize,
    pub n_fix: f64,
    pub ffd: f64,
    pub trt: f64,
    /// 1-based source line, 0 when not read from a file.
    pub line: u64,
}

/// Per-token totals of the four measures, before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTotals {
    pub values: [Vec<f64>; 4],
}

impl RawTotals {
    pub fn get(&self, m: GazeMeasure) -> &[f64] {
        &self.values[m.slot()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeProfile {
    pub sentence_id: String,
    #[serde(rename = "nFix")]
    pub n_fix: Vec<f64>,
    #[serde(rename = "FFD")]
    pub ffd: Vec<f64>,
    #[serde(rename = "TRT")]
    pub trt: Vec<f64>,
    #[serde(rename = "RRT")]
    pub rrt: Vec<f64>,
    /// Measures whose raw totals were all zero.
    #[serde(default)]
    pub degenerate: Vec<GazeMeasure>,
}

impl GazeProfile {
    pub fn get(&self, m: GazeMeasure) -> &[f64] {
        match m {
            GazeMeasure::NFix => &self.n_fix,
            GazeMeasure::Ffd => &self.ffd,
            GazeMeasure::Trt => &self.trt,
            GazeMeasure::Rrt => &self.rrt,
        }
    }

    pub fn is_degenerate(&self, m: GazeMeasure) -> bool {
        self.degenerate.contains(&m)
    }

    /// Normalizes aggregated totals into a profile.
    pub fn from_totals(sentence_id: &str, totals: &RawTotals) -> Result<Self> {
        let mut out: Vec<Normalized> = Vec::with_capacity(4);
        for m in GazeMeasure::ALL {
            out.push(normalize_gaze(totals.get(m))?);
        }
        let degenerate = GazeMeasure::ALL
            .into_iter()
            .zip(&out)
            .filter(|(_, n)| n.degenerate)
            .map(|(m, _)| m)
            .collect();
        let mut it = out.into_iter().map(|n| n.values);
        Ok(Self {
            sentence_id: sentence_id.to_string(),
            n_fix: it.next().unwrap(),
            ffd: it.next().unwrap(),
            trt: it.next().unwrap(),
            rrt: it.next().unwrap(),
            degenerate,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            "positive" => Ok(Sentiment::Positive),
            other => Err(Error::Input(format!("unknown sentiment label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinningMode {
    Ternary,
    Binary,
}

impl BinningMode {
    pub fn num_classes(self) -> usize {
        match self {
            BinningMode::Ternary => 3,
            BinningMode::Binary => 2,
        }
    }

    pub fn classes(self) -> &'static [Sentiment] {
        match self {
            BinningMode::Ternary => &[Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive],
            BinningMode::Binary => &[Sentiment::Negative, Sentiment::Positive],
        }
    }

    pub fn class_index(self, label: Sentiment) -> Option<usize> {
        self.classes().iter().position(|c| *c == label)
    }

    pub fn label(self, class: usize) -> Sentiment {
        self.classes()[class]
    }
}

impl FromStr for BinningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ternary" => Ok(BinningMode::Ternary),
            "binary" => Ok(BinningMode::Binary),
            other => Err(Error::Input(format!("unknown binning mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub sentence_id: String,
    pub tokens: Vec<Token>,
    pub label: Sentiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<GazeProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Sentence {
    pub fn new(sentence_id: impl Into<String>, words: &[&str], label: Sentiment) -> Self {
        Self {
            sentence_id: sentence_id.into(),
            tokens: words
                .iter()
                .enumerate()
                .map(|(i, w)| Token::new(i, *w))
                .collect(),
            label,
            gaze: None,
            score: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn gaze(&self, m: GazeMeasure) -> Option<&[f64]> {
        self.gaze.as_ref().map(|g| g.get(m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub sentences: Vec<Sentence>,
    pub class_counts: BTreeMap<Sentiment, usize>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, sentences: Vec<Sentence>) -> Self {
        let mut class_counts = BTreeMap::new();
        for s in &sentences {
            *class_counts.entry(s.label).or_insert(0) += 1;
        }
        Self {
            name,
            sentences,
            class_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Data-quality counters collected during ingestion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataQuality {
    /// Subject-level records with `TRT < FFD`, clamped to `RRT = 0`.
    pub rrt_clamped: usize,
}

/// Re-reading time `TRT − FFD`, clamped at zero.
pub fn derive_rrt(trt: f64, ffd: f64, quality: &mut DataQuality) -> f64 {
    if trt < ffd {
        quality.rrt_clamped += 1;
        log::warn!("TRT {trt} < FFD {ffd}; re-reading time clamped to 0");
        0.0
    } else {
        trt - ffd
    }
}

/// Sums every measure over subjects. Missing (subject, token) pairs count as
/// zero; RRT is derived per record before summation.
pub fn aggregate_subjects(
    records: &[GazeRecord],
    sentence_id: &str,
    n_tokens: usize,
    quality: &mut DataQuality,
) -> Result<RawTotals> {
    let mut values: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n_tokens]);
    for r in records {
        if r.sentence_id != sentence_id {
            return Err(Error::Internal(format!(
                "record for sentence {} passed while aggregating {sentence_id}",
                r.sentence_id
            )));
        }
        if r.token_index >= n_tokens {
            return Err(Error::TokenIndexOutOfRange {
                path: None,
                sentence_id: sentence_id.to_string(),
                token_index: r.token_index,
                len: n_tokens,
                line: r.line,
            });
        }
        let i = r.token_index;
        values[GazeMeasure::NFix.slot()][i] += r.n_fix;
        values[GazeMeasure::Ffd.slot()][i] += r.ffd;
        values[GazeMeasure::Trt.slot()][i] += r.trt;
        values[GazeMeasure::Rrt.slot()][i] += derive_rrt(r.trt, r.ffd, quality);
    }
    Ok(RawTotals { values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Divides by the vector sum; an all-zero vector is returned unchanged and
/// flagged degenerate.
pub fn normalize_gaze(raw: &[f64]) -> Result<Normalized> {
    if let Some(bad) = raw.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Internal(format!(
            "gaze total {bad} is negative or non-finite"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Ok(Normalized {
            values: raw.to_vec(),
            degenerate: true,
        });
    }
    Ok(Normalized {
        values: raw.iter().map(|v| v / total).collect(),
        degenerate: false,
    })
}

/// Maps a treebank score in `[0, 1]` to a class; `None` means the sentence
/// is dropped (mid-range scores in binary mode).
pub fn bin_sentiment(score: f64, mode: BinningMode) -> Result<Option<Sentiment>> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Input(format!(
            "sentiment score {score} outside [0, 1]"
        )));
    }
    Ok(if score <= 0.4 {
        Some(Sentiment::Negative)
    } else if score <= 0.6 {
        match mode {
            BinningMode::Ternary => Some(Sentiment::Neutral),
            BinningMode::Binary => None,
        }
    } else {
        Some(Sentiment::Positive)
    })
}

/// Duplicate-detection key: lowercased, punctuation removed, whitespace
/// collapsed.
pub fn normalized_key(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace split, then leading/trailing punctuation runs detached as
/// their own tokens. Internal punctuation (`don't`, `well-made`) stays.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out: Vec<String> = Vec::new();
    for piece in text.split_whitespace() {
        let chars: Vec<char> = piece.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let Some(start) = start else {
            out.push(piece.to_string());
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;
        if start > 0 {
            out.push(chars[..start].iter().collect());
        }
        out.push(chars[start..end].iter().collect());
        if end < chars.len() {
            out.push(chars[end..].iter().collect());
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, s)| Token::new(i, s))
        .collect()
}

/// Builds the train split from the binned treebank (minus sentences that
/// duplicate a test sentence) and takes the eye-tracking sentences verbatim
/// as the test split.
pub fn build_datasets(
    treebank: &[(String, f64)],
    etc: &[Sentence],
    mode: BinningMode,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if etc.is_empty() {
        return Err(Error::config("eye-tracking test corpus is empty"));
    }
    for s in etc {
        if mode.class_index(s.label).is_none() {
            return Err(Error::config(format!(
                "test sentence {} has label {} which is not a class in {mode:?} mode",
                s.sentence_id, s.label
            )));
        }
        if let Some(score) = s.score {
            if bin_sentiment(score, mode)? != Some(s.label) {
                return Err(Error::Input(format!(
                    "test sentence {} label {} inconsistent with score {score}",
                    s.sentence_id, s.label
                )));
            }
        }
    }
    let test_keys: HashSet<String> = etc.iter().map(|s| normalized_key(&s.text())).collect();

    let mut train = Vec::new();
    for (i, (text, score)) in treebank.iter().enumerate() {
        let Some(label) = bin_sentiment(*score, mode)? else {
            continue;
        };
        if test_keys.contains(&normalized_key(text)) {
            continue;
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            continue;
        }
        train.push(Sentence {
            sentence_id: format!("tb{i}"),
            tokens,
            label,
            gaze: None,
            score: Some(*score),
        });
    }
    if train.is_empty() {
        return Err(Error::config(
            "training split is empty after binning and de-duplication",
        ));
    }
    Ok((
        DatasetSplit::new(SplitName::Train, train),
        DatasetSplit::new(SplitName::Test, etc.to_vec()),
    ))
}
