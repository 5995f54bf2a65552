//! Canonical tab-separated input formats.
//!
//! - gaze: `sentence_id  subject_id  token_index  token  nFix  FFD  TRT  [pos]`
//! - labels: `sentence_id  label  [score]`
//! - treebank: `text  score`
//!
//! Every file starts with a header row. Numbers use `.` as decimal separator.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_subjects, BinningMode, DataQuality, GazeMeasure, GazeProfile, GazeRecord, PosTag,
    Sentence, Sentiment, Token,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GazeRow {
    pub record: GazeRecord,
    pub token: String,
    pub pos: Option<PosTag>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelRow {
    pub sentence_id: String,
    pub label: Sentiment,
    pub score: Option<f64>,
    pub line: u64,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(reader_from(file))
}

fn reader_from<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(r)
}

fn records<R: Read>(rdr: &mut csv::Reader<R>, name: &str) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(name, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<'r>(
    rec: &'r csv::StringRecord,
    i: usize,
    what: &str,
    name: &str,
    line: u64,
) -> Result<&'r str> {
    rec.get(i)
        .ok_or_else(|| Error::format(name, line, format!("missing column `{what}`")))
}

fn number(s: &str, what: &str, name: &str, line: u64) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::format(name, line, format!("`{what}` is not a number: `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::format(name, line, format!("`{what}` is not finite")));
    }
    Ok(v)
}

fn non_negative(s: &str, what: &str, name: &str, line: u64) -> Result<f64> {
    let v = number(s, what, name, line)?;
    if v < 0.0 {
        return Err(Error::format(
            name,
            line,
            format!("`{what}` is negative: {v}"),
        ));
    }
    Ok(v)
}

pub fn read_gaze_tsv(path: &Path) -> Result<Vec<GazeRow>> {
    parse_gaze(reader(path)?, &path.display().to_string())
}

pub(crate) fn parse_gaze<R: Read>(mut rdr: csv::Reader<R>, name: &str) -> Result<Vec<GazeRow>> {
    let mut out = Vec::new();
    for (line, rec) in records(&mut rdr, name)? {
        if rec.len() < 7 || rec.len() > 8 {
            return Err(Error::format(
                name,
                line,
                format!("expected 7 or 8 columns, found {}", rec.len()),
            ));
        }
        let token_index: usize = field(&rec, 2, "token_index", name, line)?
            .trim()
            .parse()
            .map_err(|_| {
                Error::format(name, line, "`token_index` is not a non-negative integer")
            })?;
        let token = field(&rec, 3, "token", name, line)?.to_string();
        if token.trim().is_empty() {
            return Err(Error::format(name, line, "empty token"));
        }
        let pos = match rec.get(7).map(str::trim) {
            None | Some("") => None,
            Some(t) => Some(
                t.parse::<PosTag>()
                    .map_err(|e| Error::format(name, line, e.to_string()))?,
            ),
        };
        out.push(GazeRow {
            record: GazeRecord {
                sentence_id: field(&rec, 0, "sentence_id", name, line)?
                    .trim()
                    .to_string(),
                subject_id: field(&rec, 1, "subject_id", name, line)?.trim().to_string(),
                token_index,
                n_fix: non_negative(&rec[4], "nFix", name, line)?,
                ffd: non_negative(&rec[5], "FFD", name, line)?,
                trt: non_negative(&rec[6], "TRT", name, line)?,
                line,
            },
            token,
            pos,
        });
    }
    if out.is_empty() {
        return Err(Error::format(name, 0, "no gaze rows"));
    }
    Ok(out)
}

pub fn read_labels_tsv(path: &Path) -> Result<Vec<LabelRow>> {
    parse_labels(reader(path)?, &path.display().to_string())
}

pub(crate) fn parse_labels<R: Read>(mut rdr: csv::Reader<R>, name: &str) -> Result<Vec<LabelRow>> {
    let mut out = Vec::new();
    for (line, rec) in records(&mut rdr, name)? {
        if rec.len() < 2 || rec.len() > 3 {
            return Err(Error::format(
                name,
                line,
                format!("expected 2 or 3 columns, found {}", rec.len()),
            ));
        }
        let label = rec[1]
            .parse::<Sentiment>()
            .map_err(|e| Error::format(name, line, e.to_string()))?;
        let score = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some(s) => {
                let v = number(s, "score", name, line)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::format(
                        name,
                        line,
                        format!("score {v} outside [0, 1]"),
                    ));
                }
                Some(v)
            }
        };
        out.push(LabelRow {
            sentence_id: rec[0].trim().to_string(),
            label,
            score,
            line,
        });
    }
    Ok(out)
}

pub fn read_treebank_tsv(path: &Path) -> Result<Vec<(String, f64)>> {
    parse_treebank(reader(path)?, &path.display().to_string())
}

pub(crate) fn parse_treebank<R: Read>(
    mut rdr: csv::Reader<R>,
    name: &str,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (line, rec) in records(&mut rdr, name)? {
        if rec.len() != 2 {
            return Err(Error::format(
                name,
                line,
                format!("expected 2 columns, found {}", rec.len()),
            ));
        }
        let score = number(&rec[1], "score", name, line)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::format(
                name,
                line,
                format!("score {score} outside [0, 1]"),
            ));
        }
        out.push((rec[0].to_string(), score));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub sentences: usize,
    pub subjects: usize,
    pub quality: DataQuality,
    /// `(sentence_id, measure)` pairs whose totals were all zero.
    pub degenerate: Vec<(String, GazeMeasure)>,
    /// `(sentence_id, reason)` for sentences left out of the corpus.
    pub dropped: Vec<(String, String)>,
}

/// Groups gaze rows by sentence (first-appearance order), aggregates and
/// normalizes them, and attaches labels.
pub fn assemble_corpus(
    rows: &[GazeRow],
    labels: &[LabelRow],
    mode: BinningMode,
) -> Result<(Vec<Sentence>, IngestReport)> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_sentence: HashMap<&str, Vec<&GazeRow>> = HashMap::new();
    let mut subjects: Vec<&str> = Vec::new();
    for row in rows {
        let sid = row.record.sentence_id.as_str();
        by_sentence
            .entry(sid)
            .or_insert_with(|| {
                order.push(sid);
                Vec::new()
            })
            .push(row);
        if !subjects.contains(&row.record.subject_id.as_str()) {
            subjects.push(&row.record.subject_id);
        }
    }

    let mut label_of: HashMap<&str, &LabelRow> = HashMap::new();
    for l in labels {
        if label_of.insert(&l.sentence_id, l).is_some() {
            return Err(Error::Input(format!(
                "duplicate label for sentence {} (line {})",
                l.sentence_id, l.line
            )));
        }
    }

    let mut report = IngestReport {
        subjects: subjects.len(),
        ..Default::default()
    };
    let mut sentences = Vec::new();
    for sid in order {
        let group = &by_sentence[sid];
        let tokens = sentence_tokens(sid, group)?;
        let records: Vec<GazeRecord> = group.iter().map(|r| r.record.clone()).collect();
        let totals = aggregate_subjects(&records, sid, tokens.len(), &mut report.quality)?;
        let profile = GazeProfile::from_totals(sid, &totals)?;
        for m in &profile.degenerate {
            report.degenerate.push((sid.to_string(), *m));
        }
        let Some(label) = label_of.get(sid) else {
            report.dropped.push((sid.to_string(), "no label".into()));
            continue;
        };
        if mode.class_index(label.label).is_none() {
            report.dropped.push((
                sid.to_string(),
                format!("label {} not used in {mode:?} mode", label.label),
            ));
            continue;
        }
        sentences.push(Sentence {
            sentence_id: sid.to_string(),
            tokens,
            label: label.label,
            gaze: Some(profile),
            score: label.score,
        });
    }
    let seen: std::collections::HashSet<&str> = by_sentence.keys().copied().collect();
    for l in labels {
        if !seen.contains(l.sentence_id.as_str()) {
            report
                .dropped
                .push((l.sentence_id.clone(), "no gaze rows".into()));
        }
    }
    report.sentences = sentences.len();
    Ok((sentences, report))
}

/// Token list of one sentence. Indices must be contiguous from zero; a row
/// whose index falls outside the distinct-index count is rejected with its
/// line number.
fn sentence_tokens(sid: &str, rows: &[&GazeRow]) -> Result<Vec<Token>> {
    let mut surfaces: BTreeMap<usize, (&str, Option<PosTag>, u64)> = BTreeMap::new();
    for r in rows {
        match surfaces.get(&r.record.token_index) {
            Some((s, _, first)) if *s != r.token => {
                return Err(Error::Input(format!(
                    "sentence {sid}: token {} is `{s}` at line {first} but `{}` at line {}",
                    r.record.token_index, r.token, r.record.line
                )));
            }
            Some(_) => {}
            None => {
                surfaces.insert(r.record.token_index, (&r.token, r.pos, r.record.line));
            }
        }
    }
    let n = surfaces.len();
    if let Some((&idx, &(_, _, line))) = surfaces.iter().find(|(i, _)| **i >= n) {
        return Err(Error::TokenIndexOutOfRange {
            path: None,
            sentence_id: sid.to_string(),
            token_index: idx,
            len: n,
            line,
        });
    }
    Ok(surfaces
        .into_iter()
        .map(|(i, (s, pos, _))| Token {
            surface: s.to_string(),
            index: i,
            pos,
            polarity: None,
        })
        .collect())
}
