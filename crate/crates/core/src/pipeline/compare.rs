//! Comparison stage: per-sentence metric rows between attention sources and
//! gaze measures, corpus averages, source matrices and shape statistics.

use std::collections::HashMap;

use crate::corpus::{GazeMeasure, Polarity, PosTag, Sentence};
use crate::error::{Error, Result};
use crate::metrics::{
    corpus_average, jsd, posar, scc, swar, waor, CorpusAverage, Flag, MetricKind, MetricRow,
    MetricValue,
};
use crate::model::{AttentionDistribution, AttentionSource};
use crate::stats::{dist_stats, DistStats};

/// Windows used by the windowed metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub waor: Vec<usize>,
    pub posar: Vec<usize>,
}

/// Column order of the source matrices.
pub fn matrix_sources() -> Vec<AttentionSource> {
    let mut v = vec![AttentionSource::Ma, AttentionSource::Ran];
    v.extend(GazeMeasure::ALL.map(AttentionSource::Gaze));
    v
}

fn is_degenerate(d: &[f64]) -> bool {
    d.iter().sum::<f64>() == 0.0
}

fn degenerate() -> MetricValue {
    MetricValue::flagged(None, Flag::Degenerate)
}

/// Distributions available for one sentence: the machine sources followed
/// by the four gaze measures (when the sentence has gaze).
fn sources_for<'a>(
    sentence: &'a Sentence,
    machine: &[(AttentionSource, &'a [f64])],
) -> Vec<(AttentionSource, &'a [f64])> {
    let mut v = machine.to_vec();
    if sentence.gaze.is_some() {
        for m in GazeMeasure::ALL {
            v.push((
                AttentionSource::Gaze(m),
                sentence.gaze(m).expect("gaze present"),
            ));
        }
    }
    v
}

/// Pairwise rows (SCC, JSD, WAOR per window) of `a` against `b`. A source
/// with an all-zero distribution yields rows flagged `degenerate`.
pub fn pair_rows(
    sentence_id: &str,
    a: (AttentionSource, &[f64]),
    b: (AttentionSource, &[f64]),
    waor_windows: &[usize],
) -> Result<Vec<MetricRow>> {
    let (sa, pa) = a;
    let (sb, pb) = b;
    let skip = is_degenerate(pa) || is_degenerate(pb);
    let value = |f: &dyn Fn() -> Result<MetricValue>| if skip { Ok(degenerate()) } else { f() };
    let mut rows = vec![
        MetricRow::new(
            sentence_id,
            sa,
            Some(sb),
            MetricKind::Scc,
            value(&|| scc(pa, pb))?,
        ),
        MetricRow::new(
            sentence_id,
            sa,
            Some(sb),
            MetricKind::Jsd,
            value(&|| jsd(pa, pb))?,
        ),
    ];
    for &w in waor_windows {
        rows.push(
            MetricRow::new(
                sentence_id,
                sa,
                Some(sb),
                MetricKind::Waor,
                value(&|| waor(pa, pb, w))?,
            )
            .with_window(w),
        );
    }
    Ok(rows)
}

/// Single-source rows: POSAR per window and tracked tag, then SWAR.
pub fn single_rows(
    sentence: &Sentence,
    source: AttentionSource,
    dist: &[f64],
    posar_windows: &[usize],
) -> Result<Vec<MetricRow>> {
    let sid = sentence.sentence_id.as_str();
    let tags: Vec<PosTag> = sentence
        .tokens
        .iter()
        .map(|t| t.pos.unwrap_or(PosTag::OTHER))
        .collect();
    let polarities: Vec<Polarity> = sentence
        .tokens
        .iter()
        .map(|t| t.polarity.unwrap_or(Polarity::None))
        .collect();
    let skip = is_degenerate(dist);
    let mut rows = Vec::new();
    for &w in posar_windows {
        for pos in PosTag::TRACKED {
            let v = if skip {
                degenerate()
            } else {
                posar(&tags, dist, pos, w)?
            };
            rows.push(
                MetricRow::new(sid, source, None, MetricKind::Posar, v)
                    .with_window(w)
                    .with_pos(pos),
            );
        }
    }
    let v = if skip {
        degenerate()
    } else {
        swar(&polarities, dist)?
    };
    rows.push(MetricRow::new(sid, source, None, MetricKind::Swar, v));
    Ok(rows)
}

/// Every comparison row for one attention-enabled model.
///
/// For each sentence: machine attention and the random baseline against
/// each gaze measure (SCC, JSD, WAOR), then POSAR/SWAR for every source.
pub fn comparison_rows(
    sentences: &[Sentence],
    ma: &[AttentionDistribution],
    ran: &[AttentionDistribution],
    windows: &Windows,
) -> Result<Vec<MetricRow>> {
    let ma = by_id(ma)?;
    let ran = by_id(ran)?;
    let mut rows = Vec::new();
    for s in sentences {
        let sid = s.sentence_id.as_str();
        let m = lookup(&ma, sid, s.len())?;
        let r = lookup(&ran, sid, s.len())?;
        let machine = [(AttentionSource::Ma, m), (AttentionSource::Ran, r)];
        let all = sources_for(s, &machine);
        for &a in &machine {
            for &b in &all[machine.len()..] {
                rows.extend(pair_rows(sid, a, b, &windows.waor)?);
            }
        }
        for &(src, d) in &all {
            rows.extend(single_rows(s, src, d, &windows.posar)?);
        }
    }
    Ok(rows)
}

fn by_id(dists: &[AttentionDistribution]) -> Result<HashMap<&str, &[f64]>> {
    let mut m = HashMap::with_capacity(dists.len());
    for d in dists {
        if m.insert(d.sentence_id.as_str(), d.weights.as_slice())
            .is_some()
        {
            return Err(Error::Internal(format!(
                "duplicate attention for sentence {}",
                d.sentence_id
            )));
        }
    }
    Ok(m)
}

fn lookup<'a>(m: &HashMap<&str, &'a [f64]>, sid: &str, len: usize) -> Result<&'a [f64]> {
    let d = m
        .get(sid)
        .ok_or_else(|| Error::Internal(format!("no attention for sentence {sid}")))?;
    if d.len() != len {
        return Err(Error::Internal(format!(
            "attention for sentence {sid} has {} weights for {len} tokens",
            d.len()
        )));
    }
    Ok(d)
}

/// Key identifying one aggregated series of metric rows.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SeriesKey {
    pub source_a: AttentionSource,
    pub source_b: Option<AttentionSource>,
    pub metric: MetricKind,
    pub window: Option<usize>,
    pub pos: Option<PosTag>,
}

/// Corpus average of one series; `average` is `None` when every row was
/// flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSummary {
    pub key: SeriesKey,
    pub average: Option<CorpusAverage>,
    pub excluded: usize,
}

/// Groups rows by series in first-appearance order and averages each.
pub fn summarize(rows: &[MetricRow]) -> Result<Vec<SeriesSummary>> {
    let mut order: Vec<SeriesKey> = Vec::new();
    let mut groups: HashMap<SeriesKey, Vec<&MetricRow>> = HashMap::new();
    for r in rows {
        let key = SeriesKey {
            source_a: r.source_a,
            source_b: r.source_b,
            metric: r.metric,
            window: r.window,
            pos: r.pos,
        };
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            match corpus_average(members.iter().copied(), key.metric) {
                Ok(avg) => Ok(SeriesSummary {
                    key,
                    excluded: avg.excluded,
                    average: Some(avg),
                }),
                Err(Error::Aggregation(_)) => Ok(SeriesSummary {
                    key,
                    average: None,
                    excluded: members.len(),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "cell", "source_a", "source_b", "metric", "window", "pos", "mean", "used", "excluded",
];

pub fn write_summary_csv<W: std::io::Write>(
    cells: &[(String, Vec<SeriesSummary>)],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (cell, series) in cells {
        for s in series {
            w.write_record([
                cell.clone(),
                s.key.source_a.to_string(),
                opt(s.key.source_b),
                s.key.metric.as_str().to_string(),
                opt(s.key.window),
                opt(s.key.pos.map(|p| p.as_str())),
                opt(s.average.map(|a| a.mean)),
                s.average.map(|a| a.used).unwrap_or(0).to_string(),
                s.excluded.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

/// Square matrix of corpus-averaged SCC (mean |SCC|) or JSD between every
/// pair of sources; `None` where no sentence gave a usable value.
pub fn source_matrix(
    sentences: &[Sentence],
    ma: &[AttentionDistribution],
    ran: &[AttentionDistribution],
    metric: MetricKind,
) -> Result<Vec<Vec<Option<f64>>>> {
    if !matches!(metric, MetricKind::Scc | MetricKind::Jsd) {
        return Err(Error::usage(
            "source matrices are defined for SCC and JSD only",
        ));
    }
    let ma = by_id(ma)?;
    let ran = by_id(ran)?;
    let sources = matrix_sources();
    let k = sources.len();
    let mut cells: Vec<Vec<Vec<MetricRow>>> = vec![vec![Vec::new(); k]; k];
    for s in sentences.iter().filter(|s| s.gaze.is_some()) {
        let sid = s.sentence_id.as_str();
        let machine = [
            (AttentionSource::Ma, lookup(&ma, sid, s.len())?),
            (AttentionSource::Ran, lookup(&ran, sid, s.len())?),
        ];
        let all = sources_for(s, &machine);
        for (i, &(sa, pa)) in all.iter().enumerate() {
            for (j, &(sb, pb)) in all.iter().enumerate() {
                let v = if is_degenerate(pa) || is_degenerate(pb) {
                    degenerate()
                } else if metric == MetricKind::Scc {
                    scc(pa, pb)?
                } else {
                    jsd(pa, pb)?
                };
                cells[i][j].push(MetricRow::new(sid, sa, Some(sb), metric, v));
            }
        }
    }
    cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|rows| match corpus_average(rows, metric) {
                    Ok(a) => Ok(Some(a.mean)),
                    Err(Error::Aggregation(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect()
}

pub fn write_matrix_csv<W: std::io::Write>(matrix: &[Vec<Option<f64>>], out: W) -> Result<()> {
    let sources = matrix_sources();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["source".to_string()];
    header.extend(sources.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (src, row) in sources.iter().zip(matrix) {
        let mut rec = vec![src.to_string()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

fn summary_mean(series: &[SeriesSummary], pred: impl Fn(&SeriesKey) -> bool) -> String {
    series
        .iter()
        .find(|s| pred(&s.key))
        .and_then(|s| s.average)
        .map(|a| a.mean.to_string())
        .unwrap_or_default()
}

/// POSAR means laid out as source × tag rows with one column per window.
pub fn write_posar_table<W: std::io::Write>(
    cells: &[(String, Vec<SeriesSummary>)],
    windows: &[usize],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell".to_string(), "source".to_string(), "pos".to_string()];
    header.extend(windows.iter().map(|n| format!("top{n}")));
    w.write_record(&header)?;
    for (cell, series) in cells {
        let mut sources: Vec<AttentionSource> = Vec::new();
        for s in series.iter().filter(|s| s.key.metric == MetricKind::Posar) {
            if !sources.contains(&s.key.source_a) {
                sources.push(s.key.source_a);
            }
        }
        for src in sources {
            for pos in PosTag::TRACKED {
                let mut rec = vec![cell.clone(), src.to_string(), pos.as_str().to_string()];
                for &n in windows {
                    rec.push(summary_mean(series, |k| {
                        k.metric == MetricKind::Posar
                            && k.source_a == src
                            && k.pos == Some(pos)
                            && k.window == Some(n)
                    }));
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

/// WAOR means per source pair with one column per window.
pub fn write_waor_trend<W: std::io::Write>(
    cells: &[(String, Vec<SeriesSummary>)],
    windows: &[usize],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "cell".to_string(),
        "source_a".to_string(),
        "source_b".to_string(),
    ];
    header.extend(windows.iter().map(|n| format!("top{n}")));
    w.write_record(&header)?;
    for (cell, series) in cells {
        let mut pairs: Vec<(AttentionSource, AttentionSource)> = Vec::new();
        for s in series.iter().filter(|s| s.key.metric == MetricKind::Waor) {
            let p = (s.key.source_a, s.key.source_b.expect("pairwise metric"));
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
        for (a, b) in pairs {
            let mut rec = vec![cell.clone(), a.to_string(), b.to_string()];
            for &n in windows {
                rec.push(summary_mean(series, |k| {
                    k.metric == MetricKind::Waor
                        && k.source_a == a
                        && k.source_b == Some(b)
                        && k.window == Some(n)
                }));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

/// Shape statistics of every distribution with at least two tokens, keyed
/// by sentence id in input order.
pub fn shape_stats(dists: &[AttentionDistribution]) -> Result<Vec<(String, DistStats)>> {
    dists
        .iter()
        .filter(|d| d.weights.len() >= 2)
        .map(|d| Ok((d.sentence_id.clone(), dist_stats(&d.weights)?)))
        .collect()
}
