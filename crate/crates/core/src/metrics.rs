//! Comparison metrics between two attention-like distributions over the
//! tokens of one sentence, the random-attention baseline, and corpus-level
//! averaging.

use std::fmt;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::corpus::{Polarity, PosTag};
use crate::error::{Error, Result};
use crate::model::{AttentionDistribution, AttentionSource};
use crate::seed::rng_for;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "SCC")]
    Scc,
    #[serde(rename = "JSD")]
    Jsd,
    #[serde(rename = "WAOR")]
    Waor,
    #[serde(rename = "POSAR")]
    Posar,
    #[serde(rename = "SWAR")]
    Swar,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Scc,
        MetricKind::Jsd,
        MetricKind::Waor,
        MetricKind::Posar,
        MetricKind::Swar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Scc => "SCC",
            MetricKind::Jsd => "JSD",
            MetricKind::Waor => "WAOR",
            MetricKind::Posar => "POSAR",
            MetricKind::Swar => "SWAR",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a sentence is excluded from corpus averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Constant or all-zero input (or fewer than two tokens for SCC).
    Degenerate,
    /// Sentence shorter than the window.
    TooShort,
    /// Zero denominator (tag absent, no sentiment words).
    Undefined,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Degenerate => "degenerate",
            Flag::TooShort => "too_short",
            Flag::Undefined => "undefined",
        }
    }
}

/// A per-sentence metric outcome. A flagged value is reported but never
/// averaged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub flag: Option<Flag>,
}

impl MetricValue {
    pub fn ok(v: f64) -> Self {
        Self {
            value: Some(v),
            flag: None,
        }
    }

    pub fn flagged(value: Option<f64>, flag: Flag) -> Self {
        Self {
            value,
            flag: Some(flag),
        }
    }

    /// The value when it may enter a corpus average.
    pub fn usable(&self) -> Option<f64> {
        if self.flag.is_none() {
            self.value
        } else {
            None
        }
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::usage(format!(
            "{what}: length mismatch ({a} vs {b})"
        )));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman correlation as the Pearson correlation of average ranks.
pub fn scc(p: &[f64], q: &[f64]) -> Result<MetricValue> {
    same_len(p.len(), q.len(), "scc")?;
    if p.len() < 2 {
        return Ok(MetricValue::flagged(Some(0.0), Flag::Degenerate));
    }
    match pearson(&average_ranks(p), &average_ranks(q)) {
        Some(r) => Ok(MetricValue::ok(r)),
        None => Ok(MetricValue::flagged(Some(0.0), Flag::Degenerate)),
    }
}

fn check_distribution(v: &[f64], what: &str) -> Result<bool> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::usage(format!(
            "{what}: entries must be finite and non-negative"
        )));
    }
    let s: f64 = v.iter().sum();
    if s == 0.0 {
        return Ok(false);
    }
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::usage(format!(
            "{what}: distribution sums to {s}, not 1"
        )));
    }
    Ok(true)
}

/// Jensen–Shannon divergence with base-2 logarithms, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<MetricValue> {
    same_len(p.len(), q.len(), "jsd")?;
    let ok_p = check_distribution(p, "jsd")?;
    let ok_q = check_distribution(q, "jsd")?;
    if !ok_p || !ok_q {
        return Ok(MetricValue::flagged(None, Flag::Degenerate));
    }
    let term = |x: f64, m: f64| {
        if x > 0.0 {
            0.5 * x * (x / m).log2()
        } else {
            0.0
        }
    };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = (a + b) / 2.0;
        // Adding the two terms first keeps jsd(p, q) == jsd(q, p) bit for bit.
        total += term(a, m) + term(b, m);
    }
    Ok(MetricValue::ok(total.clamp(0.0, 1.0)))
}

/// Top-`window` token positions of a distribution under descending sort.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSelection {
    pub window: usize,
    /// Positions in rank order (highest weight first).
    pub selected: Vec<usize>,
}

/// Descending sort with ties broken by earlier position; keeps
/// `min(window, len)` positions.
pub fn top_n(dist: &[f64], window: usize) -> WindowSelection {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order.truncate(window.min(dist.len()));
    WindowSelection {
        window,
        selected: order,
    }
}

fn window_check(len: usize, window: usize, what: &str) -> Result<bool> {
    if window == 0 {
        return Err(Error::usage(format!("{what}: window must be at least 1")));
    }
    Ok(window <= len)
}

/// Word attention overlap rate: `|top_N(p) ∩ top_N(q)| / N`.
pub fn waor(p: &[f64], q: &[f64], window: usize) -> Result<MetricValue> {
    same_len(p.len(), q.len(), "waor")?;
    if !window_check(p.len(), window, "waor")? {
        return Ok(MetricValue::flagged(None, Flag::TooShort));
    }
    let a = top_n(p, window).selected;
    let b = top_n(q, window).selected;
    let shared = a.iter().filter(|i| b.contains(i)).count();
    Ok(MetricValue::ok(shared as f64 / window as f64))
}

/// POS attention rate: the tag's share of the top-N window over its share of
/// the whole sentence.
pub fn posar(tags: &[PosTag], dist: &[f64], pos: PosTag, window: usize) -> Result<MetricValue> {
    same_len(tags.len(), dist.len(), "posar")?;
    if !window_check(dist.len(), window, "posar")? {
        return Ok(MetricValue::flagged(None, Flag::TooShort));
    }
    let in_sentence = tags.iter().filter(|t| **t == pos).count();
    if in_sentence == 0 {
        return Ok(MetricValue::flagged(None, Flag::Undefined));
    }
    let in_window = top_n(dist, window)
        .selected
        .iter()
        .filter(|&&i| tags[i] == pos)
        .count();
    let window_rate = in_window as f64 / window as f64;
    let sentence_rate = in_sentence as f64 / tags.len() as f64;
    Ok(MetricValue::ok(window_rate / sentence_rate))
}

/// Sentiment word attention rate over the top-m tokens, where m is the
/// number of marked tokens.
pub fn swar_mask(is_sentiment: &[bool], dist: &[f64]) -> Result<MetricValue> {
    same_len(is_sentiment.len(), dist.len(), "swar")?;
    let m = is_sentiment.iter().filter(|b| **b).count();
    if m == 0 {
        return Ok(MetricValue::flagged(None, Flag::Undefined));
    }
    let hits = top_n(dist, m)
        .selected
        .iter()
        .filter(|&&i| is_sentiment[i])
        .count();
    Ok(MetricValue::ok(hits as f64 / m as f64))
}

/// SWAR counting both positive and negative words.
pub fn swar(polarities: &[Polarity], dist: &[f64]) -> Result<MetricValue> {
    let mask: Vec<bool> = polarities.iter().map(|p| *p != Polarity::None).collect();
    swar_mask(&mask, dist)
}

/// Uniform draw from the probability simplex: normalized i.i.d. Exp(1)
/// variates from a stream keyed by the sentence id.
pub fn random_attention(sentence_id: &str, n: usize, seed: u64) -> Result<AttentionDistribution> {
    if n == 0 {
        return Err(Error::usage("random attention over an empty sentence"));
    }
    let mut rng = rng_for(seed, &format!("random-attention/{sentence_id}"));
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    // Exp1 can return 0 with vanishing probability; keep weights strictly positive
    w.iter_mut().for_each(|x| *x = x.max(f64::MIN_POSITIVE));
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Ok(AttentionDistribution {
        sentence_id: sentence_id.to_string(),
        source: AttentionSource::Ran,
        weights: w,
    })
}

/// One per-sentence metric value between two sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sentence_id: String,
    pub source_a: AttentionSource,
    /// Absent for single-distribution metrics (POSAR, SWAR).
    pub source_b: Option<AttentionSource>,
    pub metric: MetricKind,
    pub window: Option<usize>,
    pub pos: Option<PosTag>,
    pub value: Option<f64>,
    pub flags: Option<Flag>,
}

impl MetricRow {
    pub fn new(
        sentence_id: &str,
        a: AttentionSource,
        b: Option<AttentionSource>,
        metric: MetricKind,
        v: MetricValue,
    ) -> Self {
        Self {
            sentence_id: sentence_id.to_string(),
            source_a: a,
            source_b: b,
            metric,
            window: None,
            pos: None,
            value: v.value,
            flags: v.flag,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_pos(mut self, pos: PosTag) -> Self {
        self.pos = Some(pos);
        self
    }
}

pub const COMPARISON_HEADER: [&str; 8] = [
    "sentence_id",
    "source_a",
    "source_b",
    "metric",
    "window",
    "pos",
    "value",
    "flags",
];

pub fn write_rows_csv<W: std::io::Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER)?;
    for r in rows {
        w.write_record([
            r.sentence_id.clone(),
            r.source_a.to_string(),
            r.source_b.map(|b| b.to_string()).unwrap_or_default(),
            r.metric.to_string(),
            r.window.map(|n| n.to_string()).unwrap_or_default(),
            r.pos.map(|p| p.as_str().to_string()).unwrap_or_default(),
            r.value.map(|v| v.to_string()).unwrap_or_default(),
            r.flags.map(|f| f.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

/// Corpus mean of one metric plus the number of sentences left out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusAverage {
    pub mean: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Mean over sentences whose value is usable; SCC averages `|value|`.
pub fn corpus_average<'r>(
    rows: impl IntoIterator<Item = &'r MetricRow>,
    metric: MetricKind,
) -> Result<CorpusAverage> {
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for r in rows.into_iter().filter(|r| r.metric == metric) {
        match (r.value, r.flags) {
            (Some(v), None) => {
                sum += if metric == MetricKind::Scc {
                    v.abs()
                } else {
                    v
                };
                used += 1;
            }
            _ => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::Aggregation(format!(
            "no usable {metric} values ({excluded} excluded)"
        )));
    }
    Ok(CorpusAverage {
        mean: sum / used as f64,
        used,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(m: MetricValue) -> f64 {
        m.usable().expect("usable value")
    }

    #[test]
    fn scc_examples() {
        assert!(
            (v(scc(&[0.1, 0.4, 0.2, 0.3], &[0.2, 0.3, 0.1, 0.4]).unwrap()) - 0.6).abs() < 1e-12
        );
        assert!((v(scc(&[0.3, 0.1, 0.6], &[0.3, 0.1, 0.6]).unwrap()) - 1.0).abs() < 1e-12);
        assert!((v(scc(&[0.3, 0.1, 0.6], &[0.1, 0.6, 0.0]).unwrap()) + 1.0).abs() < 1e-12);
        let d = scc(&[0.25; 4], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(d, MetricValue::flagged(Some(0.0), Flag::Degenerate));
        assert_eq!(scc(&[1.0], &[1.0]).unwrap().flag, Some(Flag::Degenerate));
        assert!(matches!(scc(&[1.0, 2.0], &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(
            average_ranks(&[0.1, 0.4, 0.2, 0.3]),
            vec![1.0, 4.0, 2.0, 3.0]
        );
        assert_eq!(
            average_ranks(&[5.0, 1.0, 5.0, 3.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(v(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap()), 0.0);
        assert!((v(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap()) - 1.0).abs() < 1e-12);
        // scipy.spatial.distance.jensenshannon(p, q, base=2) ** 2
        assert!((v(jsd(&[0.5, 0.5], &[0.25, 0.75]).unwrap()) - 0.0487949406953985).abs() < 1e-12);
        assert!(matches!(
            jsd(&[0.5, 0.6], &[0.5, 0.5]),
            Err(Error::Usage(_))
        ));
        assert_eq!(
            jsd(&[0.0, 0.0], &[0.5, 0.5]).unwrap().flag,
            Some(Flag::Degenerate)
        );
        assert!(matches!(jsd(&[0.5], &[0.5, 0.5]), Err(Error::Usage(_))));
    }

    #[test]
    fn waor_examples() {
        let p = [0.1, 0.4, 0.2, 0.3];
        assert_eq!(v(waor(&p, &p, 2).unwrap()), 1.0);
        assert_eq!(
            v(waor(&[0.4, 0.3, 0.2, 0.1], &[0.1, 0.2, 0.3, 0.4], 2).unwrap()),
            0.0
        );
        // top-2(p) = {3,5}, top-2(q) = {5,1} (1-based)
        let p = [0.05, 0.1, 0.4, 0.05, 0.3, 0.1];
        let q = [0.3, 0.1, 0.05, 0.05, 0.4, 0.1];
        assert_eq!(v(waor(&p, &q, 2).unwrap()), 0.5);
        assert_eq!(waor(&p, &q, 7).unwrap().flag, Some(Flag::TooShort));
        assert!(waor(&p, &q, 0).is_err());
    }

    #[test]
    fn tie_break_prefers_earlier_position() {
        assert_eq!(top_n(&[0.2, 0.3, 0.3, 0.2], 3).selected, vec![1, 2, 0]);
    }

    #[test]
    fn posar_examples() {
        use PosTag::*;
        let tags = [OTHER, NN, RB, VB, OTHER, JJ];
        let d = [0.05, 0.3, 0.2, 0.1, 0.05, 0.3];
        assert!((v(posar(&tags, &d, JJ, 3).unwrap()) - 2.0).abs() < 1e-12);
        let tags = [NN, VB, NN, VB];
        assert!((v(posar(&tags, &[0.4, 0.3, 0.2, 0.1], NN, 2).unwrap()) - 1.0).abs() < 1e-12);
        assert_eq!(
            posar(&tags, &[0.25; 4], JJ, 2).unwrap().flag,
            Some(Flag::Undefined)
        );
        assert_eq!(
            posar(&tags, &[0.25; 4], NN, 5).unwrap().flag,
            Some(Flag::TooShort)
        );
    }

    #[test]
    fn swar_examples() {
        use Polarity::*;
        assert_eq!(v(swar(&[Pos, None, Neg], &[0.4, 0.1, 0.5]).unwrap()), 1.0);
        assert_eq!(v(swar(&[Pos, None, Neg], &[0.4, 0.5, 0.1]).unwrap()), 0.5);
        assert_eq!(
            swar(&[None, None], &[0.5, 0.5]).unwrap().flag,
            Some(Flag::Undefined)
        );
    }

    #[test]
    fn random_attention_contracts() {
        for n in [1, 2, 7, 50] {
            let a = random_attention("s1", n, 5).unwrap();
            assert_eq!(a.weights.len(), n);
            assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.weights.iter().all(|w| *w > 0.0));
            assert_eq!(a.source, AttentionSource::Ran);
        }
        assert_eq!(
            random_attention("s1", 6, 5).unwrap(),
            random_attention("s1", 6, 5).unwrap()
        );
        assert_ne!(
            random_attention("s1", 6, 5).unwrap().weights,
            random_attention("s2", 6, 5).unwrap().weights
        );
        assert!(random_attention("s", 0, 1).is_err());
    }

    #[test]
    fn waor_against_random_baseline_matches_expectation() {
        let p: Vec<f64> = (1..=10).map(|i| i as f64 / 55.0).collect();
        let mut total = 0.0;
        for k in 0..10_000 {
            let r = random_attention(&format!("mc{k}"), 10, 2024).unwrap();
            total += v(waor(&p, &r.weights, 4).unwrap());
        }
        assert!((total / 10_000.0 - 0.4).abs() < 0.02);
    }

    fn row(metric: MetricKind, value: Option<f64>, flags: Option<Flag>) -> MetricRow {
        MetricRow {
            sentence_id: "s".into(),
            source_a: AttentionSource::Ma,
            source_b: Some(AttentionSource::Ran),
            metric,
            window: None,
            pos: None,
            value,
            flags,
        }
    }

    #[test]
    fn corpus_average_examples() {
        let rows = [
            row(MetricKind::Scc, Some(-0.5), None),
            row(MetricKind::Scc, Some(0.5), None),
        ];
        assert_eq!(corpus_average(&rows, MetricKind::Scc).unwrap().mean, 0.5);
        let rows = [
            row(MetricKind::Jsd, Some(0.1), None),
            row(MetricKind::Jsd, Some(0.3), None),
            row(MetricKind::Jsd, None, Some(Flag::Degenerate)),
        ];
        let a = corpus_average(&rows, MetricKind::Jsd).unwrap();
        assert!((a.mean - 0.2).abs() < 1e-15);
        assert_eq!((a.used, a.excluded), (2, 1));
        assert_eq!(
            corpus_average(&[row(MetricKind::Scc, Some(-0.3), None)], MetricKind::Scc)
                .unwrap()
                .mean,
            0.3
        );
        let all_out = [row(MetricKind::Swar, None, Some(Flag::Undefined))];
        assert!(matches!(
            corpus_average(&all_out, MetricKind::Swar),
            Err(Error::Aggregation(_))
        ));
    }

    #[test]
    fn comparison_csv_layout() {
        let r = MetricRow::new(
            "s1",
            AttentionSource::Ma,
            None,
            MetricKind::Posar,
            MetricValue::ok(2.0),
        )
        .with_window(3)
        .with_pos(PosTag::JJ);
        let u = MetricRow::new(
            "s2",
            AttentionSource::Ran,
            None,
            MetricKind::Swar,
            MetricValue::flagged(None, Flag::Undefined),
        );
        let mut out = Vec::new();
        write_rows_csv(&[r, u], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "sentence_id,source_a,source_b,metric,window,pos,value,flags\ns1,MA,,POSAR,3,JJ,2,\ns2,RAN,,SWAR,,,,undefined\n"
        );
    }

    /// Top-N set by definition: every chosen position beats every excluded one
    /// under (value desc, position asc). Found by enumerating all subsets.
    fn brute_top(d: &[f64], n: usize) -> Vec<usize> {
        let len = d.len();
        let beats = |i: usize, j: usize| d[i] > d[j] || (d[i] == d[j] && i < j);
        for mask in 0u32..(1 << len) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let inside: Vec<usize> = (0..len).filter(|i| mask >> i & 1 == 1).collect();
            let outside: Vec<usize> = (0..len).filter(|i| mask >> i & 1 == 0).collect();
            if inside.iter().all(|&i| outside.iter().all(|&j| beats(i, j))) {
                return inside;
            }
        }
        unreachable!("a top-N set always exists")
    }

    fn quantized(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u8..5, len)
            .prop_map(|v| v.into_iter().map(|x| x as f64 + 0.5).collect())
    }

    fn normalize(v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    fn tag_strategy() -> impl Strategy<Value = PosTag> {
        prop::sample::select(PosTag::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn selection_matches_subset_enumeration(d in quantized(1..9), n in 1usize..9) {
            let n = n.min(d.len());
            let mut fast = top_n(&d, n).selected;
            fast.sort();
            prop_assert_eq!(fast, brute_top(&d, n));
        }

        #[test]
        fn waor_symmetric_and_bounded(p in quantized(2..12), q in quantized(2..12), n in 1usize..12) {
            let len = p.len().min(q.len());
            let (p, q) = (&p[..len], &q[..len]);
            let a = waor(p, q, n).unwrap();
            prop_assert_eq!(a, waor(q, p, n).unwrap());
            if let Some(x) = a.usable() {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn jsd_symmetric_bounded(p in quantized(1..20), q in quantized(1..20)) {
            let len = p.len().min(q.len());
            let (p, q) = (normalize(&p[..len]), normalize(&q[..len]));
            let a = v(jsd(&p, &q).unwrap());
            let b = v(jsd(&q, &p).unwrap());
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(v(jsd(&p, &p).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn scc_depends_only_on_ranks(p in quantized(2..15), q in quantized(2..15)) {
            let len = p.len().min(q.len());
            let (p, q) = (&p[..len], &q[..len]);
            let t: Vec<f64> = p.iter().map(|x| x.powi(3) * 2.0 + 7.0).collect();
            prop_assert_eq!(scc(p, q).unwrap(), scc(&t, q).unwrap());
        }

        #[test]
        fn posar_accounting_identity(pairs in prop::collection::vec((tag_strategy(), 0u8..5), 1..12), n in 1usize..12) {
            let tags: Vec<PosTag> = pairs.iter().map(|p| p.0).collect();
            let d: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            prop_assume!(n <= tags.len());
            let len = tags.len() as f64;
            let window = top_n(&d, n).selected;
            let mut reconstructed = 0.0;
            for tag in PosTag::ALL {
                let count = tags.iter().filter(|t| **t == tag).count() as f64;
                if let Some(r) = posar(&tags, &d, tag, n).unwrap().usable() {
                    let from_rate = r * (count / len) * n as f64;
                    let direct = window.iter().filter(|&&i| tags[i] == tag).count() as f64;
                    prop_assert!((from_rate - direct).abs() < 1e-9);
                    reconstructed += from_rate;
                }
            }
            prop_assert!((reconstructed - n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn random_vectors_match_brute_force_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let len = rng.random_range(1..=8);
            let d: Vec<f64> = (0..len).map(|_| rng.random_range(0..4) as f64).collect();
            let e: Vec<f64> = (0..len).map(|_| rng.random_range(0..4) as f64).collect();
            let sent: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
            let tags: Vec<PosTag> = (0..len)
                .map(|_| PosTag::ALL[rng.random_range(0..5)])
                .collect();
            for n in 1..=len {
                let (a, b) = (brute_top(&d, n), brute_top(&e, n));
                let shared = a.iter().filter(|i| b.contains(i)).count();
                assert_eq!(v(waor(&d, &e, n).unwrap()), shared as f64 / n as f64);
                for tag in PosTag::ALL {
                    let total = tags.iter().filter(|t| **t == tag).count();
                    let got = posar(&tags, &d, tag, n).unwrap();
                    if total == 0 {
                        assert_eq!(got.flag, Some(Flag::Undefined));
                    } else {
                        let hit = a.iter().filter(|&&i| tags[i] == tag).count();
                        let want = (hit as f64 / n as f64) / (total as f64 / len as f64);
                        assert_eq!(v(got), want);
                    }
                }
            }
            let m = sent.iter().filter(|b| **b).count();
            let got = swar_mask(&sent, &d).unwrap();
            if m == 0 {
                assert_eq!(got.flag, Some(Flag::Undefined));
            } else {
                let hits = brute_top(&d, m).iter().filter(|&&i| sent[i]).count();
                assert_eq!(v(got), hits as f64 / m as f64);
            }
        }
    }
}
