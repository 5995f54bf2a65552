//! Coarse POS tagging and sentiment-word marking.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{Polarity, PosTag, Token};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SentimentLexicon {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
    /// Words listed in both files; dropped from both.
    conflicts: Vec<String>,
}

impl SentimentLexicon {
    pub fn new<P, N>(positive: P, negative: N) -> Self
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        let clean = |w: &str| {
            let w = w.trim().to_lowercase();
            (!w.is_empty() && !w.starts_with('#')).then_some(w)
        };
        let mut pos: BTreeSet<String> = positive
            .into_iter()
            .filter_map(|w| clean(w.as_ref()))
            .collect();
        let mut neg: BTreeSet<String> = negative
            .into_iter()
            .filter_map(|w| clean(w.as_ref()))
            .collect();
        let conflicts: Vec<String> = pos.intersection(&neg).cloned().collect();
        for w in &conflicts {
            log::warn!("sentiment word `{w}` listed as both positive and negative; dropped");
            pos.remove(w);
            neg.remove(w);
        }
        Self {
            positive: pos,
            negative: neg,
            conflicts,
        }
    }

    /// Loads `positive.txt` / `negative.txt` style files, one word per line.
    pub fn load(positive: &Path, negative: &Path) -> Result<Self> {
        let p = fs::read_to_string(positive).map_err(|e| Error::io(positive, e))?;
        let n = fs::read_to_string(negative).map_err(|e| Error::io(negative, e))?;
        Ok(Self::new(p.lines(), n.lines()))
    }

    pub fn polarity(&self, word: &str) -> Polarity {
        let w = word.to_lowercase();
        if self.positive.contains(&w) {
            Polarity::Pos
        } else if self.negative.contains(&w) {
            Polarity::Neg
        } else {
            Polarity::None
        }
    }

    pub fn conflicts(&self) -> &[String] {
        &self.conflicts
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn mark_sentiment(tokens: &[Token], lexicon: &SentimentLexicon) -> Vec<Polarity> {
    tokens
        .iter()
        .map(|t| lexicon.polarity(&t.surface))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosLexicon {
    words: HashMap<String, PosTag>,
    suffixes: Vec<(String, PosTag)>,
}

impl Default for PosLexicon {
    fn default() -> Self {
        Self {
            words: HashMap::new(),
            suffixes: default_suffix_rules(),
        }
    }
}

fn default_suffix_rules() -> Vec<(String, PosTag)> {
    [
        ("ly", PosTag::RB),
        ("ous", PosTag::JJ),
        ("ful", PosTag::JJ),
        ("ive", PosTag::JJ),
        ("able", PosTag::JJ),
        ("ize", PosTag::VB),
        ("ate", PosTag::VB),
    ]
    .into_iter()
    .map(|(s, t)| (s.to_string(), t))
    .collect()
}

impl PosLexicon {
    pub fn with_words(words: impl IntoIterator<Item = (String, PosTag)>) -> Self {
        Self {
            words: words
                .into_iter()
                .map(|(w, t)| (w.to_lowercase(), t))
                .collect(),
            suffixes: default_suffix_rules(),
        }
    }

    /// Reads `word<TAB>tag` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(&name, i as u64 + 1, "expected `word<TAB>tag`"))?;
            let tag = t
                .parse::<PosTag>()
                .map_err(|e| Error::format(&name, i as u64 + 1, e.to_string()))?;
            words.push((w.trim().to_string(), tag));
        }
        Ok(Self::with_words(words))
    }

    /// Fallback tag for a word without a provided tag.
    pub fn lookup(&self, word: &str, position: usize) -> PosTag {
        let lower = word.to_lowercase();
        if let Some(t) = self.words.get(&lower) {
            return *t;
        }
        if !word
            .chars()
            .all(|c| c.is_alphabetic() || c == '-' || c == '\'')
        {
            return PosTag::OTHER;
        }
        for (suffix, tag) in &self.suffixes {
            // stem of at least two letters
            if lower.len() >= suffix.len() + 2 && lower.ends_with(suffix.as_str()) {
                return *tag;
            }
        }
        if position > 0 && word.chars().next().is_some_and(char::is_uppercase) {
            return PosTag::NN;
        }
        PosTag::OTHER
    }
}

/// Provided tag, then lexicon, then suffix rules, then `OTHER`.
pub fn tag_pos(tokens: &[Token], lexicon: &PosLexicon) -> Vec<PosTag> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| t.pos.unwrap_or_else(|| lexicon.lookup(&t.surface, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<Token> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| Token::new(i, *w))
            .collect()
    }

    #[test]
    fn provided_tag_wins() {
        let mut t = toks(&["quickly"]);
        t[0].pos = Some(PosTag::JJ);
        assert_eq!(tag_pos(&t, &PosLexicon::default()), vec![PosTag::JJ]);
    }

    #[test]
    fn suffix_rules_and_fallback() {
        let lex = PosLexicon::default();
        let t = toks(&[
            "quickly", "zxqv", "famous", "hopeful", "realize", "Paris", ".",
        ]);
        assert_eq!(
            tag_pos(&t, &lex),
            vec![
                PosTag::RB,
                PosTag::OTHER,
                PosTag::JJ,
                PosTag::JJ,
                PosTag::VB,
                PosTag::NN,
                PosTag::OTHER
            ]
        );
        // sentence-initial capital is not a noun cue
        assert_eq!(tag_pos(&toks(&["Paris"]), &lex), vec![PosTag::OTHER]);
        // too short a stem for the rule
        assert_eq!(lex.lookup("fly", 1), PosTag::OTHER);
    }

    #[test]
    fn lexicon_beats_suffix() {
        let lex = PosLexicon::with_words([
            ("family".to_string(), PosTag::NN),
            ("Film".to_string(), PosTag::NN),
        ]);
        assert_eq!(
            tag_pos(&toks(&["family", "film"]), &lex),
            vec![PosTag::NN, PosTag::NN]
        );
    }

    #[test]
    fn sentiment_marks() {
        let lex = SentimentLexicon::new(["good", "great"], ["terrible"]);
        assert_eq!(
            mark_sentiment(&toks(&["Good", "terrible", "film"]), &lex),
            vec![Polarity::Pos, Polarity::Neg, Polarity::None]
        );
    }

    #[test]
    fn conflicting_words_dropped() {
        let lex = SentimentLexicon::new(["good", "wicked"], ["bad", "Wicked"]);
        assert_eq!(lex.conflicts(), &["wicked".to_string()]);
        assert_eq!(lex.polarity("wicked"), Polarity::None);
        assert_eq!(lex.len(), 2);
    }

    proptest! {
        #[test]
        fn tagging_total_and_marking_matches_membership(words in prop::collection::vec(
            prop_oneof![
                prop::sample::select(vec!["good", "Bad", "NICE", "awful", "film", "the", "."]).prop_map(String::from),
                "[a-zA-Z.,!]{1,8}",
            ],
            1..15,
        )) {
            let t: Vec<Token> = words.iter().enumerate().map(|(i, w)| Token::new(i, w.clone())).collect();
            let tags = tag_pos(&t, &PosLexicon::default());
            prop_assert_eq!(tags.len(), t.len());
            let pos = ["good", "nice", "fine"];
            let neg = ["bad", "awful"];
            let lex = SentimentLexicon::new(pos, neg);
            let marks = mark_sentiment(&t, &lex);
            let m = marks.iter().filter(|p| **p != Polarity::None).count();
            let brute = words
                .iter()
                .filter(|w| { let l = w.to_lowercase(); pos.contains(&l.as_str()) || neg.contains(&l.as_str()) })
                .count();
            prop_assert_eq!(m, brute);
        }
    }
}
