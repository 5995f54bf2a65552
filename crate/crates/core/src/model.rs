//! Additive-attention sentiment classifier.
//!
//! word vectors → optional (Bi)LSTM encoder → attention layer → dense output.
//! Attention scores are `s(x_i) = Vᵀ tanh(x_i)` with no projection or bias,
//! and the weights `α` are the softmax of the scores over the sentence.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{GazeMeasure, Sentence};
use crate::error::{Error, Result};
use crate::ndgraph::{softmax_in_place, Graph, NodeId, Tensor};

pub const UNK: &str = "<unk>";
const INIT_SCALE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "path")]
pub enum EmbeddingSource {
    Random,
    Pretrained(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncoderKind {
    None,
    Lstm,
    BiLstm,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::None => "None",
            EncoderKind::Lstm => "LSTM",
            EncoderKind::BiLstm => "BiLSTM",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(EncoderKind::None),
            "lstm" => Ok(EncoderKind::Lstm),
            "bilstm" => Ok(EncoderKind::BiLstm),
            other => Err(Error::Input(format!("unknown encoder `{other}`"))),
        }
    }
}

impl Serialize for EncoderKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EncoderKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding: EmbeddingSource,
    pub embedding_dim: usize,
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub use_attention: bool,
    pub seed: u64,
    /// Keep file vectors fixed; only zero-filled OOV rows and UNK train.
    #[serde(default)]
    pub freeze_pretrained: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingSource::Random,
            embedding_dim: 300,
            encoder: EncoderKind::None,
            hidden_dim: 128,
            num_classes: 2,
            use_attention: true,
            seed: 0,
            freeze_pretrained: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be positive"));
        }
        if self.encoder != EncoderKind::None && self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim must be positive"));
        }
        if !(2..=3).contains(&self.num_classes) {
            return Err(Error::config(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Width of the encoder output, which is also the length of `V`.
    pub fn context_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::None => self.embedding_dim,
            EncoderKind::Lstm => self.hidden_dim,
            EncoderKind::BiLstm => 2 * self.hidden_dim,
        }
    }
}

/// Lowercased word index; id 0 is the shared unknown-word row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Self {
            words: vec![UNK.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(UNK.to_string(), 0);
        for w in words {
            let w = w.to_lowercase();
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    /// Vocabulary of every token in `sentences`, in first-appearance order.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        Self::new(
            sentences
                .into_iter()
                .flat_map(|s| s.tokens.iter().map(|t| t.surface.clone())),
        )
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn ids(&self, sentence: &Sentence) -> Vec<usize> {
        sentence
            .tokens
            .iter()
            .map(|t| self.id(&t.surface))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OovReport {
    pub dim: usize,
    pub oov_count: usize,
    pub oov_words: Vec<String>,
    /// Per vocabulary row: zero-filled and therefore trainable.
    pub trainable: Vec<bool>,
}

/// Reads a word-vector text file (`word v1 … vd` per line, optional
/// `count dim` header) and builds a table for `vocab`. Words absent from the
/// file get zero rows flagged trainable.
pub fn load_embeddings(path: &Path, vocab: &Vocab) -> Result<(Tensor, OovReport)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string(), vocab)
}

pub fn read_embeddings<R: BufRead>(
    reader: R,
    name: &str,
    vocab: &Vocab,
) -> Result<(Tensor, OovReport)> {
    let mut dim: Option<usize> = None;
    let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut saw_vector = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| Error::format(name, lineno, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if i == 0
            && values.len() == 1
            && word.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok()
        {
            continue;
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::format(
                    name,
                    lineno,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            _ => {}
        }
        if values.is_empty() {
            return Err(Error::format(name, lineno, "word without vector values"));
        }
        saw_vector = true;
        let id = vocab.id(word);
        if id == 0 || rows.contains_key(&id) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            values.iter().map(|v| v.parse::<f64>()).collect();
        let parsed = parsed.map_err(|_| Error::format(name, lineno, "unparseable vector value"))?;
        if parsed.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(name, lineno, "non-finite vector value"));
        }
        rows.insert(id, parsed);
    }
    let (Some(dim), true) = (dim, saw_vector) else {
        return Err(Error::format(name, 0, "empty word-vector file"));
    };
    let mut table = Tensor::zeros(vocab.len(), dim);
    let mut trainable = vec![true; vocab.len()];
    let mut oov_words = Vec::new();
    for id in 1..vocab.len() {
        match rows.get(&id) {
            Some(v) => {
                table.row_mut(id).copy_from_slice(v);
                trainable[id] = false;
            }
            None => oov_words.push(vocab.word(id).to_string()),
        }
    }
    Ok((
        table,
        OovReport {
            dim,
            oov_count: oov_words.len(),
            oov_words,
            trainable,
        },
    ))
}

/// Gate weights of one LSTM direction; gate order input, forget, cell, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: uniform(4 * hidden, input, rng),
            u: uniform(4 * hidden, hidden, rng),
            b: uniform(4 * hidden, 1, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub attention: Tensor,
    pub forward: Option<LstmParams>,
    pub backward: Option<LstmParams>,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-INIT_SCALE..INIT_SCALE))
}

impl ModelParams {
    /// Canonical order: embedding, attention, forward (w, u, b), backward
    /// (w, u, b), output weight, output bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding, &self.attention];
        for l in [&self.forward, &self.backward].into_iter().flatten() {
            out.extend([&l.w, &l.u, &l.b]);
        }
        out.extend([&self.out_weight, &self.out_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding, &mut self.attention];
        for l in [&mut self.forward, &mut self.backward]
            .into_iter()
            .flatten()
        {
            out.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        out.extend([&mut self.out_weight, &mut self.out_bias]);
        out
    }

    /// Rebuilds from tensors in [`ModelParams::tensors`] order.
    pub fn from_tensors(template: &ModelParams, tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("tensor count matches layout");
        let embedding = next();
        let attention = next();
        let forward = template.forward.as_ref().map(|_| LstmParams {
            w: next(),
            u: next(),
            b: next(),
        });
        let backward = template.backward.as_ref().map(|_| LstmParams {
            w: next(),
            u: next(),
            b: next(),
        });
        Self {
            embedding,
            attention,
            forward,
            backward,
            out_weight: next(),
            out_bias: next(),
        }
    }

    pub fn register<'a>(&'a self, g: &mut Graph<'a>) -> ParamNodes {
        let ids: Vec<NodeId> = self.tensors().into_iter().map(|t| g.param(t)).collect();
        self.nodes_from_ids(&ids)
    }

    /// Maps leaf ids (in canonical order) onto named slots.
    pub fn nodes_from_ids(&self, ids: &[NodeId]) -> ParamNodes {
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("id count matches layout");
        let embedding = next();
        let attention = next();
        let forward = self.forward.as_ref().map(|_| [next(), next(), next()]);
        let backward = self.backward.as_ref().map(|_| [next(), next(), next()]);
        ParamNodes {
            embedding,
            attention,
            forward,
            backward,
            out_weight: next(),
            out_bias: next(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParamNodes {
    pub embedding: NodeId,
    pub attention: NodeId,
    pub forward: Option<[NodeId; 3]>,
    pub backward: Option<[NodeId; 3]>,
    pub out_weight: NodeId,
    pub out_bias: NodeId,
}

/// Nodes produced by one forward pass over a sentence.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub hidden: Vec<NodeId>,
    /// Softmax weights over tokens, `(N, 1)`; absent without attention.
    pub attention: Option<NodeId>,
    pub context: NodeId,
    pub logits: NodeId,
}

fn lstm_pass(
    g: &mut Graph<'_>,
    inputs: &[NodeId],
    p: [NodeId; 3],
    hidden: usize,
) -> Result<Vec<NodeId>> {
    let [w, u, b] = p;
    let mut h = g.constant(Tensor::zeros(hidden, 1));
    let mut c = g.constant(Tensor::zeros(hidden, 1));
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let wx = g.matvec(w, x)?;
        let uh = g.matvec(u, h)?;
        let z = g.add(wx, uh)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 0, hidden)?;
        let i = g.sigmoid(i);
        let f = g.slice(z, hidden, hidden)?;
        let f = g.sigmoid(f);
        let cand = g.slice(z, 2 * hidden, hidden)?;
        let cand = g.tanh(cand);
        let o = g.slice(z, 3 * hidden, hidden)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
        out.push(h);
    }
    Ok(out)
}

/// Per-token hidden vectors: identity, forward LSTM states, or
/// `[forward; backward]` concatenations.
pub fn encode(
    g: &mut Graph<'_>,
    embedded: &[NodeId],
    kind: EncoderKind,
    nodes: &ParamNodes,
    hidden: usize,
) -> Result<Vec<NodeId>> {
    let missing = || Error::usage("encoder parameters not initialized");
    match kind {
        EncoderKind::None => Ok(embedded.to_vec()),
        EncoderKind::Lstm => lstm_pass(g, embedded, nodes.forward.ok_or_else(missing)?, hidden),
        EncoderKind::BiLstm => {
            let fwd = lstm_pass(g, embedded, nodes.forward.ok_or_else(missing)?, hidden)?;
            let rev: Vec<NodeId> = embedded.iter().rev().copied().collect();
            let mut bwd = lstm_pass(g, &rev, nodes.backward.ok_or_else(missing)?, hidden)?;
            bwd.reverse();
            fwd.into_iter()
                .zip(bwd)
                .map(|(f, b)| g.concat(&[f, b]))
                .collect()
        }
    }
}

/// Builds the classifier graph for one sentence of vocabulary ids.
pub fn forward(
    g: &mut Graph<'_>,
    nodes: &ParamNodes,
    config: &ModelConfig,
    token_ids: &[usize],
) -> Result<ForwardNodes> {
    if token_ids.is_empty() {
        return Err(Error::usage("cannot classify an empty sentence"));
    }
    let embedded: Vec<NodeId> = token_ids
        .iter()
        .map(|&id| g.gather_row(nodes.embedding, id))
        .collect::<Result<_>>()?;
    let hidden = encode(g, &embedded, config.encoder, nodes, config.hidden_dim)?;
    let states = g.stack(&hidden)?;
    let (context, attention) = if config.use_attention {
        let act = g.tanh(states);
        let scores = g.matvec(act, nodes.attention)?;
        let alpha = g.softmax(scores)?;
        (g.tmatvec(states, alpha)?, Some(alpha))
    } else {
        (g.mean(states)?, None)
    };
    let logits = g.matvec(nodes.out_weight, context)?;
    let logits = g.add(logits, nodes.out_bias)?;
    Ok(ForwardNodes {
        hidden,
        attention,
        context,
        logits,
    })
}

/// `Vᵀ tanh(x)`.
pub fn attention_score(x: &[f64], v: &[f64]) -> Result<f64> {
    if x.len() != v.len() {
        return Err(Error::usage(format!(
            "attention score: dim(x) = {} but dim(V) = {}",
            x.len(),
            v.len()
        )));
    }
    Ok(x.iter().zip(v).map(|(xi, vi)| vi * xi.tanh()).sum())
}

/// Softmax of a sentence's token scores.
pub fn attention_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::usage("attention over an empty sentence"));
    }
    let mut w = scores.to_vec();
    softmax_in_place(&mut w);
    Ok(w)
}

/// Where an attention-like distribution over tokens came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionSource {
    /// Machine attention from the single-task classifier.
    Ma,
    /// Machine attention after gaze-supervised fine-tuning.
    MaFt,
    /// Random baseline.
    Ran,
    Gaze(GazeMeasure),
}

impl AttentionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionSource::Ma => "MA",
            AttentionSource::MaFt => "MA_ft",
            AttentionSource::Ran => "RAN",
            AttentionSource::Gaze(m) => m.as_str(),
        }
    }
}

impl std::fmt::Display for AttentionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttentionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MA" => Ok(AttentionSource::Ma),
            "MA_ft" => Ok(AttentionSource::MaFt),
            "RAN" => Ok(AttentionSource::Ran),
            other => other
                .parse::<GazeMeasure>()
                .map(AttentionSource::Gaze)
                .map_err(|_| Error::Input(format!("unknown attention source `{other}`"))),
        }
    }
}

impl Serialize for AttentionSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AttentionSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-token weights for one sentence, summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDistribution {
    pub sentence_id: String,
    pub source: AttentionSource,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub probabilities: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

impl Classification {
    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
    /// Rows of the embedding table the optimizer may update; `None` = all.
    #[serde(default)]
    pub trainable_rows: Option<Vec<bool>>,
}

const CHECKPOINT_FORMAT: &str = "gazeattn-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    /// Initializes parameters: uniform(−0.05, 0.05) from `config.seed`, a zero
    /// UNK row, and file vectors (zero for OOV words) when pretrained.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<(Self, Option<OovReport>)> {
        let mut config = config;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (embedding, report) = match &config.embedding {
            EmbeddingSource::Random => {
                config.validate()?;
                let mut t = uniform(vocab.len(), config.embedding_dim, &mut rng);
                t.row_mut(0).fill(0.0);
                (t, None)
            }
            EmbeddingSource::Pretrained(path) => {
                let (t, report) = load_embeddings(path, &vocab)?;
                if report.dim != config.embedding_dim {
                    log::info!(
                        "embedding_dim {} replaced by file dimension {}",
                        config.embedding_dim,
                        report.dim
                    );
                    config.embedding_dim = report.dim;
                }
                config.validate()?;
                (t, Some(report))
            }
        };
        let d_ctx = config.context_dim();
        let attention = uniform(d_ctx, 1, &mut rng);
        let (forward, backward) = match config.encoder {
            EncoderKind::None => (None, None),
            EncoderKind::Lstm => (
                Some(LstmParams::new(
                    config.embedding_dim,
                    config.hidden_dim,
                    &mut rng,
                )),
                None,
            ),
            EncoderKind::BiLstm => (
                Some(LstmParams::new(
                    config.embedding_dim,
                    config.hidden_dim,
                    &mut rng,
                )),
                Some(LstmParams::new(
                    config.embedding_dim,
                    config.hidden_dim,
                    &mut rng,
                )),
            ),
        };
        let out_weight = uniform(config.num_classes, d_ctx, &mut rng);
        let out_bias = uniform(config.num_classes, 1, &mut rng);
        let trainable_rows = match (&report, config.freeze_pretrained) {
            (Some(r), true) => Some(r.trainable.clone()),
            _ => None,
        };
        let model = Self {
            config,
            vocab,
            params: ModelParams {
                embedding,
                attention,
                forward,
                backward,
                out_weight,
                out_bias,
            },
            trainable_rows,
        };
        Ok((model, report))
    }

    pub fn token_ids(&self, sentence: &Sentence) -> Vec<usize> {
        self.vocab.ids(sentence)
    }

    /// Class probabilities and, with attention enabled, the token weights.
    pub fn classify(&self, sentence: &Sentence) -> Result<Classification> {
        let ids = self.token_ids(sentence);
        let mut g = Graph::new();
        let nodes = self.params.register(&mut g);
        let f = forward(&mut g, &nodes, &self.config, &ids)?;
        let probs = g.softmax(f.logits)?;
        Ok(Classification {
            probabilities: g.value(probs).data().to_vec(),
            attention: f.attention.map(|a| g.value(a).data().to_vec()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string(&ck)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut model = ck.model;
        model.vocab.rebuild_index();
        model.config.validate()?;
        if !model.params.all_finite() {
            return Err(Error::Input(
                "checkpoint contains non-finite parameters".into(),
            ));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })?)
    }
}
