//! Experiment configuration: a TOML file with nested sections, validated with
//! explicit key paths in every error message.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{BinningMode, GazeMeasure};
use crate::error::{Error, Result};
use crate::model::{EmbeddingSource, EncoderKind, ModelConfig};
use crate::multitask::MultitaskConfig;
use crate::seed::derive_seed;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every component seed is derived from it by a stable label.
    pub seed: u64,
    pub mode: BinningMode,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub grid: GridConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multitask: Option<MultitaskSection>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Canonical gaze TSV.
    pub gaze: PathBuf,
    /// Sentence labels TSV for the eye-tracking corpus.
    pub labels: PathBuf,
    /// Scored treebank sentences TSV (training split); required by every
    /// stage after ingestion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treebank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_words: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_words: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_lexicon: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub freeze_pretrained: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            embedding_dim: d.embedding_dim,
            hidden_dim: d.hidden_dim,
            freeze_pretrained: d.freeze_pretrained,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEntry {
    /// Short name used in cell ids and report rows.
    pub name: String,
    /// Word-vector text file; absent means randomly initialized embeddings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl EmbeddingEntry {
    pub fn source(&self) -> EmbeddingSource {
        match &self.path {
            Some(p) => EmbeddingSource::Pretrained(p.clone()),
            None => EmbeddingSource::Random,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub embeddings: Vec<EmbeddingEntry>,
    #[serde(default = "default_encoders")]
    pub encoders: Vec<EncoderKind>,
    #[serde(default = "default_attention")]
    pub attention: Vec<bool>,
}

fn default_encoders() -> Vec<EncoderKind> {
    vec![EncoderKind::None, EncoderKind::Lstm, EncoderKind::BiLstm]
}

fn default_attention() -> Vec<bool> {
    vec![true, false]
}

/// Training hyper-parameters; the seed comes from the root seed per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            epochs: d.epochs,
            batch_size: d.batch_size,
            patience: d.patience,
            validation_fraction: d.validation_fraction,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

/// Identifies one embedding × encoder combination of the grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRef {
    pub embedding: String,
    pub encoder: EncoderKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub waor_windows: Vec<usize>,
    pub posar_windows: Vec<usize>,
    /// Attention-enabled cell used for the source matrices and the
    /// correct/wrong grouping; defaults to the first attention cell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary: Option<CellRef>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            waor_windows: vec![1, 2, 3, 4, 5],
            posar_windows: vec![3, 4, 5],
            primary: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitaskSection {
    /// One fine-tuning run per supervising measure.
    #[serde(default = "default_measures")]
    pub measures: Vec<GazeMeasure>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub include_eval_gaze: bool,
    /// Base cell (attention on); defaults to the primary cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<CellRef>,
}

fn default_measures() -> Vec<GazeMeasure> {
    vec![GazeMeasure::NFix]
}

fn default_lambda() -> f64 {
    MultitaskConfig::default().lambda
}

impl MultitaskSection {
    pub fn config_for(&self, measure: GazeMeasure) -> MultitaskConfig {
        MultitaskConfig {
            measure,
            lambda: self.lambda,
            include_eval_gaze: self.include_eval_gaze,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Also write each trained model as a JSON checkpoint.
    pub save_models: bool,
}

/// One trained model configuration of the grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub embedding: String,
    pub encoder: EncoderKind,
    pub attention: bool,
}

impl Cell {
    /// File-system safe identifier, e.g. `glove-BiLSTM-attn`.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.embedding,
            self.encoder.as_str(),
            if self.attention { "attn" } else { "noattn" }
        )
    }

    pub fn matches(&self, r: &CellRef) -> bool {
        self.embedding == r.embedding && self.encoder == r.encoder
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl ExperimentConfig {
    /// Parses TOML text; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::config(e.to_string().trim_end().to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration for ingesting corpus files given directly (no config
    /// file): default grid and analysis settings.
    pub fn for_ingest(data: DataConfig, mode: BinningMode, seed: u64) -> Result<Self> {
        let cfg = Self {
            seed,
            mode,
            data,
            model: ModelSection::default(),
            grid: GridConfig {
                embeddings: vec![EmbeddingEntry {
                    name: "Embedding".into(),
                    path: None,
                }],
                encoders: default_encoders(),
                attention: default_attention(),
            },
            train: TrainSection::default(),
            analysis: AnalysisConfig::default(),
            multitask: None,
            output: OutputConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.gaze);
        fix(&mut self.data.labels);
        for p in [
            &mut self.data.treebank,
            &mut self.data.positive_words,
            &mut self.data.negative_words,
            &mut self.data.pos_lexicon,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for e in &mut self.grid.embeddings {
            if let Some(p) = &mut e.path {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, msg: &str| Err(Error::config(format!("{path}: {msg}")));
        if self.data.positive_words.is_some() != self.data.negative_words.is_some() {
            return err(
                "data.positive_words",
                "positive_words and negative_words must be given together",
            );
        }
        if self.model.embedding_dim == 0 {
            return err("model.embedding_dim", "must be positive");
        }
        if self.model.hidden_dim == 0 {
            return err("model.hidden_dim", "must be positive");
        }
        if self.grid.embeddings.is_empty() {
            return err(
                "grid.embeddings",
                "at least one embedding source is required",
            );
        }
        let mut names = HashSet::new();
        for (i, e) in self.grid.embeddings.iter().enumerate() {
            if !valid_name(&e.name) {
                return err(
                    &format!("grid.embeddings[{i}].name"),
                    "must be non-empty and use only letters, digits, `_` or `.`",
                );
            }
            if !names.insert(e.name.as_str()) {
                return err(
                    &format!("grid.embeddings[{i}].name"),
                    &format!("duplicate name `{}`", e.name),
                );
            }
        }
        if self.grid.encoders.is_empty() {
            return err("grid.encoders", "at least one encoder is required");
        }
        if self.grid.encoders.iter().collect::<HashSet<_>>().len() != self.grid.encoders.len() {
            return err("grid.encoders", "duplicate encoder");
        }
        if self.grid.attention.is_empty() {
            return err("grid.attention", "at least one of true/false is required");
        }
        if self.grid.attention.iter().collect::<HashSet<_>>().len() != self.grid.attention.len() {
            return err("grid.attention", "duplicate value");
        }
        self.train.to_train_config(0).validate()?;
        for (key, windows) in [
            ("analysis.waor_windows", &self.analysis.waor_windows),
            ("analysis.posar_windows", &self.analysis.posar_windows),
        ] {
            if let Some(i) = windows.iter().position(|w| *w == 0) {
                return err(&format!("{key}[{i}]"), "windows must be at least 1");
            }
        }
        if let Some(p) = &self.analysis.primary {
            self.check_cell_ref("analysis.primary", p)?;
            if !self.grid.attention.contains(&true) {
                return err(
                    "analysis.primary",
                    "the grid has no attention-enabled cells",
                );
            }
        }
        if let Some(mt) = &self.multitask {
            if mt.measures.is_empty() {
                return err(
                    "multitask.measures",
                    "at least one gaze measure is required",
                );
            }
            if mt.measures.iter().collect::<HashSet<_>>().len() != mt.measures.len() {
                return err("multitask.measures", "duplicate measure");
            }
            if !(mt.lambda.is_finite() && mt.lambda >= 0.0) {
                return err("multitask.lambda", "must be a finite value >= 0");
            }
            if let Some(b) = &mt.base {
                self.check_cell_ref("multitask.base", b)?;
            }
        }
        Ok(())
    }

    fn check_cell_ref(&self, key: &str, r: &CellRef) -> Result<()> {
        if !self.grid.embeddings.iter().any(|e| e.name == r.embedding) {
            return Err(Error::config(format!(
                "{key}.embedding: `{}` is not in grid.embeddings",
                r.embedding
            )));
        }
        if !self.grid.encoders.contains(&r.encoder) {
            return Err(Error::config(format!(
                "{key}.encoder: `{}` is not in grid.encoders",
                r.encoder.as_str()
            )));
        }
        Ok(())
    }

    /// Grid cells in configuration order (embedding, encoder, attention).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for e in &self.grid.embeddings {
            for enc in &self.grid.encoders {
                for att in &self.grid.attention {
                    out.push(Cell {
                        embedding: e.name.clone(),
                        encoder: *enc,
                        attention: *att,
                    });
                }
            }
        }
        out
    }

    pub fn embedding(&self, name: &str) -> Option<&EmbeddingEntry> {
        self.grid.embeddings.iter().find(|e| e.name == name)
    }

    /// The attention-enabled cell used for matrices and the prediction grouping.
    pub fn primary_cell(&self) -> Option<Cell> {
        if !self.grid.attention.contains(&true) {
            return None;
        }
        let r = self.analysis.primary.clone().unwrap_or_else(|| CellRef {
            embedding: self.grid.embeddings[0].name.clone(),
            encoder: self.grid.encoders[0],
        });
        Some(Cell {
            embedding: r.embedding,
            encoder: r.encoder,
            attention: true,
        })
    }

    /// Base cell for multi-task fine-tuning (always attention-enabled).
    pub fn multitask_base(&self) -> Option<Cell> {
        let mt = self.multitask.as_ref()?;
        match &mt.base {
            Some(r) => Some(Cell {
                embedding: r.embedding.clone(),
                encoder: r.encoder,
                attention: true,
            }),
            None => Some(self.primary_cell().unwrap_or_else(|| Cell {
                embedding: self.grid.embeddings[0].name.clone(),
                encoder: self.grid.encoders[0],
                attention: true,
            })),
        }
    }

    /// Model configuration of a cell. The initialization seed depends only on
    /// embedding and encoder, so the attention on/off pair starts from the
    /// same shared parameters.
    pub fn model_config(&self, cell: &Cell) -> Result<ModelConfig> {
        let entry = self
            .embedding(&cell.embedding)
            .ok_or_else(|| Error::config(format!("unknown embedding `{}`", cell.embedding)))?;
        Ok(ModelConfig {
            embedding: entry.source(),
            embedding_dim: self.model.embedding_dim,
            encoder: cell.encoder,
            hidden_dim: self.model.hidden_dim,
            num_classes: self.mode.num_classes(),
            use_attention: cell.attention,
            seed: derive_seed(
                self.seed,
                &format!("model/{}/{}", cell.embedding, cell.encoder.as_str()),
            ),
            freeze_pretrained: self.model.freeze_pretrained,
        })
    }

    pub fn train_config(&self, cell: &Cell) -> TrainConfig {
        self.train.to_train_config(derive_seed(
            self.seed,
            &format!("train/{}/{}", cell.embedding, cell.encoder.as_str()),
        ))
    }

    pub fn random_attention_seed(&self) -> u64 {
        derive_seed(self.seed, "random-attention")
    }

    /// Every input file named by the configuration, in a fixed order.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut v = vec![self.data.gaze.clone(), self.data.labels.clone()];
        v.extend(
            [
                &self.data.treebank,
                &self.data.positive_words,
                &self.data.negative_words,
                &self.data.pos_lexicon,
            ]
            .into_iter()
            .flatten()
            .cloned(),
        );
        v.extend(self.grid.embeddings.iter().filter_map(|e| e.path.clone()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
mode = "ternary"

[data]
gaze = "gaze.tsv"
labels = "labels.tsv"
treebank = "treebank.tsv"

[grid]
embeddings = [{ name = "Embedding" }, { name = "glove", path = "/abs/glove.txt" }]
encoders = ["None", "bilstm"]
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text, Path::new("/cfg"))
    }

    fn config_error(text: &str) -> String {
        match parse(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_defaults_and_paths() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.data.gaze, PathBuf::from("/cfg/gaze.tsv"));
        assert_eq!(
            c.grid.embeddings[1].path,
            Some(PathBuf::from("/abs/glove.txt"))
        );
        assert_eq!(
            c.grid.encoders,
            vec![EncoderKind::None, EncoderKind::BiLstm]
        );
        assert_eq!(c.grid.attention, vec![true, false]);
        assert_eq!(c.analysis.waor_windows, vec![1, 2, 3, 4, 5]);
        assert_eq!(c.analysis.posar_windows, vec![3, 4, 5]);
        assert_eq!(c.train, TrainSection::default());
        let cells = c.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].id(), "Embedding-None-attn");
        assert_eq!(cells[1].id(), "Embedding-None-noattn");
        assert_eq!(cells[7].id(), "glove-BiLSTM-noattn");
        assert_eq!(c.primary_cell().unwrap().id(), "Embedding-None-attn");
    }

    #[test]
    fn attention_pair_shares_initial_seed_but_not_encoders() {
        let c = parse(MINIMAL).unwrap();
        let cells = c.cells();
        let a = c.model_config(&cells[0]).unwrap();
        let b = c.model_config(&cells[1]).unwrap();
        let d = c.model_config(&cells[2]).unwrap();
        assert_eq!(a.seed, b.seed);
        assert_ne!(a.seed, d.seed);
        assert!(a.use_attention && !b.use_attention);
        assert_eq!(
            c.train_config(&cells[0]).seed,
            c.train_config(&cells[1]).seed
        );
    }

    #[test]
    fn unknown_keys_are_reported() {
        let m = config_error(&format!("{MINIMAL}\n[train]\nlearning_rat = 0.1\n"));
        assert!(m.contains("learning_rat"), "{m}");
    }

    #[test]
    fn validation_errors_name_key_paths() {
        let m = config_error(&MINIMAL.replace("name = \"glove\"", "name = \"Embedding\""));
        assert!(m.starts_with("grid.embeddings[1].name"), "{m}");
        let m = config_error(&format!("{MINIMAL}\n[train]\nbatch_size = 0\n"));
        assert!(m.starts_with("train.batch_size"), "{m}");
        let m = config_error(&format!("{MINIMAL}\n[analysis]\nwaor_windows = [1, 0]\n"));
        assert!(m.starts_with("analysis.waor_windows[1]"), "{m}");
        let m = config_error(&format!("{MINIMAL}\n[multitask]\nlambda = -1.0\n"));
        assert!(m.starts_with("multitask.lambda"), "{m}");
        let m = config_error(&format!("{MINIMAL}\n[analysis]\nprimary = {{ embedding = \"Embedding\", encoder = \"LSTM\" }}\n"));
        assert!(m.starts_with("analysis.primary.encoder"), "{m}");
        let m = config_error(&format!("{MINIMAL}\n[model]\nhidden_dim = 0\n"));
        assert!(m.starts_with("model.hidden_dim"), "{m}");
    }

    #[test]
    fn multitask_section() {
        let c = parse(&format!(
            "{MINIMAL}\n[multitask]\nmeasures = [\"nFix\", \"TRT\"]\nlambda = 0.5\n"
        ))
        .unwrap();
        let mt = c.multitask.as_ref().unwrap();
        assert_eq!(mt.measures, vec![GazeMeasure::NFix, GazeMeasure::Trt]);
        assert_eq!(mt.config_for(GazeMeasure::Trt).lambda, 0.5);
        assert_eq!(c.multitask_base().unwrap().id(), "Embedding-None-attn");
    }

    #[test]
    fn snapshot_round_trips_through_toml() {
        let c = parse(MINIMAL).unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(parse(&text).unwrap(), c);
    }
}
