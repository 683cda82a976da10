//! Declarative experiment configuration.
//!
//! One TOML document describes everything a run needs: the dataset (a
//! Jodie-format CSV or a synthetic generator spec), the chronological split,
//! the adaptation paradigm, model dimensions, optimization settings, seeds,
//! and the output directory. [`ExperimentConfig::load`] parses and validates
//! the document *before any compute*; every failure names the offending
//! field by its dotted path (`model.dropout`, `data.n_users`, …) so a bad
//! config is cheap to fix.
//!
//! Defaults mirror the reference hyper-parameter table: batch size 200 for
//! pre-training and 100 for adaptation, learning rate 1e-4, and embedding /
//! memory / prompt widths of 172. Values the table leaves unstated (time
//! width, positional width, neighbor budget, inductive fraction) carry
//! documented house defaults.
//!
//! A minimal document:
//!
//! ```toml
//! [data]
//! source = "synthetic"
//!
//! [data.synthetic]
//! kind = "planted_drift"
//! n_users = 100
//! n_items = 60
//! n_events = 4000
//! seed = 7
//! ```
//!
//! Everything omitted takes its default. [`ExperimentConfig::content_hash`]
//! fingerprints the fully-resolved document, and [`DataCfg::content_hash`]
//! fingerprints the dataset itself (file bytes, or the generator spec),
//! which together make runs reconstructible from their manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneDims, TrainCfg};
use crate::checkpoint::hash_bytes;
use crate::dataio::{load_jodie_csv, resolve_data_path};
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::orchestrate::{Mode, NcStrategy, Task};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::tprog::{PromptCfg, PromptKind};

/// Sweep axes accepted by [`ExperimentConfig::apply_axis`].
pub const SWEEP_AXES: [&str; 3] = ["prompt_fraction", "prompt_dim", "pretrain_fraction"];

/// A complete, validated description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataCfg,
    #[serde(default)]
    pub split: SplitCfg,
    #[serde(default)]
    pub paradigm: ParadigmCfg,
    #[serde(default)]
    pub model: ModelCfg,
    #[serde(default)]
    pub train: OptimCfg,
    #[serde(default)]
    pub run: RunCfg,
}

/// Where the interaction stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCfg {
    pub source: DataSource,
    /// Jodie-format CSV path; relative paths resolve under
    /// `TIGLAB_DATA_DIR`. Required (and only meaningful) for `jodie_csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Generator settings; required (and only meaningful) for `synthetic`.
    /// The spec's own `seed` fixes the dataset and is independent of the
    /// run seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    JodieCsv,
    Synthetic,
}

/// Chronological stage fractions and the inductive holdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCfg {
    /// Exactly four fractions — pretrain, prompt, val, test — summing to 1.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Fraction of nodes masked out of pre-training to score inductively.
    #[serde(default = "default_inductive_fraction")]
    pub inductive_fraction: f64,
}

/// What trains, on which task, with which prompt generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParadigmCfg {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_task")]
    pub task: Task,
    /// Node classification only; when omitted the task defaults to training
    /// a fresh prompt generator (the `reinit` strategy).
    #[serde(default)]
    pub nc_strategy: Option<NcStrategy>,
    #[serde(default = "default_tprog")]
    pub tprog: PromptKind,
}

/// Widths and architecture knobs shared by backbone and prompt generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    /// Embedding width (attention output).
    #[serde(default = "default_d")]
    pub d: usize,
    /// Memory width.
    #[serde(default = "default_d")]
    pub d_mem: usize,
    /// Time-encoding width.
    #[serde(default = "default_d_t")]
    pub d_t: usize,
    /// Positional-encoding width inside the transformer prompt generator.
    #[serde(default = "default_d_pos")]
    pub d_pos: usize,
    /// Prompt width. Free for vanilla and projection generators (fusion
    /// absorbs it); must equal `d` for static and transformer prompts.
    #[serde(default = "default_d")]
    pub prompt_dim: usize,
    /// Most-recent neighbors kept per query.
    #[serde(default = "default_k_recent")]
    pub k_recent: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

/// Optimization settings for both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimCfg {
    /// Pre-training batch size.
    #[serde(default = "default_pretrain_batch")]
    pub pretrain_batch: usize,
    /// Adaptation-stage batch size.
    #[serde(default = "default_prompt_batch")]
    pub prompt_batch: usize,
    /// Adam learning rate, shared by every trainable group.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

/// Replication and artifact placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCfg {
    /// One full pipeline per seed; reports aggregate across them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_fractions() -> Vec<f64> {
    vec![0.5, 0.2, 0.15, 0.15]
}
fn default_inductive_fraction() -> f64 {
    0.1
}
fn default_mode() -> Mode {
    Mode::Prompt
}
fn default_task() -> Task {
    Task::LinkPrediction
}
fn default_tprog() -> PromptKind {
    PromptKind::Projection
}
fn default_d() -> usize {
    172
}
fn default_d_t() -> usize {
    100
}
fn default_d_pos() -> usize {
    8
}
fn default_k_recent() -> usize {
    10
}
fn default_n_heads() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.1
}
fn default_pretrain_batch() -> usize {
    200
}
fn default_prompt_batch() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-4
}
fn default_max_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    5
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for SplitCfg {
    fn default() -> Self {
        SplitCfg {
            fractions: default_fractions(),
            inductive_fraction: default_inductive_fraction(),
        }
    }
}

impl Default for ParadigmCfg {
    fn default() -> Self {
        ParadigmCfg {
            mode: default_mode(),
            task: default_task(),
            nc_strategy: None,
            tprog: default_tprog(),
        }
    }
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg {
            d: default_d(),
            d_mem: default_d(),
            d_t: default_d_t(),
            d_pos: default_d_pos(),
            prompt_dim: default_d(),
            k_recent: default_k_recent(),
            n_heads: default_n_heads(),
            dropout: default_dropout(),
        }
    }
}

impl Default for OptimCfg {
    fn default() -> Self {
        OptimCfg {
            pretrain_batch: default_pretrain_batch(),
            prompt_batch: default_prompt_batch(),
            lr: default_lr(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
        }
    }
}

impl Default for RunCfg {
    fn default() -> Self {
        RunCfg {
            seeds: default_seeds(),
            out_dir: default_out_dir(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Value = toml::from_str(text)
            .map_err(|e| invalid("(document)", e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(raw).map_err(|e| {
            Error::InvalidConfig {
                field: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, parse, and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    /// Every value check behind the schema; errors carry the dotted path of
    /// the offending field.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;

        let f = &self.split.fractions;
        if f.len() != 4 {
            return Err(invalid(
                "split.fractions",
                format!(
                    "need exactly 4 stage fractions (pretrain, prompt, val, test); got {}",
                    f.len()
                ),
            ));
        }
        if f.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(invalid("split.fractions", "every fraction must be positive"));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invalid(
                "split.fractions",
                format!("fractions must sum to 1 (got {sum})"),
            ));
        }
        if !(0.0..1.0).contains(&self.split.inductive_fraction) {
            return Err(invalid(
                "split.inductive_fraction",
                "must lie in [0, 1)",
            ));
        }

        if self.paradigm.nc_strategy.is_some() && self.paradigm.task != Task::NodeClassification {
            return Err(invalid(
                "paradigm.nc_strategy",
                "only meaningful when task = \"node_classification\"",
            ));
        }

        let m = &self.model;
        for (name, v) in [
            ("model.d", m.d),
            ("model.d_mem", m.d_mem),
            ("model.d_t", m.d_t),
            ("model.d_pos", m.d_pos),
            ("model.prompt_dim", m.prompt_dim),
            ("model.k_recent", m.k_recent),
            ("model.n_heads", m.n_heads),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        if m.d % m.n_heads != 0 {
            return Err(invalid(
                "model.d",
                format!("must be divisible by n_heads = {}", m.n_heads),
            ));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(invalid("model.dropout", "must lie in [0, 1)"));
        }
        let width_free = matches!(
            self.paradigm.tprog,
            PromptKind::Vanilla | PromptKind::Projection
        );
        if !width_free && m.prompt_dim != m.d {
            return Err(invalid(
                "model.prompt_dim",
                format!(
                    "{} prompts must match the embedding width d = {} (got {})",
                    self.paradigm.tprog.name(),
                    m.d,
                    m.prompt_dim
                ),
            ));
        }

        let t = &self.train;
        for (name, v) in [
            ("train.pretrain_batch", t.pretrain_batch),
            ("train.prompt_batch", t.prompt_batch),
            ("train.max_epochs", t.max_epochs),
            ("train.patience", t.patience),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be at least 1"));
            }
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(invalid("train.lr", "must be a positive finite number"));
        }

        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds", "need at least one seed"));
        }
        let mut sorted = self.run.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid(
                "run.seeds",
                "seeds must be unique (each owns an output subdirectory)",
            ));
        }
        Ok(())
    }

    /// Backbone dimensions implied by the model section.
    pub fn dims(&self) -> BackboneDims {
        BackboneDims {
            d: self.model.d,
            d_mem: self.model.d_mem,
            d_t: self.model.d_t,
            n_heads: self.model.n_heads,
            k_recent: self.model.k_recent,
            dropout: self.model.dropout,
        }
    }

    /// Prompt-generator dimensions implied by the model section.
    pub fn pcfg(&self) -> PromptCfg {
        PromptCfg {
            d: self.model.prompt_dim,
            d_pos: self.model.d_pos,
            k_recent: self.model.k_recent,
            n_heads: self.model.n_heads,
            d_t: self.model.d_t,
        }
    }

    /// Optimization settings for the pre-training stage (batch 200 default).
    pub fn pretrain_cfg(&self) -> TrainCfg {
        TrainCfg {
            batch_size: self.train.pretrain_batch,
            lr: self.train.lr,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
        }
    }

    /// Optimization settings for the adaptation stage (batch 100 default).
    pub fn adapt_cfg(&self) -> TrainCfg {
        TrainCfg {
            batch_size: self.train.prompt_batch,
            lr: self.train.lr,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
        }
    }

    /// The node-classification strategy in effect: the configured one, or
    /// training a fresh generator when unspecified.
    pub fn effective_nc_strategy(&self) -> NcStrategy {
        self.paradigm.nc_strategy.unwrap_or(NcStrategy::Reinit)
    }

    /// Fingerprint of the fully-resolved config (canonical JSON, SHA-256).
    /// Two configs agree on the hash exactly when every effective setting —
    /// including defaults — agrees.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hash_bytes(json.as_bytes())
    }

    /// Reshape the config along one sweep axis. `prompt_fraction` and
    /// `pretrain_fraction` move the stage boundary while val and test stay
    /// fixed (the other training stage absorbs the change); `prompt_dim`
    /// sets the prompt width. Unknown axes and values that leave no room
    /// for a stage are config errors.
    pub fn apply_axis(&mut self, axis: &str, value: f64) -> Result<()> {
        match axis {
            "prompt_fraction" | "pretrain_fraction" => {
                if !(value > 0.0 && value < 1.0) {
                    return Err(invalid("sweep.values", "fractions must lie in (0, 1)"));
                }
                let (val, test) = (self.split.fractions[2], self.split.fractions[3]);
                let other = 1.0 - value - val - test;
                if other <= 0.0 {
                    return Err(invalid(
                        "sweep.values",
                        format!(
                            "{axis} = {value} leaves no room for the other training stage \
                             (val + test = {})",
                            val + test
                        ),
                    ));
                }
                self.split.fractions = if axis == "prompt_fraction" {
                    vec![other, value, val, test]
                } else {
                    vec![value, other, val, test]
                };
            }
            "prompt_dim" => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(invalid(
                        "sweep.values",
                        "prompt_dim values must be positive integers",
                    ));
                }
                self.model.prompt_dim = value as usize;
            }
            other => {
                return Err(invalid(
                    "sweep.axis",
                    format!("unknown axis \"{other}\"; expected one of {SWEEP_AXES:?}"),
                ));
            }
        }
        self.validate()
    }
}

impl DataCfg {
    fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::JodieCsv => {
                if self.synthetic.is_some() {
                    return Err(invalid(
                        "data.synthetic",
                        "set, but source = \"jodie_csv\" ignores it; remove one",
                    ));
                }
                let path = self.csv_path()?;
                if path.as_os_str().is_empty() {
                    return Err(invalid("data.path", "must not be empty"));
                }
            }
            DataSource::Synthetic => {
                if self.path.is_some() {
                    return Err(invalid(
                        "data.path",
                        "set, but source = \"synthetic\" ignores it; remove one",
                    ));
                }
                let spec = self.spec()?;
                for (name, v) in [
                    ("data.synthetic.n_users", spec.n_users),
                    ("data.synthetic.n_items", spec.n_items),
                    ("data.synthetic.n_events", spec.n_events),
                ] {
                    if v == 0 {
                        return Err(invalid(name, "must be at least 1"));
                    }
                }
                if !(0.0 < spec.drift_point && spec.drift_point < 1.0) {
                    return Err(invalid("data.synthetic.drift_point", "must lie in (0, 1)"));
                }
                if !(0.0 < spec.repeat_prob && spec.repeat_prob <= 1.0) {
                    return Err(invalid("data.synthetic.repeat_prob", "must lie in (0, 1]"));
                }
            }
        }
        Ok(())
    }

    fn csv_path(&self) -> Result<&PathBuf> {
        self.path
            .as_ref()
            .ok_or_else(|| invalid("data.path", "required when source = \"jodie_csv\""))
    }

    fn spec(&self) -> Result<&SyntheticSpec> {
        self.synthetic
            .as_ref()
            .ok_or_else(|| invalid("data.synthetic", "required when source = \"synthetic\""))
    }

    /// Materialize the interaction stream this config describes.
    pub fn load(&self) -> Result<TemporalGraph> {
        match self.source {
            DataSource::JodieCsv => load_jodie_csv(&resolve_data_path(self.csv_path()?)),
            DataSource::Synthetic => generate_synthetic(self.spec()?),
        }
    }

    /// Fingerprint of the dataset itself: SHA-256 of the CSV bytes, or of
    /// the canonical generator spec.
    pub fn content_hash(&self) -> Result<String> {
        match self.source {
            DataSource::JodieCsv => {
                let resolved = resolve_data_path(self.csv_path()?);
                let bytes = std::fs::read(&resolved)
                    .map_err(|e| Error::io(resolved.display().to_string(), e))?;
                Ok(hash_bytes(&bytes))
            }
            DataSource::Synthetic => {
                let json = serde_json::to_string(self.spec()?).expect("spec serializes");
                Ok(hash_bytes(json.as_bytes()))
            }
        }
    }

    /// Short human-readable label for reports.
    pub fn describe(&self) -> String {
        match (self.source, &self.path, &self.synthetic) {
            (DataSource::JodieCsv, Some(path), _) => format!("jodie_csv:{}", path.display()),
            (DataSource::Synthetic, _, Some(spec)) => {
                format!("synthetic:{} ({} events)", spec.kind.name(), spec.n_events)
            }
            _ => "(incomplete data section)".into(),
        }
    }
}
