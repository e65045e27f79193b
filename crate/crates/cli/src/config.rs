//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and has
//! a default; unknown keys are rejected with the list of valid ones.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use raea_core::autodiff::Distance;
use raea_core::kg::ChannelKind;
use raea_core::net::RelationCombine;
use raea_core::synth::SynthConfig;
use raea_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleStrategy {
    Average,
    PreWeighted,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderChoice {
    /// Hashed character n-grams over the configured range.
    Hashed,
    /// Hashed character unigrams only.
    Basic,
    /// Vectors from `embedding_table`, hashed n-grams for misses.
    Table,
}

/// Component removals of the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Drop the Literal and Digital channels.
    pub no_attribute: bool,
    /// Drop the Structure channel.
    pub no_relation: bool,
    /// Drop the Name channel.
    pub no_name: bool,
    /// Skip the relation-aware attention stages.
    pub no_rgat: bool,
    /// Use the basic character-unigram embedder.
    pub basic_embedder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kg1_rel: Option<PathBuf>,
    pub kg1_attr: Option<PathBuf>,
    pub kg2_rel: Option<PathBuf>,
    pub kg2_attr: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub output_dir: PathBuf,

    pub channels: Vec<ChannelKind>,
    pub name_predicates: Vec<String>,
    pub ensemble: EnsembleStrategy,
    pub train_frac: f64,
    pub val_frac: f64,
    pub split_seed: u64,
    pub train: TrainConfig,

    pub d_entity: usize,
    pub d_text: usize,
    pub attr_layers: usize,
    pub relation_combine: RelationCombine,
    pub embedder: EmbedderChoice,
    pub embedding_table: Option<PathBuf>,
    pub ngram_min: usize,
    pub ngram_max: usize,

    pub top_k: usize,
    pub eval_k: usize,
    pub bootstrap: usize,
    pub bootstrap_seed: u64,
    pub ablation: Ablation,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kg1_rel: None,
            kg1_attr: None,
            kg2_rel: None,
            kg2_attr: None,
            seeds: None,
            queries: None,
            candidates: None,
            rules: None,
            output_dir: PathBuf::from("out"),
            channels: ChannelKind::ALL.to_vec(),
            name_predicates: vec!["name".into()],
            ensemble: EnsembleStrategy::PreWeighted,
            train_frac: 0.3,
            val_frac: 0.0,
            split_seed: 0,
            train: TrainConfig::default(),
            d_entity: 64,
            d_text: 128,
            attr_layers: 2,
            relation_combine: RelationCombine::Sum,
            embedder: EmbedderChoice::Hashed,
            embedding_table: None,
            ngram_min: 2,
            ngram_max: 4,
            top_k: 10,
            eval_k: 10,
            bootstrap: 1000,
            bootstrap_seed: 0,
            ablation: Ablation::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "kg1_rel",
    "kg1_attr",
    "kg2_rel",
    "kg2_attr",
    "seeds",
    "queries",
    "candidates",
    "rules",
    "output_dir",
    "channels",
    "name_predicates",
    "ensemble",
    "train_frac",
    "val_frac",
    "split_seed",
    "margin",
    "n_neg",
    "resample_every",
    "max_epochs",
    "patience",
    "lr_grid",
    "l2_grid",
    "distance",
    "seed",
    "d_entity",
    "d_text",
    "attr_layers",
    "relation_combine",
    "embedder",
    "embedding_table",
    "ngram_min",
    "ngram_max",
    "top_k",
    "eval_k",
    "bootstrap",
    "bootstrap_seed",
    "no_attribute",
    "no_relation",
    "no_name",
    "no_rgat",
    "basic_embedder",
    "synth_entities",
    "synth_relations",
    "synth_predicates",
    "synth_density",
    "synth_attrs",
    "synth_numeric",
    "synth_attr_noise",
    "synth_rel_noise",
    "synth_seed",
];

fn invalid(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("{key} = {value:?}: expected {expected}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| invalid(key, value, "a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(key, value, "true or false")),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl PipelineConfig {
    /// Sets one key. Relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let path = || Some(base.join(value));
        match key {
            "kg1_rel" => self.kg1_rel = path(),
            "kg1_attr" => self.kg1_attr = path(),
            "kg2_rel" => self.kg2_rel = path(),
            "kg2_attr" => self.kg2_attr = path(),
            "seeds" => self.seeds = path(),
            "queries" => self.queries = path(),
            "candidates" => self.candidates = path(),
            "rules" => self.rules = path(),
            "output_dir" => self.output_dir = base.join(value),
            "channels" => {
                let mut seen = BTreeSet::new();
                self.channels = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<ChannelKind>().map_err(|e| CliError::Config(format!("channels: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .filter(|c| seen.insert(c.as_str()))
                    .collect();
            }
            "name_predicates" => {
                self.name_predicates = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "ensemble" => {
                self.ensemble = match value.to_ascii_lowercase().as_str() {
                    "average" => EnsembleStrategy::Average,
                    "preweighted" | "pre-weighted" => EnsembleStrategy::PreWeighted,
                    "classifier" | "svm" => EnsembleStrategy::Classifier,
                    _ => return Err(invalid(key, value, "average, preweighted or classifier")),
                }
            }
            "train_frac" => self.train_frac = parse_num(key, value)?,
            "val_frac" => self.val_frac = parse_num(key, value)?,
            "split_seed" => self.split_seed = parse_num(key, value)?,
            "margin" => self.train.margin = parse_num(key, value)?,
            "n_neg" => self.train.n_neg = parse_num(key, value)?,
            "resample_every" => self.train.resample_every = parse_num(key, value)?,
            "max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "patience" => self.train.patience = parse_num(key, value)?,
            "lr_grid" => self.train.lr_grid = parse_list(key, value)?,
            "l2_grid" => self.train.l2_grid = parse_list(key, value)?,
            "distance" => {
                self.train.distance = match value.to_ascii_lowercase().as_str() {
                    "l1" => Distance::L1,
                    "l2" => Distance::L2,
                    _ => return Err(invalid(key, value, "l1 or l2")),
                }
            }
            "seed" => self.train.rng_seed = parse_num(key, value)?,
            "d_entity" => self.d_entity = parse_num(key, value)?,
            "d_text" => self.d_text = parse_num(key, value)?,
            "attr_layers" => self.attr_layers = parse_num(key, value)?,
            "relation_combine" => {
                self.relation_combine = match value.to_ascii_lowercase().as_str() {
                    "sum" => RelationCombine::Sum,
                    "concat" => RelationCombine::Concat,
                    _ => return Err(invalid(key, value, "sum or concat")),
                }
            }
            "embedder" => {
                self.embedder = match value.to_ascii_lowercase().as_str() {
                    "hashed" => EmbedderChoice::Hashed,
                    "basic" => EmbedderChoice::Basic,
                    "table" => EmbedderChoice::Table,
                    _ => return Err(invalid(key, value, "hashed, basic or table")),
                }
            }
            "embedding_table" => self.embedding_table = path(),
            "ngram_min" => self.ngram_min = parse_num(key, value)?,
            "ngram_max" => self.ngram_max = parse_num(key, value)?,
            "top_k" => self.top_k = parse_num(key, value)?,
            "eval_k" => self.eval_k = parse_num(key, value)?,
            "bootstrap" => self.bootstrap = parse_num(key, value)?,
            "bootstrap_seed" => self.bootstrap_seed = parse_num(key, value)?,
            "no_attribute" => self.ablation.no_attribute = parse_bool(key, value)?,
            "no_relation" => self.ablation.no_relation = parse_bool(key, value)?,
            "no_name" => self.ablation.no_name = parse_bool(key, value)?,
            "no_rgat" => self.ablation.no_rgat = parse_bool(key, value)?,
            "basic_embedder" => self.ablation.basic_embedder = parse_bool(key, value)?,
            "synth_entities" => self.synth.n_entities = parse_num(key, value)?,
            "synth_relations" => self.synth.n_relations = parse_num(key, value)?,
            "synth_predicates" => self.synth.n_predicates = parse_num(key, value)?,
            "synth_density" => self.synth.rel_density = parse_num(key, value)?,
            "synth_attrs" => self.synth.attr_per_entity = parse_num(key, value)?,
            "synth_numeric" => self.synth.numeric_fraction = parse_num(key, value)?,
            "synth_attr_noise" => self.synth.attr_noise = parse_num(key, value)?,
            "synth_rel_noise" => self.synth.rel_noise = parse_num(key, value)?,
            "synth_seed" => self.synth.rng_seed = parse_num(key, value)?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown key {other:?}; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim(), base)
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.message())))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?}: expected key=value")))?;
            self.set(k.trim(), v.trim(), Path::new("."))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.active_channels().is_empty() {
            return Err(CliError::Config("no channel is enabled".into()));
        }
        if self.top_k == 0 || self.eval_k == 0 {
            return Err(CliError::Config("top_k and eval_k must be at least 1".into()));
        }
        if self.embedder == EmbedderChoice::Table && self.embedding_table.is_none() {
            return Err(CliError::Config("embedder = table requires embedding_table".into()));
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Enabled channels after the ablation removals, in canonical order.
    pub fn active_channels(&self) -> Vec<ChannelKind> {
        let a = &self.ablation;
        ChannelKind::ALL
            .into_iter()
            .filter(|c| self.channels.contains(c))
            .filter(|c| match c {
                ChannelKind::Literal | ChannelKind::Digital => !a.no_attribute,
                ChannelKind::Structure => !a.no_relation,
                ChannelKind::Name => !a.no_name,
            })
            .collect()
    }
}
