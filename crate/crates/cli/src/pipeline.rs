//! In-memory stages shared by the commands: dataset loading, per-channel
//! training, ensembling, ranking and evaluation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use raea_core::align::{
    ensemble_average, ensemble_classifier, ensemble_preweighted, ensemble_with_classifier, evaluate,
    similarity_matrix, top_k, ChannelWeights, ClassifierConfig, EvalConfig, LinearClassifier, MetricReport,
    RankedCandidates, SimilarityMatrix,
};
use raea_core::embed::{EmbeddingTable, Embedder, HashNGramConfig};
use raea_core::kg::{
    partition_channels, ChannelKind, DigitalRule, KnowledgeGraph, PredicateId, SeedAlignment, Split, SplitFractions,
};
use raea_core::net::{embed, ChannelInput, ChannelModel, DimensionsConfig, GraphTopology, NetOptions, Side};
use raea_core::rough::{apply_rules, load_products, load_rules, CandidateSet};
use raea_core::synth::GeneratedPair;
use raea_core::tensor::Tensor;
use raea_core::train::{grid_search, monitoring_split, GridCell, TrainOutcome};

use crate::config::{EmbedderChoice, EnsembleStrategy, PipelineConfig};
use crate::error::CliError;

pub type Pairs = Vec<(usize, usize)>;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub seeds: SeedAlignment,
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a std::path::PathBuf, CliError> {
    p.as_ref()
        .ok_or_else(|| CliError::Config(format!("`{key}` must be set")))
}

fn load_graph(rel: &std::path::Path, attr: Option<&std::path::Path>) -> Result<KnowledgeGraph, CliError> {
    let mut kg = KnowledgeGraph::new();
    kg.load_relation_triples(rel)?;
    if let Some(attr) = attr {
        kg.load_attribute_triples(attr)?;
    }
    kg.reindex();
    Ok(kg)
}

fn fractions(cfg: &PipelineConfig) -> Result<SplitFractions, CliError> {
    SplitFractions::new(cfg.train_frac, cfg.val_frac).map_err(|e| CliError::Config(e.to_string()))
}

/// Loads both graphs and the seed alignment named by the config and
/// assigns the train/validation/test split.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let fr = fractions(cfg)?;
    let kg1 = load_graph(required(&cfg.kg1_rel, "kg1_rel")?, cfg.kg1_attr.as_deref())?;
    let kg2 = load_graph(required(&cfg.kg2_rel, "kg2_rel")?, cfg.kg2_attr.as_deref())?;
    let seeds = SeedAlignment::load(required(&cfg.seeds, "seeds")?, &kg1, &kg2, fr, cfg.split_seed)?;
    Ok(Dataset { kg1, kg2, seeds })
}

/// Uses a generated pair directly, splitting its gold alignment.
pub fn dataset_from_pair(pair: GeneratedPair, cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let mut seeds = pair.gold;
    seeds.assign_splits(fractions(cfg)?, cfg.split_seed);
    Ok(Dataset {
        kg1: pair.kg1,
        kg2: pair.kg2,
        seeds,
    })
}

pub fn build_embedder(cfg: &PipelineConfig) -> Result<Embedder, CliError> {
    let hashed = HashNGramConfig {
        dim: cfg.d_text,
        ngram_min: cfg.ngram_min,
        ngram_max: cfg.ngram_max,
        hash_seed: 0,
    };
    let choice = if cfg.ablation.basic_embedder {
        EmbedderChoice::Basic
    } else {
        cfg.embedder
    };
    let embedder = match choice {
        EmbedderChoice::Hashed => Embedder::Hashed(hashed),
        EmbedderChoice::Basic => Embedder::Hashed(HashNGramConfig {
            ngram_min: 1,
            ngram_max: 1,
            ..hashed
        }),
        EmbedderChoice::Table => {
            let table = EmbeddingTable::load(required(&cfg.embedding_table, "embedding_table")?)?;
            Embedder::table(table, hashed)
        }
    };
    if let Embedder::Hashed(h) = &embedder {
        h.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(embedder)
}

/// Model dimensions for the configured embedder.
pub fn dimensions(cfg: &PipelineConfig, embedder: &Embedder) -> DimensionsConfig {
    DimensionsConfig::new(cfg.d_entity, embedder.dim(), cfg.attr_layers)
}

pub fn net_options(cfg: &PipelineConfig) -> NetOptions {
    NetOptions {
        relation_combine: cfg.relation_combine,
        rgat: !cfg.ablation.no_rgat,
        ..NetOptions::default()
    }
}

fn name_ids(kg: &KnowledgeGraph, names: &[String]) -> HashSet<PredicateId> {
    names.iter().filter_map(|n| kg.predicate_id(n)).collect()
}

/// Source and target inputs of every channel.
pub fn channel_inputs(
    ds: &Dataset,
    cfg: &PipelineConfig,
    embedder: &Embedder,
    kinds: &[ChannelKind],
) -> Result<Vec<(ChannelInput, ChannelInput)>, CliError> {
    let rule = DigitalRule::default();
    let names1 = name_ids(&ds.kg1, &cfg.name_predicates);
    let names2 = name_ids(&ds.kg2, &cfg.name_predicates);
    let ch1 = partition_channels(&ds.kg1, &names1, &rule);
    let ch2 = partition_channels(&ds.kg2, &names2, &rule);
    let topo1 = Arc::new(GraphTopology::new(ds.kg1.incidence())?);
    let topo2 = Arc::new(GraphTopology::new(ds.kg2.incidence())?);
    kinds
        .iter()
        .map(|&kind| {
            let i = ChannelKind::ALL.iter().position(|&k| k == kind).expect("known kind");
            let src = ChannelInput::build(&ch1[i], Side::Source, topo1.clone(), embedder, &names1)?;
            let tgt = ChannelInput::build(&ch2[i], Side::Target, topo2.clone(), embedder, &names2)?;
            Ok((src, tgt))
        })
        .collect()
}

/// Train / monitoring / test pairs as entity indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSplit {
    pub train: Pairs,
    pub monitor: Pairs,
    pub test: Pairs,
}

pub fn pair_split(ds: &Dataset, cfg: &PipelineConfig) -> PairSplit {
    let idx = |s: Split| -> Pairs {
        ds.seeds
            .with_split(s)
            .into_iter()
            .map(|(a, b)| (a.index(), b.index()))
            .collect()
    };
    let (train, monitor) = monitoring_split(&idx(Split::Train), &idx(Split::Validation), cfg.split_seed);
    PairSplit {
        train,
        monitor,
        test: idx(Split::Test),
    }
}

#[derive(Debug, Clone)]
pub struct TrainedChannel {
    pub kind: ChannelKind,
    pub outcome: TrainOutcome,
    pub cells: Vec<GridCell>,
    pub source: ChannelInput,
    pub target: ChannelInput,
    pub src_emb: Tensor,
    pub tgt_emb: Tensor,
}

impl TrainedChannel {
    pub fn from_model(model: ChannelModel, source: ChannelInput, target: ChannelInput) -> Result<Self, CliError> {
        let src_emb = embed(&model, &source)?;
        let tgt_emb = embed(&model, &target)?;
        Ok(Self {
            kind: model.kind,
            outcome: TrainOutcome {
                model,
                history: Vec::new(),
                best_epoch: 0,
                best_hits1: 0.0,
                lr: 0.0,
                l2: 0.0,
            },
            cells: Vec::new(),
            source,
            target,
            src_emb,
            tgt_emb,
        })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.outcome.model
    }

    pub fn matrix(&self, rows: &[usize], cols: &[usize]) -> Result<SimilarityMatrix, CliError> {
        Ok(similarity_matrix(self.kind.as_str(), &self.src_emb, &self.tgt_emb, rows, cols)?)
    }
}

/// Seed of a channel's parameter initialization.
pub fn model_seed(cfg: &PipelineConfig, kind: ChannelKind) -> u64 {
    let i = ChannelKind::ALL.iter().position(|&k| k == kind).expect("known kind") as u64;
    cfg.train.rng_seed.wrapping_add(i)
}

/// Grid-searches every active channel.
pub fn train_channels(ds: &Dataset, cfg: &PipelineConfig, split: &PairSplit) -> Result<Vec<TrainedChannel>, CliError> {
    let embedder = build_embedder(cfg)?;
    let dims = dimensions(cfg, &embedder);
    let opts = net_options(cfg);
    let kinds = cfg.active_channels();
    let inputs = channel_inputs(ds, cfg, &embedder, &kinds)?;
    let mut out = Vec::new();
    for (kind, (source, target)) in kinds.into_iter().zip(inputs) {
        log::info!("training {kind} channel");
        let make = || {
            ChannelModel::new(
                kind,
                dims.clone(),
                opts,
                ds.kg1.num_entities(),
                ds.kg2.num_entities(),
                model_seed(cfg, kind),
            )
        };
        let result = grid_search(make, &source, &target, &split.train, &split.monitor, &cfg.train)?;
        let src_emb = embed(&result.best.model, &source)?;
        let tgt_emb = embed(&result.best.model, &target)?;
        out.push(TrainedChannel {
            kind,
            outcome: result.best,
            cells: result.cells,
            source,
            target,
            src_emb,
            tgt_emb,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub sim: SimilarityMatrix,
    pub weights: Option<ChannelWeights>,
    pub classifier: Option<LinearClassifier>,
}

/// Ensembles the channels over the given query rows and all target columns.
pub fn ensemble(
    channels: &[TrainedChannel],
    rows: &[usize],
    split: &PairSplit,
    cfg: &PipelineConfig,
) -> Result<Ensemble, CliError> {
    let cols: Vec<usize> = match channels.first() {
        Some(c) => (0..c.tgt_emb.rows()).collect(),
        None => return Err(CliError::Config("no channel is enabled".into())),
    };
    let mats = channels
        .iter()
        .map(|c| c.matrix(rows, &cols))
        .collect::<Result<Vec<_>, _>>()?;
    let sources = |pairs: &Pairs| -> Vec<usize> { pairs.iter().map(|p| p.0).collect() };
    Ok(match cfg.ensemble {
        EnsembleStrategy::Average => Ensemble {
            sim: ensemble_average(&mats)?,
            weights: None,
            classifier: None,
        },
        EnsembleStrategy::PreWeighted => {
            let mon_rows = sources(&split.monitor);
            let mon = channels
                .iter()
                .map(|c| c.matrix(&mon_rows, &cols))
                .collect::<Result<Vec<_>, _>>()?;
            let (_, weights) = ensemble_preweighted(&mon, &split.monitor)?;
            let sim = raea_core::align::ensemble_weighted(&mats, &weights.0)?;
            Ensemble {
                sim,
                weights: Some(weights),
                classifier: None,
            }
        }
        EnsembleStrategy::Classifier => {
            let train_rows = sources(&split.train);
            let tr = channels
                .iter()
                .map(|c| c.matrix(&train_rows, &cols))
                .collect::<Result<Vec<_>, _>>()?;
            let ccfg = ClassifierConfig {
                seed: cfg.train.rng_seed,
                ..ClassifierConfig::default()
            };
            let (_, clf) = ensemble_classifier(&tr, &split.train, &ccfg)?;
            Ensemble {
                sim: ensemble_with_classifier(&mats, &clf)?,
                weights: None,
                classifier: Some(clf),
            }
        }
    })
}

/// Rough-filter candidates from the configured product and rule files, if any.
pub fn rough_candidates(cfg: &PipelineConfig) -> Result<Option<CandidateSet>, CliError> {
    match (&cfg.queries, &cfg.candidates, &cfg.rules) {
        (None, None, None) => Ok(None),
        (Some(q), Some(c), Some(r)) => {
            let rules = load_rules(r)?;
            let queries = load_products(q)?;
            let cands = load_products(c)?;
            Ok(Some(apply_rules(&rules, &queries, &cands)))
        }
        _ => Err(CliError::Config(
            "queries, candidates and rules must be set together".into(),
        )),
    }
}

/// Candidate restriction keyed by source entity, mapping labels to ids.
pub fn allowed_map(ds: &Dataset, cands: &CandidateSet) -> HashMap<usize, HashSet<usize>> {
    let mut out = HashMap::new();
    let mut unknown = 0usize;
    for (q, set) in cands {
        let Some(qid) = ds.kg1.entity_id(q) else {
            unknown += 1;
            continue;
        };
        let ids: HashSet<usize> = set.iter().filter_map(|c| ds.kg2.entity_id(c)).map(|e| e.index()).collect();
        out.insert(qid.index(), ids);
    }
    if unknown > 0 {
        log::warn!("{unknown} rough-filter queries are not entities of the source graph");
    }
    out
}

/// Query rows: the test sources plus any rough-filter queries, sorted.
pub fn query_rows(split: &PairSplit, allowed: Option<&HashMap<usize, HashSet<usize>>>) -> Vec<usize> {
    let mut rows: BTreeSet<usize> = split.test.iter().map(|p| p.0).collect();
    if let Some(map) = allowed {
        rows.extend(map.keys().copied());
    }
    rows.into_iter().collect()
}

pub fn eval_config(cfg: &PipelineConfig) -> EvalConfig {
    EvalConfig {
        hits_ks: vec![1, 10],
        k: cfg.eval_k,
        resamples: cfg.bootstrap,
        seed: cfg.bootstrap_seed,
    }
}

/// Everything produced by one in-memory run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub split: PairSplit,
    pub channels: Vec<TrainedChannel>,
    pub candidates: Option<CandidateSet>,
    pub ensemble: Ensemble,
    pub ranked: Vec<RankedCandidates>,
    pub report: MetricReport,
}

/// Rough filter, training, ensembling, Top-K and evaluation.
pub fn run(ds: &Dataset, cfg: &PipelineConfig) -> Result<RunResult, CliError> {
    let split = pair_split(ds, cfg);
    let candidates = rough_candidates(cfg)?;
    let channels = train_channels(ds, cfg, &split)?;
    finish(ds, cfg, split, candidates, channels)
}

/// Ensembling, Top-K and evaluation for already trained channels.
pub fn finish(
    ds: &Dataset,
    cfg: &PipelineConfig,
    split: PairSplit,
    candidates: Option<CandidateSet>,
    channels: Vec<TrainedChannel>,
) -> Result<RunResult, CliError> {
    let allowed = candidates.as_ref().map(|c| allowed_map(ds, c));
    let rows = query_rows(&split, allowed.as_ref());
    let ensemble = ensemble(&channels, &rows, &split, cfg)?;
    let ranked = top_k(&ensemble.sim, cfg.top_k, allowed.as_ref())?;
    let report = evaluate(&ensemble.sim, &split.test, &eval_config(cfg));
    Ok(RunResult {
        split,
        channels,
        candidates,
        ensemble,
        ranked,
        report,
    })
}

/// The metric report followed by the per-channel and ensemble summary.
pub fn report_text(result: &RunResult, cfg: &PipelineConfig) -> String {
    let mut out = result.report.to_text();
    let _ = writeln!(out, "ensemble: {}", match cfg.ensemble {
        EnsembleStrategy::Average => "average",
        EnsembleStrategy::PreWeighted => "preweighted",
        EnsembleStrategy::Classifier => "classifier",
    });
    for (i, c) in result.channels.iter().enumerate() {
        let _ = writeln!(out, "channel.{}:", c.kind.as_str());
        let _ = writeln!(out, "  output_dim: {}", c.model().output_dim());
        let _ = writeln!(out, "  lr: {}", c.outcome.lr);
        let _ = writeln!(out, "  l2: {}", c.outcome.l2);
        let _ = writeln!(out, "  best_epoch: {}", c.outcome.best_epoch);
        let _ = writeln!(out, "  monitor_hits@1: {:.6}", c.outcome.best_hits1);
        if let Some(w) = &result.ensemble.weights {
            let _ = writeln!(out, "  weight: {:.6}", w.0[i]);
        }
        if let Some(clf) = &result.ensemble.classifier {
            let _ = writeln!(out, "  classifier_weight: {:.6}", clf.weights[i]);
        }
    }
    out
}
