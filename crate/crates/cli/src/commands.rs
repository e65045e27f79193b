//! One function per CLI command. Each reads its inputs, runs the stage in
//! memory and writes its outputs under `output_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use raea_core::align::{evaluate, top_k_tsv, SimilarityMatrix};
use raea_core::checkpoint;
use raea_core::kg::{partition_channels, ChannelKind, DigitalRule, Split};
use raea_core::net::ChannelModel;
use raea_core::rough::{candidates_tsv, coverage_stats, CandidateSet};
use raea_core::synth::{attribute_tsv, generate_aligned_pair, relation_tsv};
use raea_core::train::history_tsv;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::pipeline::{
    self, allowed_map, channel_inputs, eval_config, finish, load_dataset, pair_split, report_text, rough_candidates,
    Dataset, RunResult, TrainedChannel,
};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(raea_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn out(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn checkpoint_path(cfg: &PipelineConfig, kind: ChannelKind) -> PathBuf {
    out(cfg, &format!("checkpoints/{}.ckpt", kind.as_str()))
}

/// Generates a synthetic pair, dumps it with a matching `pipeline.conf`.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let pair = generate_aligned_pair(&cfg.synth)?;
    let paths = pair.dump(&cfg.output_dir)?;
    let mut conf = String::from("# generated by `raea synth`\n");
    for (key, p) in [
        ("kg1_rel", &paths.kg1_rel),
        ("kg1_attr", &paths.kg1_attr),
        ("kg2_rel", &paths.kg2_rel),
        ("kg2_attr", &paths.kg2_attr),
        ("seeds", &paths.gold),
    ] {
        let name = p.file_name().expect("file").to_string_lossy();
        let _ = writeln!(conf, "{key} = {name}");
    }
    let conf_path = out(cfg, "pipeline.conf");
    write(&conf_path, &conf)?;
    Ok(conf_path)
}

/// Loads and validates both graphs; writes normalized copies and statistics.
pub fn cmd_build_kg(cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let ds = load_dataset(cfg)?;
    let names = |kg: &raea_core::kg::KnowledgeGraph| {
        cfg.name_predicates
            .iter()
            .filter_map(|n| kg.predicate_id(n))
            .collect::<std::collections::HashSet<_>>()
    };
    let mut stats = String::new();
    for (tag, kg) in [("kg1", &ds.kg1), ("kg2", &ds.kg2)] {
        write(&out(cfg, &format!("kg/{tag}_rel_triples.tsv")), &relation_tsv(kg))?;
        write(&out(cfg, &format!("kg/{tag}_attr_triples.tsv")), &attribute_tsv(kg))?;
        let _ = writeln!(stats, "{tag}:");
        let _ = writeln!(stats, "  entities: {}", kg.num_entities());
        let _ = writeln!(stats, "  relations: {}", kg.num_relations());
        let _ = writeln!(stats, "  relation_triples: {}", kg.rel_triples().len());
        let _ = writeln!(stats, "  attribute_triples: {}", kg.attr_triples().len());
        let _ = writeln!(stats, "  dropped_blank_values: {}", kg.dropped_blank_values());
        for ch in partition_channels(kg, &names(kg), &DigitalRule::default()) {
            if ch.kind.has_attributes() {
                let _ = writeln!(stats, "  {}_triples: {}", ch.kind.as_str(), ch.attr_triples.len());
            }
        }
    }
    let _ = writeln!(stats, "seeds:");
    for (name, s) in [("train", Split::Train), ("validation", Split::Validation), ("test", Split::Test)] {
        let _ = writeln!(stats, "  {name}: {}", ds.seeds.count(s));
    }
    write(&out(cfg, "kg/stats.txt"), &stats)?;
    Ok(ds)
}

/// Applies the blocking rules to the product files.
pub fn cmd_rough_filter(cfg: &PipelineConfig) -> Result<CandidateSet, CliError> {
    let cands = rough_candidates(cfg)?
        .ok_or_else(|| CliError::Config("rough-filter needs queries, candidates and rules".into()))?;
    write(&out(cfg, "candidates.tsv"), &candidates_tsv(&cands))?;
    write(&out(cfg, "coverage.txt"), &coverage_stats(&cands).to_text())?;
    Ok(cands)
}

fn write_training(cfg: &PipelineConfig, channels: &[TrainedChannel]) -> Result<(), CliError> {
    for c in channels {
        write(&checkpoint_path(cfg, c.kind), &checkpoint::to_text(c.model()))?;
        write(&out(cfg, &format!("history/{}.tsv", c.kind.as_str())), &history_tsv(&c.outcome.history))?;
        let mut grid = String::from("lr\tl2\tbest_hits1\tbest_epoch\tstopped_at\n");
        for cell in &c.cells {
            let _ = writeln!(
                grid,
                "{}\t{}\t{:.6}\t{}\t{}",
                cell.lr, cell.l2, cell.best_hits1, cell.best_epoch, cell.stopped_at
            );
        }
        write(&out(cfg, &format!("grid/{}.tsv", c.kind.as_str())), &grid)?;
    }
    Ok(())
}

/// Trains every active channel; writes checkpoints, histories and grid tables.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<Vec<TrainedChannel>, CliError> {
    let ds = load_dataset(cfg)?;
    let split = pair_split(&ds, cfg);
    let channels = pipeline::train_channels(&ds, cfg, &split)?;
    write_training(cfg, &channels)?;
    Ok(channels)
}

fn load_channels(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<TrainedChannel>, CliError> {
    let embedder = pipeline::build_embedder(cfg)?;
    let kinds = cfg.active_channels();
    let inputs = channel_inputs(ds, cfg, &embedder, &kinds)?;
    kinds
        .iter()
        .zip(inputs)
        .map(|(&kind, (src, tgt))| {
            let model: ChannelModel = checkpoint::load(checkpoint_path(cfg, kind))?;
            if model.kind != kind {
                return Err(CliError::Core(raea_core::Error::Validation(format!(
                    "checkpoint for {kind} holds a {} model",
                    model.kind
                ))));
            }
            TrainedChannel::from_model(model, src, tgt)
        })
        .collect()
}

/// Dense similarity file: a header of candidate labels, then one row per
/// query with its scores in shortest round-trip form.
pub fn similarity_tsv(sim: &SimilarityMatrix, ds: &Dataset) -> String {
    let mut s = String::from("query");
    for &c in sim.col_ids() {
        let _ = write!(s, "\t{}", ds.kg2.entities().label(c));
    }
    s.push('\n');
    for (r, &q) in sim.row_ids().iter().enumerate() {
        s.push_str(ds.kg1.entities().label(q));
        for v in sim.row(r) {
            let _ = write!(s, "\t{v:e}");
        }
        s.push('\n');
    }
    s
}

pub fn read_similarity(path: &Path, ds: &Dataset) -> Result<SimilarityMatrix, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let origin = path.display().to_string();
    let parse_err = |line: usize, message: String| {
        CliError::Core(raea_core::Error::Parse {
            origin: origin.clone(),
            line,
            message,
        })
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty similarity file".into()))?;
    let cols = header
        .split('\t')
        .skip(1)
        .map(|l| ds.kg2.entity_id(l).map(|e| e.index()).ok_or_else(|| parse_err(1, format!("unknown target {l:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut fields = line.split('\t');
        let q = fields.next().unwrap_or_default();
        rows.push(ds.kg1.entity_id(q).ok_or_else(|| parse_err(n + 2, format!("unknown query {q:?}")))?.index());
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| parse_err(n + 2, format!("invalid score {f:?}")))?);
        }
        if data.len() - before != cols.len() {
            return Err(parse_err(n + 2, format!("expected {} scores", cols.len())));
        }
    }
    Ok(SimilarityMatrix::new("ensemble", rows, cols, data)?)
}

fn write_alignment(cfg: &PipelineConfig, ds: &Dataset, result: &RunResult) -> Result<(), CliError> {
    write(&out(cfg, "similarity.tsv"), &similarity_tsv(&result.ensemble.sim, ds))?;
    let topk = top_k_tsv(
        &result.ranked,
        |q| ds.kg1.entities().label(q).to_string(),
        |c| ds.kg2.entities().label(c).to_string(),
    );
    write(&out(cfg, "topk.tsv"), &topk)
}

/// Ensembles trained checkpoints; writes the similarity matrix and Top-K.
pub fn cmd_align(cfg: &PipelineConfig) -> Result<RunResult, CliError> {
    let ds = load_dataset(cfg)?;
    let split = pair_split(&ds, cfg);
    let candidates = rough_candidates(cfg)?;
    let channels = load_channels(&ds, cfg)?;
    let result = finish(&ds, cfg, split, candidates, channels)?;
    write_alignment(cfg, &ds, &result)?;
    Ok(result)
}

/// Scores the written similarity matrix against the test pairs.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<String, CliError> {
    let ds = load_dataset(cfg)?;
    let split = pair_split(&ds, cfg);
    let sim = read_similarity(&out(cfg, "similarity.tsv"), &ds)?;
    let text = evaluate(&sim, &split.test, &eval_config(cfg)).to_text();
    write(&out(cfg, "report.txt"), &text)?;
    Ok(text)
}

/// Every stage in one process.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<RunResult, CliError> {
    let ds = load_dataset(cfg)?;
    let result = pipeline::run(&ds, cfg)?;
    if let Some(c) = &result.candidates {
        write(&out(cfg, "candidates.tsv"), &candidates_tsv(c))?;
        let allowed = allowed_map(&ds, c);
        log::info!("{} rough-filter queries map to source entities", allowed.len());
    }
    write_training(cfg, &result.channels)?;
    write_alignment(cfg, &ds, &result)?;
    write(&out(cfg, "report.txt"), &report_text(&result, cfg))?;
    Ok(result)
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub channels: Vec<ChannelKind>,
    /// Output width of each channel, in `channels` order.
    pub output_dims: Vec<usize>,
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
}

/// The full model and its five variants.
pub fn ablation_variants(base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let with = |f: &dyn Fn(&mut PipelineConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("full", base.clone()),
        ("w/o Attribute", with(&|c| c.ablation.no_attribute = true)),
        ("w/o Relation", with(&|c| c.ablation.no_relation = true)),
        ("w/o Name", with(&|c| c.ablation.no_name = true)),
        ("w/o MPnet", with(&|c| c.ablation.basic_embedder = true)),
        ("w/o RGAT", with(&|c| c.ablation.no_rgat = true)),
    ]
}

/// Runs every ablation variant; writes `ablation.tsv`.
pub fn cmd_ablate(cfg: &PipelineConfig) -> Result<Vec<AblationRow>, CliError> {
    use raea_core::align::RankMetric;
    let ds = load_dataset(cfg)?;
    let mut rows = Vec::new();
    for (variant, vcfg) in ablation_variants(cfg) {
        log::info!("ablation variant {variant}");
        vcfg.validate()?;
        let r = pipeline::run(&ds, &vcfg)?;
        let metric = |m| r.report.get(m).map_or(0.0, |e| e.value);
        rows.push(AblationRow {
            variant,
            channels: r.channels.iter().map(|c| c.kind).collect(),
            output_dims: r.channels.iter().map(|c| c.model().output_dim()).collect(),
            hits1: metric(RankMetric::Hits(1)),
            hits10: metric(RankMetric::Hits(10)),
            mrr: metric(RankMetric::ReciprocalRank),
        });
    }
    let mut table = String::from("variant\tchannels\toutput_dims\thits@1\thits@10\tmrr\n");
    for r in &rows {
        let chans: Vec<&str> = r.channels.iter().map(|c| c.as_str()).collect();
        let dims: Vec<String> = r.output_dims.iter().map(usize::to_string).collect();
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.variant,
            chans.join(","),
            dims.join(","),
            r.hits1,
            r.hits10,
            r.mrr
        );
    }
    write(&out(cfg, "ablation.tsv"), &table)?;
    Ok(rows)
}
