//! Aligned knowledge-graph pairs with controllable attribute and relation
//! noise.
//!
//! The first graph has entities `e0..`, random relation triples with
//! uniform endpoints, one unique `name` per entity and `attr_per_entity`
//! further attributes whose values are word-like or numeric-with-unit. The
//! second graph is the first relabelled by a random permutation (entities
//! `x0..`), after which exactly `round(attr_noise × #values)` attribute
//! values (names included) are replaced and exactly
//! `round(rel_noise × #triples)` triples are rewired or dropped.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, SeedAlignment};

pub const NAME_PREDICATE: &str = "name";

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "tre", "su", "van", "dor", "pel", "ri", "ost", "na", "bel", "kor", "ti", "ma", "gru",
    "zel", "fa", "nor", "qui", "sa", "len", "bo", "dra", "vi", "mon", "pu", "ter", "hal", "sim", "ra", "ex",
];
const UNITS: &[&str] = &["kg", "g", "cm", "mm", "m", "l", "w", "v"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_predicates: usize,
    /// Expected relation triples per entity.
    pub rel_density: f64,
    /// Attributes per entity besides the name.
    pub attr_per_entity: usize,
    /// Share of non-name values drawn from the numeric pool.
    pub numeric_fraction: f64,
    pub attr_noise: f64,
    pub rel_noise: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 20,
            n_predicates: 10,
            rel_density: 5.0,
            attr_per_entity: 3,
            numeric_fraction: 0.3,
            attr_noise: 0.0,
            rel_noise: 0.0,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_entities < 2 || self.n_relations == 0 || self.n_predicates == 0 {
            return fail("synthetic graphs need at least 2 entities, 1 relation and 1 predicate".into());
        }
        if self.attr_per_entity > self.n_predicates {
            return fail(format!(
                "attr_per_entity {} exceeds n_predicates {}",
                self.attr_per_entity, self.n_predicates
            ));
        }
        for (name, v) in [
            ("numeric_fraction", self.numeric_fraction),
            ("attr_noise", self.attr_noise),
            ("rel_noise", self.rel_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.rel_density >= 0.0 && self.rel_density.is_finite()) {
            return fail(format!("rel_density must be nonnegative, got {}", self.rel_density));
        }
        let capacity = self.n_entities * (self.n_entities - 1) * self.n_relations;
        if self.num_triples() > capacity / 2 {
            return fail(format!(
                "{} triples are too dense for {} entities and {} relations",
                self.num_triples(),
                self.n_entities,
                self.n_relations
            ));
        }
        Ok(())
    }

    pub fn num_triples(&self) -> usize {
        (self.n_entities as f64 * self.rel_density).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    /// Every entity of `kg1` with its counterpart in `kg2`.
    pub gold: SeedAlignment,
    pub perturbed_values: usize,
    pub perturbed_triples: usize,
    pub dropped_triples: usize,
}

#[derive(Debug, Clone)]
enum Value {
    Word(String),
    Numeric { int: u32, dec: u32, unit: &'static str },
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Word(w) => w.clone(),
            Value::Numeric { int, dec, unit } => format!("{int}.{dec} {unit}"),
        }
    }
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(1..=2);
    (0..words)
        .map(|_| {
            let n = rng.gen_range(2..=3);
            word(rng, n)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate_aligned_pair(cfg: &SynthConfig) -> Result<GeneratedPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = cfg.n_entities;

    // relation triples of the first graph
    let n_triples = cfg.num_triples();
    let mut triples: Vec<(usize, usize, usize)> = Vec::with_capacity(n_triples);
    let mut seen = HashSet::new();
    while triples.len() < n_triples {
        let h = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        let r = rng.gen_range(0..cfg.n_relations);
        if h != t && seen.insert((h, r, t)) {
            triples.push((h, r, t));
        }
    }

    // attributes: (entity, predicate label, value)
    let mut used_names = HashSet::new();
    let mut attrs: Vec<(usize, String, Value)> = Vec::new();
    for e in 0..n {
        let name = loop {
            let syl = rng.gen_range(3..=4);
            let cand = format!("{} {}", word(&mut rng, syl), word(&mut rng, 2));
            if used_names.insert(cand.clone()) {
                break cand;
            }
        };
        attrs.push((e, NAME_PREDICATE.to_string(), Value::Word(name)));
        for p in index::sample(&mut rng, cfg.n_predicates, cfg.attr_per_entity).into_vec() {
            let value = if rng.gen_bool(cfg.numeric_fraction) {
                Value::Numeric {
                    int: rng.gen_range(1..1000),
                    dec: rng.gen_range(0..10),
                    unit: UNITS.choose(&mut rng).expect("non-empty"),
                }
            } else {
                Value::Word(phrase(&mut rng))
            };
            attrs.push((e, format!("p{p}"), value));
        }
    }

    let mut kg1 = KnowledgeGraph::new();
    for e in 0..n {
        kg1.intern_entity(&format!("e{e}"));
    }
    for &(h, r, t) in &triples {
        kg1.add_relation(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"));
    }
    for (e, p, v) in &attrs {
        kg1.add_attribute(&format!("e{e}"), p, &v.render());
    }
    kg1.reindex();

    // second graph: relabel, then perturb
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let n_values = ((attrs.len() as f64) * cfg.attr_noise).round() as usize;
    let mut noisy_attrs = attrs.clone();
    for (counter, i) in index::sample(&mut rng, attrs.len(), n_values).into_vec().into_iter().enumerate() {
        noisy_attrs[i].2 = match &attrs[i].2 {
            // integer parts at or above 1000 never occur in the first graph
            Value::Numeric { unit, .. } => Value::Numeric {
                int: 1000 + counter as u32,
                dec: rng.gen_range(0..10),
                unit,
            },
            Value::Word(_) => Value::Word(format!("zq{counter} {}", phrase(&mut rng))),
        };
    }

    let n_rewire = ((triples.len() as f64) * cfg.rel_noise).round() as usize;
    let mut noisy_triples: Vec<Option<(usize, usize, usize)>> = triples.iter().copied().map(Some).collect();
    let mut present: HashSet<(usize, usize, usize)> = seen;
    let mut dropped = 0;
    for i in index::sample(&mut rng, triples.len(), n_rewire).into_vec() {
        let (h, r, t) = triples[i];
        present.remove(&(h, r, t));
        let mut replacement = None;
        for _ in 0..100 {
            let t2 = rng.gen_range(0..n);
            if t2 != h && t2 != t && !present.contains(&(h, r, t2)) {
                replacement = Some((h, r, t2));
                break;
            }
        }
        match replacement {
            Some(tr) => {
                present.insert(tr);
            }
            None => dropped += 1,
        }
        noisy_triples[i] = replacement;
    }

    let mut kg2 = KnowledgeGraph::new();
    for j in 0..n {
        kg2.intern_entity(&format!("x{j}"));
    }
    for &(h, r, t) in noisy_triples.iter().flatten() {
        kg2.add_relation(&format!("x{}", perm[h]), &format!("r{r}"), &format!("x{}", perm[t]));
    }
    for (e, p, v) in &noisy_attrs {
        kg2.add_attribute(&format!("x{}", perm[*e]), p, &v.render());
    }
    kg2.reindex();

    let gold = SeedAlignment::from_pairs((0..n).map(|e| (EntityId(e), EntityId(perm[e]))))?;
    Ok(GeneratedPair {
        kg1,
        kg2,
        gold,
        perturbed_values: n_values,
        perturbed_triples: n_rewire,
        dropped_triples: dropped,
    })
}

/// Paths written by [`GeneratedPair::dump`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpPaths {
    pub kg1_rel: PathBuf,
    pub kg1_attr: PathBuf,
    pub kg2_rel: PathBuf,
    pub kg2_attr: PathBuf,
    pub gold: PathBuf,
}

impl DumpPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            kg1_rel: dir.join("kg1_rel_triples.tsv"),
            kg1_attr: dir.join("kg1_attr_triples.tsv"),
            kg2_rel: dir.join("kg2_rel_triples.tsv"),
            kg2_attr: dir.join("kg2_attr_triples.tsv"),
            gold: dir.join("gold.tsv"),
        }
    }
}

pub fn relation_tsv(kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for t in kg.rel_triples() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            kg.entities().label(t.head.0),
            kg.relations().label(t.relation.0),
            kg.entities().label(t.tail.0)
        );
    }
    out
}

pub fn attribute_tsv(kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for a in kg.attr_triples() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            kg.entities().label(a.entity.0),
            kg.predicates().label(a.predicate.0),
            a.value
        );
    }
    out
}

impl GeneratedPair {
    /// Writes both graphs and the gold alignment in the triple/seed file formats.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<DumpPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DumpPaths::in_dir(dir);
        let mut gold = String::new();
        for p in &self.gold.pairs {
            let _ = writeln!(
                gold,
                "{}\t{}",
                self.kg1.entities().label(p.source.0),
                self.kg2.entities().label(p.target.0)
            );
        }
        for (path, text) in [
            (&paths.kg1_rel, relation_tsv(&self.kg1)),
            (&paths.kg1_attr, attribute_tsv(&self.kg1)),
            (&paths.kg2_rel, relation_tsv(&self.kg2)),
            (&paths.kg2_attr, attribute_tsv(&self.kg2)),
            (&paths.gold, gold),
        ] {
            std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_entities: 40,
            n_relations: 5,
            rel_density: 3.0,
            ..Default::default()
        }
    }

    #[test]
    fn sizes() {
        let p = generate_aligned_pair(&small()).unwrap();
        assert_eq!(p.kg1.num_entities(), 40);
        assert_eq!(p.kg2.num_entities(), 40);
        assert_eq!(p.kg1.rel_triples().len(), 120);
        assert_eq!(p.kg1.attr_triples().len(), 40 * 4);
        assert_eq!(p.gold.len(), 40);
    }

    #[test]
    fn invalid_config() {
        assert!(generate_aligned_pair(&SynthConfig { attr_noise: 1.5, ..small() }).is_err());
        assert!(generate_aligned_pair(&SynthConfig { attr_per_entity: 11, ..small() }).is_err());
    }

    #[test]
    fn rewiring_counts_are_exact() {
        let p = generate_aligned_pair(&SynthConfig { rel_noise: 0.25, ..small() }).unwrap();
        assert_eq!(p.perturbed_triples, 30);
        assert_eq!(p.kg2.rel_triples().len(), 120 - p.dropped_triples);
    }
}
