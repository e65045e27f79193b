use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EntityId, KnowledgeGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPair {
    pub source: EntityId,
    pub target: EntityId,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64) -> Result<Self> {
        if !(train > 0.0) || !(validation >= 0.0) || train + validation > 1.0 + 1e-12 {
            return Err(Error::Validation(format!(
                "split fractions must satisfy 0 < train, 0 <= validation, train + validation <= 1 (got {train}, {validation})"
            )));
        }
        Ok(Self { train, validation })
    }

    /// Train/validation/test counts for `n` pairs.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let n_train = ((self.train * n as f64).round() as usize).min(n);
        let n_val = ((self.validation * n as f64).round() as usize).min(n - n_train);
        (n_train, n_val, n - n_train - n_val)
    }
}

/// Aligned entity pairs between a source and a target graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedAlignment {
    pub pairs: Vec<SeedPair>,
}

impl SeedAlignment {
    /// Builds an alignment from (source, target) pairs, all labelled
    /// [`Split::Test`], checking the one-to-one property.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (EntityId, EntityId)>) -> Result<Self> {
        let pairs: Vec<SeedPair> = pairs
            .into_iter()
            .map(|(source, target)| SeedPair {
                source,
                target,
                split: Split::Test,
            })
            .collect();
        let alignment = SeedAlignment { pairs };
        alignment.check_one_to_one(|e| format!("source entity {e}"), |e| format!("target entity {e}"))?;
        Ok(alignment)
    }

    fn check_one_to_one(
        &self,
        src_name: impl Fn(EntityId) -> String,
        tgt_name: impl Fn(EntityId) -> String,
    ) -> Result<()> {
        let mut src = HashMap::new();
        let mut tgt = HashMap::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if src.insert(p.source, i).is_some() {
                return Err(Error::Validation(format!("{} appears in more than one pair", src_name(p.source))));
            }
            if tgt.insert(p.target, i).is_some() {
                return Err(Error::Validation(format!("{} appears in more than one pair", tgt_name(p.target))));
            }
        }
        Ok(())
    }

    pub fn load(
        path: impl AsRef<Path>,
        source: &KnowledgeGraph,
        target: &KnowledgeGraph,
        fractions: SplitFractions,
        rng_seed: u64,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, &path.display().to_string(), source, target, fractions, rng_seed)
    }

    pub fn read(
        reader: impl Read,
        origin: &str,
        source: &KnowledgeGraph,
        target: &KnowledgeGraph,
        fractions: SplitFractions,
        rng_seed: u64,
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::parse(origin, lineno + 1, "expected 2 tab-separated entity labels"));
            }
            let s = source
                .entity_id(fields[0])
                .ok_or_else(|| Error::parse(origin, lineno + 1, format!("unknown source entity {:?}", fields[0])))?;
            let t = target
                .entity_id(fields[1])
                .ok_or_else(|| Error::parse(origin, lineno + 1, format!("unknown target entity {:?}", fields[1])))?;
            pairs.push(SeedPair {
                source: s,
                target: t,
                split: Split::Test,
            });
        }
        let mut alignment = SeedAlignment { pairs };
        alignment.check_one_to_one(
            |e| format!("source entity {:?}", source.entities().label(e.0)),
            |e| format!("target entity {:?}", target.entities().label(e.0)),
        )?;
        alignment.assign_splits(fractions, rng_seed);
        Ok(alignment)
    }

    /// Relabels every pair: a seeded shuffle picks the train pairs, then the
    /// validation pairs; the remainder is test. Pair order is preserved.
    pub fn assign_splits(&mut self, fractions: SplitFractions, rng_seed: u64) {
        let labels = split_pairs(self.pairs.len(), fractions, rng_seed);
        for (p, s) in self.pairs.iter_mut().zip(labels) {
            p.split = s;
        }
    }

    pub fn with_split(&self, split: Split) -> Vec<(EntityId, EntityId)> {
        self.pairs
            .iter()
            .filter(|p| p.split == split)
            .map(|p| (p.source, p.target))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.pairs.iter().filter(|p| p.split == split).count()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Split labels for `n` items, deterministic in `rng_seed`.
pub fn split_pairs(n: usize, fractions: SplitFractions, rng_seed: u64) -> Vec<Split> {
    let (n_train, n_val, _) = fractions.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut labels = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            labels[i] = Split::Train;
        } else if rank < n_train + n_val {
            labels[i] = Split::Validation;
        }
    }
    labels
}
