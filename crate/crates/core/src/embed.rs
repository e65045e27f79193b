//! Fixed-dimension string embeddings for attribute predicates, values and
//! entity names.
//!
//! Two sources are supported: a table of precomputed vectors produced by
//! any external sentence encoder, and a hashed character n-gram embedder
//! that needs no model at all.
//!
//! Hashed embedder: the string is normalized (lowercase, internal
//! whitespace collapsed to single spaces, trimmed), every character n-gram
//! with `ngram_min <= n <= ngram_max` is hashed with 64-bit FNV-1a over its
//! UTF-8 bytes (offset basis XOR `hash_seed`, then the SplitMix64
//! finalizer). Bucket = `hash % dim`, sign = top bit of the hash. The
//! summed vector is L2-normalized; strings with no n-grams map to zero.
//! This hash is part of the on-disk contract and must not change.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::{ChannelGraph, ChannelKind};
use crate::tensor::Tensor;

/// Lowercase, collapse runs of whitespace to one space, trim.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashNGramConfig {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub hash_seed: u64,
}

impl Default for HashNGramConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            ngram_min: 2,
            ngram_max: 4,
            hash_seed: 0,
        }
    }
}

impl HashNGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.ngram_min == 0 || self.ngram_max < self.ngram_min {
            return Err(Error::Validation(format!(
                "invalid n-gram embedder config: dim {}, n-grams {}..{}",
                self.dim, self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // SplitMix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Hashed character n-gram embedding of `s`.
pub fn embed_string(s: &str, cfg: &HashNGramConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dim];
    let norm = normalize(s);
    let chars: Vec<char> = norm.chars().collect();
    let mut buf = String::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window);
            let h = hash_bytes(buf.as_bytes(), cfg.hash_seed);
            let bucket = (h % cfg.dim as u64) as usize;
            v[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
    }
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len > 0.0 {
        v.iter_mut().for_each(|x| *x /= len);
    }
    v
}

/// Precomputed vectors keyed by normalized string.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, &path.display().to_string())
    }

    /// Reads lines of `string<TAB>v1 v2 ... vd`.
    pub fn read(reader: impl Read, origin: &str) -> Result<Self> {
        let mut dim = None;
        let mut entries = HashMap::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (key, vector) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "expected string<TAB>vector"))?;
            let values = vector
                .split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(origin, lineno, format!("bad vector component {x:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            match dim {
                None if values.is_empty() => return Err(Error::parse(origin, lineno, "empty vector")),
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("vector has {} components, expected {d}", values.len()),
                    ))
                }
                Some(_) => {}
            }
            let key = normalize(key);
            if entries.insert(key.clone(), values).is_some() {
                log::warn!("{origin}:{lineno}: duplicate key {key:?}, keeping the last entry");
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(origin, 0, "no vectors"))?;
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, s: &str) -> Option<&[f64]> {
        self.entries.get(&normalize(s)).map(Vec::as_slice)
    }
}

/// String embedder used to build channel features.
#[derive(Debug, Clone)]
pub enum Embedder {
    Hashed(HashNGramConfig),
    /// Table lookups; misses fall back to the hashed embedder, whose `dim`
    /// must equal the table's.
    Table {
        table: EmbeddingTable,
        fallback: HashNGramConfig,
    },
}

impl Embedder {
    pub fn table(table: EmbeddingTable, mut fallback: HashNGramConfig) -> Self {
        fallback.dim = table.dim();
        Embedder::Table { table, fallback }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Hashed(cfg) => cfg.dim,
            Embedder::Table { table, .. } => table.dim(),
        }
    }

    pub fn embed(&self, s: &str) -> Vec<f64> {
        match self {
            Embedder::Hashed(cfg) => embed_string(s, cfg),
            Embedder::Table { table, fallback } => match table.get(s) {
                Some(v) => v.to_vec(),
                None => embed_string(s, fallback),
            },
        }
    }
}

/// Per-triple (predicate, value) feature rows of one attribute channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeFeatures {
    /// Owning entity of each row.
    pub entity: Vec<usize>,
    /// Predicate embeddings, one row per triple.
    pub attr: Tensor,
    /// Value embeddings, one row per triple.
    pub value: Tensor,
}

impl AttributeFeatures {
    pub fn len(&self) -> usize {
        self.entity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity.is_empty()
    }
}

/// Embeds every attribute triple of an attribute channel.
pub fn embed_attributes(channel: &ChannelGraph<'_>, embedder: &Embedder) -> Result<AttributeFeatures> {
    if channel.kind == ChannelKind::Structure {
        return Err(Error::Contract("the structure channel has no attribute triples to embed".into()));
    }
    let dim = embedder.dim();
    let m = channel.attr_triples.len();
    let mut cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut attr = Vec::with_capacity(m * dim);
    let mut value = Vec::with_capacity(m * dim);
    let mut entity = Vec::with_capacity(m);
    let predicates = channel.graph.predicates();
    for t in &channel.attr_triples {
        let p = predicates.label(t.predicate.0);
        attr.extend_from_slice(cache.entry(p).or_insert_with(|| embedder.embed(p)));
        value.extend_from_slice(cache.entry(t.value.as_str()).or_insert_with(|| embedder.embed(&t.value)));
        entity.push(t.entity.0);
    }
    Ok(AttributeFeatures {
        entity,
        attr: Tensor::from_vec(m, dim, attr)?,
        value: Tensor::from_vec(m, dim, value)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{partition_channels, DigitalRule, KnowledgeGraph};
    use std::collections::HashSet;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let cfg = HashNGramConfig::default();
        let a = embed_string("abc", &cfg);
        let b = embed_string("abc", &cfg);
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_string_is_zero() {
        let v = embed_string("", &HashNGramConfig::default());
        assert_eq!(v.len(), 128);
        assert!(v.iter().all(|&x| x == 0.0));
        // a single char has no 2-grams either
        assert!(embed_string("a", &HashNGramConfig::default()).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn near_strings_are_closer() {
        let cfg = HashNGramConfig::default();
        let c = embed_string("crampons", &cfg);
        let near = cosine(&c, &embed_string("crampon", &cfg));
        let far = cosine(&c, &embed_string("yoga mat", &cfg));
        assert!(near > far, "{near} vs {far}");
    }

    #[test]
    fn normalization_collapses_case_and_space() {
        let cfg = HashNGramConfig::default();
        assert_eq!(embed_string("Ice  Climbing", &cfg), embed_string("ice climbing", &cfg));
        assert_eq!(normalize("  A \t B  "), "a b");
    }

    #[test]
    fn table_parsing() {
        let t = EmbeddingTable::read("Foo Bar\t1 2 3 4\nbaz\t0 0 1 0\n".as_bytes(), "t").unwrap();
        assert_eq!(t.dim(), 4);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("foo   bar"), Some(&[1.0, 2.0, 3.0, 4.0][..]));
    }

    #[test]
    fn table_duplicate_key_last_wins() {
        let t = EmbeddingTable::read("a\t1 0\nA\t0 1\n".as_bytes(), "t").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn table_inconsistent_dims_error() {
        let err = EmbeddingTable::read("a\t1 2 3 4\nb\t1 2 3\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    fn channel_graph() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        kg.read_attribute_triples("e1\tcolor\tWhite\ne2\tcolor\tBlack\ne2\tweight\t2 kg\n".as_bytes(), "t")
            .unwrap();
        kg
    }

    #[test]
    fn attribute_features() {
        let kg = channel_graph();
        let [lit, dig, _, stru] = partition_channels(&kg, &HashSet::new(), &DigitalRule::default());
        let cfg = HashNGramConfig { dim: 16, ..Default::default() };
        let emb = Embedder::Hashed(cfg);
        let f = embed_attributes(&lit, &emb).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.attr.row(0), f.attr.row(1));
        assert_eq!(f.attr.row(0), &embed_string("color", &cfg)[..]);
        assert_eq!(f.value.row(0), &embed_string("White", &cfg)[..]);
        assert_eq!(embed_attributes(&dig, &emb).unwrap().len(), 1);
        assert!(embed_attributes(&stru, &emb).is_err());
    }

    #[test]
    fn empty_channel_has_no_features() {
        let kg = channel_graph();
        let [_, _, name, _] = partition_channels(&kg, &HashSet::new(), &DigitalRule::default());
        let f = embed_attributes(&name, &Embedder::Hashed(HashNGramConfig::default())).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.attr.shape(), (0, 128));
    }

    #[test]
    fn table_misses_fall_back_to_hashing() {
        let table = EmbeddingTable::read("color\t1 0 0 0\n".as_bytes(), "t").unwrap();
        let emb = Embedder::table(table, HashNGramConfig::default());
        assert_eq!(emb.embed("Color"), vec![1.0, 0.0, 0.0, 0.0]);
        let cfg = HashNGramConfig { dim: 4, ..Default::default() };
        assert_eq!(emb.embed("white"), embed_string("white", &cfg));
    }
}
