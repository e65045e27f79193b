//! Knowledge graphs built from tab-separated triple files.
//!
//! Labels are interned into dense, first-seen-order id spaces. Relation
//! triples are deduplicated on load and the [`IncidenceIndex`] is rebuilt
//! after every load so it always agrees with the stored triples.

mod incidence;
mod partition;
mod seeds;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

pub use incidence::IncidenceIndex;
pub use partition::{partition_channels, ChannelGraph, ChannelKind, DigitalRule};
pub use seeds::{split_pairs, SeedAlignment, SeedPair, Split, SplitFractions};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(EntityId);
id_type!(RelationId);
id_type!(PredicateId);

/// Bidirectional label table with dense ids in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeTriple {
    pub entity: EntityId,
    pub predicate: PredicateId,
    pub value: String,
}

/// Counters reported by the loaders.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub stored: usize,
    pub duplicates: usize,
    pub blank_values: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    predicates: Vocab,
    rel_triples: Vec<RelationTriple>,
    rel_seen: HashSet<RelationTriple>,
    attr_triples: Vec<AttributeTriple>,
    incidence: IncidenceIndex,
    dropped_blank_values: usize,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn predicates(&self) -> &Vocab {
        &self.predicates
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn rel_triples(&self) -> &[RelationTriple] {
        &self.rel_triples
    }

    pub fn attr_triples(&self) -> &[AttributeTriple] {
        &self.attr_triples
    }

    pub fn incidence(&self) -> &IncidenceIndex {
        &self.incidence
    }

    /// Attribute values that were blank after trimming and therefore dropped.
    pub fn dropped_blank_values(&self) -> usize {
        self.dropped_blank_values
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn predicate_id(&self, label: &str) -> Option<PredicateId> {
        self.predicates.get(label).map(PredicateId)
    }

    pub fn intern_entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    /// Adds a relation triple by label. Returns false for a duplicate.
    /// The incidence index is not refreshed; call [`Self::reindex`].
    pub fn add_relation(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let triple = RelationTriple {
            head: EntityId(self.entities.intern(head)),
            relation: RelationId(self.relations.intern(relation)),
            tail: EntityId(self.entities.intern(tail)),
        };
        if self.rel_seen.insert(triple) {
            self.rel_triples.push(triple);
            true
        } else {
            false
        }
    }

    /// Adds an attribute triple by label. Returns false when the value is
    /// blank and was dropped.
    pub fn add_attribute(&mut self, entity: &str, predicate: &str, value: &str) -> bool {
        let entity = EntityId(self.entities.intern(entity));
        if value.trim().is_empty() {
            self.dropped_blank_values += 1;
            return false;
        }
        let predicate = PredicateId(self.predicates.intern(predicate));
        self.attr_triples.push(AttributeTriple {
            entity,
            predicate,
            value: value.to_owned(),
        });
        true
    }

    pub fn reindex(&mut self) {
        self.incidence = IncidenceIndex::build(self.entities.len(), self.relations.len(), &self.rel_triples);
    }

    pub fn load_relation_triples(&mut self, path: impl AsRef<Path>) -> Result<LoadStats> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_relation_triples(file, &path.display().to_string())
    }

    pub fn read_relation_triples(&mut self, reader: impl Read, origin: &str) -> Result<LoadStats> {
        let mut stats = LoadStats::default();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            stats.lines += 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!("expected 3 tab-separated fields (head, relation, tail), found {}", fields.len()),
                ));
            }
            if self.add_relation(fields[0], fields[1], fields[2]) {
                stats.stored += 1;
            } else {
                stats.duplicates += 1;
            }
        }
        if stats.lines == 0 {
            log::warn!("{origin}: no relation triples");
        }
        log::debug!("{origin}: {} relation triples ({} duplicates)", stats.stored, stats.duplicates);
        self.reindex();
        Ok(stats)
    }

    pub fn load_attribute_triples(&mut self, path: impl AsRef<Path>) -> Result<LoadStats> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_attribute_triples(file, &path.display().to_string())
    }

    pub fn read_attribute_triples(&mut self, reader: impl Read, origin: &str) -> Result<LoadStats> {
        let mut stats = LoadStats::default();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            stats.lines += 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields[0].trim().is_empty() || fields[1].trim().is_empty() {
                return Err(Error::parse(
                    origin,
                    lineno + 1,
                    format!(
                        "expected 3 tab-separated fields (entity, predicate, value), found {}",
                        fields.len()
                    ),
                ));
            }
            if self.add_attribute(fields[0], fields[1], fields[2]) {
                stats.stored += 1;
            } else {
                stats.blank_values += 1;
            }
        }
        if stats.blank_values > 0 {
            log::warn!("{origin}: dropped {} blank attribute values", stats.blank_values);
        }
        // Entities that only carry attributes still need incidence slots.
        self.reindex();
        Ok(stats)
    }

    /// Name of every entity: the first value carried by any of `name_predicates`.
    pub fn entity_names(&self, name_predicates: &HashSet<PredicateId>) -> Vec<Option<&str>> {
        let mut names = vec![None; self.num_entities()];
        for t in &self.attr_triples {
            if name_predicates.contains(&t.predicate) && names[t.entity.0].is_none() {
                names[t.entity.0] = Some(t.value.as_str());
            }
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(rel: &str) -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        kg.read_relation_triples(rel.as_bytes(), "test").unwrap();
        kg
    }

    #[test]
    fn duplicate_relation_lines_are_stored_once() {
        let kg = graph("A\tr1\tB\nA\tr1\tB\n");
        assert_eq!(kg.rel_triples().len(), 1);
    }

    #[test]
    fn empty_file_yields_empty_graph() {
        let kg = graph("");
        assert_eq!(kg.rel_triples().len(), 0);
        assert_eq!(kg.num_entities(), 0);
    }

    #[test]
    fn entities_are_interned_in_first_seen_order() {
        let kg = graph("B\tr\tA\nA\tr\tC\nC\ts\tB\n");
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.entity_id("B"), Some(EntityId(0)));
        assert_eq!(kg.entity_id("A"), Some(EntityId(1)));
        assert_eq!(kg.entity_id("C"), Some(EntityId(2)));
    }

    #[test]
    fn malformed_relation_line_reports_line_number() {
        let mut kg = KnowledgeGraph::new();
        let err = kg.read_relation_triples("A\tr\tB\nA\tr\n".as_bytes(), "rel.tsv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn attribute_values_are_kept_verbatim() {
        let mut kg = KnowledgeGraph::new();
        kg.read_attribute_triples(
            "p1\tshipping_weight\t13.6 ounces\np2\tcolor\tWhite\np3\ttitle\tÉtoile  bleue\n".as_bytes(),
            "attr",
        )
        .unwrap();
        let t = &kg.attr_triples()[0];
        assert_eq!(kg.entities().label(t.entity.0), "p1");
        assert_eq!(kg.predicates().label(t.predicate.0), "shipping_weight");
        assert_eq!(t.value, "13.6 ounces");
        assert_eq!(kg.attr_triples()[1].value, "White");
        assert_eq!(kg.attr_triples()[2].value, "Étoile  bleue");
    }

    #[test]
    fn attribute_value_with_tab_is_rejected() {
        let mut kg = KnowledgeGraph::new();
        assert!(kg.read_attribute_triples("p1\tcolor\tred\tblue\n".as_bytes(), "attr").is_err());
        assert!(kg.read_attribute_triples("p1\tcolor\n".as_bytes(), "attr").is_err());
    }

    #[test]
    fn blank_attribute_values_are_counted_not_errors() {
        let mut kg = KnowledgeGraph::new();
        let stats = kg.read_attribute_triples("p1\tcolor\t  \np1\tsize\tL\n".as_bytes(), "attr").unwrap();
        assert_eq!(stats.blank_values, 1);
        assert_eq!(kg.attr_triples().len(), 1);
        assert_eq!(kg.dropped_blank_values(), 1);
    }

    #[test]
    fn interning_is_stable_across_loads() {
        let text = "x\tr\ty\ny\ts\tz\nz\tr\tx\n";
        let a = graph(text);
        let b = graph(text);
        assert_eq!(a.entities(), b.entities());
        assert_eq!(a.rel_triples(), b.rel_triples());
    }
}
