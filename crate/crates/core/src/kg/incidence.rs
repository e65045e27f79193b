use std::collections::{BTreeMap, BTreeSet};

use super::{EntityId, RelationId, RelationTriple};

/// Lookup tables derived from relation triples.
///
/// Every map is ordered so that iteration is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IncidenceIndex {
    /// Head entities of each relation.
    pub heads_of_relation: Vec<BTreeSet<EntityId>>,
    /// Tails reached from a head through one relation.
    pub tails_of_head_relation: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    /// Tails reached from a head through any relation.
    pub tails_of_head: Vec<BTreeSet<EntityId>>,
    /// Relations linking an ordered (head, tail) pair.
    pub relations_between: BTreeMap<(EntityId, EntityId), BTreeSet<RelationId>>,
    /// Undirected neighbourhood.
    pub neighbors: Vec<BTreeSet<EntityId>>,
}

impl IncidenceIndex {
    pub fn build(num_entities: usize, num_relations: usize, triples: &[RelationTriple]) -> Self {
        let mut idx = IncidenceIndex {
            heads_of_relation: vec![BTreeSet::new(); num_relations],
            tails_of_head_relation: BTreeMap::new(),
            tails_of_head: vec![BTreeSet::new(); num_entities],
            relations_between: BTreeMap::new(),
            neighbors: vec![BTreeSet::new(); num_entities],
        };
        for t in triples {
            idx.heads_of_relation[t.relation.0].insert(t.head);
            idx.tails_of_head_relation
                .entry((t.head, t.relation))
                .or_default()
                .insert(t.tail);
            idx.tails_of_head[t.head.0].insert(t.tail);
            idx.relations_between
                .entry((t.head, t.tail))
                .or_default()
                .insert(t.relation);
            idx.neighbors[t.head.0].insert(t.tail);
            idx.neighbors[t.tail.0].insert(t.head);
        }
        idx
    }

    pub fn num_entities(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_relations(&self) -> usize {
        self.heads_of_relation.len()
    }

    /// All (head, relation, tail) triples in canonical order: by head, then
    /// tail, then relation.
    pub fn triples(&self) -> Vec<RelationTriple> {
        let mut out = Vec::new();
        for (&(head, tail), rels) in &self.relations_between {
            for &relation in rels {
                out.push(RelationTriple { head, relation, tail });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;
    use proptest::prelude::*;

    fn kg(text: &str) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.read_relation_triples(text.as_bytes(), "t").unwrap();
        g
    }

    #[test]
    fn heads_and_relations_between() {
        let g = kg("A\tr\tB\nC\tr\tB\n");
        let (a, b, c) = (g.entity_id("A").unwrap(), g.entity_id("B").unwrap(), g.entity_id("C").unwrap());
        let r = RelationId(0);
        let idx = g.incidence();
        assert_eq!(idx.heads_of_relation[0], [a, c].into_iter().collect());
        assert_eq!(idx.relations_between[&(a, b)], [r].into_iter().collect());
    }

    #[test]
    fn multi_relations_are_preserved() {
        let g = kg("A\tr1\tB\nA\tr2\tB\n");
        let idx = g.incidence();
        let key = (g.entity_id("A").unwrap(), g.entity_id("B").unwrap());
        assert_eq!(idx.relations_between[&key], [RelationId(0), RelationId(1)].into_iter().collect());
    }

    #[test]
    fn self_loop_is_its_own_neighbor() {
        let g = kg("A\tr\tA\n");
        assert!(g.incidence().neighbors[0].contains(&EntityId(0)));
    }

    proptest! {
        #[test]
        fn index_is_consistent_with_triples(edges in proptest::collection::vec((0usize..8, 0usize..3, 0usize..8), 0..40)) {
            let mut text = String::new();
            for (h, r, t) in &edges {
                text.push_str(&format!("e{h}\tr{r}\te{t}\n"));
            }
            let g = kg(&text);
            let idx = g.incidence();
            for t in g.rel_triples() {
                prop_assert!(idx.tails_of_head_relation[&(t.head, t.relation)].contains(&t.tail));
                prop_assert!(idx.heads_of_relation[t.relation.0].contains(&t.head));
                prop_assert!(idx.tails_of_head[t.head.0].contains(&t.tail));
                prop_assert!(idx.relations_between[&(t.head, t.tail)].contains(&t.relation));
                prop_assert!(idx.neighbors[t.head.0].contains(&t.tail));
                prop_assert!(idx.neighbors[t.tail.0].contains(&t.head));
            }
            let rebuilt = IncidenceIndex::build(g.num_entities(), g.num_relations(), g.rel_triples());
            prop_assert_eq!(&rebuilt, idx);
            let mut canonical = idx.triples();
            let mut stored = g.rel_triples().to_vec();
            canonical.sort();
            stored.sort();
            prop_assert_eq!(canonical, stored);
        }
    }
}
