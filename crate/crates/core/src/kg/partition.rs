//! Splitting a graph's attribute triples into the Literal, Digital, Name
//! and Structure channels. All channels share the relation triples.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;

use super::{AttributeTriple, KnowledgeGraph, PredicateId};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelKind {
    Literal,
    Digital,
    Name,
    Structure,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] = [
        ChannelKind::Literal,
        ChannelKind::Digital,
        ChannelKind::Name,
        ChannelKind::Structure,
    ];

    pub fn has_attributes(self) -> bool {
        self != ChannelKind::Structure
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Literal => "literal",
            ChannelKind::Digital => "digital",
            ChannelKind::Name => "name",
            ChannelKind::Structure => "structure",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" | "lite" => Ok(ChannelKind::Literal),
            "digital" | "digi" => Ok(ChannelKind::Digital),
            "name" => Ok(ChannelKind::Name),
            "structure" | "stru" => Ok(ChannelKind::Structure),
            other => Err(Error::Validation(format!(
                "unknown channel {other:?} (expected literal, digital, name, structure)"
            ))),
        }
    }
}

/// Decides whether an attribute value is numeric.
///
/// A value is digital when, after trimming and stripping leading currency
/// symbols, it is an optionally signed decimal number with at most one
/// decimal point, optionally followed by one alphabetic unit token of at
/// most `max_unit_len` characters ("13.6 ounces", "$9.79", "-3", "5kg").
#[derive(Debug, Clone)]
pub struct DigitalRule {
    pattern: Regex,
    currency: Vec<char>,
}

impl DigitalRule {
    pub fn new(max_unit_len: usize, currency: &[char]) -> Self {
        let pattern = Regex::new(&format!(
            r"^[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:\s*\p{{Alphabetic}}{{1,{max_unit_len}}})?$"
        ))
        .expect("digital value pattern");
        Self {
            pattern,
            currency: currency.to_vec(),
        }
    }

    pub fn is_digital(&self, value: &str) -> bool {
        let v = value.trim();
        let v = v.trim_start_matches(|c| self.currency.contains(&c)).trim_start();
        self.pattern.is_match(v)
    }
}

impl Default for DigitalRule {
    fn default() -> Self {
        Self::new(12, &['$', '€', '£', '¥'])
    }
}

/// One partitioned view of a graph.
#[derive(Debug, Clone)]
pub struct ChannelGraph<'g> {
    pub kind: ChannelKind,
    pub attr_triples: Vec<AttributeTriple>,
    pub graph: &'g KnowledgeGraph,
}

impl ChannelGraph<'_> {
    pub fn num_entities(&self) -> usize {
        self.graph.num_entities()
    }
}

/// Routes every attribute triple to exactly one of the Name, Digital and
/// Literal channels. The Structure channel carries no attributes.
///
/// Returned in [`ChannelKind::ALL`] order.
pub fn partition_channels<'g>(
    graph: &'g KnowledgeGraph,
    name_predicates: &HashSet<PredicateId>,
    rule: &DigitalRule,
) -> [ChannelGraph<'g>; 4] {
    let mut literal = Vec::new();
    let mut digital = Vec::new();
    let mut name = Vec::new();
    for t in graph.attr_triples() {
        if name_predicates.contains(&t.predicate) {
            name.push(t.clone());
        } else if rule.is_digital(&t.value) {
            digital.push(t.clone());
        } else {
            literal.push(t.clone());
        }
    }
    let channel = |kind, attr_triples| ChannelGraph {
        kind,
        attr_triples,
        graph,
    };
    [
        channel(ChannelKind::Literal, literal),
        channel(ChannelKind::Digital, digital),
        channel(ChannelKind::Name, name),
        channel(ChannelKind::Structure, Vec::new()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn digital_rule_examples() {
        let rule = DigitalRule::default();
        for v in ["13.6 ounces", "$9.79", "42", " -3.5 ", "5kg", ".5 in", "12."] {
            assert!(rule.is_digital(v), "{v}");
        }
        for v in ["White", "Gravity Hook (Style 5)", "1.2.3", "13.6 fluid ounces", "size 9", "", "1,000", "3 verylongunitnamex"] {
            assert!(!rule.is_digital(v), "{v}");
        }
    }

    #[test]
    fn routes_name_digital_literal() {
        let mut kg = KnowledgeGraph::new();
        kg.read_attribute_triples(
            "p1\tshipping_weight\t13.6 ounces\np1\tcolor\tWhite\np1\ttitle\tGravity Hook (Style 5)\n".as_bytes(),
            "t",
        )
        .unwrap();
        let names: HashSet<_> = [kg.predicate_id("title").unwrap()].into_iter().collect();
        let [lit, dig, name, stru] = partition_channels(&kg, &names, &DigitalRule::default());
        assert_eq!(lit.attr_triples.len(), 1);
        assert_eq!(lit.attr_triples[0].value, "White");
        assert_eq!(dig.attr_triples[0].value, "13.6 ounces");
        assert_eq!(name.attr_triples[0].value, "Gravity Hook (Style 5)");
        assert!(stru.attr_triples.is_empty());
    }

    proptest! {
        #[test]
        fn partition_is_exact(values in proptest::collection::vec(("[a-c]", "[0-9a-z .$]{1,8}"), 0..30)) {
            let mut kg = KnowledgeGraph::new();
            for (i, (p, v)) in values.iter().enumerate() {
                kg.add_attribute(&format!("e{}", i % 5), p, v);
            }
            let names: HashSet<_> = kg.predicate_id("a").into_iter().collect();
            let chans = partition_channels(&kg, &names, &DigitalRule::default());
            let total: usize = chans.iter().map(|c| c.attr_triples.len()).sum();
            prop_assert_eq!(total, kg.attr_triples().len());
            prop_assert!(chans[3].attr_triples.is_empty());
            let mut all: Vec<_> = chans.iter().flat_map(|c| c.attr_triples.iter().cloned()).collect();
            let mut orig = kg.attr_triples().to_vec();
            let key = |t: &AttributeTriple| (t.entity, t.predicate, t.value.clone());
            all.sort_by_key(key);
            orig.sort_by_key(key);
            prop_assert_eq!(all, orig);
        }
    }
}
