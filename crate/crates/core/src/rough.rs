//! Rule-based blocking of product records before pairwise scoring.
//!
//! A query record and a candidate record are each flattened into one
//! lowercase string (`concat_fields`); a rule pairs a pattern over the
//! query's categories with a pattern over the candidate's categories and
//! title.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use regex::Regex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProductRecord {
    pub id: String,
    pub title: String,
    /// Category hierarchy, most general first.
    pub categories: Vec<String>,
    pub attrs: BTreeMap<String, String>,
}

/// Lowercased category levels joined by ", ", followed by the title when
/// `include_title`; empty parts are skipped.
pub fn concat_fields(rec: &ProductRecord, include_title: bool) -> String {
    let title = include_title.then_some(rec.title.as_str());
    rec.categories
        .iter()
        .map(String::as_str)
        .chain(title)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Reads product records from a TSV file whose header names the columns:
/// `id`, `title`, any number of `category…` columns (in order) and an
/// optional `attrs` column of `key=value;key=value` pairs.
pub fn read_products(reader: impl Read, origin: &str) -> Result<Vec<ProductRecord>> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(origin, e))?,
        None => return Ok(Vec::new()),
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| c.eq_ignore_ascii_case(name));
    let id_col = find("id").ok_or_else(|| Error::parse(origin, 1, "header lacks an `id` column"))?;
    let title_col = find("title");
    let attrs_col = find("attrs");
    let cat_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.to_ascii_lowercase().starts_with("category"))
        .map(|(i, _)| i)
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let id = fields[id_col].trim().to_string();
        if id.is_empty() {
            return Err(Error::parse(origin, lineno, "empty id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, lineno, format!("duplicate id {id:?}")));
        }
        let mut attrs = BTreeMap::new();
        if let Some(c) = attrs_col {
            for pair in fields[c].split(';').filter(|p| !p.trim().is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::parse(origin, lineno, format!("attribute {pair:?} lacks `=`")))?;
                attrs.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        out.push(ProductRecord {
            id,
            title: title_col.map(|c| fields[c].trim().to_string()).unwrap_or_default(),
            categories: cat_cols
                .iter()
                .map(|&c| fields[c].trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            attrs,
        });
    }
    Ok(out)
}

pub fn load_products(path: impl AsRef<Path>) -> Result<Vec<ProductRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_products(file, &path.display().to_string())
}

#[derive(Debug, Clone)]
pub struct MatchRule {
    pub line: usize,
    pub query: Regex,
    pub candidate: Regex,
}

impl MatchRule {
    pub fn new(query: &str, candidate: &str, line: usize) -> Result<Self> {
        let compile = |p: &str| {
            Regex::new(p).map_err(|e| Error::parse("rules", line, format!("invalid pattern {p:?}: {e}")))
        };
        Ok(Self {
            line,
            query: compile(query)?,
            candidate: compile(candidate)?,
        })
    }
}

/// One rule per line, `query_pattern<TAB>candidate_pattern`; blank lines
/// and lines starting with `#` are ignored.
pub fn read_rules(reader: impl Read, origin: &str) -> Result<Vec<MatchRule>> {
    let mut rules = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (q, c) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, lineno, "expected query_pattern<TAB>candidate_pattern"))?;
        rules.push(MatchRule::new(q.trim(), c.trim(), lineno).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::parse(origin, line, message),
            other => other,
        })?);
    }
    Ok(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<MatchRule>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rules(file, &path.display().to_string())
}

/// Query id → sorted, duplicate-free candidate ids. Every query appears,
/// possibly with an empty set.
pub type CandidateSet = BTreeMap<String, BTreeSet<String>>;

/// Union over rules of the candidates matching each query.
pub fn apply_rules(rules: &[MatchRule], queries: &[ProductRecord], candidates: &[ProductRecord]) -> CandidateSet {
    let cand_text: Vec<String> = candidates.iter().map(|c| concat_fields(c, true)).collect();
    let mut out = CandidateSet::new();
    for q in queries {
        let q_text = concat_fields(q, false);
        let set = out.entry(q.id.clone()).or_default();
        for rule in rules.iter().filter(|r| r.query.is_match(&q_text)) {
            for (c, text) in candidates.iter().zip(&cand_text) {
                if rule.candidate.is_match(text) {
                    set.insert(c.id.clone());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageStats {
    pub per_query: BTreeMap<String, usize>,
    pub empty_queries: usize,
    pub distinct_candidates: usize,
}

pub fn coverage_stats(cands: &CandidateSet) -> CoverageStats {
    let per_query: BTreeMap<String, usize> = cands.iter().map(|(q, s)| (q.clone(), s.len())).collect();
    let distinct: BTreeSet<&String> = cands.values().flatten().collect();
    CoverageStats {
        empty_queries: per_query.values().filter(|&&n| n == 0).count(),
        distinct_candidates: distinct.len(),
        per_query,
    }
}

impl CoverageStats {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "queries: {}", self.per_query.len());
        let _ = writeln!(out, "empty_queries: {}", self.empty_queries);
        let _ = writeln!(out, "distinct_candidates: {}", self.distinct_candidates);
        out
    }
}

/// `query_id<TAB>id,id,...` per query.
pub fn candidates_tsv(cands: &CandidateSet) -> String {
    let mut out = String::new();
    for (q, set) in cands {
        let ids: Vec<&str> = set.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{q}\t{}", ids.join(","));
    }
    out
}

pub fn read_candidates(reader: impl Read, origin: &str) -> Result<CandidateSet> {
    let mut out = CandidateSet::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (q, ids) = line.split_once('\t').ok_or_else(|| Error::parse(origin, n + 1, "expected query<TAB>ids"))?;
        out.entry(q.to_string())
            .or_default()
            .extend(ids.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from));
    }
    Ok(out)
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<CandidateSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_candidates(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, cats: &[&str], title: &str) -> ProductRecord {
        ProductRecord {
            id: id.into(),
            title: title.into(),
            categories: cats.iter().map(|s| s.to_string()).collect(),
            attrs: BTreeMap::new(),
        }
    }

    #[test]
    fn concat_examples() {
        let r = rec("a", &["Outdoor fitness", "Outdoor sport"], "");
        assert_eq!(concat_fields(&r, false), "outdoor fitness, outdoor sport");
        let r = rec("b", &[], "KAHTOOLA steel hiking crampons");
        assert_eq!(concat_fields(&r, true), "kahtoola steel hiking crampons");
        assert_eq!(concat_fields(&ProductRecord::default(), true), "");
    }

    #[test]
    fn pattern_order_matters() {
        let r = MatchRule::new(".*", "climbing.*crampons", 1).unwrap();
        assert!(r.candidate.is_match("sports, ice climbing equipment, steel hiking crampons"));
        assert!(!r.candidate.is_match("yoga mat non-slip"));
        assert!(!r.candidate.is_match("crampons for ice climbing"));
    }

    #[test]
    fn bad_pattern_names_line() {
        let err = read_rules("# c\n.*\tok\nfoo\t(unclosed\n".as_bytes(), "r.tsv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn coverage() {
        let qs = vec![rec("q1", &["a"], ""), rec("q2", &["b"], "")];
        let cs = vec![rec("c1", &["x"], "t"), rec("c2", &["y"], "t")];
        let none = apply_rules(&[], &qs, &cs);
        assert_eq!(coverage_stats(&none).empty_queries, 2);
        let all = apply_rules(&[MatchRule::new("", "", 1).unwrap()], &qs, &cs);
        let st = coverage_stats(&all);
        assert!(st.per_query.values().all(|&n| n == 2));
        assert_eq!(st.distinct_candidates, 2);
    }

    #[test]
    fn product_tsv() {
        let text = "id\ttitle\tcategory1\tcategory2\tattrs\np1\tSteel Crampons\tSport\tClimbing\tbrand=K;weight=500 g\n";
        let recs = read_products(text.as_bytes(), "p").unwrap();
        assert_eq!(recs[0].categories, vec!["Sport", "Climbing"]);
        assert_eq!(recs[0].attrs["weight"], "500 g");
        let dup = "id\ttitle\np\tA\np\tB\n";
        assert!(read_products(dup.as_bytes(), "p").is_err());
    }
}
