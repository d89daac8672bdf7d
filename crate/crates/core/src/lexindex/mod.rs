//! Inverted index and BM25 scoring.
//!
//! Scoring follows the Lucene BM25 variant:
//!
//! ```text
//! score(q, u) = Σ_{t ∈ q} idf(t) · tf / (tf + k1 · (1 − b + b · len(u) / avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! The query is a multiset: a repeated term contributes once per occurrence.
//! Units are stored in ascending id order, so posting lists sorted by unit
//! ordinal are also sorted by unit id, and ordinal order is the tie-break.

mod analyzer;
mod persist;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analyzer::{analyzer_by_version, Analyzer, StandardAnalyzer, WhitespaceAnalyzer};
pub use persist::INDEX_FORMAT_VERSION;

use crate::corpus::UnitKind;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("duplicate unit {0:?}")]
    DuplicateUnit(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// BM25 `(k1, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    /// Lucene/Anserini defaults.
    pub const DEFAULT: Self = Self { k1: 0.9, b: 0.4 };
    /// Settings tuned for long-document retrieval.
    pub const DOC_ORIENTED: Self = Self { k1: 3.8, b: 0.87 };
    /// Slow saturation with full length normalization.
    pub const SWEET_SPOT: Self = Self { k1: 10.0, b: 1.0 };

    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1.is_finite() && k1 >= 0.0) {
            return Err(IndexError::InvalidParams(format!("k1 must be >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(IndexError::InvalidParams(format!("b must be in [0, 1], got {b}")));
        }
        Ok(Self { k1, b })
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::DEFAULT),
            "doc-oriented" => Some(Self::DOC_ORIENTED),
            "sweet-spot" => Some(Self::SWEET_SPOT),
            _ => None,
        }
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for Bm25Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k1={} b={}", self.k1, self.b)
    }
}

/// Accepts a preset name or `k1,b`.
impl FromStr for Bm25Params {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = Self::preset(s) {
            return Ok(p);
        }
        let (k1, b) = s
            .split_once(',')
            .ok_or_else(|| IndexError::InvalidParams(format!("expected preset or `k1,b`, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| IndexError::InvalidParams(format!("{v:?}: {e}")))
        };
        Self::new(parse(k1)?, parse(b)?)
    }
}

pub fn idf(n_units: usize, df: usize) -> f64 {
    let n = n_units as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Term-frequency component, without the idf factor.
pub fn tf_weight(tf: f64, len: f64, avgdl: f64, params: Bm25Params) -> f64 {
    tf / (tf + params.k1 * (1.0 - params.b + params.b * len / avgdl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub unit: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUnit {
    pub id: String,
    pub score: f64,
}

impl ScoredUnit {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        Self { id: id.into(), score }
    }
}

/// Ordering used by every ranked output: score descending, then id ascending.
pub fn rank_order(a: &ScoredUnit, b: &ScoredUnit) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Scored units in rank order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList {
    entries: Vec<ScoredUnit>,
}

impl RankedList {
    /// Sorts into canonical order (score desc, id asc). Duplicate ids keep
    /// their best-ranked occurrence.
    pub fn sorted(mut entries: Vec<ScoredUnit>) -> Self {
        entries.sort_by(rank_order);
        let mut seen = std::collections::HashSet::new();
        entries.retain(|e| seen.insert(e.id.clone()));
        Self { entries }
    }

    /// Keeps the given order as-is.
    pub fn from_ordered(entries: Vec<ScoredUnit>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ScoredUnit] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ScoredUnit> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    /// True when entries are in canonical rank order without duplicates.
    pub fn is_canonical(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.id.as_str()))
            && self
                .entries
                .windows(2)
                .all(|w| rank_order(&w[0], &w[1]) != std::cmp::Ordering::Greater)
    }
}

/// Postings, lengths and collection statistics over a set of units.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    unit_kind: UnitKind,
    unit_ids: Vec<String>,
    unit_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
    prefix_tokens: Option<usize>,
    analyzer_version: String,
}

impl InvertedIndex {
    /// Builds an index over `(unit_id, text)` pairs. With `prefix_tokens`,
    /// only the first that many analyzed tokens of each unit are indexed and
    /// counted towards its length.
    pub fn build<I, S, T>(
        unit_kind: UnitKind,
        units: I,
        prefix_tokens: Option<usize>,
        analyzer: &dyn Analyzer,
    ) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut analyzed: Vec<(String, Vec<String>)> = units
            .into_iter()
            .map(|(id, text)| {
                let mut terms = analyzer.analyze(text.as_ref());
                if let Some(limit) = prefix_tokens {
                    terms.truncate(limit);
                }
                (id.into(), terms)
            })
            .collect();
        analyzed.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = analyzed.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(IndexError::DuplicateUnit(w[0].0.clone()));
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut unit_ids = Vec::with_capacity(analyzed.len());
        let mut unit_lengths = Vec::with_capacity(analyzed.len());
        for (ordinal, (id, terms)) in analyzed.into_iter().enumerate() {
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in &terms {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    unit: ordinal as u32,
                    tf,
                });
            }
            unit_lengths.push(terms.len() as u32);
            unit_ids.push(id);
        }
        let avgdl = mean_length(&unit_lengths);
        Ok(Self {
            unit_kind,
            unit_ids,
            unit_lengths,
            postings,
            avgdl,
            prefix_tokens,
            analyzer_version: analyzer.version().to_string(),
        })
    }

    pub fn unit_kind(&self) -> UnitKind {
        self.unit_kind
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    /// Mean unit length; 1 for an empty index.
    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn prefix_tokens(&self) -> Option<usize> {
        self.prefix_tokens
    }

    pub fn analyzer_version(&self) -> &str {
        &self.analyzer_version
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    fn ordinal(&self, unit_id: &str) -> Option<usize> {
        self.unit_ids.binary_search_by(|id| id.as_str().cmp(unit_id)).ok()
    }

    pub fn unit_length(&self, unit_id: &str) -> Option<usize> {
        self.ordinal(unit_id).map(|o| self.unit_lengths[o] as usize)
    }

    /// BM25 score of one unit for an analyzed query.
    pub fn bm25_score<S: AsRef<str>>(
        &self,
        params: Bm25Params,
        query_terms: &[S],
        unit_id: &str,
    ) -> Result<f64, IndexError> {
        let ordinal = self
            .ordinal(unit_id)
            .ok_or_else(|| IndexError::UnknownUnit(unit_id.to_string()))?;
        let len = self.unit_lengths[ordinal] as f64;
        let mut score = 0.0;
        for term in query_terms {
            let postings = self.postings(term.as_ref());
            if let Ok(pos) = postings.binary_search_by_key(&(ordinal as u32), |p| p.unit) {
                let tf = postings[pos].tf as f64;
                score += idf(self.n_units(), postings.len()) * tf_weight(tf, len, self.avgdl, params);
            }
        }
        Ok(score)
    }

    /// Top-`k` units for `query`, in canonical rank order. Only units sharing
    /// at least one term with the query are returned.
    pub fn search(&self, params: Bm25Params, query: &str, k: usize, analyzer: &dyn Analyzer) -> RankedList {
        let terms = analyzer.analyze(query);
        self.search_terms(params, &terms, k)
    }

    pub fn search_terms<S: AsRef<str>>(&self, params: Bm25Params, terms: &[S], k: usize) -> RankedList {
        if k == 0 || self.unit_ids.is_empty() || terms.is_empty() {
            return RankedList::default();
        }
        let mut scores = vec![0.0f64; self.n_units()];
        let mut matched = vec![false; self.n_units()];
        for term in terms {
            let postings = self.postings(term.as_ref());
            if postings.is_empty() {
                continue;
            }
            let w = idf(self.n_units(), postings.len());
            for p in postings {
                let o = p.unit as usize;
                let len = self.unit_lengths[o] as f64;
                scores[o] += w * tf_weight(p.tf as f64, len, self.avgdl, params);
                matched[o] = true;
            }
        }
        let mut hits: Vec<(usize, f64)> = (0..self.n_units())
            .filter(|&o| matched[o])
            .map(|o| (o, scores[o]))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_by(cmp);
        RankedList::from_ordered(
            hits.into_iter()
                .map(|(o, s)| ScoredUnit::new(self.unit_ids[o].clone(), s))
                .collect(),
        )
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 1.0;
    }
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(prefix: Option<usize>) -> InvertedIndex {
        InvertedIndex::build(
            UnitKind::Document,
            [
                ("d1", "apple banana apple"),
                ("d2", "banana cherry"),
                ("d3", "cherry cherry cherry date"),
            ],
            prefix,
            &StandardAnalyzer,
        )
        .unwrap()
    }

    #[test]
    fn toy_statistics() {
        let idx = toy(None);
        assert_eq!(idx.n_units(), 3);
        assert_eq!(idx.avgdl(), 3.0);
        assert_eq!(idx.df("banana"), 2);
        assert_eq!(idx.df("date"), 1);
    }

    #[test]
    fn prefix_truncation_statistics() {
        let idx = toy(Some(2));
        assert_eq!(idx.unit_length("d3"), Some(2));
        assert_eq!(idx.df("date"), 0);
        assert_eq!(idx.avgdl(), 2.0);
    }

    #[test]
    fn empty_index() {
        let idx = InvertedIndex::build(
            UnitKind::Passage,
            Vec::<(String, String)>::new(),
            None,
            &StandardAnalyzer,
        )
        .unwrap();
        assert_eq!(idx.n_units(), 0);
        assert_eq!(idx.avgdl(), 1.0);
        assert_eq!(idx.terms().count(), 0);
        assert!(idx
            .search(Bm25Params::DEFAULT, "apple", 5, &StandardAnalyzer)
            .is_empty());
    }

    #[test]
    fn spot_scores() {
        let idx = toy(None);
        let s = idx.bm25_score(Bm25Params::DEFAULT, &["apple"], "d1").unwrap();
        let expected = (1.0f64 + 2.5 / 1.5).ln() * (2.0 / 2.9);
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.6765).abs() < 1e-4);
        let s0 = idx
            .bm25_score(Bm25Params::new(0.0, 0.4).unwrap(), &["apple"], "d1")
            .unwrap();
        assert!((s0 - (8.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(idx.bm25_score(Bm25Params::DEFAULT, &["date"], "d1").unwrap(), 0.0);
        assert!(matches!(
            idx.bm25_score(Bm25Params::DEFAULT, &["apple"], "d9"),
            Err(IndexError::UnknownUnit(id)) if id == "d9"
        ));
    }

    #[test]
    fn search_examples() {
        let idx = toy(None);
        let a = StandardAnalyzer;
        let r = idx.search(Bm25Params::DEFAULT, "cherry", 2, &a);
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["d3", "d2"]);
        let r = idx.search(Bm25Params::DEFAULT, "apple banana", 10, &a);
        assert_eq!(r.len(), 2);
        assert!(r.is_canonical());
        assert!(idx.search(Bm25Params::DEFAULT, "", 10, &a).is_empty());
        assert!(idx.search(Bm25Params::DEFAULT, "zebra", 10, &a).is_empty());
    }

    #[test]
    fn params_validation_and_parsing() {
        assert!(Bm25Params::new(-0.1, 0.5).is_err());
        assert!(Bm25Params::new(1.0, 1.5).is_err());
        assert_eq!("sweet-spot".parse::<Bm25Params>().unwrap(), Bm25Params::SWEET_SPOT);
        assert_eq!(
            "1.2, 0.75".parse::<Bm25Params>().unwrap(),
            Bm25Params { k1: 1.2, b: 0.75 }
        );
        assert!("nope".parse::<Bm25Params>().is_err());
    }

    #[test]
    fn duplicate_units_rejected() {
        let err =
            InvertedIndex::build(UnitKind::Document, [("a", "x"), ("a", "y")], None, &StandardAnalyzer).unwrap_err();
        assert!(matches!(err, IndexError::DuplicateUnit(id) if id == "a"));
    }

    #[test]
    fn length_normalization_only_with_positive_b() {
        let idx = InvertedIndex::build(
            UnitKind::Document,
            [("short", "apple x"), ("long", "apple x y z w v u"), ("other", "q r s")],
            None,
            &StandardAnalyzer,
        )
        .unwrap();
        let flat = Bm25Params::new(1.2, 0.0).unwrap();
        let norm = Bm25Params::new(1.2, 0.75).unwrap();
        let score = |p, id| idx.bm25_score(p, &["apple"], id).unwrap();
        assert_eq!(score(flat, "short"), score(flat, "long"));
        assert!(score(norm, "short") > score(norm, "long"));
    }
}
