//! Retrieve-then-rerank pipelines and Max-P aggregation.
//!
//! A pipeline pulls `max(depth, k)` candidates from its retriever, optionally
//! re-scores the top `depth` with a [`Scorer`], optionally folds passages
//! into documents (Max-P) and finally cuts the list to `k`.

mod remote;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

pub use remote::{
    score_remote, HealthStatus, RemoteScorer, ScoreRequest, ScoreResponse, ScorerEndpoint, WireCandidate,
};

use crate::corpus::{Corpus, DocResolver, UnitKind};
use crate::lexindex::{Analyzer, Bm25Params, InvertedIndex, RankedList, ScoredUnit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("scorer unreachable: {0}")]
    Transport(String),
    #[error("scorer returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("scorer returned {got} scores for {expected} candidates")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: ScorerError,
    },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("no score for in-window candidate {0:?}")]
    MissingScore(String),
    #[error("no text for candidate {0:?}")]
    MissingText(String),
    #[error("passage {0:?} does not map to a document")]
    UnmappedPassage(String),
    #[error("re-ranking depth must be at least 1")]
    ZeroDepth,
}

/// A candidate handed to a scorer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: String,
    pub text: String,
}

/// First-stage retrieval.
pub trait Retriever: Send + Sync {
    fn unit_kind(&self) -> UnitKind;

    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, PipelineError>;
}

/// Re-scores `(query, candidate)` pairs; one score per candidate, aligned.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, query: &str, candidates: &[Candidate]) -> Result<Vec<f64>, ScorerError>;
}

/// Supplies the text a scorer sees for a unit id.
pub trait UnitTexts: Send + Sync {
    fn text_for(&self, unit_id: &str) -> Option<String>;
}

impl UnitTexts for Corpus {
    fn text_for(&self, unit_id: &str) -> Option<String> {
        self.unit(unit_id).map(|u| u.rendered())
    }
}

impl UnitTexts for HashMap<String, String> {
    fn text_for(&self, unit_id: &str) -> Option<String> {
        self.get(unit_id).cloned()
    }
}

pub struct Bm25Retriever {
    index: Arc<InvertedIndex>,
    params: Bm25Params,
    analyzer: Arc<dyn Analyzer>,
}

impl Bm25Retriever {
    pub fn new(index: Arc<InvertedIndex>, params: Bm25Params, analyzer: Arc<dyn Analyzer>) -> Self {
        Self {
            index,
            params,
            analyzer,
        }
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }
}

impl Retriever for Bm25Retriever {
    fn unit_kind(&self) -> UnitKind {
        self.index.unit_kind()
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, PipelineError> {
        Ok(self.index.search(self.params, query, k, self.analyzer.as_ref()))
    }
}

/// Scores each candidate by the negated character count of its text.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegLengthScorer;

impl Scorer for NegLengthScorer {
    fn name(&self) -> &str {
        "neg-length"
    }

    fn score(&self, _query: &str, candidates: &[Candidate]) -> Result<Vec<f64>, ScorerError> {
        Ok(candidates.iter().map(|c| -(c.text.chars().count() as f64)).collect())
    }
}

/// In-process scorer backed by a closure.
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str, &Candidate) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&str, &Candidate) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, query: &str, candidates: &[Candidate]) -> Result<Vec<f64>, ScorerError> {
        Ok(candidates.iter().map(|c| (self.f)(query, c)).collect())
    }
}

/// Second stage of a pipeline.
#[derive(Clone)]
pub struct Reranker {
    pub scorer: Arc<dyn Scorer>,
    pub texts: Arc<dyn UnitTexts>,
    pub depth: usize,
}

#[derive(Clone)]
pub struct PipelineConfig {
    pub retriever: Arc<dyn Retriever>,
    pub reranker: Option<Reranker>,
    /// Results returned to the caller.
    pub k: usize,
    /// Fold passages into documents before cutting to `k`.
    pub maxp: Option<Arc<dyn DocResolver>>,
}

impl PipelineConfig {
    pub fn new(retriever: Arc<dyn Retriever>, k: usize) -> Self {
        Self {
            retriever,
            reranker: None,
            k,
            maxp: None,
        }
    }

    pub fn with_reranker(mut self, scorer: Arc<dyn Scorer>, texts: Arc<dyn UnitTexts>, depth: usize) -> Self {
        self.reranker = Some(Reranker { scorer, texts, depth });
        self
    }

    pub fn with_maxp(mut self, resolver: Arc<dyn DocResolver>) -> Self {
        self.maxp = Some(resolver);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if let Some(r) = &self.reranker {
            if r.depth < self.k {
                return Err(PipelineError::Config(format!(
                    "re-ranking depth {} is smaller than k {}",
                    r.depth, self.k
                )));
            }
        }
        Ok(())
    }

    /// Unit kind of the returned list.
    pub fn output_kind(&self) -> UnitKind {
        if self.maxp.is_some() {
            UnitKind::Document
        } else {
            self.retriever.unit_kind()
        }
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn run(&self, query: &str) -> Result<RankedList, PipelineError> {
        self.run_with_k(query, self.cfg.k)
    }

    pub fn run_with_k(&self, query: &str, k: usize) -> Result<RankedList, PipelineError> {
        let cfg = &self.cfg;
        let depth = cfg.reranker.as_ref().map_or(k, |r| r.depth);
        let mut list = cfg.retriever.retrieve(query, depth.max(k))?;

        if let Some(rr) = &cfg.reranker {
            let window = rr.depth.min(list.len());
            if window > 0 {
                let candidates = list.entries()[..window]
                    .iter()
                    .map(|e| {
                        rr.texts
                            .text_for(&e.id)
                            .map(|text| Candidate { id: e.id.clone(), text })
                            .ok_or_else(|| PipelineError::MissingText(e.id.clone()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let scores = rr
                    .scorer
                    .score(query, &candidates)
                    .map_err(|source| PipelineError::Stage {
                        stage: format!("rerank:{}", rr.scorer.name()),
                        source,
                    })?;
                if scores.len() != candidates.len() {
                    return Err(PipelineError::Stage {
                        stage: format!("rerank:{}", rr.scorer.name()),
                        source: ScorerError::LengthMismatch {
                            expected: candidates.len(),
                            got: scores.len(),
                        },
                    });
                }
                let by_id: HashMap<String, f64> = candidates.into_iter().map(|c| c.id).zip(scores).collect();
                list = rerank_top(&list, rr.depth, &by_id)?;
            }
        }

        if let Some(resolver) = &cfg.maxp {
            list = maxp_aggregate(&list, resolver.as_ref())?;
        }
        list.truncate(k);
        Ok(list)
    }
}

pub fn run_pipeline(query: &str, cfg: &PipelineConfig) -> Result<RankedList, PipelineError> {
    cfg.validate()?;
    Pipeline { cfg: cfg.clone() }.run(query)
}

/// Reorders the first `min(d, len)` entries by `scores` (descending, ties by
/// original rank) and leaves the tail untouched. Window entries carry their
/// new scores.
pub fn rerank_top(list: &RankedList, d: usize, scores: &HashMap<String, f64>) -> Result<RankedList, PipelineError> {
    if d == 0 {
        return Err(PipelineError::ZeroDepth);
    }
    let entries = list.entries();
    let window = d.min(entries.len());
    let mut head = entries[..window]
        .iter()
        .map(|e| {
            scores
                .get(&e.id)
                .map(|&s| ScoredUnit::new(e.id.clone(), s))
                .ok_or_else(|| PipelineError::MissingScore(e.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // stable: equal scores keep their original rank
    head.sort_by(|a, b| b.score.total_cmp(&a.score));
    head.extend_from_slice(&entries[window..]);
    Ok(RankedList::from_ordered(head))
}

/// Max-P: one entry per source document scored by its best passage, sorted
/// by score descending then doc id ascending.
pub fn maxp_aggregate(list: &RankedList, resolver: &dyn DocResolver) -> Result<RankedList, PipelineError> {
    let mut best: HashMap<String, f64> = HashMap::new();
    for e in list.entries() {
        let doc = resolver
            .doc_id_of(&e.id)
            .ok_or_else(|| PipelineError::UnmappedPassage(e.id.clone()))?;
        best.entry(doc)
            .and_modify(|s| {
                if e.score > *s {
                    *s = e.score
                }
            })
            .or_insert(e.score);
    }
    Ok(RankedList::sorted(
        best.into_iter().map(|(id, score)| ScoredUnit::new(id, score)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IdSchemeResolver;

    fn list(ids: &[&str]) -> RankedList {
        let n = ids.len() as f64;
        RankedList::from_ordered(
            ids.iter()
                .enumerate()
                .map(|(i, id)| ScoredUnit::new(*id, n - i as f64))
                .collect(),
        )
    }

    fn ids(l: &RankedList) -> Vec<&str> {
        l.ids().collect()
    }

    #[test]
    fn rerank_window_reversal() {
        let l = list(&["d1", "d2", "d3", "d4", "d5"]);
        let scores: HashMap<String, f64> = [("d1", 1.0), ("d2", 2.0), ("d3", 3.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let out = rerank_top(&l, 3, &scores).unwrap();
        assert_eq!(ids(&out), vec!["d3", "d2", "d1", "d4", "d5"]);
        assert_eq!(&out.entries()[3..], &l.entries()[3..]);
    }

    #[test]
    fn rerank_depth_edge_cases() {
        let l = list(&["a", "b", "c"]);
        let uniform: HashMap<String, f64> = ["a", "b", "c"].iter().map(|k| (k.to_string(), 0.5)).collect();
        assert!(matches!(rerank_top(&l, 0, &uniform), Err(PipelineError::ZeroDepth)));
        assert_eq!(ids(&rerank_top(&l, 1, &uniform).unwrap()), ids(&l));
        assert_eq!(ids(&rerank_top(&l, 10, &uniform).unwrap()), ids(&l));
        let partial: HashMap<String, f64> = [("a".to_string(), 1.0)].into_iter().collect();
        assert!(matches!(rerank_top(&l, 2, &partial), Err(PipelineError::MissingScore(id)) if id == "b"));
    }

    #[test]
    fn maxp_examples() {
        let l = RankedList::from_ordered(vec![
            ScoredUnit::new("A#0", 0.7),
            ScoredUnit::new("A#3", 0.5),
            ScoredUnit::new("B#1", 0.6),
        ]);
        let out = maxp_aggregate(&l, &IdSchemeResolver).unwrap();
        assert_eq!(out.entries(), &[ScoredUnit::new("A", 0.7), ScoredUnit::new("B", 0.6)]);

        let single = RankedList::from_ordered(vec![ScoredUnit::new("A#1", 0.2), ScoredUnit::new("A#0", 0.9)]);
        assert_eq!(
            maxp_aggregate(&single, &IdSchemeResolver).unwrap().entries(),
            &[ScoredUnit::new("A", 0.9)]
        );
    }

    #[test]
    fn maxp_rejects_unmapped() {
        let corpus = Corpus::from_documents(vec![crate::corpus::Document::new("A", "x y")])
            .unwrap()
            .segmented(250);
        let l = RankedList::from_ordered(vec![ScoredUnit::new("A#0", 1.0), ScoredUnit::new("Z#0", 0.5)]);
        assert!(matches!(maxp_aggregate(&l, &corpus), Err(PipelineError::UnmappedPassage(id)) if id == "Z#0"));
    }

    struct Fixed(Vec<String>);

    fn fixed(ids: &[&str]) -> Arc<Fixed> {
        Arc::new(Fixed(ids.iter().map(|s| s.to_string()).collect()))
    }

    impl Retriever for Fixed {
        fn unit_kind(&self) -> UnitKind {
            UnitKind::Document
        }

        fn retrieve(&self, _query: &str, k: usize) -> Result<RankedList, PipelineError> {
            let refs: Vec<&str> = self.0.iter().map(String::as_str).collect();
            let mut l = list(&refs);
            l.truncate(k);
            Ok(l)
        }
    }

    fn texts(ids: &[&str]) -> Arc<dyn UnitTexts> {
        Arc::new(
            ids.iter()
                .map(|i| (i.to_string(), format!("text of {i}")))
                .collect::<HashMap<_, _>>(),
        )
    }

    #[test]
    fn pipeline_without_reranker_is_retriever_prefix() {
        let all: Vec<&str> = vec!["a", "b", "c", "d", "e", "f", "g"];
        let r = fixed(&all);
        let out = run_pipeline("q", &PipelineConfig::new(r.clone(), 5)).unwrap();
        assert_eq!(out, r.retrieve("q", 5).unwrap());
    }

    #[test]
    fn negated_scorer_reverses_window() {
        let all = vec!["a", "b", "c", "d", "e", "f", "g"];
        let r = fixed(&all);
        let rank: HashMap<String, f64> = all
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i as f64))
            .collect();
        let scorer = Arc::new(FnScorer::new("neg-retriever", move |_: &str, c: &Candidate| {
            rank[&c.id]
        }));
        let cfg = PipelineConfig::new(r, 5).with_reranker(scorer, texts(&all), 5);
        assert_eq!(ids(&run_pipeline("q", &cfg).unwrap()), vec!["e", "d", "c", "b", "a"]);
    }

    #[test]
    fn deep_candidate_promoted_to_top() {
        let names: Vec<String> = (0..60).map(|i| format!("u{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let r = fixed(&refs);
        // rank 37 (1-based) is index 36
        let target = names[36].clone();
        let scorer = Arc::new(FnScorer::new(
            "boost",
            move |_: &str, c: &Candidate| {
                if c.id == target {
                    100.0
                } else {
                    0.0
                }
            },
        ));
        let cfg = PipelineConfig::new(r, 5).with_reranker(scorer, texts(&refs), 50);
        let out = run_pipeline("q", &cfg).unwrap();
        assert_eq!(ids(&out), vec!["u36", "u00", "u01", "u02", "u03"]);
    }

    #[test]
    fn depth_below_k_rejected() {
        let r = fixed(&["a"]);
        let cfg = PipelineConfig::new(r, 5).with_reranker(Arc::new(NegLengthScorer), texts(&["a"]), 3);
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    struct Failing;

    impl Scorer for Failing {
        fn name(&self) -> &str {
            "down"
        }

        fn score(&self, _: &str, _: &[Candidate]) -> Result<Vec<f64>, ScorerError> {
            Err(ScorerError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn scorer_failure_names_stage() {
        let r = fixed(&["a", "b"]);
        let cfg = PipelineConfig::new(r, 1).with_reranker(Arc::new(Failing), texts(&["a", "b"]), 2);
        let err = run_pipeline("q", &cfg).unwrap_err();
        assert!(matches!(&err, PipelineError::Stage { stage, .. } if stage == "rerank:down"));
    }

    #[test]
    fn empty_retrieval_is_not_an_error() {
        let r = fixed(&[]);
        let cfg = PipelineConfig::new(r, 5).with_reranker(Arc::new(Failing), texts(&[]), 10);
        assert!(run_pipeline("q", &cfg).unwrap().is_empty());
    }
}
