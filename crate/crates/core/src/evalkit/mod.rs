//! Evaluation: end-to-end run metrics, ranking metrics and BM25 sweeps.
//!
//! Run metrics follow the deep-research protocol: search calls per query,
//! evidence recall over the union of everything a query's searches
//! returned (passages count as their source document), answer accuracy,
//! and completion rate. Episodes that end without an answer score accuracy
//! 0. Ranking metrics use binary gains over evidence judgments.

mod grid;
mod judge;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{
    grid_search_bm25, GridCell, GridMetric, GridResult, GridSpec, CSV_HEADER as GRID_CSV_HEADER, DEFAULT_B_GRID,
    DEFAULT_K1_GRID,
};
pub use judge::{accuracy_judge, judge_prompt, normalize_answer, Judge, Verdict, JUDGE_RUBRIC};

use crate::agentloop::{count_episode, Episode, Termination};
use crate::corpus::DocResolver;
use crate::lexindex::RankedList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no judgments for query {0:?}")]
    NoJudgments(String),
    #[error("no reference answer for query {0:?}")]
    NoReference(String),
    #[error("evidence set is empty")]
    EmptyEvidence,
    #[error("query {0:?} appears in more than one episode")]
    DuplicateQid(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{what} needs at least {needed} paired values, got {got}")]
    TooFewSamples {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Evidence,
    Gold,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct QueryJudgments {
    gold: BTreeSet<String>,
    /// Includes every gold document.
    evidence: BTreeSet<String>,
}

/// Document-level judgments per query. Gold documents are always evidence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    by_qid: HashMap<String, QueryJudgments>,
}

#[derive(Deserialize)]
struct JudgmentRecord {
    qid: String,
    docid: String,
    level: Level,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: p.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: p.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            path: p.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl Judgments {
    pub fn insert(&mut self, qid: &str, doc_id: &str, level: Level) {
        let q = self.by_qid.entry(qid.to_string()).or_default();
        q.evidence.insert(doc_id.to_string());
        if level == Level::Gold {
            q.gold.insert(doc_id.to_string());
        }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let mut j = Self::default();
        for r in read_jsonl::<JudgmentRecord>(path)? {
            j.insert(&r.qid, &r.docid, r.level);
        }
        Ok(j)
    }

    pub fn evidence(&self, qid: &str) -> Option<&BTreeSet<String>> {
        self.by_qid.get(qid).map(|q| &q.evidence)
    }

    pub fn gold(&self, qid: &str) -> Option<&BTreeSet<String>> {
        self.by_qid.get(qid).map(|q| &q.gold)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.by_qid.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: String,
    #[serde(alias = "query")]
    pub text: String,
    #[serde(default)]
    pub answer: Option<String>,
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, EvalError> {
    read_jsonl(path)
}

fn nonempty(evidence: &BTreeSet<String>) -> Result<&BTreeSet<String>, EvalError> {
    if evidence.is_empty() {
        Err(EvalError::EmptyEvidence)
    } else {
        Ok(evidence)
    }
}

/// Share of the query's evidence documents returned by any of its searches.
pub fn recall_evidence(ep: &Episode, judg: &Judgments, resolver: &dyn DocResolver) -> Result<f64, EvalError> {
    let evidence = judg
        .evidence(&ep.qid)
        .ok_or_else(|| EvalError::NoJudgments(ep.qid.clone()))
        .and_then(nonempty)?;
    let returned: HashSet<String> = ep
        .search_steps()
        .flat_map(|(_, r)| r.items.iter())
        .map(|item| resolver.doc_id_of(&item.id).unwrap_or_else(|| item.id.clone()))
        .collect();
    let hits = evidence.iter().filter(|d| returned.contains(*d)).count();
    Ok(hits as f64 / evidence.len() as f64)
}

pub fn recall_at_k(ranked: &RankedList, evidence: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    let evidence = nonempty(evidence)?;
    let hits = ranked.ids().take(k).filter(|id| evidence.contains(*id)).count();
    Ok(hits as f64 / evidence.len() as f64)
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

/// nDCG@k with binary gains.
pub fn ndcg_at_k(ranked: &RankedList, evidence: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    let evidence = nonempty(evidence)?;
    let dcg: f64 = ranked
        .ids()
        .take(k)
        .enumerate()
        .filter(|(_, id)| evidence.contains(*id))
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..evidence.len().min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

pub fn ndcg_at_10(ranked: &RankedList, evidence: &BTreeSet<String>) -> Result<f64, EvalError> {
    ndcg_at_k(ranked, evidence, 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub search_calls: usize,
    pub getdoc_calls: usize,
    pub recall: f64,
    /// `None` when the judge failed.
    pub accuracy: Option<f64>,
    pub termination: Termination,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_queries: usize,
    pub avg_search_calls: f64,
    pub avg_getdoc_calls: f64,
    pub recall_mean: f64,
    pub accuracy: f64,
    pub completion_rate: f64,
    /// Episodes whose answer could not be judged; excluded from accuracy.
    pub judge_errors: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>10}", "metric", "value")?;
        writeln!(f, "{:<18} {:>10}", "queries", self.n_queries)?;
        writeln!(f, "{:<18} {:>10.2}", "search calls", self.avg_search_calls)?;
        writeln!(f, "{:<18} {:>10.2}", "get-doc calls", self.avg_getdoc_calls)?;
        writeln!(f, "{:<18} {:>10.3}", "recall", self.recall_mean)?;
        writeln!(f, "{:<18} {:>10.3}", "accuracy", self.accuracy)?;
        writeln!(f, "{:<18} {:>10.3}", "completion", self.completion_rate)?;
        write!(f, "{:<18} {:>10}", "judge errors", self.judge_errors)
    }
}

/// Per-query metrics for each episode, in episode order.
pub fn evaluate_episodes(
    episodes: &[Episode],
    references: &HashMap<String, String>,
    judg: &Judgments,
    judge: &Judge,
    resolver: &dyn DocResolver,
) -> Result<Vec<QueryMetrics>, EvalError> {
    let mut seen = HashSet::new();
    episodes
        .iter()
        .map(|ep| {
            if !seen.insert(ep.qid.as_str()) {
                return Err(EvalError::DuplicateQid(ep.qid.clone()));
            }
            let counts = count_episode(ep);
            let reference = references
                .get(&ep.qid)
                .ok_or_else(|| EvalError::NoReference(ep.qid.clone()))?;
            let answer = ep.final_answer.as_deref().filter(|_| counts.answered);
            Ok(QueryMetrics {
                qid: ep.qid.clone(),
                search_calls: counts.search_calls,
                getdoc_calls: counts.getdoc_calls,
                recall: recall_evidence(ep, judg, resolver)?,
                accuracy: accuracy_judge(answer, reference, judge).score(),
                termination: ep.termination,
            })
        })
        .collect()
}

pub fn summarize(per_query: &[QueryMetrics]) -> MetricsReport {
    let n = per_query.len();
    if n == 0 {
        return MetricsReport::default();
    }
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n as f64;
    let judged: Vec<f64> = per_query.iter().filter_map(|q| q.accuracy).collect();
    MetricsReport {
        n_queries: n,
        avg_search_calls: mean(&|q| q.search_calls as f64),
        avg_getdoc_calls: mean(&|q| q.getdoc_calls as f64),
        recall_mean: mean(&|q| q.recall),
        accuracy: if judged.is_empty() {
            0.0
        } else {
            judged.iter().sum::<f64>() / judged.len() as f64
        },
        completion_rate: mean(&|q| (q.termination == Termination::Answered) as u8 as f64),
        judge_errors: n - judged.len(),
    }
}

pub fn aggregate_run(
    episodes: &[Episode],
    references: &HashMap<String, String>,
    judg: &Judgments,
    judge: &Judge,
    resolver: &dyn DocResolver,
) -> Result<MetricsReport, EvalError> {
    Ok(summarize(&evaluate_episodes(
        episodes, references, judg, judge, resolver,
    )?))
}

/// `qid → answer` for the records that carry one.
pub fn reference_answers(queries: &[QueryRecord]) -> HashMap<String, String> {
    queries
        .iter()
        .filter_map(|q| q.answer.clone().map(|a| (q.qid.clone(), a)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p_value: f64,
}

/// Two-sided paired t-test of `a` against `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, EvalError> {
    use statrs::distribution::{ContinuousCDF, StudentsT};

    let n = a.len().min(b.len());
    if a.len() != b.len() || n < 2 {
        return Err(EvalError::TooFewSamples {
            what: "paired t-test",
            needed: 2,
            got: n,
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedTTest {
            mean_diff: mean,
            t,
            df,
            p_value: p,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest {
        mean_diff: mean,
        t,
        df,
        p_value,
    })
}
