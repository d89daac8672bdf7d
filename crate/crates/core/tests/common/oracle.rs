//! Independent reference implementations used by the property and
//! acceptance suites. Written from the formulas, not from library code.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use deepsearch::agentloop::{BudgetUsage, Episode, Step, StepEvent, Termination, EPISODE_SCHEMA_VERSION};
use deepsearch::toolsvc::{DocumentView, SearchItem, SearchResult};

/// Exhaustive Lucene-style BM25 over pre-tokenized units. Returns
/// `(id, score, matched)` per unit in input order.
pub fn bm25_exhaustive(units: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64, bool)> {
    let n = units.len() as f64;
    let avgdl = if units.is_empty() {
        1.0
    } else {
        units.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n
    };
    units
        .iter()
        .map(|(id, toks)| {
            let dl = toks.len() as f64;
            let mut score = 0.0;
            let mut matched = false;
            for q in query {
                let tf = toks.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                matched = true;
                let df = units.iter().filter(|(_, t)| t.contains(q)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * tf / (tf + k1 * (1.0 - b + b * dl / avgdl));
            }
            (id.clone(), score, matched)
        })
        .collect()
}

/// Group-by-max over `(passage_id, score)`, documents sorted by score
/// descending then id ascending.
pub fn maxp_brute(list: &[(String, f64)], doc_of: impl Fn(&str) -> String) -> Vec<(String, f64)> {
    let mut docs: Vec<String> = list.iter().map(|(p, _)| doc_of(p)).collect();
    docs.sort();
    docs.dedup();
    let mut out: Vec<(String, f64)> = docs
        .into_iter()
        .map(|d| {
            let best = list
                .iter()
                .filter(|(p, _)| doc_of(p) == d)
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            (d, best)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

const WORDS: &[&str] = &[
    "attendance",
    "stadium",
    "\"quoted\"",
    "61,880",
    "match",
    "ünïcödé",
    "line\nbreak",
    "tab\there",
    "score",
    "4–1",
    "emoji🙂",
    "x",
];

pub fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_episode<R: Rng>(rng: &mut R, qid: &str) -> Episode {
    let mut steps = Vec::new();
    let mut ctx = 0usize;
    for _ in 0..rng.random_range(0..8) {
        ctx += rng.random_range(0..500);
        let event = match rng.random_range(0..3) {
            0 => StepEvent::Reasoning {
                text: random_text(rng, 30),
            },
            1 => StepEvent::Search {
                query_raw: random_text(rng, 6),
                query_sent: random_text(rng, 10),
                reformulation_failed: rng.random_bool(0.2),
                results: SearchResult {
                    items: (0..rng.random_range(0..5))
                        .map(|i| SearchItem {
                            id: format!("doc{}#{i}", rng.random_range(0..100)),
                            title: rng.random_bool(0.5).then(|| random_text(rng, 4)),
                            text: random_text(rng, 40),
                            score: rng.random_range(-50.0..50.0),
                        })
                        .collect(),
                    k_requested: 5,
                },
                tool_error: rng.random_bool(0.1).then(|| "not_found: x".to_string()),
            },
            _ => StepEvent::GetDoc {
                doc_id: format!("doc{}", rng.random_range(0..100)),
                document: rng.random_bool(0.8).then(|| DocumentView {
                    docid: "doc".into(),
                    title: None,
                    text: random_text(rng, 60),
                }),
                tool_error: None,
            },
        };
        steps.push(Step {
            event,
            context_tokens: ctx,
        });
    }
    let answered = rng.random_bool(0.7);
    Episode {
        schema_version: EPISODE_SCHEMA_VERSION,
        qid: qid.to_string(),
        user_query: random_text(rng, 20),
        steps,
        final_answer: answered.then(|| random_text(rng, 5)),
        termination: if answered {
            Termination::Answered
        } else {
            Termination::ContextLimit
        },
        budget_used: BudgetUsage {
            iterations: rng.random_range(0..100),
            output_tokens: rng.random_range(0..40_000),
            context_tokens: ctx,
        },
        error: None,
    }
}

/// Histogram helper for multiset comparisons.
pub fn multiset<'a>(ids: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut m = BTreeMap::new();
    for id in ids {
        *m.entry(id).or_default() += 1;
    }
    m
}
