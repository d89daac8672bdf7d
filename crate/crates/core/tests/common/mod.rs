#![allow(dead_code)]

pub mod oracle;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use deepsearch::corpus::{Corpus, Document, UnitKind, WhitespaceAdapter};
use deepsearch::http::{serve_router, ServerHandle};
use deepsearch::lexindex::{Bm25Params, InvertedIndex, StandardAnalyzer};
use deepsearch::pipeline::{Bm25Retriever, Pipeline, PipelineConfig, ScoreRequest};
use deepsearch::toolsvc::ToolService;

pub fn toy_documents() -> Vec<Document> {
    vec![
        Document::new(
            "d01",
            "The 1999 final ended 2-1 after two goals in stoppage time. Attendance was 90,245.",
        )
        .with_title("Champions League final 1999"),
        Document::new("d02", "Manchester United won the treble in 1999 under Alex Ferguson.").with_title("Treble"),
        Document::new("d03", "The stadium holds 61,880 spectators for football matches.").with_title("Stadium"),
        Document::new(
            "d04",
            "Fleas complete their life cycle in two to three weeks in warm conditions.",
        ),
        Document::new("d05", "Apple pie is baked with sliced apples, sugar and cinnamon.").with_title("Apple pie"),
        Document::new("d06", "The match drew a record attendance of 61,880 and finished 4-1."),
        Document::new("d07", "Rowing crews train on the river through the winter months."),
        Document::new("d08", "A sweet spot for length normalization lies near b equal to one."),
    ]
}

pub fn toy_corpus() -> Arc<Corpus> {
    Arc::new(Corpus::from_documents(toy_documents()).unwrap())
}

pub fn doc_index(corpus: &Corpus) -> Arc<InvertedIndex> {
    Arc::new(
        InvertedIndex::build(
            UnitKind::Document,
            corpus.index_units(UnitKind::Document),
            None,
            &StandardAnalyzer,
        )
        .unwrap(),
    )
}

pub fn bm25_pipeline(index: Arc<InvertedIndex>, k: usize) -> Pipeline {
    let retriever = Bm25Retriever::new(index, Bm25Params::DEFAULT, Arc::new(StandardAnalyzer));
    Pipeline::new(PipelineConfig::new(Arc::new(retriever), k)).unwrap()
}

pub fn tool_service(corpus: Arc<Corpus>) -> Arc<ToolService> {
    let pipeline = bm25_pipeline(doc_index(&corpus), 5);
    Arc::new(ToolService::new(pipeline, corpus, Arc::new(WhitespaceAdapter)))
}

#[derive(Clone, Copy, Debug)]
pub enum StubMode {
    /// Negative character count per candidate.
    NegLength,
    /// Like `NegLength` but drops the last score of every response.
    DropOne,
    /// Sleeps before answering.
    Slow(Duration),
}

pub struct StubScorer {
    pub handle: ServerHandle,
    /// Candidate count of every /score request, in arrival order.
    pub batches: Arc<Mutex<Vec<usize>>>,
}

pub fn stub_scorer(mode: StubMode) -> StubScorer {
    let batches = Arc::new(Mutex::new(Vec::new()));
    let seen = batches.clone();
    let router = Router::new()
        .route(
            "/score",
            post(move |Json(req): Json<ScoreRequest>| {
                let seen = seen.clone();
                async move {
                    seen.lock().unwrap().push(req.candidates.len());
                    let mut scores: Vec<f64> = req
                        .candidates
                        .iter()
                        .map(|c| -(c.text.chars().count() as f64))
                        .collect();
                    match mode {
                        StubMode::NegLength => {}
                        StubMode::DropOne => {
                            scores.pop();
                        }
                        StubMode::Slow(d) => tokio::time::sleep(d).await,
                    }
                    Json(json!({ "scores": scores }))
                }
            }),
        )
        .route(
            "/healthz",
            get(|| async { Json(json!({"status": "ok", "model": "neg-length"})) }),
        );
    StubScorer {
        handle: serve_router("127.0.0.1:0", router).unwrap(),
        batches,
    }
}

/// Minimal OpenAI-style chat server replying with queued responses.
pub fn stub_chat(replies: Vec<Value>) -> (ServerHandle, Arc<Mutex<Vec<Value>>>) {
    let queue = Arc::new(Mutex::new(replies));
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    let router = Router::new().route(
        "/v1/chat/completions",
        post(move |Json(body): Json<Value>| {
            let queue = queue.clone();
            let seen = seen.clone();
            async move {
                seen.lock().unwrap().push(body);
                let mut q = queue.lock().unwrap();
                let reply = if q.is_empty() {
                    json!({"choices": []})
                } else {
                    q.remove(0)
                };
                Json(reply)
            }
        }),
    );
    (serve_router("127.0.0.1:0", router).unwrap(), requests)
}
