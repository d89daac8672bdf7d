mod common;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use sha2::{Digest, Sha256};

use deepsearch::agentloop::chat::{ChatEndpoint, ChatModel, HttpChatClient};
use deepsearch::agentloop::{EpisodeRunner, StepEvent, Termination};
use deepsearch::corpus::{Corpus, WhitespaceAdapter};
use deepsearch::http::JsonClient;
use deepsearch::lexindex::{InvertedIndex, RankedList, ScoredUnit};
use deepsearch::pipeline::{
    rerank_top, Candidate, Pipeline, PipelineConfig, RemoteScorer, Retriever, Scorer, ScorerEndpoint, ScorerError,
};
use deepsearch::toolsvc::{serve_http, HttpTools, SearchResult, ToolError, ToolRegistry, ToolService};

use common::{bm25_pipeline, stub_chat, stub_scorer, toy_corpus, StubMode};

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                Sha256::digest(bytes).to_vec(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn tool_server_round_trip_leaves_index_untouched() {
    let corpus = toy_corpus();
    let tmp = tempfile::tempdir().unwrap();
    common::doc_index(&corpus).save(tmp.path()).unwrap();
    let before = dir_digest(tmp.path());

    let index = Arc::new(InvertedIndex::load(tmp.path()).unwrap());
    let svc = Arc::new(ToolService::new(
        bm25_pipeline(index, 5),
        corpus.clone(),
        Arc::new(WhitespaceAdapter),
    ));
    let server = serve_http("127.0.0.1:0", svc.clone()).unwrap();
    let base = server.base_url();

    let local = svc.search_k("attendance 61,880", 3).unwrap();
    let tools = HttpTools::new(&base, 3, Duration::from_secs(5));
    let remote = tools.search("attendance 61,880").unwrap();
    assert_eq!(remote, local);
    assert_eq!(remote.items[0].id, "d06");

    let doc = tools.get_document("d06").unwrap();
    assert_eq!(doc.text, corpus.document("d06").unwrap().text);
    assert!(matches!(tools.get_document("nope"), Err(ToolError::NotFound(_))));

    let client = JsonClient::new(Duration::from_secs(5));
    let health: serde_json::Value = client.get(&format!("{base}/healthz"), &[]).unwrap();
    assert_eq!(health["status"], "ok");

    std::thread::scope(|s| {
        for t in 0..8 {
            let tools = HttpTools::new(&base, 5, Duration::from_secs(10));
            s.spawn(move || {
                for i in 0..25 {
                    let r: SearchResult = tools.search(&format!("apple match {t} {i}")).unwrap();
                    assert!(r.items.len() <= 5);
                }
            });
        }
    });
    assert_eq!(svc.search_calls(), 1 + 1 + 200);
    server.shutdown().unwrap();
    assert_eq!(dir_digest(tmp.path()), before);
}

fn candidates(n: usize) -> Vec<Candidate> {
    (0..n)
        .map(|i| Candidate {
            id: format!("c{i}"),
            text: "x".repeat(1 + (i * 7) % 11),
        })
        .collect()
}

#[test]
fn remote_scorer_batches_and_aligns() {
    let stub = stub_scorer(StubMode::NegLength);
    let mut ep = ScorerEndpoint::new(stub.handle.base_url());
    ep.batch_size = 3;
    let scorer = RemoteScorer::new(ep).unwrap();
    assert_eq!(scorer.health().unwrap().model, "neg-length");
    let cands = candidates(7);
    let scores = scorer.score("q", &cands).unwrap();
    let expected: Vec<f64> = cands.iter().map(|c| -(c.text.len() as f64)).collect();
    assert_eq!(scores, expected);
    assert_eq!(*stub.batches.lock().unwrap(), vec![3, 3, 1]);

    let mut whole = ScorerEndpoint::new(stub.handle.base_url());
    whole.batch_size = 7;
    assert_eq!(RemoteScorer::new(whole).unwrap().score("q", &cands).unwrap(), scores);
}

#[test]
fn remote_scorer_rejects_short_responses() {
    let stub = stub_scorer(StubMode::DropOne);
    let mut ep = ScorerEndpoint::new(stub.handle.base_url());
    ep.batch_size = 7;
    let err = RemoteScorer::new(ep).unwrap().score("q", &candidates(7)).unwrap_err();
    assert_eq!(err, ScorerError::LengthMismatch { expected: 7, got: 6 });
}

#[test]
fn remote_scorer_times_out() {
    let stub = stub_scorer(StubMode::Slow(Duration::from_millis(800)));
    let mut ep = ScorerEndpoint::new(stub.handle.base_url());
    ep.timeout = Duration::from_millis(100);
    let err = RemoteScorer::new(ep).unwrap().score("q", &candidates(2)).unwrap_err();
    assert!(matches!(err, ScorerError::Timeout(_)), "{err:?}");
}

struct Fixed(Vec<ScoredUnit>);

impl Retriever for Fixed {
    fn unit_kind(&self) -> deepsearch::corpus::UnitKind {
        deepsearch::corpus::UnitKind::Document
    }

    fn retrieve(&self, _: &str, k: usize) -> Result<RankedList, deepsearch::pipeline::PipelineError> {
        let mut l = RankedList::from_ordered(self.0.clone());
        l.truncate(k);
        Ok(l)
    }
}

#[test]
fn pipeline_over_remote_scorer_equals_local_rerank() {
    let stub = stub_scorer(StubMode::NegLength);
    let mut ep = ScorerEndpoint::new(stub.handle.base_url());
    ep.batch_size = 4;
    let entries: Vec<ScoredUnit> = (0..30)
        .map(|i| ScoredUnit::new(format!("u{i:02}"), 100.0 - i as f64))
        .collect();
    let texts: HashMap<String, String> = (0..30)
        .map(|i| (format!("u{i:02}"), "w".repeat(1 + (i * 13) % 17)))
        .collect();
    let cfg = PipelineConfig::new(Arc::new(Fixed(entries.clone())), 10).with_reranker(
        Arc::new(RemoteScorer::new(ep).unwrap()),
        Arc::new(texts.clone()),
        20,
    );
    let got = Pipeline::new(cfg).unwrap().run("q").unwrap();

    let scores: HashMap<String, f64> = texts.iter().map(|(k, v)| (k.clone(), -(v.len() as f64))).collect();
    let mut expected = rerank_top(&RankedList::from_ordered(entries), 20, &scores).unwrap();
    expected.truncate(10);
    assert_eq!(got, expected);
}

#[test]
fn chat_client_drives_an_episode() {
    let (server, requests) = stub_chat(vec![
        json!({
            "choices": [{"message": {
                "content": null,
                "reasoning_content": "Search for the stadium.",
                "tool_calls": [{"id": "x", "type": "function",
                    "function": {"name": "search", "arguments": "{\"query\":\"stadium 61,880\"}"}}]
            }}],
            "usage": {"completion_tokens": 42}
        }),
        json!({
            "choices": [{"message": {"content": "Stadium", "reasoning_content": "Found it."}}],
            "usage": {"completion_tokens": 8}
        }),
        json!({"choices": [{"message": {"content": "yes"}}]}),
    ]);
    let endpoint = ChatEndpoint {
        base_url: format!("{}/v1", server.base_url()),
        model: "stub".into(),
        api_key: Some("secret".into()),
        reasoning_effort: Some("high".into()),
        max_tokens: None,
        timeout_secs: 5,
    };
    let mut agent = HttpChatClient::new(endpoint.clone());
    let runner = EpisodeRunner::new(common::tool_service(toy_corpus()), Arc::new(WhitespaceAdapter));
    let ep = runner.run("q", "Which venue holds 61,880?", &mut agent);
    assert_eq!(ep.termination, Termination::Answered);
    assert_eq!(ep.final_answer.as_deref(), Some("Stadium"));
    assert_eq!(ep.budget_used.output_tokens, 50);
    assert!(matches!(&ep.steps[1].event, StepEvent::Search { query_raw, .. } if query_raw == "stadium 61,880"));

    assert_eq!(HttpChatClient::new(endpoint).complete(&[]).unwrap(), "yes");

    let reqs = requests.lock().unwrap();
    assert_eq!(reqs[0]["reasoning_effort"], "high");
    assert_eq!(reqs[0]["tools"].as_array().unwrap().len(), 2);
    // second request carries the tool result back
    let msgs = reqs[1]["messages"].as_array().unwrap();
    assert_eq!(msgs.last().unwrap()["role"], "tool");
    assert!(msgs.last().unwrap()["content"].as_str().unwrap().contains("docid: d03"));
}

#[test]
fn corpus_type_is_shareable() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<Corpus>();
    assert_send_sync::<ToolService>();
}
