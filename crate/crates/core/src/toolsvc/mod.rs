//! Agent-facing tools: `search` and `get_document`.
//!
//! `search` runs the configured pipeline and returns the top-k units with
//! their text cut to the first 512 tokens. `get_document` returns a full,
//! untruncated document and accepts passage ids, resolving them to their
//! source document. Both are available in-process ([`ToolService`]) and over
//! HTTP ([`serve_http`], [`HttpTools`]).

mod server;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use server::{router, serve_http};

use crate::corpus::{Corpus, TokenizerAdapter};
use crate::http::{join_url, HttpError, JsonClient};
use crate::pipeline::{Pipeline, PipelineError};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TEXT_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("tool {0} is not available")]
    Unsupported(&'static str),
    #[error("remote tool call failed: {0}")]
    Remote(#[from] HttpError),
}

impl ToolError {
    /// Stable machine-readable code, also used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ToolError::NotFound(_) => "not_found",
            ToolError::BadRequest(_) => "bad_request",
            ToolError::Pipeline(_) => "pipeline_error",
            ToolError::Unsupported(_) => "unsupported",
            ToolError::Remote(_) => "remote_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchItem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub items: Vec<SearchItem>,
    pub k_requested: usize,
}

impl SearchResult {
    /// Plain-text form fed back to the agent.
    pub fn render(&self) -> String {
        if self.items.is_empty() {
            return "No results.".to_string();
        }
        let mut out = String::new();
        for (rank, item) in self.items.iter().enumerate() {
            out.push_str(&format!("[{}] docid: {} score: {:.4}\n", rank + 1, item.id, item.score));
            if let Some(t) = &item.title {
                out.push_str(t);
                out.push('\n');
            }
            out.push_str(&item.text);
            out.push_str("\n\n");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentView {
    pub docid: String,
    pub title: Option<String>,
    pub text: String,
}

impl DocumentView {
    pub fn render(&self) -> String {
        match &self.title {
            Some(t) => format!("docid: {}\n{}\n{}", self.docid, t, self.text),
            None => format!("docid: {}\n{}", self.docid, self.text),
        }
    }
}

/// The tools an agent may call.
pub trait ToolRegistry: Send + Sync {
    fn search(&self, query: &str) -> Result<SearchResult, ToolError>;

    fn get_document(&self, id: &str) -> Result<DocumentView, ToolError>;

    fn has_get_document(&self) -> bool {
        true
    }
}

#[derive(Debug, Default)]
struct CallCounters {
    search: AtomicU64,
    get_document: AtomicU64,
}

pub struct ToolService {
    pipeline: Pipeline,
    corpus: Arc<Corpus>,
    adapter: Arc<dyn TokenizerAdapter>,
    max_text_tokens: usize,
    get_document_enabled: bool,
    counters: CallCounters,
}

impl ToolService {
    pub fn new(pipeline: Pipeline, corpus: Arc<Corpus>, adapter: Arc<dyn TokenizerAdapter>) -> Self {
        Self {
            pipeline,
            corpus,
            adapter,
            max_text_tokens: DEFAULT_TEXT_TOKENS,
            get_document_enabled: true,
            counters: CallCounters::default(),
        }
    }

    pub fn with_max_text_tokens(mut self, n: usize) -> Self {
        self.max_text_tokens = n;
        self
    }

    /// Hides `get_document` from agents (search-only runs).
    pub fn without_get_document(mut self) -> Self {
        self.get_document_enabled = false;
        self
    }

    pub fn adapter(&self) -> &dyn TokenizerAdapter {
        self.adapter.as_ref()
    }

    pub fn max_text_tokens(&self) -> usize {
        self.max_text_tokens
    }

    pub fn search_calls(&self) -> u64 {
        self.counters.search.load(Ordering::Relaxed)
    }

    pub fn get_document_calls(&self) -> u64 {
        self.counters.get_document.load(Ordering::Relaxed)
    }

    pub fn search_k(&self, query: &str, k: usize) -> Result<SearchResult, ToolError> {
        if k == 0 {
            return Err(ToolError::BadRequest("k must be at least 1".into()));
        }
        self.counters.search.fetch_add(1, Ordering::Relaxed);
        let ranked = self.pipeline.run_with_k(query, k)?;
        let items = ranked
            .entries()
            .iter()
            .map(|e| {
                let unit = self
                    .corpus
                    .unit(&e.id)
                    .ok_or_else(|| ToolError::Pipeline(PipelineError::MissingText(e.id.clone())))?;
                Ok(SearchItem {
                    id: e.id.clone(),
                    title: unit.title.map(str::to_string),
                    text: self.adapter.truncate(unit.body, self.max_text_tokens),
                    score: e.score,
                })
            })
            .collect::<Result<Vec<_>, ToolError>>()?;
        Ok(SearchResult { items, k_requested: k })
    }
}

impl ToolRegistry for ToolService {
    fn search(&self, query: &str) -> Result<SearchResult, ToolError> {
        self.search_k(query, self.pipeline.config().k)
    }

    fn get_document(&self, id: &str) -> Result<DocumentView, ToolError> {
        if !self.get_document_enabled {
            return Err(ToolError::Unsupported("get_document"));
        }
        self.counters.get_document.fetch_add(1, Ordering::Relaxed);
        let doc = self
            .corpus
            .resolve_document(id)
            .ok_or_else(|| ToolError::NotFound(id.to_string()))?;
        Ok(DocumentView {
            docid: doc.doc_id.clone(),
            title: doc.title.clone(),
            text: doc.text.clone(),
        })
    }

    fn has_get_document(&self) -> bool {
        self.get_document_enabled
    }
}

/// Client for a remote tool service.
pub struct HttpTools {
    base_url: String,
    client: JsonClient,
    k: usize,
}

impl HttpTools {
    pub fn new(base_url: impl Into<String>, k: usize, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into(),
            client: JsonClient::new(timeout),
            k,
        }
    }
}

impl ToolRegistry for HttpTools {
    fn search(&self, query: &str) -> Result<SearchResult, ToolError> {
        let k = self.k.to_string();
        Ok(self
            .client
            .get(&join_url(&self.base_url, "search"), &[("q", query), ("k", &k)])?)
    }

    fn get_document(&self, id: &str) -> Result<DocumentView, ToolError> {
        let url = join_url(&self.base_url, &format!("doc/{}", percent_encode(id)));
        match self.client.get(&url, &[]) {
            Err(HttpError::Status { status: 404, .. }) => Err(ToolError::NotFound(id.to_string())),
            other => Ok(other?),
        }
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
