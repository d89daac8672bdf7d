//! Client side of the scorer wire protocol.
//!
//! ```text
//! POST /score   {"query": str, "candidates": [{"id": str, "text": str}]}
//!            -> {"scores": [number]}            (aligned with candidates)
//! GET /healthz  -> {"status": "ok", "model": str}
//! ```
//!
//! Candidate lists longer than the endpoint's batch size are sent as
//! consecutive requests and the returned scores concatenated.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Candidate, Scorer, ScorerError};
use crate::http::{join_url, HttpError, JsonClient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerEndpoint {
    /// Base URL, e.g. `http://127.0.0.1:8700`.
    pub address: String,
    #[serde(with = "duration_ms", rename = "timeout_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

fn default_batch_size() -> usize {
    32
}

impl ScorerEndpoint {
    pub fn new(address: impl Into<String>) -> Self {
        Self {
            address: address.into(),
            timeout: default_timeout(),
            batch_size: default_batch_size(),
        }
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub query: String,
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    /// Optional per-candidate reasoning; ignored by the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationales: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model: String,
}

pub struct RemoteScorer {
    endpoint: ScorerEndpoint,
    client: JsonClient,
    name: String,
}

impl RemoteScorer {
    pub fn new(endpoint: ScorerEndpoint) -> Result<Self, ScorerError> {
        if endpoint.batch_size == 0 {
            return Err(ScorerError::Transport("batch_size must be at least 1".into()));
        }
        Ok(Self {
            client: JsonClient::new(endpoint.timeout),
            name: format!("remote({})", endpoint.address),
            endpoint,
        })
    }

    pub fn endpoint(&self) -> &ScorerEndpoint {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthStatus, ScorerError> {
        self.client
            .get(&join_url(&self.endpoint.address, "healthz"), &[])
            .map_err(Into::into)
    }

    fn score_batch(&self, query: &str, batch: &[Candidate]) -> Result<Vec<f64>, ScorerError> {
        let req = ScoreRequest {
            query: query.to_string(),
            candidates: batch
                .iter()
                .map(|c| WireCandidate {
                    id: c.id.clone(),
                    text: c.text.clone(),
                })
                .collect(),
        };
        let resp: ScoreResponse = self
            .client
            .post(&join_url(&self.endpoint.address, "score"), &req, None)?;
        if resp.scores.len() != batch.len() {
            return Err(ScorerError::LengthMismatch {
                expected: batch.len(),
                got: resp.scores.len(),
            });
        }
        Ok(resp.scores)
    }
}

impl From<HttpError> for ScorerError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout(d) => ScorerError::Timeout(d),
            HttpError::Transport(m) => ScorerError::Transport(m),
            HttpError::Status { status, body } => ScorerError::Status { status, body },
            HttpError::Malformed(m) => ScorerError::Malformed(m),
        }
    }
}

impl Scorer for RemoteScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, query: &str, candidates: &[Candidate]) -> Result<Vec<f64>, ScorerError> {
        let mut scores = Vec::with_capacity(candidates.len());
        for batch in candidates.chunks(self.endpoint.batch_size) {
            scores.extend(self.score_batch(query, batch)?);
        }
        Ok(scores)
    }
}

pub fn score_remote(endpoint: &ScorerEndpoint, query: &str, candidates: &[Candidate]) -> Result<Vec<f64>, ScorerError> {
    RemoteScorer::new(endpoint.clone())?.score(query, candidates)
}
