//! Query-to-question reformulation.
//!
//! Agent-issued queries tend to be keyword strings with quoted fragments.
//! The reformulator asks a chat model to restate such a query as a single
//! natural-language question, optionally conditioned on the agent's most
//! recent reasoning step. Failures are fail-open: the raw query is sent and
//! the step is flagged.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::chat::{ChatMessage, ChatModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReformulationMode {
    #[default]
    #[serde(rename = "off")]
    Off,
    /// Query only.
    #[serde(rename = "q")]
    Query,
    /// Query plus the latest reasoning step.
    #[serde(rename = "q+r")]
    QueryReasoning,
}

impl std::str::FromStr for ReformulationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" | "none" => Ok(Self::Off),
            "q" => Ok(Self::Query),
            "q+r" | "qr" => Ok(Self::QueryReasoning),
            other => Err(format!("unknown reformulation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reformulation {
    pub text: String,
    pub failed: bool,
}

#[derive(Clone, Default)]
pub struct Reformulator {
    mode: ReformulationMode,
    llm: Option<Arc<dyn ChatModel>>,
    exemplars: Vec<String>,
}

impl Reformulator {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn new(
        mode: ReformulationMode,
        llm: Option<Arc<dyn ChatModel>>,
        exemplars: Vec<String>,
    ) -> Result<Self, String> {
        if mode != ReformulationMode::Off && llm.is_none() {
            return Err("reformulation requires a chat model".into());
        }
        Ok(Self { mode, llm, exemplars })
    }

    pub fn mode(&self) -> ReformulationMode {
        self.mode
    }

    pub fn prompt(&self, query: &str, reasoning: Option<&str>) -> String {
        build_q2q_prompt(
            query,
            reasoning.filter(|_| self.mode == ReformulationMode::QueryReasoning),
            &self.exemplars,
        )
    }

    /// Returns the query to send. With mode `Off` this is the raw query.
    pub fn reformulate(&self, query: &str, reasoning: Option<&str>) -> Reformulation {
        let unchanged = |failed| Reformulation {
            text: query.to_string(),
            failed,
        };
        let llm = match (self.mode, &self.llm) {
            (ReformulationMode::Off, _) | (_, None) => return unchanged(false),
            (_, Some(llm)) => llm,
        };
        let prompt = self.prompt(query, reasoning);
        match llm.complete(&[ChatMessage::user(prompt)]) {
            Ok(raw) => match clean_question(&raw) {
                Some(q) => Reformulation { text: q, failed: false },
                None => unchanged(true),
            },
            Err(e) => {
                tracing::warn!(error = %e, "q2q reformulation failed; sending raw query");
                unchanged(true)
            }
        }
    }
}

pub fn reformulate_q2q(query: &str, reasoning: Option<&str>, reformulator: &Reformulator) -> Reformulation {
    reformulator.reformulate(query, reasoning)
}

pub fn build_q2q_prompt(query: &str, reasoning: Option<&str>, exemplars: &[String]) -> String {
    let mut p = String::from(
        "Rewrite a web search query as one natural-language question, phrased the way a person would ask it.\n",
    );
    if !exemplars.is_empty() {
        p.push_str("\nExample questions:\n");
        for e in exemplars {
            p.push_str("- ");
            p.push_str(e.trim());
            p.push('\n');
        }
    }
    if let Some(r) = reasoning.map(str::trim).filter(|r| !r.is_empty()) {
        p.push_str("\nThe searcher's most recent reasoning, which explains what they are looking for:\n");
        p.push_str(r);
        p.push('\n');
    }
    p.push_str("\nSearch query: ");
    p.push_str(query.trim());
    p.push_str("\n\nReply with the question only.");
    p
}

fn clean_question(raw: &str) -> Option<String> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Question:")
        .or_else(|| line.strip_prefix("question:"))
        .unwrap_or(line)
        .trim();
    let line = line
        .trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}')
        .trim();
    (!line.is_empty()).then(|| line.to_string())
}

/// Reads exemplar questions, one per line; blank lines and `#` comments are
/// skipped.
pub fn load_exemplars(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
