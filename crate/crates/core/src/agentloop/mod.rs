//! The deep-research agent loop.
//!
//! Each iteration the agent produces an optional reasoning trace and one or
//! more actions: a search, a document fetch, or a final answer. Searches are
//! optionally reformulated, sent to the tool registry, and the rendered
//! results appended to the agent's transcript. An episode ends on an answer
//! or as soon as a budget would be exceeded:
//!
//! * iterations: the agent is not called again once `max_iterations` turns
//!   have been taken;
//! * output tokens: a turn whose generated tokens would push the total past
//!   `max_output_tokens` is discarded;
//! * context: a reasoning trace, query or tool payload that would push the
//!   context past `context_window_tokens` is not appended.
//!
//! The context count is the user query plus every recorded reasoning trace,
//! query (or doc id) and rendered tool payload, measured with the runner's
//! tokenizer adapter; [`recompute_context_tokens`] rebuilds it from a trace.

pub mod chat;
mod q2q;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use q2q::{build_q2q_prompt, load_exemplars, reformulate_q2q, Reformulation, ReformulationMode, Reformulator};
pub use scripted::{ScriptItem, ScriptedAgent};

use crate::corpus::TokenizerAdapter;
use crate::toolsvc::{DocumentView, SearchResult, ToolRegistry};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a research assistant answering a difficult question. \
Use the `search` tool to find evidence in the corpus and `get_document` to read a full document. \
Think step by step, search as often as needed, and when you are confident reply with the final answer only.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    IterationCap,
    ContextLimit,
    OutputLimit,
    AgentError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub max_iterations: usize,
    pub max_output_tokens: usize,
    pub context_window_tokens: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_output_tokens: 40_000,
            context_window_tokens: 131_072,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 || self.max_output_tokens == 0 || self.context_window_tokens == 0 {
            return Err(format!("all budgets must be positive: {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetUsage {
    pub iterations: usize,
    pub output_tokens: usize,
    pub context_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepEvent {
    Reasoning {
        text: String,
    },
    Search {
        query_raw: String,
        query_sent: String,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        reformulation_failed: bool,
        results: SearchResult,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tool_error: Option<String>,
    },
    GetDoc {
        doc_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        document: Option<DocumentView>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tool_error: Option<String>,
    },
    Answer {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub event: StepEvent,
    /// Context size after this step.
    pub context_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub schema_version: u32,
    pub qid: String,
    pub user_query: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub termination: Termination,
    pub budget_used: BudgetUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Episode {
    pub fn search_steps(&self) -> impl Iterator<Item = (&str, &SearchResult)> {
        self.steps.iter().filter_map(|s| match &s.event {
            StepEvent::Search { query_raw, results, .. } => Some((query_raw.as_str(), results)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeCounts {
    pub search_calls: usize,
    pub getdoc_calls: usize,
    pub answered: bool,
}

pub fn count_episode(ep: &Episode) -> EpisodeCounts {
    let mut c = EpisodeCounts {
        answered: ep.termination == Termination::Answered,
        ..Default::default()
    };
    for s in &ep.steps {
        match s.event {
            StepEvent::Search { .. } => c.search_calls += 1,
            StepEvent::GetDoc { .. } => c.getdoc_calls += 1,
            _ => {}
        }
    }
    c
}

/// Text a step adds to the agent's context.
fn step_payload(event: &StepEvent) -> Vec<String> {
    match event {
        StepEvent::Reasoning { text } => vec![text.clone()],
        StepEvent::Search {
            query_raw,
            results,
            tool_error,
            ..
        } => vec![query_raw.clone(), search_payload(results, tool_error.as_deref())],
        StepEvent::GetDoc {
            doc_id,
            document,
            tool_error,
        } => vec![doc_id.clone(), doc_payload(document.as_ref(), tool_error.as_deref())],
        StepEvent::Answer { .. } => vec![],
    }
}

fn search_payload(results: &SearchResult, error: Option<&str>) -> String {
    match error {
        Some(e) => format!("Error: {e}"),
        None => results.render(),
    }
}

fn doc_payload(doc: Option<&DocumentView>, error: Option<&str>) -> String {
    match (doc, error) {
        (Some(d), _) => d.render(),
        (None, Some(e)) => format!("Error: {e}"),
        (None, None) => String::new(),
    }
}

/// Cumulative context size after each step, rebuilt from the trace.
pub fn recompute_context_tokens(ep: &Episode, adapter: &dyn TokenizerAdapter) -> Vec<usize> {
    let mut total = adapter.count_tokens(&ep.user_query);
    ep.steps
        .iter()
        .map(|s| {
            total += step_payload(&s.event)
                .iter()
                .map(|t| adapter.count_tokens(t))
                .sum::<usize>();
            total
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case")]
pub enum AgentAction {
    Search { query: String },
    GetDocument { docid: String },
    Answer { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTurn {
    pub reasoning: Option<String>,
    pub actions: Vec<AgentAction>,
    /// Generated tokens as reported by the model; counted with the runner's
    /// adapter when absent.
    pub output_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub id: String,
    pub action: AgentAction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    System {
        content: String,
    },
    User {
        content: String,
    },
    Assistant {
        reasoning: Option<String>,
        tool_calls: Vec<ToolCall>,
        content: Option<String>,
    },
    Tool {
        call_id: String,
        content: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolKind {
    Search,
    GetDocument,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent transport failure: {0}")]
    Transport(String),
    #[error("agent protocol violation: {0}")]
    Protocol(String),
    #[error("agent script exhausted")]
    ScriptExhausted,
}

/// A policy producing the next turn from the transcript so far.
pub trait Agent: Send {
    fn next_turn(&mut self, transcript: &[Message], tools: &[ToolKind]) -> Result<AgentTurn, AgentError>;
}

#[derive(Clone)]
pub struct EpisodeRunner {
    tools: Arc<dyn ToolRegistry>,
    adapter: Arc<dyn TokenizerAdapter>,
    budgets: Budgets,
    reformulator: Reformulator,
    system_prompt: String,
}

impl EpisodeRunner {
    pub fn new(tools: Arc<dyn ToolRegistry>, adapter: Arc<dyn TokenizerAdapter>) -> Self {
        Self {
            tools,
            adapter,
            budgets: Budgets::default(),
            reformulator: Reformulator::off(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        }
    }

    pub fn with_budgets(mut self, budgets: Budgets) -> Self {
        self.budgets = budgets;
        self
    }

    pub fn with_reformulator(mut self, reformulator: Reformulator) -> Self {
        self.reformulator = reformulator;
        self
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn budgets(&self) -> Budgets {
        self.budgets
    }

    fn count(&self, text: &str) -> usize {
        self.adapter.count_tokens(text)
    }

    fn generated_tokens(&self, turn: &AgentTurn) -> usize {
        let reasoning = turn.reasoning.as_deref().map_or(0, |r| self.count(r));
        reasoning
            + turn
                .actions
                .iter()
                .map(|a| match a {
                    AgentAction::Search { query } => self.count(query),
                    AgentAction::GetDocument { docid } => self.count(docid),
                    AgentAction::Answer { text } => self.count(text),
                })
                .sum::<usize>()
    }

    pub fn run(&self, qid: &str, user_query: &str, agent: &mut dyn Agent) -> Episode {
        let mut tools = vec![ToolKind::Search];
        if self.tools.has_get_document() {
            tools.push(ToolKind::GetDocument);
        }
        let mut ep = Episode {
            schema_version: EPISODE_SCHEMA_VERSION,
            qid: qid.to_string(),
            user_query: user_query.to_string(),
            steps: Vec::new(),
            final_answer: None,
            termination: Termination::AgentError,
            budget_used: BudgetUsage::default(),
            error: None,
        };
        let budgets = self.budgets;
        let mut used = BudgetUsage {
            context_tokens: self.count(user_query),
            ..Default::default()
        };
        if used.context_tokens > budgets.context_window_tokens {
            ep.termination = Termination::ContextLimit;
            return ep;
        }
        let mut transcript = vec![
            Message::System {
                content: self.system_prompt.clone(),
            },
            Message::User {
                content: user_query.to_string(),
            },
        ];
        let mut last_reasoning: Option<String> = None;

        ep.termination = 'episode: loop {
            if used.iterations >= budgets.max_iterations {
                break Termination::IterationCap;
            }
            let turn = match agent.next_turn(&transcript, &tools) {
                Ok(t) => t,
                Err(e) => {
                    ep.error = Some(e.to_string());
                    break Termination::AgentError;
                }
            };
            used.iterations += 1;
            let generated = turn.output_tokens.unwrap_or_else(|| self.generated_tokens(&turn));
            if used.output_tokens + generated > budgets.max_output_tokens {
                break Termination::OutputLimit;
            }
            used.output_tokens += generated;
            if turn.actions.is_empty() {
                ep.error = Some("agent turn carried no action".into());
                break Termination::AgentError;
            }

            if let Some(s) = turn.reasoning.as_ref().filter(|s| !s.trim().is_empty()) {
                let c = self.count(s);
                if used.context_tokens + c > budgets.context_window_tokens {
                    break Termination::ContextLimit;
                }
                used.context_tokens += c;
                ep.steps.push(Step {
                    event: StepEvent::Reasoning { text: s.clone() },
                    context_tokens: used.context_tokens,
                });
                last_reasoning = Some(s.clone());
            }

            let calls: Vec<ToolCall> = turn
                .actions
                .iter()
                .enumerate()
                .filter(|(_, a)| !matches!(a, AgentAction::Answer { .. }))
                .map(|(i, a)| ToolCall {
                    id: format!("call_{}_{}", used.iterations, i),
                    action: a.clone(),
                })
                .collect();
            transcript.push(Message::Assistant {
                reasoning: turn.reasoning.clone(),
                tool_calls: calls.clone(),
                content: turn.actions.iter().find_map(|a| match a {
                    AgentAction::Answer { text } => Some(text.clone()),
                    _ => None,
                }),
            });

            let mut calls = calls.into_iter();
            for action in &turn.actions {
                let event = match action {
                    AgentAction::Answer { text } => {
                        ep.steps.push(Step {
                            event: StepEvent::Answer { text: text.clone() },
                            context_tokens: used.context_tokens,
                        });
                        ep.final_answer = Some(text.clone());
                        break 'episode Termination::Answered;
                    }
                    AgentAction::Search { query } => {
                        let sent = self.reformulator.reformulate(query, last_reasoning.as_deref());
                        let (results, tool_error) = match self.tools.search(&sent.text) {
                            Ok(r) => (r, None),
                            Err(e) => (
                                SearchResult {
                                    items: vec![],
                                    k_requested: 0,
                                },
                                Some(format!("{}: {e}", e.code())),
                            ),
                        };
                        StepEvent::Search {
                            query_raw: query.clone(),
                            query_sent: sent.text,
                            reformulation_failed: sent.failed,
                            results,
                            tool_error,
                        }
                    }
                    AgentAction::GetDocument { docid } => {
                        let fetched = if self.tools.has_get_document() {
                            self.tools.get_document(docid).map_err(|e| format!("{}: {e}", e.code()))
                        } else {
                            Err("unsupported: get_document is not available".to_string())
                        };
                        let (document, tool_error) = match fetched {
                            Ok(d) => (Some(d), None),
                            Err(e) => (None, Some(e)),
                        };
                        StepEvent::GetDoc {
                            doc_id: docid.clone(),
                            document,
                            tool_error,
                        }
                    }
                };
                let payload = step_payload(&event);
                let added: usize = payload.iter().map(|t| self.count(t)).sum();
                if used.context_tokens + added > budgets.context_window_tokens {
                    break 'episode Termination::ContextLimit;
                }
                used.context_tokens += added;
                let call = calls.next().expect("one call per tool action");
                transcript.push(Message::Tool {
                    call_id: call.id,
                    content: payload.last().cloned().unwrap_or_default(),
                });
                ep.steps.push(Step {
                    event,
                    context_tokens: used.context_tokens,
                });
            }
        };
        ep.budget_used = used;
        ep
    }

    /// Runs one episode per `(qid, query)` on at most `parallelism` threads.
    /// Output order follows input order.
    pub fn run_many<F>(&self, queries: &[(String, String)], parallelism: usize, make_agent: F) -> Vec<Episode>
    where
        F: Fn(&str) -> Box<dyn Agent> + Sync,
    {
        use rayon::prelude::*;
        let run = || {
            queries
                .par_iter()
                .map(|(qid, q)| {
                    let mut agent = make_agent(qid);
                    self.run(qid, q, agent.as_mut())
                })
                .collect()
        };
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
}

pub fn run_episode(
    qid: &str,
    user_query: &str,
    agent: &mut dyn Agent,
    tools: Arc<dyn ToolRegistry>,
    adapter: Arc<dyn TokenizerAdapter>,
    budgets: Budgets,
    reformulator: Reformulator,
) -> Episode {
    EpisodeRunner::new(tools, adapter)
        .with_budgets(budgets)
        .with_reformulator(reformulator)
        .run(qid, user_query, agent)
}
