//! Chat-completion clients.
//!
//! [`HttpChatClient`] speaks the OpenAI-compatible `/chat/completions`
//! protocol and serves both as a plain [`ChatModel`] (for the reformulator
//! and the answer judge) and as a tool-calling [`Agent`].

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{Agent, AgentAction, AgentError, AgentTurn, Message, ToolKind};
use crate::http::{join_url, HttpError, JsonClient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("chat request failed: {0}")]
    Transport(#[from] HttpError),
    #[error("unexpected chat response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Text-in, text-out chat model.
pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatEndpoint {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Passed through verbatim as `reasoning_effort`.
    #[serde(default)]
    pub reasoning_effort: Option<String>,
    #[serde(default)]
    pub max_tokens: Option<usize>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    600
}

#[derive(Clone)]
pub struct HttpChatClient {
    endpoint: ChatEndpoint,
    client: JsonClient,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default, alias = "reasoning")]
    reasoning_content: Option<String>,
    #[serde(default)]
    tool_calls: Vec<ResponseToolCall>,
}

#[derive(Debug, Deserialize)]
struct ResponseToolCall {
    function: FunctionCall,
}

#[derive(Debug, Deserialize)]
struct FunctionCall {
    name: String,
    arguments: String,
}

#[derive(Debug, Deserialize)]
struct Usage {
    completion_tokens: Option<usize>,
}

impl HttpChatClient {
    pub fn new(endpoint: ChatEndpoint) -> Self {
        let client = JsonClient::new(Duration::from_secs(endpoint.timeout_secs));
        Self { endpoint, client }
    }

    fn request(&self, messages: Vec<Value>, tools: Option<Value>) -> Result<CompletionResponse, ChatError> {
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": messages,
        });
        if let Some(effort) = &self.endpoint.reasoning_effort {
            body["reasoning_effort"] = json!(effort);
        }
        if let Some(n) = self.endpoint.max_tokens {
            body["max_tokens"] = json!(n);
        }
        if let Some(t) = tools {
            body["tools"] = t;
        }
        let resp: CompletionResponse = self.client.post(
            &join_url(&self.endpoint.base_url, "chat/completions"),
            &body,
            self.endpoint.api_key.as_deref(),
        )?;
        if resp.choices.is_empty() {
            return Err(ChatError::Protocol("no choices".into()));
        }
        Ok(resp)
    }
}

impl ChatModel for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let msgs = messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        let resp = self.request(msgs, None)?;
        let msg = &resp.choices[0].message;
        msg.content
            .clone()
            .ok_or_else(|| ChatError::Protocol("response has no content".into()))
    }
}

pub(crate) fn tool_schema(tools: &[ToolKind]) -> Value {
    let specs: Vec<Value> = tools
        .iter()
        .map(|t| match t {
            ToolKind::Search => json!({
                "type": "function",
                "function": {
                    "name": "search",
                    "description": "Search the corpus. Returns the top-ranked documents with their first 512 tokens.",
                    "parameters": {
                        "type": "object",
                        "properties": {"query": {"type": "string"}},
                        "required": ["query"]
                    }
                }
            }),
            ToolKind::GetDocument => json!({
                "type": "function",
                "function": {
                    "name": "get_document",
                    "description": "Fetch the full text of a document by its docid.",
                    "parameters": {
                        "type": "object",
                        "properties": {"docid": {"type": "string"}},
                        "required": ["docid"]
                    }
                }
            }),
        })
        .collect();
    Value::Array(specs)
}

fn action_to_call(id: &str, action: &AgentAction) -> Option<Value> {
    let (name, args) = match action {
        AgentAction::Search { query } => ("search", json!({"query": query})),
        AgentAction::GetDocument { docid } => ("get_document", json!({"docid": docid})),
        AgentAction::Answer { .. } => return None,
    };
    Some(json!({
        "id": id,
        "type": "function",
        "function": {"name": name, "arguments": args.to_string()}
    }))
}

pub(crate) fn transcript_to_openai(transcript: &[Message]) -> Vec<Value> {
    transcript
        .iter()
        .map(|m| match m {
            Message::System { content } => json!({"role": "system", "content": content}),
            Message::User { content } => json!({"role": "user", "content": content}),
            Message::Assistant {
                reasoning,
                tool_calls,
                content,
            } => {
                let mut v = json!({"role": "assistant", "content": content});
                if let Some(r) = reasoning {
                    v["reasoning_content"] = json!(r);
                }
                let calls: Vec<Value> = tool_calls
                    .iter()
                    .filter_map(|c| action_to_call(&c.id, &c.action))
                    .collect();
                if !calls.is_empty() {
                    v["tool_calls"] = Value::Array(calls);
                }
                v
            }
            Message::Tool { call_id, content } => {
                json!({"role": "tool", "tool_call_id": call_id, "content": content})
            }
        })
        .collect()
}

fn parse_tool_call(call: &ResponseToolCall) -> Result<AgentAction, AgentError> {
    let args: Value = serde_json::from_str(&call.function.arguments)
        .map_err(|e| AgentError::Protocol(format!("tool arguments for {}: {e}", call.function.name)))?;
    let arg = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| args.get(*k).and_then(Value::as_str))
            .map(str::to_string)
            .ok_or_else(|| AgentError::Protocol(format!("{} call missing {}", call.function.name, keys[0])))
    };
    match call.function.name.as_str() {
        "search" => Ok(AgentAction::Search {
            query: arg(&["query"])?,
        }),
        "get_document" => Ok(AgentAction::GetDocument {
            docid: arg(&["docid", "doc_id", "id"])?,
        }),
        other => Err(AgentError::Protocol(format!("unknown tool {other:?}"))),
    }
}

impl Agent for HttpChatClient {
    fn next_turn(&mut self, transcript: &[Message], tools: &[ToolKind]) -> Result<AgentTurn, AgentError> {
        let resp = self
            .request(transcript_to_openai(transcript), Some(tool_schema(tools)))
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let output_tokens = resp.usage.as_ref().and_then(|u| u.completion_tokens);
        let msg = &resp.choices[0].message;
        let content = msg.content.clone().filter(|c| !c.trim().is_empty());
        if msg.tool_calls.is_empty() {
            let text = content.ok_or_else(|| AgentError::Protocol("neither tool call nor answer".into()))?;
            return Ok(AgentTurn {
                reasoning: msg.reasoning_content.clone(),
                actions: vec![AgentAction::Answer { text }],
                output_tokens,
            });
        }
        let actions = msg
            .tool_calls
            .iter()
            .map(parse_tool_call)
            .collect::<Result<Vec<_>, _>>()?;
        // some servers put the thinking in `content` when calling tools
        let reasoning = msg.reasoning_content.clone().or(content);
        Ok(AgentTurn {
            reasoning,
            actions,
            output_tokens,
        })
    }
}
