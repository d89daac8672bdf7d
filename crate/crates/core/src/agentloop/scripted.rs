use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentAction, AgentError, AgentTurn, Message, ToolKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptItem {
    Reason(String),
    Search(String),
    GetDoc(String),
    Answer(String),
}

/// Replays a fixed script, ignoring the transcript.
///
/// Each turn gathers the consecutive `Reason` items (joined with newlines)
/// followed by the next action. Running out of actions is an agent error.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    items: VecDeque<ScriptItem>,
}

impl ScriptedAgent {
    pub fn new(items: impl IntoIterator<Item = ScriptItem>) -> Self {
        Self {
            items: items.into_iter().collect(),
        }
    }
}

impl Agent for ScriptedAgent {
    fn next_turn(&mut self, _transcript: &[Message], _tools: &[ToolKind]) -> Result<AgentTurn, AgentError> {
        let mut reasoning: Vec<String> = Vec::new();
        while let Some(item) = self.items.pop_front() {
            let action = match item {
                ScriptItem::Reason(r) => {
                    reasoning.push(r);
                    continue;
                }
                ScriptItem::Search(query) => AgentAction::Search { query },
                ScriptItem::GetDoc(docid) => AgentAction::GetDocument { docid },
                ScriptItem::Answer(text) => AgentAction::Answer { text },
            };
            return Ok(AgentTurn {
                reasoning: (!reasoning.is_empty()).then(|| reasoning.join("\n")),
                actions: vec![action],
                output_tokens: None,
            });
        }
        Err(AgentError::ScriptExhausted)
    }
}
