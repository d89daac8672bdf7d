use std::sync::Arc;

use crate::agentloop::chat::{ChatMessage, ChatModel};

/// How final answers are compared to reference answers.
#[derive(Clone, Default)]
pub enum Judge {
    /// Normalized string equality; runs offline.
    #[default]
    Exact,
    /// Binary verdict from a chat model.
    Llm(Arc<dyn ChatModel>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Correct,
    Incorrect,
    /// The judge could not be reached; excluded from accuracy.
    Error(String),
}

impl Verdict {
    pub fn score(&self) -> Option<f64> {
        match self {
            Verdict::Correct => Some(1.0),
            Verdict::Incorrect => Some(0.0),
            Verdict::Error(_) => None,
        }
    }
}

const DASHES: &[char] = &[
    '\u{2010}', '\u{2011}', '\u{2012}', '\u{2013}', '\u{2014}', '\u{2015}', '\u{2212}', '\u{fe58}', '\u{fe63}',
    '\u{ff0d}',
];
const ARTICLES: &[&str] = &["a", "an", "the"];

/// Case-folds, unifies dashes, trims punctuation around each word and drops
/// articles; words are re-joined with single spaces.
pub fn normalize_answer(s: &str) -> String {
    let folded: String = s
        .to_lowercase()
        .chars()
        .map(|c| if DASHES.contains(&c) { '-' } else { c })
        .collect();
    folded
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty() && !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub const JUDGE_RUBRIC: &str = "You are grading whether a response to a question is correct.\n\
Compare the response with the reference answer. The response is correct if it states the same \
answer as the reference, allowing for differences in wording, formatting or small numeric rounding. \
It is incorrect if it gives a different answer, several candidate answers, or no answer.\n\
Reply with exactly one word: yes if correct, no if incorrect.";

pub fn judge_prompt(answer: &str, reference: &str) -> String {
    format!("{JUDGE_RUBRIC}\n\nReference answer: {reference}\n\nResponse: {answer}\n\nCorrect?")
}

fn parse_verdict(raw: &str) -> Verdict {
    let first = raw
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match first.as_str() {
        "yes" | "correct" | "true" => Verdict::Correct,
        "no" | "incorrect" | "false" => Verdict::Incorrect,
        _ => Verdict::Error(format!("unparseable judge reply {raw:?}")),
    }
}

/// Scores one answer. Missing answers are incorrect without consulting the
/// judge.
pub fn accuracy_judge(answer: Option<&str>, reference: &str, judge: &Judge) -> Verdict {
    let Some(answer) = answer.filter(|a| !a.trim().is_empty()) else {
        return Verdict::Incorrect;
    };
    match judge {
        Judge::Exact => {
            if normalize_answer(answer) == normalize_answer(reference) {
                Verdict::Correct
            } else {
                Verdict::Incorrect
            }
        }
        Judge::Llm(model) => match model.complete(&[ChatMessage::user(judge_prompt(answer, reference))]) {
            Ok(reply) => parse_verdict(&reply),
            Err(e) => Verdict::Error(e.to_string()),
        },
    }
}
