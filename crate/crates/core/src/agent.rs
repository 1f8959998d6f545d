//! The simulated beginner student.
//!
//! Every study item opens with a fixed question. After that each teacher
//! explanation is sent to the model together with the student persona
//! prompt, and the reply becomes the next question unless it repeats an
//! earlier one. A repeat is either an exact match after normalization or a
//! token-set Jaccard similarity at or above the configured threshold. Repeats
//! are regenerated at a higher temperature; when the budget runs out the
//! agent fails with [`AgentError::DuplicateExhausted`] instead of asking the
//! same thing again.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Language, Material};
use crate::llm::prompts::{render_student_prompt, render_teacher_message};
use crate::llm::{GatewayError, LlmGateway, PromptRequest, STUDENT_TEMPERATURE};
use crate::text::{jaccard, normalize_text, token_set};

/// The question that opens every study dialogue.
pub const FIRST_QUESTION: &str = "Please explain the reasons for the corrections.";

pub fn first_question() -> &'static str {
    FIRST_QUESTION
}

/// Questions the student has asked about one item, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquiryHistory {
    inquiries: Vec<String>,
}

impl Default for InquiryHistory {
    fn default() -> Self {
        Self::new()
    }
}

impl InquiryHistory {
    /// A history holding only the fixed first question.
    pub fn new() -> Self {
        InquiryHistory {
            inquiries: vec![FIRST_QUESTION.to_owned()],
        }
    }

    /// Rebuilds a history from recorded questions. The fixed first question
    /// is prepended if the record does not start with it.
    pub fn from_recorded<I, S>(questions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut history = Self::new();
        for (i, q) in questions.into_iter().enumerate() {
            let q = q.into();
            if i == 0 && q == FIRST_QUESTION {
                continue;
            }
            history.inquiries.push(q);
        }
        history
    }

    pub fn as_slice(&self) -> &[String] {
        &self.inquiries
    }

    pub fn len(&self) -> usize {
        self.inquiries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inquiries.is_empty()
    }

    pub fn last(&self) -> &str {
        self.inquiries.last().map(String::as_str).unwrap_or(FIRST_QUESTION)
    }

    /// The most recent `n` questions, oldest first.
    pub fn recent(&self, n: usize) -> &[String] {
        let start = self.inquiries.len().saturating_sub(n);
        &self.inquiries[start..]
    }

    fn push(&mut self, question: String) {
        self.inquiries.push(question);
    }
}

/// True iff `candidate` equals a history entry after normalization, or its
/// token-set Jaccard similarity with some entry is at least `threshold`.
///
/// ```
/// use lbt_core::agent::is_duplicate;
///
/// let history = ["Which word should I use instead of overthrow?"];
/// assert!(is_duplicate("which word should i use INSTEAD of overthrow", &history, 0.6));
/// assert!(!is_duplicate("Why is overthrow wrong?", &history, 0.6));
/// let empty: [&str; 0] = [];
/// assert!(!is_duplicate("anything", &empty, 0.0));
/// ```
pub fn is_duplicate<S: AsRef<str>>(candidate: &str, history: &[S], threshold: f64) -> bool {
    if history.is_empty() {
        return false;
    }
    let normalized = normalize_text(candidate);
    let tokens = token_set(candidate);
    history.iter().any(|entry| {
        let entry = entry.as_ref();
        normalize_text(entry) == normalized || jaccard(&tokens, &token_set(entry)) >= threshold
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    pub provider_id: String,
    /// Jaccard threshold at or above which a question counts as a repeat.
    pub duplicate_threshold: f64,
    /// Regenerations allowed after the first attempt.
    pub max_regen: u32,
    /// How many recent questions are shown to the model.
    pub history_window: usize,
    pub temperature: f64,
    pub temperature_step: f64,
    pub temperature_cap: f64,
    /// Transport retries per provider call.
    pub max_retries: u32,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            provider_id: "default".into(),
            duplicate_threshold: 0.6,
            max_regen: 3,
            history_window: 10,
            temperature: STUDENT_TEMPERATURE,
            temperature_step: 0.2,
            temperature_cap: 1.0,
            max_retries: 2,
        }
    }
}

impl AgentSettings {
    /// Temperature for the `regen`-th regeneration (0 = first attempt).
    pub fn temperature_for(&self, regen: u32) -> f64 {
        let t = self.temperature + self.temperature_step * f64::from(regen);
        // Rounded so 0.7 + 0.2 reads as 0.9 in logs and request hashes.
        let t = (t * 1e6).round() / 1e6;
        t.min(self.temperature_cap.max(self.temperature))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("teacher turn is empty")]
    EmptyTurn,
    #[error("every candidate repeated an earlier question ({attempts} attempts)")]
    DuplicateExhausted { attempts: u32 },
    #[error("cannot build the student prompt: {0}")]
    Prompt(String),
    #[error(transparent)]
    Provider(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentQuestion {
    pub text: String,
    /// Regenerations spent on rejected candidates.
    pub regenerations: u32,
}

pub struct StudentAgent<'a> {
    gateway: &'a LlmGateway,
    settings: &'a AgentSettings,
}

impl<'a> StudentAgent<'a> {
    pub fn new(gateway: &'a LlmGateway, settings: &'a AgentSettings) -> Self {
        StudentAgent { gateway, settings }
    }

    /// Produces the student's next question and appends it to `history`.
    /// `history` is left untouched on error.
    pub fn next_question(
        &self,
        material: &Material,
        keyword: &str,
        teacher_turn: &str,
        history: &mut InquiryHistory,
        language: Language,
    ) -> Result<AgentQuestion, AgentError> {
        if teacher_turn.trim().is_empty() {
            return Err(AgentError::EmptyTurn);
        }
        let prompt = render_student_prompt(
            &material.content,
            keyword,
            history.recent(self.settings.history_window),
            language,
        )
        .map_err(|e| AgentError::Prompt(e.to_string()))?;
        let teacher_message = render_teacher_message(history.last(), teacher_turn);

        let s = self.settings;
        for regen in 0..=s.max_regen {
            let request = PromptRequest::new(prompt.clone(), s.provider_id.clone())
                .with_user_text(teacher_message.clone())
                .with_temperature(s.temperature_for(regen))
                .with_max_retries(s.max_retries);
            let completion = self.gateway.complete(&request)?;
            let candidate = clean_question(&completion.text);
            if normalize_text(&candidate).is_empty() {
                continue;
            }
            if !is_duplicate(&candidate, history.as_slice(), s.duplicate_threshold) {
                history.push(candidate.clone());
                return Ok(AgentQuestion {
                    text: candidate,
                    regenerations: regen,
                });
            }
        }
        Err(AgentError::DuplicateExhausted {
            attempts: s.max_regen + 1,
        })
    }
}

/// Trims whitespace and one pair of wrapping quotes.
fn clean_question(raw: &str) -> String {
    let t = raw.trim();
    let unquoted = ['"', '\'', '“']
        .iter()
        .find_map(|&q| {
            let close = if q == '“' { '”' } else { q };
            t.strip_prefix(q)?.strip_suffix(close)
        })
        .filter(|inner| !inner.contains(['"', '“', '”']));
    unquoted.unwrap_or(t).trim().to_owned()
}
