use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_material, Language, MCQuestion, Material, TestKind, VocabularyItem};
use crate::llm::parse::{parse_material_response, parse_mcq_response};
use crate::llm::prompts::{render_material_prompt, render_mcq_prompt};
use crate::llm::{GatewayError, LlmGateway, PromptRequest, GENERATION_TEMPERATURE};
use crate::text::{contains_phrase, normalize_text};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub provider_id: String,
    pub temperature: f64,
    /// Added to the temperature on each regeneration, capped at 1.0.
    pub retry_temperature_step: f64,
    /// Transport retries per provider call.
    pub max_retries: u32,
    /// Generations tried before giving up on invalid output.
    pub max_attempts: u32,
    pub n_options: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            provider_id: "default".into(),
            temperature: GENERATION_TEMPERATURE,
            retry_temperature_step: 0.2,
            max_retries: 2,
            max_attempts: 3,
            n_options: 4,
        }
    }
}

impl GenerationSettings {
    fn temperature_for(&self, attempt: u32) -> f64 {
        let bumped = self.temperature + self.retry_temperature_step * f64::from(attempt.saturating_sub(1));
        bumped.min(1.0).max(self.temperature)
    }

    fn request(&self, prompt: String, attempt: u32) -> PromptRequest {
        PromptRequest::new(prompt, self.provider_id.clone())
            .with_temperature(self.temperature_for(attempt))
            .with_max_retries(self.max_retries)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("keyword must not be empty")]
    EmptyKeyword,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no valid output for {keyword:?} after {attempts} attempts; last problem: {last_problem}")]
    GenerationFailed {
        keyword: String,
        attempts: u32,
        last_problem: String,
    },
    #[error(transparent)]
    Provider(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMaterial {
    pub material: Material,
    pub attempts: u32,
}

/// Asks the model for a wrong sentence around `keyword`, regenerating until
/// the result passes [`validate_material`] or `max_attempts` are used up.
/// Provider errors end the loop immediately.
pub fn generate_material(
    gateway: &LlmGateway,
    settings: &GenerationSettings,
    keyword: &str,
    max_attempts: u32,
) -> Result<GeneratedMaterial, GenerationError> {
    if keyword.trim().is_empty() {
        return Err(GenerationError::EmptyKeyword);
    }
    if max_attempts == 0 {
        return Err(GenerationError::InvalidArgument("max_attempts must be at least 1".into()));
    }
    let prompt = render_material_prompt(keyword).map_err(|_| GenerationError::EmptyKeyword)?;
    let mut last_problem = String::new();
    for attempt in 1..=max_attempts {
        let completion = gateway.complete(&settings.request(prompt.clone(), attempt))?;
        match parse_material_response(&completion.text) {
            Ok(material) => {
                let report = validate_material(&material, keyword);
                if report.is_valid() {
                    return Ok(GeneratedMaterial { material, attempts: attempt });
                }
                last_problem = format!("{:?}", report.violations);
            }
            Err(e) => last_problem = e.to_string(),
        }
    }
    Err(GenerationError::GenerationFailed {
        keyword: keyword.to_owned(),
        attempts: max_attempts,
        last_problem,
    })
}

/// Generates a multiple-choice question for `item`, explanation in
/// `language`. The answer must be the keyword itself or the stem must
/// mention the keyword.
pub fn generate_mcq(
    gateway: &LlmGateway,
    settings: &GenerationSettings,
    item: &VocabularyItem,
    kind: TestKind,
    language: Language,
    n_options: usize,
) -> Result<MCQuestion, GenerationError> {
    if n_options < 2 {
        return Err(GenerationError::InvalidArgument(format!(
            "n_options must be at least 2, got {n_options}"
        )));
    }
    if item.keyword.trim().is_empty() {
        return Err(GenerationError::EmptyKeyword);
    }
    let prompt = render_mcq_prompt(&item.keyword, item.meaning(Language::English), kind, language, n_options)
        .map_err(|e| GenerationError::InvalidArgument(e.to_string()))?;
    let max_attempts = settings.max_attempts.max(1);
    let mut last_problem = String::new();
    for attempt in 1..=max_attempts {
        let completion = gateway.complete(&settings.request(prompt.clone(), attempt))?;
        let draft = match parse_mcq_response(&completion.text) {
            Ok(d) => d,
            Err(e) => {
                last_problem = e.to_string();
                continue;
            }
        };
        match check_draft(item, kind, language, n_options, draft) {
            Ok(q) => return Ok(q),
            Err(problem) => last_problem = problem,
        }
    }
    Err(GenerationError::GenerationFailed {
        keyword: item.keyword.clone(),
        attempts: max_attempts,
        last_problem,
    })
}

fn check_draft(
    item: &VocabularyItem,
    kind: TestKind,
    language: Language,
    n_options: usize,
    draft: crate::llm::parse::McqDraft,
) -> Result<MCQuestion, String> {
    if draft.options.len() != n_options {
        return Err(format!("expected {n_options} options, got {}", draft.options.len()));
    }
    let answer = normalize_text(&draft.answer);
    let hits: Vec<usize> = draft
        .options
        .iter()
        .enumerate()
        .filter(|(_, o)| normalize_text(o) == answer)
        .map(|(i, _)| i)
        .collect();
    let correct_index = match hits.as_slice() {
        [i] => *i,
        [] => return Err("answer is not among the options".into()),
        _ => return Err("answer appears more than once".into()),
    };
    if answer != normalize_text(&item.keyword) && !contains_phrase(&draft.stem, &item.keyword) {
        return Err("question does not test the keyword".into());
    }
    if draft.explanation.trim().is_empty() {
        return Err("empty explanation".into());
    }
    let question = MCQuestion {
        id: format!("{}-{}-{}", item.id, kind, language_code(language)),
        keyword_id: item.id.clone(),
        test_kind: kind,
        language,
        stem: draft.stem,
        options: draft.options,
        correct_index,
        explanation: draft.explanation,
    };
    question.check().map_err(|p| p.to_string())?;
    Ok(question)
}

pub(crate) fn language_code(language: Language) -> &'static str {
    match language {
        Language::Japanese => "ja",
        Language::English => "en",
    }
}
