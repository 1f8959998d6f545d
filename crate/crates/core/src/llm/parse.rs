//! Parsing of structured model output.

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::domain::Material;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response is not a JSON document: {0}")]
    UnparseableResponse(String),
    #[error("response does not match the expected schema: {0}")]
    SchemaMismatch(String),
}

/// Parses the first JSON object in `text`.
///
/// A direct parse is tried first. Failing that, a single repair pass strips
/// markdown code fences and trims to the outermost braces.
pub fn extract_json_object(text: &str) -> Result<Value, ParseError> {
    let direct = serde_json::from_str::<Value>(text.trim());
    let value = match direct {
        Ok(v) => v,
        Err(first) => {
            let repaired = repair(text).ok_or_else(|| ParseError::UnparseableResponse(first.to_string()))?;
            serde_json::from_str::<Value>(repaired)
                .map_err(|e| ParseError::UnparseableResponse(e.to_string()))?
        }
    };
    if !value.is_object() {
        return Err(ParseError::SchemaMismatch("top level is not an object".into()));
    }
    Ok(value)
}

fn repair(text: &str) -> Option<&str> {
    let mut body = text.trim();
    if let Some(rest) = body.strip_prefix("```") {
        // drop the info string (```json)
        body = rest.split_once('\n').map_or("", |(_, b)| b);
        if let Some(end) = body.rfind("```") {
            body = &body[..end];
        }
    }
    let start = body.find('{')?;
    let end = body.rfind('}')?;
    (start < end).then(|| &body[start..=end])
}

fn from_value<T: DeserializeOwned>(value: Value) -> Result<T, ParseError> {
    serde_json::from_value(value).map_err(|e| ParseError::SchemaMismatch(e.to_string()))
}

/// Parses the model's answer to the material prompt.
pub fn parse_material_response(text: &str) -> Result<Material, ParseError> {
    from_value(extract_json_object(text)?)
}

/// Raw answer to the MCQ prompt, before it is checked against the item.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct McqDraft {
    pub stem: String,
    pub options: Vec<String>,
    pub answer: String,
    #[serde(default)]
    pub explanation: String,
}

pub fn parse_mcq_response(text: &str) -> Result<McqDraft, ParseError> {
    from_value(extract_json_object(text)?)
}
