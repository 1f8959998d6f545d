//! Measures over test results and transcripts, and the tabular export.
//!
//! Export schema (one row per participant per measure, ordered by
//! participant id, then the fixed measure order below):
//!
//! | column | meaning |
//! |---|---|
//! | `participant_id` | |
//! | `group` | `A` or `B` |
//! | `native_language` | `japanese` or `english` |
//! | `measure` | `score_proposed`, `score_baseline`, `condition_diff`, `avg_words_per_interaction`, `repeated_question_rate` |
//! | `test` | test kind for score measures, empty otherwise |
//! | `variant` | `all_items` or `studied_items` for score measures; `proposed` otherwise |
//! | `unit` | `percent`, `percentage_points`, `words`, `characters`, `fraction` |
//! | `value` | number, or empty when the denominator is zero |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::is_duplicate;
use crate::domain::{Condition, Group, ItemId, Language, TestKind, TestResult, Transcript};
use crate::protocol::{ProtocolState, StudySession};

pub const EXPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("missing {0} result")]
    MissingTest(TestKind),
    #[error("transcript has no teacher turns")]
    NoTeacherTurns,
    #[error("incomplete data: {}", .0.join("; "))]
    IncompleteData(Vec<String>),
    #[error("export failed: {0}")]
    Export(String),
}

/// Percentage-point difference, proposed minus baseline, per test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDiff {
    pub participant_id: String,
    pub per_test: BTreeMap<TestKind, f64>,
}

pub fn condition_diff(
    participant_id: &str,
    proposed: &BTreeMap<TestKind, TestResult>,
    baseline: &BTreeMap<TestKind, TestResult>,
) -> Result<ConditionDiff, AnalyticsError> {
    let mut per_test = BTreeMap::new();
    for kind in proposed.keys().chain(baseline.keys()) {
        let p = proposed.get(kind).ok_or(AnalyticsError::MissingTest(*kind))?;
        let b = baseline.get(kind).ok_or(AnalyticsError::MissingTest(*kind))?;
        per_test.insert(*kind, p.score_percent - b.score_percent);
    }
    Ok(ConditionDiff {
        participant_id: participant_id.to_owned(),
        per_test,
    })
}

/// Tokens in one text: whitespace-separated units for English, letters and
/// digits for Japanese (no whitespace segmentation there).
pub fn count_tokens(text: &str, language: Language) -> usize {
    match language {
        Language::English => text.split_whitespace().count(),
        Language::Japanese => text.chars().filter(|c| c.is_alphanumeric()).count(),
    }
}

pub fn token_unit(language: Language) -> &'static str {
    match language {
        Language::English => "words",
        Language::Japanese => "characters",
    }
}

/// Mean token count over the teacher turns of one or more transcripts.
pub fn avg_words_per_interaction<'a, I>(transcripts: I, language: Language) -> Result<f64, AnalyticsError>
where
    I: IntoIterator<Item = &'a Transcript>,
{
    let (mut total, mut turns) = (0usize, 0usize);
    for t in transcripts {
        for turn in t.teacher_turns() {
            total += count_tokens(&turn.text, language);
            turns += 1;
        }
    }
    if turns == 0 {
        return Err(AnalyticsError::NoTeacherTurns);
    }
    Ok(total as f64 / turns as f64)
}

/// Duplicates among agent questions, over all agent questions. Each
/// question after the first is checked against the earlier ones of the same
/// transcript. `None` when there are no questions.
pub fn repeated_question_rate<'a, I>(transcripts: I, threshold: f64) -> Option<f64>
where
    I: IntoIterator<Item = &'a Transcript>,
{
    let (mut duplicates, mut questions) = (0usize, 0usize);
    for t in transcripts {
        let asked: Vec<&str> = t.student_questions().collect();
        questions += asked.len();
        duplicates += (1..asked.len())
            .filter(|&i| is_duplicate(asked[i], &asked[..i], threshold))
            .count();
    }
    (questions > 0).then(|| duplicates as f64 / questions as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Csv,
    JsonLines,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ExportFormat::Csv),
            "json-lines" | "jsonl" => Some(ExportFormat::JsonLines),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub participant_id: String,
    pub group: Group,
    pub native_language: Language,
    pub measure: String,
    pub test: String,
    pub variant: String,
    pub unit: String,
    pub value: Option<f64>,
}

fn results(s: &StudySession) -> BTreeMap<TestKind, TestResult> {
    s.tests
        .iter()
        .filter_map(|(k, t)| Some((*k, t.result.clone()?)))
        .collect()
}

fn studied_score(s: &StudySession, kind: TestKind) -> Option<f64> {
    s.result(kind)?.score_over(|id: &ItemId| s.study.contains_key(id))
}

/// Rows for one participant with every test of both conditions graded.
pub fn participant_rows(state: &ProtocolState, threshold: f64) -> Result<Vec<ReportRow>, AnalyticsError> {
    let p = state
        .participant
        .as_ref()
        .ok_or_else(|| AnalyticsError::IncompleteData(vec!["unenrolled participant".into()]))?;
    let mut missing = Vec::new();
    let mut by_condition = BTreeMap::new();
    for condition in [Condition::Proposed, Condition::Baseline] {
        let name = format!("{condition:?}").to_lowercase();
        match state.session_for(condition) {
            None => missing.push(format!("{}: {name} round", p.id)),
            Some(s) => {
                for kind in TestKind::ALL {
                    if s.result(kind).is_none() {
                        missing.push(format!("{}: {name} {kind}", p.id));
                    }
                }
                by_condition.insert(condition, s);
            }
        }
    }
    if !missing.is_empty() {
        return Err(AnalyticsError::IncompleteData(missing));
    }
    let proposed = by_condition[&Condition::Proposed];
    let baseline = by_condition[&Condition::Baseline];

    let row = |measure: &str, test: &str, variant: &str, unit: &str, value: Option<f64>| ReportRow {
        participant_id: p.id.clone(),
        group: p.group,
        native_language: p.native_language,
        measure: measure.to_owned(),
        test: test.to_owned(),
        variant: variant.to_owned(),
        unit: unit.to_owned(),
        value,
    };

    let diff = condition_diff(&p.id, &results(proposed), &results(baseline))?;
    let mut rows = Vec::new();
    for (measure, unit) in [
        ("score_proposed", "percent"),
        ("score_baseline", "percent"),
        ("condition_diff", "percentage_points"),
    ] {
        for kind in TestKind::ALL {
            let all = match measure {
                "score_proposed" => proposed.result(kind).map(|r| r.score_percent),
                "score_baseline" => baseline.result(kind).map(|r| r.score_percent),
                _ => diff.per_test.get(&kind).copied(),
            };
            let studied = match measure {
                "score_proposed" => studied_score(proposed, kind),
                "score_baseline" => studied_score(baseline, kind),
                _ => studied_score(proposed, kind).zip(studied_score(baseline, kind)).map(|(a, b)| a - b),
            };
            rows.push(row(measure, kind.as_str(), "all_items", unit, all));
            rows.push(row(measure, kind.as_str(), "studied_items", unit, studied));
        }
    }
    let language = p.native_language;
    rows.push(row(
        "avg_words_per_interaction",
        "",
        "proposed",
        token_unit(language),
        avg_words_per_interaction(proposed.transcript.values(), language).ok(),
    ));
    rows.push(row(
        "repeated_question_rate",
        "",
        "proposed",
        "fraction",
        repeated_question_rate(proposed.transcript.values(), threshold),
    ));
    Ok(rows)
}

/// All rows, ordered by participant id. Fails listing every missing piece.
pub fn report_rows(states: &[ProtocolState], threshold: f64) -> Result<Vec<ReportRow>, AnalyticsError> {
    let mut sorted: Vec<&ProtocolState> = states.iter().collect();
    sorted.sort_by(|a, b| {
        let id = |s: &ProtocolState| s.participant.as_ref().map(|p| p.id.clone());
        id(a).cmp(&id(b))
    });
    if sorted.is_empty() {
        return Err(AnalyticsError::IncompleteData(vec!["no participants".into()]));
    }
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for s in sorted {
        match participant_rows(s, threshold) {
            Ok(r) => rows.extend(r),
            Err(AnalyticsError::IncompleteData(m)) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(AnalyticsError::IncompleteData(missing));
    }
    Ok(rows)
}

fn format_value(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn export_report(states: &[ProtocolState], format: ExportFormat, threshold: f64) -> Result<String, AnalyticsError> {
    let rows = report_rows(states, threshold)?;
    let export_err = |e: &dyn std::fmt::Display| AnalyticsError::Export(e.to_string());
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "participant_id",
                "group",
                "native_language",
                "measure",
                "test",
                "variant",
                "unit",
                "value",
            ])
            .map_err(|e| export_err(&e))?;
            for r in &rows {
                w.write_record([
                    r.participant_id.as_str(),
                    &format!("{:?}", r.group),
                    match r.native_language {
                        Language::Japanese => "japanese",
                        Language::English => "english",
                    },
                    &r.measure,
                    &r.test,
                    &r.variant,
                    &r.unit,
                    &format_value(r.value),
                ])
                .map_err(|e| export_err(&e))?;
            }
            let bytes = w.into_inner().map_err(|e| export_err(&e))?;
            String::from_utf8(bytes).map_err(|e| export_err(&e))
        }
        ExportFormat::JsonLines => {
            let mut out = String::new();
            for r in &rows {
                out.push_str(&serde_json::to_string(r).map_err(|e| export_err(&e))?);
                out.push('\n');
            }
            Ok(out)
        }
    }
}
