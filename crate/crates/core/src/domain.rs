//! Shared domain types and their validation. Nothing here performs I/O.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{contains_phrase, normalize_text};

/// Identifier of a vocabulary item in the question bank.
pub type ItemId = String;

/// Inclusive bounds on the word count of a generated wrong sentence. The
/// material prompt asks for "around 30 words".
pub const MATERIAL_WORD_RANGE: (usize, usize) = (15, 45);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Japanese,
    English,
}

impl Language {
    /// Name inserted into prompts.
    pub fn name(self) -> &'static str {
        match self {
            Language::Japanese => "Japanese",
            Language::English => "English",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Study with the simulated student asking questions.
    Proposed,
    /// Same material and correction loop, self-study notes instead of dialogue.
    Baseline,
}

impl Group {
    /// Condition order across the two study rounds. Group A starts with the
    /// proposed system, group B with the baseline.
    pub fn condition_order(self) -> [Condition; 2] {
        match self {
            Group::A => [Condition::Proposed, Condition::Baseline],
            Group::B => [Condition::Baseline, Condition::Proposed],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Pretest,
    Posttest1,
    Posttest2,
    Posttest3,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [
        TestKind::Pretest,
        TestKind::Posttest1,
        TestKind::Posttest2,
        TestKind::Posttest3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Pretest => "pretest",
            TestKind::Posttest1 => "posttest1",
            TestKind::Posttest2 => "posttest2",
            TestKind::Posttest3 => "posttest3",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("vocabulary item {0:?} has an empty keyword")]
    EmptyKeyword(ItemId),
    #[error("vocabulary item {0:?} has no meanings")]
    NoMeanings(ItemId),
    #[error("question {id:?}: {problem}")]
    InvalidQuestion { id: String, problem: McqProblem },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyItem {
    pub id: ItemId,
    pub keyword: String,
    pub meanings: BTreeMap<Language, String>,
    #[serde(default)]
    pub difficulty_tag: String,
}

impl VocabularyItem {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.keyword.trim().is_empty() {
            return Err(DomainError::EmptyKeyword(self.id.clone()));
        }
        if self.meanings.values().all(|m| m.trim().is_empty()) {
            return Err(DomainError::NoMeanings(self.id.clone()));
        }
        Ok(())
    }

    /// Meaning in `language`, falling back to English and then to any entry.
    pub fn meaning(&self, language: Language) -> &str {
        self.meanings
            .get(&language)
            .or_else(|| self.meanings.get(&Language::English))
            .or_else(|| self.meanings.values().next())
            .map(String::as_str)
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversion {
    pub incorrect: String,
    pub correct: String,
}

/// A deliberately wrong sentence built around a misused keyword.
///
/// Serialized with the field names the material prompt asks the model for,
/// so the list of corrections travels under `conversion`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Material {
    pub title: String,
    pub content: String,
    pub evidence: String,
    #[serde(rename = "conversion")]
    pub conversions: Vec<Conversion>,
}

impl Material {
    /// Acceptable replacement words, in the order the model listed them.
    pub fn correct_words(&self) -> Vec<String> {
        self.conversions.iter().map(|c| c.correct.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum MaterialViolation {
    EmptyKeyword,
    KeywordMissing,
    NoConversions,
    IncorrectMismatch { index: usize, found: String },
    EmptyCorrection { index: usize },
    DuplicateCorrection { word: String },
    WordCount { count: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<MaterialViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a generated material against the keyword it was generated for.
///
/// Keyword presence is a case-insensitive substring test, so inflected forms
/// of the keyword do not satisfy it. Content must have between 15 and 45
/// whitespace-separated words.
pub fn validate_material(material: &Material, keyword: &str) -> ValidationReport {
    let mut violations = Vec::new();
    let norm_keyword = normalize_text(keyword);

    if norm_keyword.is_empty() {
        violations.push(MaterialViolation::EmptyKeyword);
    } else if !contains_phrase(&material.content, keyword) {
        violations.push(MaterialViolation::KeywordMissing);
    }

    if material.conversions.is_empty() {
        violations.push(MaterialViolation::NoConversions);
    }
    let mut seen: Vec<String> = Vec::new();
    for (index, conversion) in material.conversions.iter().enumerate() {
        if normalize_text(&conversion.incorrect) != norm_keyword {
            violations.push(MaterialViolation::IncorrectMismatch {
                index,
                found: conversion.incorrect.clone(),
            });
        }
        let correct = normalize_text(&conversion.correct);
        if correct.is_empty() {
            violations.push(MaterialViolation::EmptyCorrection { index });
        } else if seen.contains(&correct) {
            violations.push(MaterialViolation::DuplicateCorrection {
                word: conversion.correct.clone(),
            });
        } else {
            seen.push(correct);
        }
    }

    let count = material.content.split_whitespace().count();
    let (lo, hi) = MATERIAL_WORD_RANGE;
    if !(lo..=hi).contains(&count) {
        violations.push(MaterialViolation::WordCount { count });
    }

    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
pub enum McqProblem {
    #[error("fewer than two options")]
    TooFewOptions,
    #[error("option {0:?} appears more than once")]
    DuplicateOption(String),
    #[error("correct index {index} out of range for {len} options")]
    CorrectIndexOutOfRange { index: usize, len: usize },
    #[error("empty stem")]
    EmptyStem,
    #[error("empty option")]
    EmptyOption,
}

/// A multiple-choice question about one vocabulary item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQuestion {
    pub id: String,
    pub keyword_id: ItemId,
    pub test_kind: TestKind,
    pub language: Language,
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub explanation: String,
}

impl MCQuestion {
    pub fn check(&self) -> Result<(), McqProblem> {
        if self.stem.trim().is_empty() {
            return Err(McqProblem::EmptyStem);
        }
        if self.options.len() < 2 {
            return Err(McqProblem::TooFewOptions);
        }
        let mut seen = Vec::with_capacity(self.options.len());
        for option in &self.options {
            let norm = normalize_text(option);
            if norm.is_empty() {
                return Err(McqProblem::EmptyOption);
            }
            if seen.contains(&norm) {
                return Err(McqProblem::DuplicateOption(option.clone()));
            }
            seen.push(norm);
        }
        if self.correct_index >= self.options.len() {
            return Err(McqProblem::CorrectIndexOutOfRange {
                index: self.correct_index,
                len: self.options.len(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        self.check().map_err(|problem| DomainError::InvalidQuestion {
            id: self.id.clone(),
            problem,
        })
    }

    pub fn correct_option(&self) -> &str {
        &self.options[self.correct_index]
    }
}

/// An assembled test, questions in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test {
    pub kind: TestKind,
    pub seed: u64,
    pub questions: Vec<MCQuestion>,
}

impl Test {
    pub fn item_ids(&self) -> Vec<ItemId> {
        self.questions.iter().map(|q| q.keyword_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub question_id: String,
    pub keyword_id: ItemId,
    pub chosen_index: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_kind: TestKind,
    pub per_item: Vec<ItemOutcome>,
    pub score_percent: f64,
}

impl TestResult {
    pub fn new(test_kind: TestKind, per_item: Vec<ItemOutcome>) -> Self {
        let score_percent = score_percent(&per_item);
        TestResult {
            test_kind,
            per_item,
            score_percent,
        }
    }

    pub fn correct_count(&self) -> usize {
        self.per_item.iter().filter(|o| o.correct).count()
    }

    /// Score restricted to the given items. `None` when no item matches.
    pub fn score_over<F: Fn(&ItemId) -> bool>(&self, include: F) -> Option<f64> {
        let subset: Vec<_> = self
            .per_item
            .iter()
            .filter(|o| include(&o.keyword_id))
            .cloned()
            .collect();
        (!subset.is_empty()).then(|| score_percent(&subset))
    }
}

/// `100 × correct / total`; an empty test scores 0.
pub fn score_percent(items: &[ItemOutcome]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let correct = items.iter().filter(|o| o.correct).count();
    100.0 * correct as f64 / items.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// The human learner, who teaches.
    Teacher,
    /// The simulated student.
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: Role,
    pub text: String,
    pub at: DateTime<Utc>,
    pub elapsed_lbt_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<DialogueTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptProblem {
    #[error("turn {0} has empty text")]
    EmptyText(usize),
    #[error("turn {0} is not later than the previous turn")]
    OutOfOrder(usize),
    #[error("turn {0} breaks role alternation")]
    RoleOrder(usize),
}

impl Transcript {
    pub fn teacher_turns(&self) -> impl Iterator<Item = &DialogueTurn> {
        self.turns.iter().filter(|t| t.role == Role::Teacher)
    }

    pub fn student_questions(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Student)
            .map(|t| t.text.as_str())
    }

    pub fn last_at(&self) -> Option<DateTime<Utc>> {
        self.turns.last().map(|t| t.at)
    }

    /// Non-empty text, strictly increasing timestamps, roles alternating from
    /// the student's fixed opening question.
    pub fn check(&self) -> Result<(), TranscriptProblem> {
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(TranscriptProblem::EmptyText(i));
            }
            let expected = if i % 2 == 0 { Role::Student } else { Role::Teacher };
            if turn.role != expected {
                return Err(TranscriptProblem::RoleOrder(i));
            }
            if i > 0 && turn.at <= self.turns[i - 1].at {
                return Err(TranscriptProblem::OutOfOrder(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub display_name: String,
    pub native_language: Language,
    pub group: Group,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chef_material() -> Material {
        Material {
            title: "Misuse of the \"overthrow\"".into(),
            content: "The chef decided to overthrow the ingredients into the pot, creating a delicious soup that everyone enjoyed at the dinner party.".into(),
            evidence: "\"Overthrow\" means to remove from power, not to put something into a pot.".into(),
            conversions: ["throw", "add", "mix"]
                .iter()
                .map(|c| Conversion {
                    incorrect: "overthrow".into(),
                    correct: (*c).into(),
                })
                .collect(),
        }
    }

    #[test]
    fn chef_sentence_is_valid() {
        let report = validate_material(&chef_material(), "overthrow");
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn missing_keyword_is_reported() {
        let mut m = chef_material();
        m.content = m.content.replace("overthrow", "toss");
        let report = validate_material(&m, "overthrow");
        assert_eq!(report.violations, vec![MaterialViolation::KeywordMissing]);
    }

    #[test]
    fn empty_conversions_are_reported() {
        let mut m = chef_material();
        m.conversions.clear();
        let report = validate_material(&m, "overthrow");
        assert_eq!(report.violations, vec![MaterialViolation::NoConversions]);
    }

    #[test]
    fn inflected_keyword_does_not_count() {
        let mut m = chef_material();
        m.content = m.content.replace("decided to overthrow", "overthrew");
        let report = validate_material(&m, "overthrow");
        assert!(report.violations.contains(&MaterialViolation::KeywordMissing));
    }

    #[test]
    fn conversion_problems_are_each_listed() {
        let mut m = chef_material();
        m.conversions[1].incorrect = "throw".into();
        m.conversions[2].correct = "Throw!".into();
        let report = validate_material(&m, "Overthrow");
        assert_eq!(
            report.violations,
            vec![
                MaterialViolation::IncorrectMismatch {
                    index: 1,
                    found: "throw".into()
                },
                MaterialViolation::DuplicateCorrection {
                    word: "Throw!".into()
                },
            ]
        );
    }

    #[test]
    fn word_count_band_is_inclusive() {
        let mut m = chef_material();
        m.content = format!("overthrow {}", "word ".repeat(13)); // 14 words
        assert!(validate_material(&m, "overthrow")
            .violations
            .contains(&MaterialViolation::WordCount { count: 14 }));
        m.content = format!("overthrow {}", "word ".repeat(14));
        assert!(validate_material(&m, "overthrow").is_valid());
        m.content = format!("overthrow {}", "word ".repeat(44));
        assert!(validate_material(&m, "overthrow").is_valid());
        m.content = format!("overthrow {}", "word ".repeat(45));
        assert!(!validate_material(&m, "overthrow").is_valid());
    }

    #[test]
    fn material_json_uses_prompt_field_names() {
        let json = serde_json::to_value(chef_material()).unwrap();
        assert!(json.get("conversion").is_some());
        assert!(json.get("conversions").is_none());
    }

    fn mcq(options: &[&str], correct_index: usize) -> MCQuestion {
        MCQuestion {
            id: "q".into(),
            keyword_id: "k".into(),
            test_kind: TestKind::Pretest,
            language: Language::English,
            stem: "Pick one".into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            correct_index,
            explanation: String::new(),
        }
    }

    #[test]
    fn mcq_invariants() {
        assert!(mcq(&["a", "b", "c", "d"], 3).check().is_ok());
        assert_eq!(mcq(&["a"], 0).check(), Err(McqProblem::TooFewOptions));
        assert_eq!(
            mcq(&["a", "b", "A"], 0).check(),
            Err(McqProblem::DuplicateOption("A".into()))
        );
        assert_eq!(
            mcq(&["a", "b"], 2).check(),
            Err(McqProblem::CorrectIndexOutOfRange { index: 2, len: 2 })
        );
    }

    #[test]
    fn score_is_percentage_of_correct() {
        let outcomes: Vec<_> = (0..10)
            .map(|i| ItemOutcome {
                question_id: format!("q{i}"),
                keyword_id: format!("k{i}"),
                chosen_index: 0,
                correct: i < 7,
            })
            .collect();
        let result = TestResult::new(TestKind::Posttest1, outcomes);
        assert_eq!(result.score_percent, 70.0);
        assert_eq!(result.score_over(|id| id == "k0" || id == "k9"), Some(50.0));
        assert_eq!(result.score_over(|_| false), None);
    }

    #[test]
    fn group_orders_are_reverses() {
        let mut b = Group::B.condition_order();
        b.reverse();
        assert_eq!(Group::A.condition_order(), b);
    }

    #[test]
    fn vocabulary_item_validation() {
        let mut item = VocabularyItem {
            id: "v1".into(),
            keyword: "overthrow".into(),
            meanings: BTreeMap::from([(Language::English, "to remove from power".into())]),
            difficulty_tag: "pre-2".into(),
        };
        assert!(item.validate().is_ok());
        assert_eq!(item.meaning(Language::Japanese), "to remove from power");
        item.meanings.clear();
        assert_eq!(item.validate(), Err(DomainError::NoMeanings("v1".into())));
        item.keyword = " ".into();
        assert_eq!(item.validate(), Err(DomainError::EmptyKeyword("v1".into())));
    }
}
