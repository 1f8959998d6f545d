use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::grading::PosttestPartition;
use super::schedule::Schedule;
use crate::domain::{Condition, Conversion, ItemId, Material, Test, TestKind, TestResult, Transcript};
use crate::text::normalize_text;

/// Protocol phase of one study round. Phases only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretest,
    Study,
    Posttest1,
    AwaitPosttest2,
    Posttest2,
    AwaitPosttest3,
    Posttest3,
    Done,
}

impl Phase {
    /// The test being taken in this phase, if any.
    pub fn open_test(self) -> Option<TestKind> {
        match self {
            Phase::Pretest => Some(TestKind::Pretest),
            Phase::Posttest1 => Some(TestKind::Posttest1),
            Phase::Posttest2 => Some(TestKind::Posttest2),
            Phase::Posttest3 => Some(TestKind::Posttest3),
            _ => None,
        }
    }

    /// Phase entered once `kind` has been graded.
    pub fn after_grading(kind: TestKind) -> Phase {
        match kind {
            TestKind::Pretest => Phase::Study,
            TestKind::Posttest1 => Phase::AwaitPosttest2,
            TestKind::Posttest2 => Phase::AwaitPosttest3,
            TestKind::Posttest3 => Phase::Done,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionState {
    Pending,
    Correct,
    Revealed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CorrectionOutcome {
    Correct,
    IncorrectRetry { remaining: u32 },
    /// The attempt cap was reached; the full correction list is shown.
    Revealed { corrections: Vec<String> },
}

/// What the learner sees for a study item, fixed when study begins so both
/// conditions present the same material and meaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMaterial {
    pub item_id: ItemId,
    pub keyword: String,
    pub meaning: String,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub text: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    #[serde(flatten)]
    pub content: StudyMaterial,
    pub correction: CorrectionState,
    /// Start of the teaching window: when the correction was resolved.
    pub lbt_started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub notes: Vec<Note>,
}

impl StudyItem {
    pub fn is_resolved(&self) -> bool {
        self.correction != CorrectionState::Pending
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdministeredTest {
    pub test: Test,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_by_seconds: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graded_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LbtGate {
    Open { elapsed_seconds: f64, remaining_seconds: f64 },
    Expired,
}

impl LbtGate {
    pub fn is_open(&self) -> bool {
        matches!(self, LbtGate::Open { .. })
    }
}

/// One study round of a participant under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub participant_id: String,
    pub round: usize,
    pub condition: Condition,
    pub phase: Phase,
    pub pretest_items: Vec<ItemId>,
    pub partition: PosttestPartition,
    /// Items studied (missed on the pretest), in pretest order.
    pub items: Vec<ItemId>,
    pub study: BTreeMap<ItemId, StudyItem>,
    pub correction_attempts: BTreeMap<ItemId, u32>,
    /// Teaching seconds used per item, capped at the configured limit.
    pub lbt_elapsed: BTreeMap<ItemId, f64>,
    pub transcript: BTreeMap<ItemId, Transcript>,
    pub schedule: Option<Schedule>,
    pub tests: BTreeMap<TestKind, AdministeredTest>,
}

impl StudySession {
    pub fn result(&self, kind: TestKind) -> Option<&TestResult> {
        self.tests.get(&kind)?.result.as_ref()
    }

    pub fn completed_tests(&self) -> Vec<TestKind> {
        self.tests
            .iter()
            .filter(|(_, t)| t.result.is_some())
            .map(|(k, _)| *k)
            .collect()
    }

    /// Open while less than `limit_seconds` have passed since the item's
    /// teaching window started. An item whose correction is unresolved has
    /// used no time yet.
    pub fn lbt_gate(&self, item_id: &str, now: DateTime<Utc>, limit_seconds: u32) -> LbtGate {
        let limit = f64::from(limit_seconds);
        let elapsed = self
            .study
            .get(item_id)
            .and_then(|i| i.lbt_started_at)
            .map(|start| seconds_between(start, now))
            .unwrap_or(0.0);
        if elapsed < limit {
            LbtGate::Open {
                elapsed_seconds: elapsed,
                remaining_seconds: limit - elapsed,
            }
        } else {
            LbtGate::Expired
        }
    }
}

pub(crate) fn seconds_between(start: DateTime<Utc>, end: DateTime<Utc>) -> f64 {
    ((end - start).num_milliseconds().max(0)) as f64 / 1000.0
}

/// A correction is right when it is non-empty and every replacement names
/// the keyword as the incorrect word and one of the material's corrections
/// as its replacement. Comparison is on normalized text.
pub fn is_correct_correction(material: &Material, keyword: &str, replacements: &[Conversion]) -> bool {
    if replacements.is_empty() {
        return false;
    }
    let keyword = normalize_text(keyword);
    let accepted: Vec<String> = material
        .conversions
        .iter()
        .map(|c| normalize_text(&c.correct))
        .collect();
    replacements.iter().all(|r| {
        let incorrect = normalize_text(&r.incorrect);
        (incorrect.is_empty() || incorrect == keyword) && accepted.contains(&normalize_text(&r.correct))
    })
}
